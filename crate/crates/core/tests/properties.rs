//! Property tests of the demand/supply primitives and the two-class model.

use kinwave_core::fd::FdCurve;
use kinwave_core::mixed::{eigen, group_speed, riemann_intermediate, MixedParams, MixedState};
use proptest::prelude::*;

fn curves() -> Vec<FdCurve> {
    vec![
        FdCurve::triangular(65.0, 36.0, 180.0).unwrap(),
        FdCurve::greenshields(65.0, 180.0).unwrap(),
        FdCurve::exponential(5.0, -1.0, 180.0).unwrap(),
        FdCurve::kerner_konhauser(180.0).unwrap(),
    ]
}

proptest! {
    #[test]
    fn min_demand_supply_is_flow(frac in 0.0f64..=1.0, lanes in 1.0f64..4.0) {
        for fd in curves() {
            let rho = frac * fd.jam_density(lanes);
            let d = fd.demand(lanes, rho).unwrap();
            let s = fd.supply(lanes, rho).unwrap();
            let q = fd.flow(lanes, rho).unwrap();
            prop_assert!((d.min(s) - q).abs() <= 1e-9 * fd.capacity(lanes).max(1.0));
            prop_assert!(d >= 0.0 && s >= 0.0);
            prop_assert!(d <= fd.capacity(lanes) * (1.0 + 1e-12));
            prop_assert!(s <= fd.capacity(lanes) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn demand_supply_monotone_in_density(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for fd in curves() {
            let jam = fd.jam_density(1.0);
            prop_assert!(
                fd.demand(1.0, hi * jam).unwrap() >= fd.demand(1.0, lo * jam).unwrap() - 1e-12
            );
            prop_assert!(
                fd.supply(1.0, hi * jam).unwrap() <= fd.supply(1.0, lo * jam).unwrap() + 1e-12
            );
        }
    }

    #[test]
    fn mixed_intermediate_keeps_composition(
        r1 in 1e-6f64..0.03,
        w in 0.01f64..2.0,
        s in 0.0f64..=1.0,
    ) {
        let p = MixedParams::new(95.3333, 20.0, 40.0, 1.5, 3.0).unwrap();
        let r2 = (w * r1).min((1.0 - r1 * p.l1) / p.l2 * 0.999);
        prop_assume!(r2 > 0.0);
        let left = MixedState::new(r1, r2, &p).unwrap();
        // Right state anywhere on the pure-class-1 axis.
        let right = MixedState::new(s * 0.049, 0.0, &p).unwrap();
        let mid = riemann_intermediate(&left, &right, &p).unwrap();
        let w_l = left.rho2 / left.rho1;
        if mid.rho1 > 0.0 {
            let w_m = mid.rho2 / mid.rho1;
            prop_assert!((w_m - w_l).abs() <= 1e-12 * w_l.max(1.0));
        }
        // Anisotropy: characteristics never outrun traffic.
        let (l1, l2) = eigen(&left, &p);
        prop_assert!(l1 <= l2 + 1e-12);
        prop_assert!(l2 <= p.v_free + 1e-12);
        prop_assert!(group_speed(&mid, &p) <= p.v_free + 1e-12);
    }
}
