//! Two-class kinematic wave model with a shared group speed.
//!
//! Both classes move at `V(rho1, rho2)`, which is the free-flow average
//! below the critical surface and the congested branch
//! `(1 - rho1 l1 - rho2 l2) / (rho1 tau1 + rho2 tau2)` above it. The model
//! requires equal free-flow speeds so `V` is continuous. Riemann solutions
//! are a 1-wave (shock or rarefaction along the ray of constant composition)
//! followed by a contact moving at traffic speed; composition is conserved
//! across 1-waves, which is the FIFO property.

use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixedParams {
    /// Common free-flow speed (the solver requires `vf1 = vf2`).
    pub v_free: f64,
    /// Effective vehicle lengths.
    pub l1: f64,
    pub l2: f64,
    /// Response times.
    pub tau1: f64,
    pub tau2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixedError {
    InvalidParams(&'static str),
    /// Densities negative or beyond the jam surface `rho1 l1 + rho2 l2 = 1`.
    Domain { rho1: f64, rho2: f64 },
    /// The Riemann construction is undefined from an exact-vacuum left state
    /// unless the right state is in free flow.
    VacuumAmbiguity,
    /// `max(|lambda1|, |lambda2|) dt/dx` exceeds one.
    CflViolation { number: f64 },
}

impl fmt::Display for MixedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixedError::InvalidParams(what) => write!(f, "invalid mixed-traffic parameters: {what}"),
            MixedError::Domain { rho1, rho2 } => {
                write!(f, "state ({rho1}, {rho2}) outside the mixed-traffic domain")
            }
            MixedError::VacuumAmbiguity => {
                write!(f, "Riemann solution from a vacuum left state is not defined here")
            }
            MixedError::CflViolation { number } => {
                write!(f, "CFL number {number} exceeds 1; refine the time step")
            }
        }
    }
}

impl core::error::Error for MixedError {}

impl MixedParams {
    pub fn new(v_free: f64, l1: f64, l2: f64, tau1: f64, tau2: f64) -> Result<Self, MixedError> {
        if !(v_free > 0.0 && l1 > 0.0 && l2 > 0.0 && tau1 > 0.0 && tau2 > 0.0) {
            return Err(MixedError::InvalidParams("all parameters must be positive"));
        }
        Ok(MixedParams { v_free, l1, l2, tau1, tau2 })
    }

    /// Jam density of a pure class-1 stream.
    pub fn jam1(&self) -> f64 {
        1.0 / self.l1
    }

    pub fn jam2(&self) -> f64 {
        1.0 / self.l2
    }

    /// Bound on wave speeds over the whole domain.
    pub fn max_wave_speed(&self) -> f64 {
        let c = if self.l1 / self.tau1 > self.l2 / self.tau2 {
            self.l1 / self.tau1
        } else {
            self.l2 / self.tau2
        };
        if self.v_free > c {
            self.v_free
        } else {
            c
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixedState {
    pub rho1: f64,
    pub rho2: f64,
}

impl MixedState {
    pub fn new(rho1: f64, rho2: f64, p: &MixedParams) -> Result<Self, MixedError> {
        let slack = 1e-12;
        if !(rho1 >= -slack) || !(rho2 >= -slack) {
            return Err(MixedError::Domain { rho1, rho2 });
        }
        let occupancy = rho1 * p.l1 + rho2 * p.l2;
        if occupancy > 1.0 + 1e-9 {
            return Err(MixedError::Domain { rho1, rho2 });
        }
        Ok(MixedState { rho1: rho1.max(0.0), rho2: rho2.max(0.0) })
    }

    pub fn total(&self) -> f64 {
        self.rho1 + self.rho2
    }

    pub fn is_vacuum(&self) -> bool {
        self.total() <= 0.0
    }

    /// The weighted occupancy deciding the regime; congested at or above one.
    pub fn crowding(&self, p: &MixedParams) -> f64 {
        (p.l1 + p.tau1 * p.v_free) * self.rho1 + (p.l2 + p.tau2 * p.v_free) * self.rho2
    }

    pub fn is_congested(&self, p: &MixedParams) -> bool {
        self.crowding(p) >= 1.0
    }
}

/// Group speed of the mixture.
pub fn group_speed(st: &MixedState, p: &MixedParams) -> f64 {
    if st.is_vacuum() {
        return p.v_free;
    }
    if st.crowding(p) < 1.0 {
        p.v_free
    } else {
        let v = (1.0 - st.rho1 * p.l1 - st.rho2 * p.l2) / (st.rho1 * p.tau1 + st.rho2 * p.tau2);
        v.max(0.0)
    }
}

/// Characteristic speeds `(lambda1, lambda2)`; `lambda2` is the traffic
/// speed and `lambda1 <= lambda2`.
pub fn eigen(st: &MixedState, p: &MixedParams) -> (f64, f64) {
    let v = group_speed(st, p);
    if st.is_vacuum() || st.crowding(p) < 1.0 {
        (v, v)
    } else {
        let lam1 = -(st.rho1 * p.l1 + st.rho2 * p.l2) / (st.rho1 * p.tau1 + st.rho2 * p.tau2);
        (lam1, v)
    }
}

/// Scale of a unit-composition ray at which the congested branch reaches the
/// given speed; from `V(s) = (1 - s L) / (s T)`.
fn ray_scale_for_speed(dir1: f64, dir2: f64, v: f64, p: &MixedParams) -> f64 {
    let big_l = dir1 * p.l1 + dir2 * p.l2;
    let big_t = dir1 * p.tau1 + dir2 * p.tau2;
    1.0 / (v * big_t + big_l)
}

/// Critical-surface scale of the ray through `(dir1, dir2)`.
fn ray_scale_critical(dir1: f64, dir2: f64, p: &MixedParams) -> f64 {
    1.0 / ((p.l1 + p.tau1 * p.v_free) * dir1 + (p.l2 + p.tau2 * p.v_free) * dir2)
}

/// Intermediate state of the Riemann problem: same composition ray as the
/// left state, same speed as the right state.
pub fn riemann_intermediate(
    left: &MixedState,
    right: &MixedState,
    p: &MixedParams,
) -> Result<MixedState, MixedError> {
    let v_r = group_speed(right, p);
    if left.is_vacuum() {
        if v_r >= p.v_free {
            return Ok(MixedState { rho1: 0.0, rho2: 0.0 });
        }
        return Err(MixedError::VacuumAmbiguity);
    }
    let total = left.total();
    let dir1 = left.rho1 / total;
    let dir2 = left.rho2 / total;
    let scale = if v_r >= p.v_free {
        // The free-flow level set on the ray is the whole sub-critical
        // segment; the 1-wave extends to the critical surface.
        ray_scale_critical(dir1, dir2, p)
    } else {
        ray_scale_for_speed(dir1, dir2, v_r, p)
    };
    Ok(MixedState { rho1: dir1 * scale, rho2: dir2 * scale })
}

/// Self-similar state at `x = 0`, the Godunov boundary state.
///
/// The 1-wave decides: a shock by the sign of its speed, a rarefaction by the
/// signs of `lambda1` at its endpoints, and the transonic case returns the
/// flow-maximizing state on the left ray (the critical point, where the
/// kinked `lambda1` changes sign).
pub fn godunov_boundary_state(
    left: &MixedState,
    right: &MixedState,
    p: &MixedParams,
) -> Result<MixedState, MixedError> {
    if left.is_vacuum() {
        // Nothing arrives from the left; the boundary sees vacuum.
        return Ok(*left);
    }
    let mid = riemann_intermediate(left, right, p)?;
    if mid.total() > left.total() {
        // Shock between left and mid.
        let v_l = group_speed(left, p);
        let v_m = group_speed(&mid, p);
        let s = if mid.rho1 != left.rho1 {
            (left.rho1 * v_l - mid.rho1 * v_m) / (left.rho1 - mid.rho1)
        } else if mid.rho2 != left.rho2 {
            (left.rho2 * v_l - mid.rho2 * v_m) / (left.rho2 - mid.rho2)
        } else {
            return Ok(*left);
        };
        if s > 0.0 {
            Ok(*left)
        } else {
            Ok(mid)
        }
    } else {
        // Rarefaction between left and mid.
        let (lam_l, _) = eigen(left, p);
        let (lam_m, _) = eigen(&mid, p);
        if lam_l >= 0.0 {
            Ok(*left)
        } else if lam_m <= 0.0 {
            Ok(mid)
        } else {
            // Transonic: the critical point on the ray maximizes total flow.
            let total = left.total();
            let scale = ray_scale_critical(left.rho1 / total, left.rho2 / total, p);
            Ok(MixedState { rho1: left.rho1 / total * scale, rho2: left.rho2 / total * scale })
        }
    }
}

/// Per-class boundary fluxes `(rho1 V, rho2 V)` at a cell interface.
pub fn boundary_flux(
    left: &MixedState,
    right: &MixedState,
    p: &MixedParams,
) -> Result<(f64, f64), MixedError> {
    let b = godunov_boundary_state(left, right, p)?;
    let v = group_speed(&b, p);
    Ok((b.rho1 * v, b.rho2 * v))
}

/// One conservative Godunov step on a ring of cells.
pub fn step_ring(
    states: &[MixedState],
    p: &MixedParams,
    dx: f64,
    dt: f64,
) -> Result<Vec<MixedState>, MixedError> {
    let cfl = p.max_wave_speed() * dt / dx;
    if !(cfl <= 1.0) {
        return Err(MixedError::CflViolation { number: cfl });
    }
    let n = states.len();
    let mut flux1 = Vec::with_capacity(n);
    let mut flux2 = Vec::with_capacity(n);
    for i in 0..n {
        // Flux through the upstream boundary of cell i.
        let up = &states[(i + n - 1) % n];
        let (f1, f2) = boundary_flux(up, &states[i], p)?;
        flux1.push(f1);
        flux2.push(f2);
    }
    let r = dt / dx;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (in1, in2) = (flux1[i], flux2[i]);
        let (out1, out2) = (flux1[(i + 1) % n], flux2[(i + 1) % n]);
        out.push(MixedState {
            rho1: states[i].rho1 + r * (in1 - out1),
            rho2: states[i].rho2 + r * (in2 - out2),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::math::abs;

    /// 65 mph in ft/s with the 20/40 ft, 1.5/3 s parameter set.
    fn params() -> MixedParams {
        MixedParams::new(95.3333, 20.0, 40.0, 1.5, 3.0).unwrap()
    }

    #[test]
    fn group_speed_branches() {
        let p = params();
        // Jam of pure class 1: 1/l1 = 0.05 veh/ft at zero speed.
        let jam = MixedState::new(0.05, 0.0, &p).unwrap();
        assert_eq!(group_speed(&jam, &p), 0.0);
        // Light traffic moves at the free-flow speed.
        let light = MixedState::new(1e-4, 1e-4, &p).unwrap();
        assert!(abs(group_speed(&light, &p) - 95.3333) < 1e-9);
        // Pure class 1 critical density is 1/(l1 + vf tau1) = 1/163.
        let crit = 1.0 / (20.0 + 95.3333 * 1.5);
        let at_crit = MixedState::new(crit, 0.0, &p).unwrap();
        assert!(abs(at_crit.crowding(&p) - 1.0) < 1e-12);
        assert!(abs(group_speed(&at_crit, &p) - 95.3333) < 1e-6);
        assert!(abs(crit - 1.0 / 163.0) < 2e-6);
    }

    #[test]
    fn eigenvalues() {
        let p = params();
        let light = MixedState::new(1e-4, 1e-4, &p).unwrap();
        let (l1, l2) = eigen(&light, &p);
        assert_eq!(l1, l2);
        assert!(abs(l1 - 95.3333) < 1e-9);
        // Congested: lambda1 = -l1/tau1 = -40/3 when l1/tau1 = l2/tau2.
        let heavy = MixedState::new(0.02, 0.01, &p).unwrap();
        assert!(heavy.is_congested(&p));
        let (l1, l2) = eigen(&heavy, &p);
        assert!(abs(l1 + 40.0 / 3.0) < 1e-9);
        assert!(l1 <= l2);
        assert!(abs(l2 - group_speed(&heavy, &p)) < 1e-12);
    }

    #[test]
    fn eigen_ordering_by_finite_difference() {
        // lambda1 = V + rho1 dV/drho1 + rho2 dV/drho2 with centered
        // differences; the closed form must match and sit below lambda2.
        let p = params();
        let h = 1e-7;
        for &(r1, r2) in &[(0.02, 0.008), (0.03, 0.005), (0.01, 0.015)] {
            let st = MixedState::new(r1, r2, &p).unwrap();
            if !st.is_congested(&p) {
                continue;
            }
            let v = group_speed(&st, &p);
            let v1p = group_speed(&MixedState::new(r1 + h, r2, &p).unwrap(), &p);
            let v1m = group_speed(&MixedState::new(r1 - h, r2, &p).unwrap(), &p);
            let v2p = group_speed(&MixedState::new(r1, r2 + h, &p).unwrap(), &p);
            let v2m = group_speed(&MixedState::new(r1, r2 - h, &p).unwrap(), &p);
            let lam1_fd = v + r1 * (v1p - v1m) / (2.0 * h) + r2 * (v2p - v2m) / (2.0 * h);
            let (lam1, lam2) = eigen(&st, &p);
            assert!(abs(lam1 - lam1_fd) < 1e-4 * p.v_free);
            assert!(lam1 < lam2);
        }
    }

    #[test]
    fn intermediate_preserves_composition() {
        let p = params();
        let left = MixedState::new(0.02, 0.01, &p).unwrap();
        let right = MixedState::new(0.001, 0.004, &p).unwrap();
        let mid = riemann_intermediate(&left, &right, &p).unwrap();
        let w_l = left.rho2 / left.rho1;
        let w_m = mid.rho2 / mid.rho1;
        assert!(abs(w_m - w_l) <= 1e-12 * w_l.max(1.0));
        assert!(abs(group_speed(&mid, &p) - group_speed(&right, &p)) < 1e-10 * p.v_free);
    }

    #[test]
    fn intermediate_at_free_flow_right_is_on_critical_surface() {
        let p = params();
        let left = MixedState::new(0.02, 0.01, &p).unwrap();
        let right = MixedState::new(1e-4, 0.0, &p).unwrap();
        assert!(abs(group_speed(&right, &p) - p.v_free) < 1e-12);
        let mid = riemann_intermediate(&left, &right, &p).unwrap();
        // Bisection oracle along the ray: V = v_free holds on the whole
        // sub-critical segment, so invert the strictly monotone crowding
        // instead to locate the segment boundary.
        let total = left.total();
        let (d1, d2) = (left.rho1 / total, left.rho2 / total);
        let s = math::bisect_monotone(
            |s| MixedState { rho1: d1 * s, rho2: d2 * s }.crowding(&p),
            0.0,
            1.0 / (d1 * p.l1 + d2 * p.l2),
            1.0,
            1e-14,
        );
        assert!(abs(group_speed(&mid, &p) - p.v_free) < 1e-10 * p.v_free);
        assert!(abs(mid.total() - s) < 1e-6 * s);
        assert!(abs(mid.crowding(&p) - 1.0) < 1e-9);
    }

    #[test]
    fn intermediate_at_jam_right() {
        let p = params();
        let left = MixedState::new(0.02, 0.005, &p).unwrap();
        let jam = MixedState::new(0.05, 0.0, &p).unwrap();
        let mid = riemann_intermediate(&left, &jam, &p).unwrap();
        // Zero-speed locus: rho1 l1 + rho2 l2 = 1 along the left ray.
        assert!(abs(mid.rho1 * 20.0 + mid.rho2 * 40.0 - 1.0) < 1e-9);
        assert!(abs(mid.rho2 / mid.rho1 - 0.25) < 1e-12);
    }

    #[test]
    fn boundary_state_shock_cases() {
        let p = params();
        // Forward shock: boundary sees the left state.
        let left = MixedState::new(0.001, 0.0005, &p).unwrap();
        let right = MixedState::new(0.004, 0.001, &p).unwrap();
        let mid = riemann_intermediate(&left, &right, &p).unwrap();
        assert!(mid.total() > left.total());
        let b = godunov_boundary_state(&left, &right, &p).unwrap();
        assert_eq!(b, left);
        // Backward shock: boundary sees the intermediate state.
        let left = MixedState::new(0.02, 0.008, &p).unwrap();
        let jam = MixedState::new(0.0499, 0.0, &p).unwrap();
        let b = godunov_boundary_state(&left, &jam, &p).unwrap();
        let m = riemann_intermediate(&left, &jam, &p).unwrap();
        assert!(abs(b.rho1 - m.rho1) < 1e-15 && abs(b.rho2 - m.rho2) < 1e-15);
    }

    #[test]
    fn boundary_state_rarefaction_cases() {
        let p = params();
        // Free-flow left: lambda1 >= 0, boundary sees the left state.
        let left = MixedState::new(0.002, 0.001, &p).unwrap();
        let right = MixedState::new(0.0005, 0.0002, &p).unwrap();
        assert!(!left.is_congested(&p));
        let b = godunov_boundary_state(&left, &right, &p).unwrap();
        assert_eq!(b, left);
        // Congested left emptying into free flow: transonic, the boundary
        // state maximizes total flow on the ray and lambda1 changes sign
        // across it.
        let left = MixedState::new(0.012, 0.012, &p).unwrap();
        assert!(left.is_congested(&p));
        let right = MixedState::new(0.0001, 0.0001, &p).unwrap();
        let b = godunov_boundary_state(&left, &right, &p).unwrap();
        let flow = |s: &MixedState| s.total() * group_speed(s, &p);
        // Golden-section oracle along the ray w = 1.
        let (smax, qmax) = math::golden_max(
            |s| {
                let st = MixedState { rho1: 0.5 * s, rho2: 0.5 * s };
                st.total() * group_speed(&st, &p)
            },
            0.0,
            1.0 / (0.5 * 20.0 + 0.5 * 40.0),
            1e-12,
        );
        assert!(abs(flow(&b) - qmax) <= 1e-6 * qmax, "flow {} vs max {qmax}", flow(&b));
        assert!(abs(b.total() - smax) <= 1e-4 * smax);
        let just_below = MixedState { rho1: b.rho1 * 0.999, rho2: b.rho2 * 0.999 };
        let just_above = MixedState { rho1: b.rho1 * 1.001, rho2: b.rho2 * 1.001 };
        assert!(eigen(&just_below, &p).0 > 0.0);
        assert!(eigen(&just_above, &p).0 < 0.0);
    }

    #[test]
    fn vacuum_left_state() {
        let p = params();
        let vac = MixedState::new(0.0, 0.0, &p).unwrap();
        let ff = MixedState::new(0.001, 0.001, &p).unwrap();
        // Vacuum against free flow resolves to vacuum with zero flux.
        let b = godunov_boundary_state(&vac, &ff, &p).unwrap();
        assert!(b.is_vacuum());
        // Vacuum against congested traffic is flagged by the intermediate
        // construction.
        let congested = MixedState::new(0.03, 0.01, &p).unwrap();
        assert!(matches!(
            riemann_intermediate(&vac, &congested, &p),
            Err(MixedError::VacuumAmbiguity)
        ));
    }

    #[test]
    fn uniform_ring_is_steady() {
        let p = params();
        let st = MixedState::new(0.015, 0.006, &p).unwrap();
        let cells = alloc::vec![st; 32];
        let next = step_ring(&cells, &p, 40.0, 0.3).unwrap();
        for c in next {
            assert!(abs(c.rho1 - st.rho1) < 1e-15);
            assert!(abs(c.rho2 - st.rho2) < 1e-15);
        }
    }

    #[test]
    fn ring_conserves_both_classes() {
        let p = params();
        let n = 200;
        let length = 40000.0;
        let dx = length / n as f64;
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            let x = (i as f64 + 0.5) * dx;
            let s = libm::sin(2.0 * core::f64::consts::PI * x / length);
            cells.push(
                MixedState::new((0.2 + 0.16 * s) * 0.05, (0.15 + 0.1 * s) * 0.025, &p).unwrap(),
            );
        }
        let m1: f64 = cells.iter().map(|c| c.rho1).sum();
        let m2: f64 = cells.iter().map(|c| c.rho2).sum();
        for _ in 0..100 {
            cells = step_ring(&cells, &p, dx, 0.715 * dx / p.max_wave_speed()).unwrap();
        }
        let m1b: f64 = cells.iter().map(|c| c.rho1).sum();
        let m2b: f64 = cells.iter().map(|c| c.rho2).sum();
        assert!(abs(m1b - m1) <= 1e-9 * m1);
        assert!(abs(m2b - m2) <= 1e-9 * m2);
        for c in &cells {
            assert!(c.rho1 >= -1e-12 && c.rho2 >= -1e-12);
        }
    }

    #[test]
    fn cfl_violation_rejected() {
        let p = params();
        let st = MixedState::new(0.01, 0.01, &p).unwrap();
        let cells = alloc::vec![st; 8];
        assert!(matches!(step_ring(&cells, &p, 40.0, 1.0), Err(MixedError::CflViolation { .. })));
    }

    #[test]
    fn rejects_bad_states_and_params() {
        let p = params();
        assert!(MixedState::new(-0.1, 0.0, &p).is_err());
        assert!(MixedState::new(0.05, 0.02, &p).is_err()); // over the jam surface
        assert!(MixedParams::new(0.0, 20.0, 40.0, 1.5, 3.0).is_err());
    }
}
