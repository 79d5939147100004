//! Flux computation at merges, diverges, and general junctions in the
//! supply-demand framework.
//!
//! All rules share the same skeleton: upstream cells offer demands,
//! downstream cells offer supplies, and a distribution scheme picks the
//! unique flux vector. Conservation (total equals the sum of branch fluxes)
//! holds by construction.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::fd::{FdCurve, FdError};
use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub enum MergeScheme {
    /// Branch fluxes proportional to branch demands.
    Fairness,
    /// Two-branch priority scheme; `priority` is the first branch's share.
    DaganzoPriority { priority: f64 },
    /// Virtual supplies proportional to lane counts. The scheme can promise
    /// more than the downstream supply when the lane ratios exceed one; in
    /// strict mode the total is capped at the supply and the overshoot is
    /// reported.
    LebacqueLanes { up_lanes: Vec<f64>, down_lanes: f64, strict: bool },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JunctionError {
    NegativeInput,
    /// Daganzo priorities are defined for exactly two upstream branches.
    UnsupportedConfiguration(&'static str),
    /// Turning fractions must be non-negative and sum to one.
    BadFractions,
    /// Partial densities inconsistent with the total.
    InconsistentState,
    Fd(FdError),
}

impl fmt::Display for JunctionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JunctionError::NegativeInput => write!(f, "demands and supplies must be non-negative"),
            JunctionError::UnsupportedConfiguration(what) => write!(f, "unsupported junction: {what}"),
            JunctionError::BadFractions => write!(f, "turning fractions must be >= 0 and sum to 1"),
            JunctionError::InconsistentState => {
                write!(f, "commodity densities do not add up to the total density")
            }
            JunctionError::Fd(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for JunctionError {}

impl From<FdError> for JunctionError {
    fn from(e: FdError) -> Self {
        JunctionError::Fd(e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeFlux {
    pub total: f64,
    pub per_branch: Vec<f64>,
    /// Amount by which the lane scheme overshot the supply before capping
    /// (strict mode only; zero otherwise).
    pub oversupply: f64,
}

fn check_non_negative(values: &[f64]) -> Result<(), JunctionError> {
    if values.iter().any(|v| !(*v >= 0.0)) {
        return Err(JunctionError::NegativeInput);
    }
    Ok(())
}

/// Flux through a merge with the given distribution scheme.
pub fn merge_flux(
    demands: &[f64],
    supply: f64,
    scheme: &MergeScheme,
) -> Result<MergeFlux, JunctionError> {
    check_non_negative(demands)?;
    check_non_negative(&[supply])?;
    let total_demand: f64 = demands.iter().sum();
    match scheme {
        MergeScheme::Fairness => {
            let total = total_demand.min(supply);
            let per_branch = if total_demand > 0.0 {
                demands.iter().map(|d| total * d / total_demand).collect()
            } else {
                vec![0.0; demands.len()]
            };
            Ok(MergeFlux { total, per_branch, oversupply: 0.0 })
        }
        MergeScheme::DaganzoPriority { priority } => {
            if demands.len() != 2 {
                return Err(JunctionError::UnsupportedConfiguration(
                    "the priority scheme takes exactly two upstream branches",
                ));
            }
            if !(0.0..=1.0).contains(priority) {
                return Err(JunctionError::BadFractions);
            }
            let (d1, d2) = (demands[0], demands[1]);
            let total = (d1 + d2).min(supply);
            let per_branch = if supply >= d1 + d2 {
                vec![d1, d2]
            } else {
                let q1 = (priority * supply).max(supply - d2).min(d1);
                vec![q1, supply - q1]
            };
            Ok(MergeFlux { total, per_branch, oversupply: 0.0 })
        }
        MergeScheme::LebacqueLanes { up_lanes, down_lanes, strict } => {
            if up_lanes.len() != demands.len() || !(*down_lanes > 0.0) {
                return Err(JunctionError::UnsupportedConfiguration(
                    "lane counts must match the upstream branches",
                ));
            }
            if up_lanes.iter().any(|l| !(*l > 0.0)) {
                return Err(JunctionError::UnsupportedConfiguration("lane counts must be positive"));
            }
            let mut per_branch: Vec<f64> = demands
                .iter()
                .zip(up_lanes)
                .map(|(d, l)| d.min(l / down_lanes * supply))
                .collect();
            let mut total: f64 = per_branch.iter().sum();
            let mut oversupply = 0.0;
            if *strict && total > supply {
                oversupply = total - supply;
                if total > 0.0 {
                    let scale = supply / total;
                    for q in &mut per_branch {
                        *q *= scale;
                    }
                }
                total = supply;
            }
            Ok(MergeFlux { total, per_branch, oversupply })
        }
    }
}

/// Demand of a metered approach: the meter rate caps what the branch may
/// send.
pub fn metered_demand(demand: f64, rate: f64) -> f64 {
    demand.min(rate)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DivergeFlux {
    /// Out-flux of the upstream cell.
    pub out: f64,
    /// In-flux per downstream branch.
    pub per_branch: Vec<f64>,
}

/// Diverge where the out-flux splits by fixed fractions (the FIFO rule):
/// `out = min_d {D_u, S_d / xi_d}`. Branches with `xi_d = 0` impose no
/// constraint.
pub fn diverge_flux_proportional(
    demand: f64,
    supplies: &[f64],
    fractions: &[f64],
) -> Result<DivergeFlux, JunctionError> {
    check_non_negative(supplies)?;
    check_non_negative(&[demand])?;
    if fractions.len() != supplies.len() || fractions.iter().any(|x| !(*x >= 0.0)) {
        return Err(JunctionError::BadFractions);
    }
    let sum: f64 = fractions.iter().sum();
    if math::abs(sum - 1.0) > 1e-9 {
        return Err(JunctionError::BadFractions);
    }
    let mut out = demand;
    for (s, xi) in supplies.iter().zip(fractions) {
        if *xi > 0.0 {
            out = out.min(s / xi);
        }
    }
    let per_branch = fractions.iter().map(|xi| xi * out).collect();
    Ok(DivergeFlux { out, per_branch })
}

/// Diverge for traffic with no predefined route choice: branch in-fluxes
/// proportional to supplies.
pub fn diverge_flux_free(demand: f64, supplies: &[f64]) -> Result<DivergeFlux, JunctionError> {
    check_non_negative(supplies)?;
    check_non_negative(&[demand])?;
    let total_supply: f64 = supplies.iter().sum();
    let out = demand.min(total_supply);
    let per_branch = if total_supply > 0.0 {
        supplies.iter().map(|s| out * s / total_supply).collect()
    } else {
        vec![0.0; supplies.len()]
    };
    Ok(DivergeFlux { out, per_branch })
}

/// One commodity of a multi-commodity cell: its own density against the
/// frozen total of everything else.
#[derive(Clone, Copy, Debug)]
pub struct PartialState {
    pub rho_own: f64,
    /// Total density of the other commodities.
    pub k: f64,
    pub lanes: f64,
    pub fd: FdCurve,
}

impl PartialState {
    pub fn new(rho_own: f64, k: f64, lanes: f64, fd: FdCurve) -> Result<Self, JunctionError> {
        if !(rho_own >= -1e-12) || !(k >= -1e-12) {
            return Err(JunctionError::NegativeInput);
        }
        fd.speed(lanes, rho_own + k)?;
        Ok(PartialState { rho_own: rho_own.max(0.0), k: k.max(0.0), lanes, fd })
    }

    /// Partial flow `Q(rho; k) = rho V(a, rho + k)`.
    pub fn flow(&self) -> f64 {
        self.rho_own
            * self
                .fd
                .speed(self.lanes, self.rho_own + self.k)
                .expect("state was validated")
    }
}

/// Critical density and capacity of the partial fundamental diagram
/// `Q(rho; k) = rho V(a, rho + k)` for frozen `k`.
pub fn partial_critical(fd: &FdCurve, lanes: f64, k: f64) -> (f64, f64) {
    let jam = fd.jam_density(lanes);
    let k = k.clamp(0.0, jam);
    if let crate::fd::FdShape::Triangular { vf, .. } = *fd.shape() {
        // The congested branch maximum sits at total density sqrt(k * jam);
        // below the kink the partial flow is linear and peaks at the kink.
        let crit_total = fd.critical_density(lanes);
        let u = math::sqrt(k * jam);
        if u >= crit_total && k < jam {
            let gamma = u - k;
            let v = fd.speed(lanes, u).expect("within domain");
            return (gamma, gamma * v);
        }
        let gamma = (crit_total - k).max(0.0);
        return (gamma, gamma * vf);
    }
    let upper = (jam - k).max(0.0);
    if upper == 0.0 {
        return (0.0, 0.0);
    }
    let (gamma, qmax) = math::golden_max(
        |rho| rho * fd.speed(lanes, rho + k).expect("within domain"),
        0.0,
        upper,
        1e-10,
    );
    (gamma, qmax)
}

/// Partial traffic demand: the partial flow when under-critical, the partial
/// capacity otherwise.
pub fn partial_demand(ps: &PartialState) -> f64 {
    let (gamma, qmax) = partial_critical(&ps.fd, ps.lanes, ps.k);
    if ps.rho_own < gamma {
        ps.flow()
    } else {
        qmax
    }
}

/// Memoizing wrapper around [`partial_critical`] for hot paths. Keys are
/// quantized to a `1e-6 * jam` density grid; confine one cache per worker.
///
/// The grid must stay much finer than the accuracy target: near a partial
/// critical state the drainage margin `Qmax(k) - Q(rho; k)` is quadratically
/// small, so a coarse grid manufactures spurious discrete equilibria that
/// stall diverge rarefactions visibly above the true stationary state.
#[derive(Clone, Debug)]
pub struct PartialCriticalCache {
    fd: FdCurve,
    lanes: f64,
    cache: BTreeMap<u64, (f64, f64)>,
}

impl PartialCriticalCache {
    pub fn new(fd: FdCurve, lanes: f64) -> Self {
        PartialCriticalCache { fd, lanes, cache: BTreeMap::new() }
    }

    pub fn lookup(&mut self, k: f64) -> (f64, f64) {
        let jam = self.fd.jam_density(self.lanes);
        let step = 1e-6 * jam;
        let idx = math::round((k / step).clamp(0.0, 1e9)) as u64;
        if let Some(hit) = self.cache.get(&idx) {
            return *hit;
        }
        let kq = (idx as f64 * step).min(jam);
        let value = partial_critical(&self.fd, self.lanes, kq);
        self.cache.insert(idx, value);
        value
    }

    pub fn partial_demand(&mut self, rho_own: f64, k: f64) -> f64 {
        let (gamma, qmax) = self.lookup(k);
        if rho_own < gamma {
            rho_own * self.fd.speed(self.lanes, rho_own + k).expect("within domain")
        } else {
            qmax
        }
    }
}

/// Instantaneous-wave diverge: each branch flux is the minimum of the branch
/// supply and the commodity's partial demand; the upstream out-flux is their
/// sum.
pub fn diverge_flux_instantaneous(
    partials: &[PartialState],
    supplies: &[f64],
) -> Result<DivergeFlux, JunctionError> {
    check_non_negative(supplies)?;
    if partials.len() != supplies.len() {
        return Err(JunctionError::UnsupportedConfiguration(
            "one partial state per downstream branch",
        ));
    }
    if let Some(first) = partials.first() {
        let total = first.rho_own + first.k;
        let tol = 1e-9 * first.fd.jam_density(first.lanes).max(1.0);
        for ps in partials {
            if math::abs(ps.rho_own + ps.k - total) > tol {
                return Err(JunctionError::InconsistentState);
            }
        }
        let own_sum: f64 = partials.iter().map(|p| p.rho_own).sum();
        if math::abs(own_sum - total) > tol {
            return Err(JunctionError::InconsistentState);
        }
    }
    let per_branch: Vec<f64> = partials
        .iter()
        .zip(supplies)
        .map(|(ps, s)| s.min(partial_demand(ps)))
        .collect();
    let out = per_branch.iter().sum();
    Ok(DivergeFlux { out, per_branch })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralJunctionFlux {
    pub total: f64,
    pub per_upstream: Vec<f64>,
    pub per_downstream: Vec<f64>,
}

/// General junction combining the fairness merge with the proportional
/// diverge. `turning[u][d]` is the fraction of upstream `u` heading to
/// downstream `d`; every row must sum to one.
pub fn general_junction_flux(
    demands: &[f64],
    supplies: &[f64],
    turning: &[Vec<f64>],
) -> Result<GeneralJunctionFlux, JunctionError> {
    check_non_negative(demands)?;
    check_non_negative(supplies)?;
    if turning.len() != demands.len() {
        return Err(JunctionError::BadFractions);
    }
    for row in turning {
        if row.len() != supplies.len() || row.iter().any(|x| !(*x >= 0.0)) {
            return Err(JunctionError::BadFractions);
        }
        let sum: f64 = row.iter().sum();
        if math::abs(sum - 1.0) > 1e-9 {
            return Err(JunctionError::BadFractions);
        }
    }
    let total_demand: f64 = demands.iter().sum();
    if total_demand <= 0.0 {
        return Ok(GeneralJunctionFlux {
            total: 0.0,
            per_upstream: vec![0.0; demands.len()],
            per_downstream: vec![0.0; supplies.len()],
        });
    }
    // Demand-weighted aggregate fraction heading each downstream branch.
    let agg: Vec<f64> = (0..supplies.len())
        .map(|d| {
            demands.iter().zip(turning).map(|(dem, row)| dem * row[d]).sum::<f64>() / total_demand
        })
        .collect();
    let mut total = total_demand;
    for (s, frac) in supplies.iter().zip(&agg) {
        if *frac > 0.0 {
            total = total.min(s / frac);
        }
    }
    let per_upstream = demands.iter().map(|d| total * d / total_demand).collect();
    let per_downstream = agg.iter().map(|frac| total * frac).collect();
    Ok(GeneralJunctionFlux { total, per_upstream, per_downstream })
}

/// Wave fan of the instantaneous diverge Riemann problem in the `(rho, k)`
/// plane.
#[derive(Clone, Debug)]
pub struct DivergeFan {
    /// Solution type 1..=7.
    pub solution_type: u8,
    pub waves: Vec<DivergeWave>,
    /// Boundary flux of the commodity under study.
    pub flux: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct DivergeWave {
    pub kind: DivergeWaveKind,
    /// `(rho_own, k)` on each side.
    pub left: (f64, f64),
    pub right: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DivergeWaveKind {
    Shock { speed: f64 },
    Rarefaction { left_speed: f64, right_speed: f64 },
    Standing,
}

/// Characteristic speed of the decoupled system, `V + rho V'` at frozen `k`,
/// by centered difference.
fn partial_wave_speed(fd: &FdCurve, lanes: f64, rho: f64, k: f64, h: f64) -> f64 {
    let v = fd.speed(lanes, rho + k).expect("within domain");
    let jam = fd.jam_density(lanes);
    let lo = (rho + k - h).max(0.0);
    let hi = (rho + k + h).min(jam);
    if hi <= lo {
        return v;
    }
    let dv = (fd.speed(lanes, hi).expect("in domain") - fd.speed(lanes, lo).expect("in domain"))
        / (hi - lo);
    v + rho * dv
}

/// Root of `Q(rho; k) = q` on the congested branch `rho >= gamma`.
fn congested_partial_root(fd: &FdCurve, lanes: f64, k: f64, q: f64, gamma: f64) -> f64 {
    let jam = fd.jam_density(lanes);
    math::bisect_monotone(
        |rho| rho * fd.speed(lanes, rho + k).expect("within domain"),
        gamma,
        (jam - k).max(gamma),
        q,
        1e-12 * jam,
    )
}

/// Solve the Riemann problem of the one-commodity decoupled system: left
/// state `(rho_own, k)` upstream, pure single-commodity density `rho_r`
/// downstream (`k = 0` there). Returns the seven-type classification; the
/// flux always equals `min{supply(rho_r), partial_demand(left)}`.
pub fn classify_diverge_riemann(
    left: &PartialState,
    rho_r: f64,
) -> Result<DivergeFan, JunctionError> {
    let fd = left.fd;
    let lanes = left.lanes;
    fd.speed(lanes, rho_r)?;
    let jam = fd.jam_density(lanes);
    let (gamma_l, qmax_l) = partial_critical(&fd, lanes, left.k);
    let (gamma0, _) = partial_critical(&fd, lanes, 0.0);
    let q_l = left.flow();
    let q_r = fd.flow(lanes, rho_r).expect("validated");
    let supply_r = fd.supply(lanes, rho_r).expect("validated");
    let demand_l = if left.rho_own < gamma_l { q_l } else { qmax_l };
    let flux = supply_r.min(demand_l);

    let eq = |a: f64, b: f64| math::abs(a - b) <= 1e-9 * jam;
    let eq_q = |a: f64, b: f64| math::abs(a - b) <= 1e-9 * fd.capacity(lanes);
    let h = 1e-7 * jam;
    let mut waves: Vec<DivergeWave> = Vec::with_capacity(3);
    let standing =
        |l: (f64, f64), r: (f64, f64)| DivergeWave { kind: DivergeWaveKind::Standing, left: l, right: r };
    // Density of the pure downstream flow matching a given flow value.
    let pure_uc = |q: f64| lanes * fd.uc_density_lane(q / lanes);

    let solution_type;
    if left.rho_own < gamma_l {
        let rho1 = pure_uc(q_l);
        let u_l = (left.rho_own, left.k);
        let m = (rho1, 0.0);
        if q_r > q_l && !eq_q(q_r, q_l) {
            // Type 2: standing wave, then a forward shock.
            solution_type = 2;
            if !eq(rho1, left.rho_own) || left.k > 0.0 {
                waves.push(standing(u_l, m));
            }
            let s = if eq(rho_r, rho1) {
                partial_wave_speed(&fd, lanes, rho_r, 0.0, h)
            } else {
                (q_r - q_l) / (rho_r - rho1)
            };
            waves.push(DivergeWave { kind: DivergeWaveKind::Shock { speed: s }, left: m, right: (rho_r, 0.0) });
        } else if rho_r <= gamma0 {
            // Type 1: standing wave, then a forward rarefaction.
            solution_type = 1;
            if !eq(rho1, left.rho_own) || left.k > 0.0 {
                waves.push(standing(u_l, m));
            }
            if !eq(rho1, rho_r) {
                waves.push(DivergeWave {
                    kind: DivergeWaveKind::Rarefaction {
                        left_speed: partial_wave_speed(&fd, lanes, rho1, 0.0, h),
                        right_speed: partial_wave_speed(&fd, lanes, rho_r, 0.0, h),
                    },
                    left: m,
                    right: (rho_r, 0.0),
                });
            }
        } else {
            // Type 3: the congested downstream pushes a shock upstream.
            solution_type = 3;
            let rho1 = congested_partial_root(&fd, lanes, left.k, q_r, gamma_l);
            let m = (rho1, left.k);
            if !eq(rho1, left.rho_own) {
                let s = (q_r - q_l) / (rho1 - left.rho_own);
                waves.push(DivergeWave { kind: DivergeWaveKind::Shock { speed: s }, left: u_l, right: m });
            }
            waves.push(standing(m, (rho_r, 0.0)));
        }
    } else {
        let u_l = (left.rho_own, left.k);
        let u_star = (gamma_l, left.k);
        let left_rarefaction = |waves: &mut Vec<DivergeWave>| {
            if !eq(left.rho_own, gamma_l) {
                waves.push(DivergeWave {
                    kind: DivergeWaveKind::Rarefaction {
                        left_speed: partial_wave_speed(&fd, lanes, left.rho_own, left.k, h),
                        right_speed: partial_wave_speed(&fd, lanes, gamma_l, left.k, h).min(0.0),
                    },
                    left: u_l,
                    right: u_star,
                });
            }
        };
        if q_r > qmax_l && !eq_q(q_r, qmax_l) {
            // Type 5: rarefaction to the partial critical state, standing
            // wave, forward shock.
            solution_type = 5;
            let rho1 = pure_uc(qmax_l);
            left_rarefaction(&mut waves);
            waves.push(standing(u_star, (rho1, 0.0)));
            let s = if eq(rho_r, rho1) { 0.0 } else { (q_r - qmax_l) / (rho_r - rho1) };
            waves.push(DivergeWave {
                kind: DivergeWaveKind::Shock { speed: s },
                left: (rho1, 0.0),
                right: (rho_r, 0.0),
            });
        } else if rho_r <= gamma0 {
            // Type 4: rarefaction, standing wave, forward rarefaction.
            solution_type = 4;
            let rho1 = pure_uc(qmax_l);
            left_rarefaction(&mut waves);
            waves.push(standing(u_star, (rho1, 0.0)));
            if !eq(rho1, rho_r) {
                waves.push(DivergeWave {
                    kind: DivergeWaveKind::Rarefaction {
                        left_speed: partial_wave_speed(&fd, lanes, rho1, 0.0, h),
                        right_speed: partial_wave_speed(&fd, lanes, rho_r, 0.0, h),
                    },
                    left: (rho1, 0.0),
                    right: (rho_r, 0.0),
                });
            }
        } else if q_r >= q_l || eq_q(q_r, q_l) {
            // Type 6: backward rarefaction onto the flow level of the
            // downstream, then a standing wave.
            solution_type = 6;
            let rho1 = congested_partial_root(&fd, lanes, left.k, q_r, gamma_l);
            if !eq(rho1, left.rho_own) {
                waves.push(DivergeWave {
                    kind: DivergeWaveKind::Rarefaction {
                        left_speed: partial_wave_speed(&fd, lanes, left.rho_own, left.k, h),
                        right_speed: partial_wave_speed(&fd, lanes, rho1, left.k, h),
                    },
                    left: u_l,
                    right: (rho1, left.k),
                });
            }
            waves.push(standing((rho1, left.k), (rho_r, 0.0)));
        } else {
            // Type 7: backward shock, then a standing wave.
            solution_type = 7;
            let rho1 = congested_partial_root(&fd, lanes, left.k, q_r, gamma_l);
            if !eq(rho1, left.rho_own) {
                let s = (q_r - q_l) / (rho1 - left.rho_own);
                waves.push(DivergeWave { kind: DivergeWaveKind::Shock { speed: s }, left: u_l, right: (rho1, left.k) });
            }
            waves.push(standing((rho1, left.k), (rho_r, 0.0)));
        }
    }
    Ok(DivergeFan { solution_type, waves, flux })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::abs;

    #[test]
    fn fairness_merge_reproduces_published_split() {
        // Demands and supply of the merge experiment in rho_j l/tau units.
        let d = [2.0751, 0.5587];
        let m = merge_flux(&d, 2.0751, &MergeScheme::Fairness).unwrap();
        assert!(abs(m.total - 2.0751) < 1e-12);
        assert!(abs(m.per_branch[0] - 1.6349) < 5e-4);
        assert!(abs(m.per_branch[1] - 0.4402) < 5e-4);
    }

    #[test]
    fn unconstrained_merge_passes_demands() {
        for scheme in [
            MergeScheme::Fairness,
            MergeScheme::DaganzoPriority { priority: 0.7 },
            MergeScheme::LebacqueLanes { up_lanes: vec![2.0, 1.0], down_lanes: 3.0, strict: false },
        ] {
            let m = merge_flux(&[1.0, 0.5], 10.0, &scheme).unwrap();
            assert!(abs(m.per_branch[0] - 1.0) < 1e-12);
            assert!(abs(m.per_branch[1] - 0.5) < 1e-12);
        }
    }

    #[test]
    fn daganzo_priority_three_cases() {
        // Case (i): supply below D1/p1 splits by priorities.
        let m = merge_flux(&[1.0, 1.0], 1.0, &MergeScheme::DaganzoPriority { priority: 0.8 }).unwrap();
        assert!(abs(m.per_branch[0] - 0.8) < 1e-12);
        assert!(abs(m.per_branch[1] - 0.2) < 1e-12);
        // Case (ii): the favored branch saturates at its demand.
        let m = merge_flux(&[1.0, 1.0], 1.5, &MergeScheme::DaganzoPriority { priority: 0.8 }).unwrap();
        assert!(abs(m.per_branch[0] - 1.0) < 1e-12);
        assert!(abs(m.per_branch[1] - 0.5) < 1e-12);
        assert!(matches!(
            merge_flux(&[1.0, 1.0, 1.0], 1.0, &MergeScheme::DaganzoPriority { priority: 0.5 }),
            Err(JunctionError::UnsupportedConfiguration(_))
        ));
    }

    #[test]
    fn lebacque_lane_scheme_can_oversupply() {
        // Two two-lane branches into three lanes: fractions sum to 4/3 and
        // saturated demands overrun the supply.
        let scheme =
            MergeScheme::LebacqueLanes { up_lanes: vec![2.0, 2.0], down_lanes: 3.0, strict: false };
        let m = merge_flux(&[10.0, 10.0], 3.0, &scheme).unwrap();
        assert!(m.total > 3.0, "documented failure mode: total {} exceeds supply", m.total);
        let strict =
            MergeScheme::LebacqueLanes { up_lanes: vec![2.0, 2.0], down_lanes: 3.0, strict: true };
        let m = merge_flux(&[10.0, 10.0], 3.0, &strict).unwrap();
        assert!(abs(m.total - 3.0) < 1e-12);
        assert!(m.oversupply > 0.0);
    }

    #[test]
    fn metering() {
        assert!(abs(metered_demand(0.5587, 0.3445) - 0.3445) < 1e-12);
        assert_eq!(metered_demand(0.5587, 0.0), 0.0);
        assert!(abs(metered_demand(0.3, 1.0) - 0.3) < 1e-12);
    }

    #[test]
    fn proportional_diverge_matches_network_experiment() {
        // Out-flux of the three-lane feeder: min{3qc, 2qc/0.7, 2qc/0.3}.
        let qc = 2340.0;
        let d = diverge_flux_proportional(3.0 * qc, &[2.0 * qc, 2.0 * qc], &[0.7, 0.3]).unwrap();
        assert!(abs(d.out - 20.0 / 7.0 * qc) < 1e-9);
        assert!(abs(d.per_branch[0] - 2.0 * qc) < 1e-9);
        assert!(abs(d.per_branch[1] - 6.0 / 7.0 * qc) < 1e-9);
    }

    #[test]
    fn proportional_diverge_edge_cases() {
        let d = diverge_flux_proportional(5.0, &[0.0, 2.0], &[0.5, 0.5]).unwrap();
        assert_eq!(d.out, 0.0);
        let d = diverge_flux_proportional(5.0, &[3.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(abs(d.out - 3.0) < 1e-12);
        assert!(matches!(
            diverge_flux_proportional(1.0, &[1.0, 1.0], &[0.6, 0.3]),
            Err(JunctionError::BadFractions)
        ));
    }

    #[test]
    fn free_diverge_splits_by_supply() {
        let qc = 1.0;
        let d = diverge_flux_free(qc, &[2.0 * qc, 2.0 * qc]).unwrap();
        assert!(abs(d.out - qc) < 1e-12);
        assert!(abs(d.per_branch[0] - 0.5 * qc) < 1e-12);
        let d = diverge_flux_free(10.0, &[1.0, 2.0]).unwrap();
        assert!(abs(d.out - 3.0) < 1e-12);
        assert!(abs(d.per_branch[0] - 1.0) < 1e-12);
        assert!(abs(d.per_branch[1] - 2.0) < 1e-12);
        let d = diverge_flux_free(10.0, &[0.0, 2.0]).unwrap();
        assert_eq!(d.per_branch[0], 0.0);
        assert!(abs(d.per_branch[1] - 2.0) < 1e-12);
    }

    #[test]
    fn general_junction_reduces_to_merge_and_diverge() {
        let demands = [1.2, 0.4];
        let supplies = [1.0];
        let turning = vec![vec![1.0], vec![1.0]];
        let g = general_junction_flux(&demands, &supplies, &turning).unwrap();
        let m = merge_flux(&demands, supplies[0], &MergeScheme::Fairness).unwrap();
        assert!(abs(g.total - m.total) < 1e-12);
        for (a, b) in g.per_upstream.iter().zip(&m.per_branch) {
            assert!(abs(a - b) < 1e-12);
        }

        let xi = [0.7, 0.3];
        let g = general_junction_flux(&[3.0], &[2.0, 2.0], &[xi.to_vec()]).unwrap();
        let d = diverge_flux_proportional(3.0, &[2.0, 2.0], &xi).unwrap();
        assert!(abs(g.total - d.out) < 1e-12);
        for (a, b) in g.per_downstream.iter().zip(&d.per_branch) {
            assert!(abs(a - b) < 1e-12);
        }
    }

    #[test]
    fn general_junction_symmetric_example() {
        let qc = 1.0;
        let g = general_junction_flux(&[qc, qc], &[qc, qc], &[vec![0.5, 0.5], vec![0.5, 0.5]])
            .unwrap();
        assert!(abs(g.total - 2.0 * qc) < 1e-12);
        assert!(abs(g.per_upstream[0] - qc) < 1e-12);
        assert!(abs(g.per_downstream[0] - qc) < 1e-12);
    }

    #[test]
    fn zero_total_demand_is_all_zero() {
        let m = merge_flux(&[0.0, 0.0], 5.0, &MergeScheme::Fairness).unwrap();
        assert_eq!(m.total, 0.0);
        assert!(m.per_branch.iter().all(|q| *q == 0.0));
        let g = general_junction_flux(&[0.0], &[1.0], &[vec![1.0]]).unwrap();
        assert_eq!(g.total, 0.0);
    }

    fn tri() -> FdCurve {
        FdCurve::triangular(65.0, 36.0, 180.0).unwrap()
    }

    #[test]
    fn partial_demand_reduces_to_plain_demand_at_k0() {
        let fd = tri();
        for rho in [0.0, 10.0, 36.0, 90.0, 180.0] {
            let ps = PartialState::new(rho, 0.0, 1.0, fd).unwrap();
            let d = partial_demand(&ps);
            assert!(abs(d - fd.demand(1.0, rho).unwrap()) <= 1e-9 * 2340.0, "rho = {rho}");
        }
    }

    #[test]
    fn partial_demand_vanishes_without_own_vehicles() {
        let fd = tri();
        let ps = PartialState::new(0.0, 180.0, 1.0, fd).unwrap();
        assert_eq!(partial_demand(&ps), 0.0);
    }

    #[test]
    fn triangular_partial_critical_matches_golden_section() {
        let fd = tri();
        for k in [0.0, 5.0, 20.0, 36.0, 100.0, 179.0] {
            let (gamma, qmax) = partial_critical(&fd, 1.0, k);
            // Independent golden-section check of the closed form.
            let (g2, q2) = crate::math::golden_max(
                |rho| rho * fd.speed(1.0, rho + k).unwrap(),
                0.0,
                180.0 - k,
                1e-12,
            );
            assert!(abs(gamma - g2) < 1e-5 * 180.0, "k = {k}: {gamma} vs {g2}");
            assert!(abs(qmax - q2) < 1e-8 * 2340.0, "k = {k}");
        }
    }

    #[test]
    fn cache_agrees_with_direct_evaluation() {
        let fd = FdCurve::exponential(5.0, -1.0, 180.0).unwrap();
        let mut cache = PartialCriticalCache::new(fd, 2.0);
        for k in [0.0, 1.0, 33.3, 100.0, 250.0] {
            let (g, q) = cache.lookup(k);
            let step = 1e-6 * fd.jam_density(2.0);
            let kq = (libm::round(k / step) * step).min(fd.jam_density(2.0));
            let (ge, qe) = partial_critical(&fd, 2.0, kq);
            assert!(abs(g - ge) < 1e-12);
            assert!(abs(q - qe) < 1e-12);
        }
    }

    #[test]
    fn instantaneous_diverge_conserves_and_bounds() {
        let fd = FdCurve::exponential(5.0, -1.0, 180.0).unwrap();
        let total = 1.1111 * 180.0;
        let p0 = PartialState::new(0.8 * total, 0.2 * total, 2.0, fd).unwrap();
        let p1 = PartialState::new(0.2 * total, 0.8 * total, 2.0, fd).unwrap();
        let supplies = [fd.supply(2.0, 0.0).unwrap(), fd.supply(1.0, 100.0).unwrap()];
        let d = diverge_flux_instantaneous(&[p0, p1], &supplies).unwrap();
        assert!(abs(d.out - d.per_branch.iter().sum::<f64>()) <= 1e-12 * d.out.max(1.0));
        for (q, s) in d.per_branch.iter().zip(&supplies) {
            assert!(*q <= s + 1e-12);
        }
    }

    #[test]
    fn instantaneous_diverge_blocked_branch() {
        let fd = tri();
        let p0 = PartialState::new(80.0, 20.0, 1.0, fd).unwrap();
        let p1 = PartialState::new(20.0, 80.0, 1.0, fd).unwrap();
        let d = diverge_flux_instantaneous(&[p0, p1], &[2340.0, 0.0]).unwrap();
        assert_eq!(d.per_branch[1], 0.0);
        assert!(d.per_branch[0] > 0.0);
    }

    #[test]
    fn instantaneous_diverge_rejects_inconsistent_partials() {
        let fd = tri();
        let p0 = PartialState::new(80.0, 20.0, 1.0, fd).unwrap();
        let p1 = PartialState::new(30.0, 80.0, 1.0, fd).unwrap();
        assert!(matches!(
            diverge_flux_instantaneous(&[p0, p1], &[1.0, 1.0]),
            Err(JunctionError::InconsistentState)
        ));
    }

    #[test]
    fn diverge_riemann_types() {
        let fd = tri();
        // UC left, downstream carrying more flow: type 2, flux Q(U_L).
        let left = PartialState::new(10.0, 5.0, 1.0, fd).unwrap();
        let fan = classify_diverge_riemann(&left, 36.0).unwrap();
        assert_eq!(fan.solution_type, 2);
        assert!(abs(fan.flux - left.flow()) < 1e-9);
        // OC left, jammed downstream: type 7, flux 0.
        let left = PartialState::new(120.0, 40.0, 1.0, fd).unwrap();
        let fan = classify_diverge_riemann(&left, 180.0).unwrap();
        assert_eq!(fan.solution_type, 7);
        assert!(abs(fan.flux) < 1e-9);
    }

    #[test]
    fn diverge_riemann_flux_equals_supply_demand_rule() {
        let fd = FdCurve::exponential(5.0, -1.0, 180.0).unwrap();
        let jam = 180.0;
        for i in 0..20 {
            for j in 0..20 {
                for r in 0..=20 {
                    let rho_own = jam * i as f64 / 20.0;
                    let k = (jam - rho_own) * j as f64 / 20.0;
                    let rho_r = jam * r as f64 / 20.0;
                    let left = PartialState::new(rho_own, k, 1.0, fd).unwrap();
                    let fan = classify_diverge_riemann(&left, rho_r).unwrap();
                    let expected = fd.supply(1.0, rho_r).unwrap().min(partial_demand(&left));
                    assert!(
                        abs(fan.flux - expected) <= 1e-9 * fd.capacity(1.0),
                        "rho = {rho_own}, k = {k}, rho_r = {rho_r}"
                    );
                }
            }
        }
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(matches!(
            merge_flux(&[-1.0], 1.0, &MergeScheme::Fairness),
            Err(JunctionError::NegativeInput)
        ));
        assert!(matches!(diverge_flux_free(-1.0, &[1.0]), Err(JunctionError::NegativeInput)));
    }
}
