//! Fundamental diagram families and the demand/supply primitives.
//!
//! A curve stores per-lane parameters; callers pass the lane count `a` and
//! the absolute density `rho`, and the curve evaluates at the per-lane
//! density `rho / a`. Speeds and flows are expressed in the canonical units
//! of the scenario's [`crate::units::UnitSystem`]; the Kerner-Konhäuser form
//! carries its own coefficient in `l/tau`, so scenarios using it must adopt
//! that unit system.

use core::fmt;

use crate::math;

/// Relative slack accepted on the density domain to absorb accumulation
/// roundoff from conservative updates. Evaluation clamps to the exact domain.
const DOMAIN_SLACK: f64 = 1e-9;

/// Relative bracket tolerance of the golden-section search for the critical
/// density of the smooth families, computed once at construction.
const CRITICAL_TOL: f64 = 1e-10;

const KK_COEF: f64 = 5.0461;
const KK_CENTER: f64 = 0.25;
const KK_WIDTH: f64 = 0.06;
const KK_OFFSET: f64 = 3.72e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FdShape {
    /// Triangular flow-density relation with free-flow speed `vf`, per-lane
    /// critical density `rho_c`, and per-lane jam density `rho_j`.
    Triangular { vf: f64, rho_c: f64, rho_j: f64 },
    /// Greenshields: `V = vf (1 - rho / rho_j)`.
    Greenshields { vf: f64, rho_j: f64 },
    /// Kerner-Konhäuser logistic speed-density model, speeds in `l/tau`.
    KernerKonhauser { rho_j: f64 },
    /// Exponential (Newell / del Castillo) form with jam wave speed `c_j < 0`:
    /// `V = vf [1 - exp{(|c_j|/vf)(1 - rho_j/rho)}]`.
    Exponential { vf: f64, c_j: f64, rho_j: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdCurve {
    shape: FdShape,
    /// Per-lane critical density (maximizer of per-lane flow).
    alpha: f64,
    /// Per-lane capacity.
    cap_lane: f64,
    /// Bound on the characteristic speed `|V + r V'(r)|` over the domain.
    max_wave_speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FdError {
    InvalidParams(&'static str),
    /// Density or lane count outside the admissible domain.
    Domain { lanes: f64, density: f64 },
}

impl fmt::Display for FdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FdError::InvalidParams(what) => write!(f, "invalid fundamental diagram: {what}"),
            FdError::Domain { lanes, density } => {
                write!(f, "state (a={lanes}, rho={density}) outside fundamental diagram domain")
            }
        }
    }
}

impl core::error::Error for FdError {}

impl FdCurve {
    pub fn triangular(vf: f64, rho_c: f64, rho_j: f64) -> Result<Self, FdError> {
        if !(vf > 0.0) {
            return Err(FdError::InvalidParams("free-flow speed must be positive"));
        }
        if !(rho_c > 0.0 && rho_c < rho_j) {
            return Err(FdError::InvalidParams("need 0 < rho_c < rho_j"));
        }
        let shape = FdShape::Triangular { vf, rho_c, rho_j };
        let congested_wave = vf * rho_c / (rho_j - rho_c);
        Ok(FdCurve {
            shape,
            alpha: rho_c,
            cap_lane: vf * rho_c,
            max_wave_speed: if vf > congested_wave { vf } else { congested_wave },
        })
    }

    pub fn greenshields(vf: f64, rho_j: f64) -> Result<Self, FdError> {
        if !(vf > 0.0) || !(rho_j > 0.0) {
            return Err(FdError::InvalidParams("need vf > 0 and rho_j > 0"));
        }
        Ok(FdCurve {
            shape: FdShape::Greenshields { vf, rho_j },
            alpha: 0.5 * rho_j,
            cap_lane: 0.25 * vf * rho_j,
            max_wave_speed: vf,
        })
    }

    pub fn kerner_konhauser(rho_j: f64) -> Result<Self, FdError> {
        if !(rho_j > 0.0) {
            return Err(FdError::InvalidParams("need rho_j > 0"));
        }
        let shape = FdShape::KernerKonhauser { rho_j };
        let (alpha, cap_lane) =
            math::golden_max(|r| r * shape_speed(&shape, r), 0.0, rho_j, CRITICAL_TOL);
        // The logistic flux is not concave, so scan for the extreme
        // characteristic speeds instead of relying on the endpoints.
        let mut max_wave = 0.0f64;
        let n = 4000;
        for i in 0..=n {
            let r = rho_j * i as f64 / n as f64;
            let lam = math::abs(shape_speed(&shape, r) + r * shape_speed_prime(&shape, r));
            if lam > max_wave {
                max_wave = lam;
            }
        }
        Ok(FdCurve { shape, alpha, cap_lane, max_wave_speed: max_wave })
    }

    pub fn exponential(vf: f64, c_j: f64, rho_j: f64) -> Result<Self, FdError> {
        if !(vf > 0.0) || !(rho_j > 0.0) {
            return Err(FdError::InvalidParams("need vf > 0 and rho_j > 0"));
        }
        if !(c_j < 0.0) {
            return Err(FdError::InvalidParams("jam wave speed c_j must be negative"));
        }
        let shape = FdShape::Exponential { vf, c_j, rho_j };
        let (alpha, cap_lane) =
            math::golden_max(|r| r * shape_speed(&shape, r), 0.0, rho_j, CRITICAL_TOL);
        let max_wave = if vf > -c_j { vf } else { -c_j };
        Ok(FdCurve { shape, alpha, cap_lane, max_wave_speed: max_wave })
    }

    pub fn shape(&self) -> &FdShape {
        &self.shape
    }

    pub fn same_family(&self, other: &FdCurve) -> bool {
        self.shape == other.shape
    }

    /// Per-lane jam density.
    pub fn jam_density_lane(&self) -> f64 {
        match self.shape {
            FdShape::Triangular { rho_j, .. }
            | FdShape::Greenshields { rho_j, .. }
            | FdShape::KernerKonhauser { rho_j }
            | FdShape::Exponential { rho_j, .. } => rho_j,
        }
    }

    pub fn jam_density(&self, lanes: f64) -> f64 {
        lanes * self.jam_density_lane()
    }

    /// Per-lane critical density (the ratio `alpha` of the transition curve).
    pub fn critical_density_lane(&self) -> f64 {
        self.alpha
    }

    pub fn critical_density(&self, lanes: f64) -> f64 {
        lanes * self.alpha
    }

    pub fn capacity_lane(&self) -> f64 {
        self.cap_lane
    }

    pub fn capacity(&self, lanes: f64) -> f64 {
        lanes * self.cap_lane
    }

    /// Bound on `|V + r V'|`, the characteristic speed, used for CFL checks.
    pub fn max_wave_speed(&self) -> f64 {
        self.max_wave_speed
    }

    pub fn free_flow_speed(&self) -> f64 {
        shape_speed(&self.shape, 0.0)
    }

    fn check(&self, lanes: f64, density: f64) -> Result<f64, FdError> {
        if !(lanes > 0.0) || !density.is_finite() {
            return Err(FdError::Domain { lanes, density });
        }
        let jam = self.jam_density(lanes);
        let slack = DOMAIN_SLACK * jam;
        if density < -slack || density > jam + slack {
            return Err(FdError::Domain { lanes, density });
        }
        let r = density / lanes;
        Ok(r.clamp(0.0, self.jam_density_lane()))
    }

    /// Speed `V(a, rho)`.
    pub fn speed(&self, lanes: f64, density: f64) -> Result<f64, FdError> {
        let r = self.check(lanes, density)?;
        Ok(shape_speed(&self.shape, r))
    }

    /// Flow-rate `Q(a, rho) = rho V(a, rho)`.
    pub fn flow(&self, lanes: f64, density: f64) -> Result<f64, FdError> {
        let r = self.check(lanes, density)?;
        Ok(lanes * r * shape_speed(&self.shape, r))
    }

    /// Is the state under-critical (strictly below the transition curve)?
    /// States exactly on the curve are reported as under-critical; demand and
    /// supply agree there so fluxes are unaffected.
    pub fn is_under_critical(&self, lanes: f64, density: f64) -> Result<bool, FdError> {
        let r = self.check(lanes, density)?;
        Ok(r <= self.alpha)
    }

    /// Maximum flow the state can discharge: flow if under-critical, else
    /// capacity.
    pub fn demand(&self, lanes: f64, density: f64) -> Result<f64, FdError> {
        let r = self.check(lanes, density)?;
        if r < self.alpha {
            Ok(lanes * r * shape_speed(&self.shape, r))
        } else {
            Ok(self.capacity(lanes))
        }
    }

    /// Maximum flow the state can accept: capacity if under-critical, else
    /// flow.
    pub fn supply(&self, lanes: f64, density: f64) -> Result<f64, FdError> {
        let r = self.check(lanes, density)?;
        if r > self.alpha {
            Ok(lanes * r * shape_speed(&self.shape, r))
        } else {
            Ok(self.capacity(lanes))
        }
    }

    /// Per-lane density on the under-critical branch carrying the given
    /// per-lane flow.
    pub(crate) fn uc_density_lane(&self, flow_lane: f64) -> f64 {
        let q = flow_lane.clamp(0.0, self.cap_lane);
        match self.shape {
            FdShape::Triangular { vf, .. } => q / vf,
            _ => {
                let rho_j = self.jam_density_lane();
                math::bisect_monotone(
                    |r| r * shape_speed(&self.shape, r),
                    0.0,
                    self.alpha,
                    q,
                    1e-12 * rho_j,
                )
            }
        }
    }

    /// Per-lane density on the over-critical branch carrying the given
    /// per-lane flow.
    pub(crate) fn oc_density_lane(&self, flow_lane: f64) -> f64 {
        let q = flow_lane.clamp(0.0, self.cap_lane);
        match self.shape {
            FdShape::Triangular { vf, rho_c, rho_j } => {
                rho_j - q * (rho_j - rho_c) / (rho_c * vf)
            }
            _ => {
                let rho_j = self.jam_density_lane();
                math::bisect_monotone(
                    |r| r * shape_speed(&self.shape, r),
                    self.alpha,
                    rho_j,
                    q,
                    1e-12 * rho_j,
                )
            }
        }
    }

    /// Characteristic speed `V + r V'` at per-lane density `r`.
    pub(crate) fn wave_speed_lane(&self, r: f64) -> f64 {
        shape_speed(&self.shape, r) + r * shape_speed_prime(&self.shape, r)
    }

    /// One-sided characteristic speed. The triangular flux has a kink at the
    /// critical density where the speed jumps; `side` selects the branch the
    /// evaluation approaches from. Smooth families ignore it.
    pub(crate) fn wave_speed_lane_sided(&self, r: f64, side: BranchSide) -> f64 {
        if let FdShape::Triangular { vf, rho_c, rho_j } = self.shape {
            let at_kink = math::abs(r - rho_c) <= 1e-12 * rho_j;
            let congested = r > rho_c || (at_kink && side == BranchSide::Above);
            return if congested { -vf * rho_c / (rho_j - rho_c) } else { vf };
        }
        self.wave_speed_lane(r)
    }
}

/// Side a kinked flux is approached from when evaluating wave speeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BranchSide {
    /// From densities below `r`.
    Below,
    /// From densities above `r`.
    Above,
}

fn shape_speed(shape: &FdShape, r: f64) -> f64 {
    match *shape {
        FdShape::Triangular { vf, rho_c, rho_j } => {
            if r <= rho_c {
                vf
            } else {
                vf * rho_c / (rho_j - rho_c) * (rho_j - r) / r
            }
        }
        FdShape::Greenshields { vf, rho_j } => vf * (1.0 - r / rho_j),
        FdShape::KernerKonhauser { rho_j } => {
            let e = math::exp((r / rho_j - KK_CENTER) / KK_WIDTH);
            let v = KK_COEF * (1.0 / (1.0 + e) - KK_OFFSET);
            if v > 0.0 {
                v
            } else {
                0.0
            }
        }
        FdShape::Exponential { vf, c_j, rho_j } => {
            if r <= 0.0 {
                vf
            } else {
                vf * (1.0 - math::exp((-c_j / vf) * (1.0 - rho_j / r)))
            }
        }
    }
}

fn shape_speed_prime(shape: &FdShape, r: f64) -> f64 {
    match *shape {
        FdShape::Triangular { vf, rho_c, rho_j } => {
            if r <= rho_c {
                0.0
            } else {
                -vf * rho_c / (rho_j - rho_c) * rho_j / (r * r)
            }
        }
        FdShape::Greenshields { vf, rho_j } => -vf / rho_j,
        FdShape::KernerKonhauser { rho_j } => {
            let e = math::exp((r / rho_j - KK_CENTER) / KK_WIDTH);
            let v = KK_COEF * (1.0 / (1.0 + e) - KK_OFFSET);
            if v <= 0.0 {
                0.0
            } else {
                -KK_COEF * e / (KK_WIDTH * rho_j * (1.0 + e) * (1.0 + e))
            }
        }
        FdShape::Exponential { vf, c_j, rho_j } => {
            if r <= 0.0 {
                0.0
            } else {
                let beta = -c_j / vf;
                -vf * math::exp(beta * (1.0 - rho_j / r)) * beta * rho_j / (r * r)
            }
        }
    }
}
