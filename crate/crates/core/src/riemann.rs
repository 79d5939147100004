//! Exact Riemann solver for the augmented inhomogeneous-link model
//! `U_t + F(U)_x = 0` with `U = (a, rho)`.
//!
//! The lane count obeys `a_t = 0`, which makes the system a nonlinear
//! resonant one: besides shocks and rarefactions there are standing waves
//! pinned at `x = 0` that conserve flow. The entropy conditions are Lax
//! ordering plus the Isaacson-Temple rule that a standing wave cannot cross
//! the transition curve. Ten wave-fan types result; the boundary flux they
//! induce always equals `min{demand(U_L), supply(U_R)}`.

use alloc::vec::Vec;
use core::fmt;

use crate::fd::{BranchSide, FdCurve, FdError};

/// Augmented state of the inhomogeneous link model.
#[derive(Clone, Copy, Debug)]
pub struct RoadState {
    pub lanes: f64,
    pub density: f64,
    pub fd: FdCurve,
}

impl RoadState {
    pub fn new(lanes: f64, density: f64, fd: FdCurve) -> Result<Self, FdError> {
        // Evaluating the speed validates the domain.
        fd.speed(lanes, density)?;
        Ok(RoadState { lanes, density, fd })
    }

    pub fn flow(&self) -> f64 {
        self.fd.flow(self.lanes, self.density).expect("state was validated")
    }

    pub fn is_under_critical(&self) -> bool {
        self.fd
            .is_under_critical(self.lanes, self.density)
            .expect("state was validated")
    }

    pub fn demand(&self) -> f64 {
        self.fd.demand(self.lanes, self.density).expect("state was validated")
    }

    pub fn supply(&self) -> f64 {
        self.fd.supply(self.lanes, self.density).expect("state was validated")
    }

    pub fn capacity(&self) -> f64 {
        self.fd.capacity(self.lanes)
    }

    /// Characteristic speed `lambda_1 = V + (rho/a) V'(rho/a)`.
    pub fn wave_speed(&self) -> f64 {
        self.fd.wave_speed_lane(per_lane(self))
    }
}

fn per_lane(u: &RoadState) -> f64 {
    (u.density / u.lanes).clamp(0.0, u.fd.jam_density_lane())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WaveKind {
    /// Discontinuity moving at the Rankine-Hugoniot speed.
    Shock { speed: f64 },
    /// Fan spanning characteristic speeds `[left_speed, right_speed]`.
    Rarefaction { left_speed: f64, right_speed: f64 },
    /// Zero-speed wave pinned at the inhomogeneity, conserving flow.
    Standing,
}

impl WaveKind {
    fn leftmost_speed(&self) -> f64 {
        match *self {
            WaveKind::Shock { speed } => speed,
            WaveKind::Rarefaction { left_speed, .. } => left_speed,
            WaveKind::Standing => 0.0,
        }
    }

    fn rightmost_speed(&self) -> f64 {
        match *self {
            WaveKind::Shock { speed } => speed,
            WaveKind::Rarefaction { right_speed, .. } => right_speed,
            WaveKind::Standing => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Wave {
    pub kind: WaveKind,
    pub left: RoadState,
    pub right: RoadState,
}

/// Entropy-satisfying self-similar solution of a Riemann problem.
#[derive(Clone, Debug)]
pub struct WaveFan {
    /// Solution type 1..=10 of the boundary-flux classification.
    pub solution_type: u8,
    /// Waves ordered by increasing speed. Zero-strength waves are omitted,
    /// so identical initial states produce an empty list.
    pub waves: Vec<Wave>,
    /// Flux through `x = 0`; self-similarity makes the time average equal
    /// the instantaneous value.
    pub flux: f64,
}

impl WaveFan {
    /// Largest violation of the non-decreasing (Lax) speed ordering.
    pub fn ordering_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        for pair in self.waves.windows(2) {
            let gap = pair[0].kind.rightmost_speed() - pair[1].kind.leftmost_speed();
            if gap > defect {
                defect = gap;
            }
        }
        defect
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RiemannError {
    MismatchedFamily,
    State(FdError),
}

impl fmt::Display for RiemannError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiemannError::MismatchedFamily => {
                write!(f, "left and right states use different fundamental diagram families")
            }
            RiemannError::State(e) => write!(f, "invalid state: {e}"),
        }
    }
}

impl core::error::Error for RiemannError {}

impl From<FdError> for RiemannError {
    fn from(e: FdError) -> Self {
        RiemannError::State(e)
    }
}

/// Boundary flux by the supply-demand rule `min{demand(U_L), supply(U_R)}`.
pub fn boundary_flux_sd(left: &RoadState, right: &RoadState) -> Result<f64, RiemannError> {
    if !left.fd.same_family(&right.fd) {
        return Err(RiemannError::MismatchedFamily);
    }
    Ok(left.demand().min(right.supply()))
}

/// Boundary flux from the wave-fan classification. Equal to
/// [`boundary_flux_sd`] on every admissible pair.
pub fn boundary_flux_riemann(left: &RoadState, right: &RoadState) -> Result<f64, RiemannError> {
    Ok(classify(left, right)?.flux)
}

struct FanBuilder {
    waves: Vec<Wave>,
}

impl FanBuilder {
    fn new() -> Self {
        FanBuilder { waves: Vec::with_capacity(3) }
    }

    fn standing(&mut self, left: RoadState, right: RoadState) {
        if states_equal(&left, &right) {
            return;
        }
        self.waves.push(Wave { kind: WaveKind::Standing, left, right });
    }

    /// Shock or degenerate contact between states on the same road.
    fn shock(&mut self, left: RoadState, right: RoadState) {
        if states_equal(&left, &right) {
            return;
        }
        let drho = right.density - left.density;
        let speed = if drho == 0.0 {
            left.wave_speed()
        } else {
            (right.flow() - left.flow()) / drho
        };
        self.waves.push(Wave { kind: WaveKind::Shock { speed }, left, right });
    }

    fn rarefaction(&mut self, left: RoadState, right: RoadState) {
        if states_equal(&left, &right) {
            return;
        }
        // Density decreases across an entropic rarefaction, so the fan's
        // interior lies below the left density and above the right one; edge
        // speeds are the one-sided characteristic values from that side.
        self.waves.push(Wave {
            kind: WaveKind::Rarefaction {
                left_speed: left.fd.wave_speed_lane_sided(per_lane(&left), BranchSide::Below),
                right_speed: right.fd.wave_speed_lane_sided(per_lane(&right), BranchSide::Above),
            },
            left,
            right,
        });
    }

    fn finish(self, solution_type: u8, flux: f64) -> WaveFan {
        WaveFan { solution_type, waves: self.waves, flux }
    }
}

fn states_equal(a: &RoadState, b: &RoadState) -> bool {
    // Intermediate states are reconstructed by inverting the flow, so allow
    // roundoff-scale wobble when deciding a wave is degenerate.
    let tol = 1e-9 * a.fd.jam_density(a.lanes.max(b.lanes));
    a.lanes == b.lanes && crate::math::abs(a.density - b.density) <= tol
}

fn state_on(template: &RoadState, lanes: f64, density_lane: f64) -> RoadState {
    let jam = template.fd.jam_density(lanes);
    RoadState {
        lanes,
        density: (density_lane * lanes).clamp(0.0, jam),
        fd: template.fd,
    }
}

/// Solve the Riemann problem and classify the wave fan into one of the ten
/// solution types.
///
/// Region-boundary ties resolve toward the lower-numbered type; the flux is
/// the same on both sides of every tie. The rows distinguishing types 1/4
/// and 9/10 compare the upstream flow against the downstream capacity, which
/// is the geometric form of their region boundaries and keeps the left wave
/// entropic.
///
/// The boundary flux needs only a unimodal flow curve and is exact for every
/// supported family. The wave structure assumes a concave one; on the
/// logistic curve's convex tail a reported rarefaction can stand for a
/// composite wave whose edge speeds are not ordered.
pub fn classify(left: &RoadState, right: &RoadState) -> Result<WaveFan, RiemannError> {
    if !left.fd.same_family(&right.fd) {
        return Err(RiemannError::MismatchedFamily);
    }
    let fd = &left.fd;
    let f_l = left.flow();
    let f_r = right.flow();
    let cap_l = left.capacity();
    let cap_r = right.capacity();
    let alpha = fd.critical_density_lane();
    let mut fan = FanBuilder::new();

    if left.is_under_critical() {
        if f_r >= f_l {
            // Type 2: standing wave to the a_R road, then a non-negative
            // speed shock up to the right state.
            let u1 = state_on(left, right.lanes, fd.uc_density_lane(f_l / right.lanes));
            fan.standing(*left, u1);
            fan.shock(u1, *right);
            Ok(fan.finish(2, f_l))
        } else if right.is_under_critical() {
            if cap_r >= f_l {
                // Type 1: standing wave, then a forward rarefaction.
                let u1 = state_on(left, right.lanes, fd.uc_density_lane(f_l / right.lanes));
                fan.standing(*left, u1);
                fan.rarefaction(u1, *right);
                Ok(fan.finish(1, f_l))
            } else {
                // Type 4: the downstream road cannot pass f(U_L); a shock
                // retreats, a standing wave bridges the lane change, and a
                // forward rarefaction exits at downstream capacity.
                let u1 = state_on(left, left.lanes, fd.oc_density_lane(cap_r / left.lanes));
                let u2 = state_on(left, right.lanes, alpha);
                fan.shock(*left, u1);
                fan.standing(u1, u2);
                fan.rarefaction(u2, *right);
                Ok(fan.finish(4, cap_r))
            }
        } else {
            // Type 3: congested downstream dictates the flux.
            let u1 = state_on(left, left.lanes, fd.oc_density_lane(f_r / left.lanes));
            fan.shock(*left, u1);
            fan.standing(u1, *right);
            Ok(fan.finish(3, f_r))
        }
    } else if f_r >= cap_l {
        // Type 6: the upstream road discharges at capacity; a rarefaction
        // accelerates traffic to critical, a standing wave carries the flow
        // across, and a shock catches the right state.
        let u_star = state_on(left, left.lanes, alpha);
        let u2 = state_on(left, right.lanes, fd.uc_density_lane(cap_l / right.lanes));
        fan.rarefaction(*left, u_star);
        fan.standing(u_star, u2);
        fan.shock(u2, *right);
        Ok(fan.finish(6, cap_l))
    } else if !right.is_under_critical() {
        // Congested on both sides: flux is the downstream flow.
        let u1 = state_on(left, left.lanes, fd.oc_density_lane(f_r / left.lanes));
        if f_r >= f_l {
            // Type 7.
            fan.rarefaction(*left, u1);
            fan.standing(u1, *right);
            Ok(fan.finish(7, f_r))
        } else {
            // Type 8.
            fan.shock(*left, u1);
            fan.standing(u1, *right);
            Ok(fan.finish(8, f_r))
        }
    } else if right.lanes >= left.lanes {
        // Type 5: transonic rarefaction through the critical state, standing
        // wave onto the wider road, then a forward rarefaction.
        let u_star = state_on(left, left.lanes, alpha);
        let u2 = state_on(left, right.lanes, fd.uc_density_lane(cap_l / right.lanes));
        fan.rarefaction(*left, u_star);
        fan.standing(u_star, u2);
        fan.rarefaction(u2, *right);
        Ok(fan.finish(5, cap_l))
    } else {
        // Lane drop with congested upstream: discharge at downstream
        // capacity. The left wave is a rarefaction when the upstream flow
        // fits under that capacity and a shock otherwise.
        let u1 = state_on(left, left.lanes, fd.oc_density_lane(cap_r / left.lanes));
        let u2 = state_on(left, right.lanes, alpha);
        if cap_r >= f_l {
            // Type 9.
            fan.rarefaction(*left, u1);
            fan.standing(u1, u2);
            fan.rarefaction(u2, *right);
            Ok(fan.finish(9, cap_r))
        } else {
            // Type 10.
            fan.shock(*left, u1);
            fan.standing(u1, u2);
            fan.rarefaction(u2, *right);
            Ok(fan.finish(10, cap_r))
        }
    }
}
