//! JSON front end for the single-boundary Riemann solvers.

use anyhow::{anyhow, bail, Result};
use serde::Serialize;

use kinwave_core::junction::{classify_diverge_riemann, DivergeWaveKind, PartialState};
use kinwave_core::mixed::{
    eigen, godunov_boundary_state, group_speed, riemann_intermediate, MixedState,
};
use kinwave_core::riemann::{classify, RoadState, WaveKind};
use kinwave_core::units::UnitSystem;

use crate::schema::{FdDoc, MixedRingDoc};

#[derive(Serialize)]
struct WaveJson {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    speed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    left_speed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    right_speed: Option<f64>,
    left: serde_json::Value,
    right: serde_json::Value,
}

#[derive(Serialize)]
pub struct FanJson {
    pub model: &'static str,
    pub input: serde_json::Value,
    pub solution_type: u8,
    pub flux: f64,
    waves: Vec<WaveJson>,
}

fn parse_pair(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        bail!("state must be two comma-separated numbers, got `{text}`");
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

/// Link model: states are `lanes,density` in the fd's canonical units.
pub fn link_fan(fd_json: &str, left: &str, right: &str, units: &UnitSystem) -> Result<FanJson> {
    let fd_doc: FdDoc = serde_json::from_str(fd_json).map_err(|e| anyhow!("fd: {e}"))?;
    let fd = fd_doc.build(units)?;
    let (a_l, rho_l) = parse_pair(left)?;
    let (a_r, rho_r) = parse_pair(right)?;
    let ul = RoadState::new(a_l, rho_l, fd).map_err(|e| anyhow!("left state: {e}"))?;
    let ur = RoadState::new(a_r, rho_r, fd).map_err(|e| anyhow!("right state: {e}"))?;
    let fan = classify(&ul, &ur).map_err(|e| anyhow!("{e}"))?;
    let state = |s: &RoadState| serde_json::json!({"lanes": s.lanes, "rho": s.density});
    Ok(FanJson {
        model: "link",
        input: serde_json::json!({"left": state(&ul), "right": state(&ur)}),
        solution_type: fan.solution_type,
        flux: fan.flux,
        waves: fan
            .waves
            .iter()
            .map(|w| {
                let (kind, speed, ls, rs) = match w.kind {
                    WaveKind::Shock { speed } => ("shock", Some(speed), None, None),
                    WaveKind::Rarefaction { left_speed, right_speed } => {
                        ("rarefaction", None, Some(left_speed), Some(right_speed))
                    }
                    WaveKind::Standing => ("standing", Some(0.0), None, None),
                };
                WaveJson {
                    kind,
                    speed,
                    left_speed: ls,
                    right_speed: rs,
                    left: state(&w.left),
                    right: state(&w.right),
                }
            })
            .collect(),
    })
}

/// Diverge model: the left state is `rho_own,k`, the right a single density.
pub fn diverge_fan(
    fd_json: &str,
    lanes: f64,
    left: &str,
    rho_r: f64,
    units: &UnitSystem,
) -> Result<FanJson> {
    let fd_doc: FdDoc = serde_json::from_str(fd_json).map_err(|e| anyhow!("fd: {e}"))?;
    let fd = fd_doc.build(units)?;
    let (rho_own, k) = parse_pair(left)?;
    let ps = PartialState::new(rho_own, k, lanes, fd).map_err(|e| anyhow!("left state: {e}"))?;
    let fan = classify_diverge_riemann(&ps, rho_r).map_err(|e| anyhow!("{e}"))?;
    let st = |s: (f64, f64)| serde_json::json!({"rho": s.0, "k": s.1});
    Ok(FanJson {
        model: "diverge",
        input: serde_json::json!({"left": st((rho_own, k)), "rho_r": rho_r, "lanes": lanes}),
        solution_type: fan.solution_type,
        flux: fan.flux,
        waves: fan
            .waves
            .iter()
            .map(|w| {
                let (kind, speed, ls, rs) = match w.kind {
                    DivergeWaveKind::Shock { speed } => ("shock", Some(speed), None, None),
                    DivergeWaveKind::Rarefaction { left_speed, right_speed } => {
                        ("rarefaction", None, Some(left_speed), Some(right_speed))
                    }
                    DivergeWaveKind::Standing => ("standing", Some(0.0), None, None),
                };
                WaveJson { kind, speed, left_speed: ls, right_speed: rs, left: st(w.left), right: st(w.right) }
            })
            .collect(),
    })
}

/// Mixed model: states are `rho1,rho2`; reports the intermediate state, the
/// boundary state, and the per-class fluxes.
pub fn mixed_fan(params_json: &str, left: &str, right: &str) -> Result<serde_json::Value> {
    let doc: MixedRingDoc = serde_json::from_str(params_json)
        .map_err(|e| anyhow!("mixed params: {e} (pass a mixed_ring parameter block)"))?;
    let (p, _) = crate::schema::build_mixed_params(&doc)?;
    let (l1, l2) = parse_pair(left)?;
    let (r1, r2) = parse_pair(right)?;
    let ul = MixedState::new(l1, l2, &p).map_err(|e| anyhow!("left state: {e}"))?;
    let ur = MixedState::new(r1, r2, &p).map_err(|e| anyhow!("right state: {e}"))?;
    let mid = riemann_intermediate(&ul, &ur, &p).map_err(|e| anyhow!("{e}"))?;
    let boundary = godunov_boundary_state(&ul, &ur, &p).map_err(|e| anyhow!("{e}"))?;
    let v = group_speed(&boundary, &p);
    let st = |s: &MixedState| {
        serde_json::json!({
            "rho1": s.rho1,
            "rho2": s.rho2,
            "speed": group_speed(s, &p),
            "lambda": eigen(s, &p),
        })
    };
    Ok(serde_json::json!({
        "model": "mixed",
        "input": {"left": st(&ul), "right": st(&ur)},
        "intermediate": st(&mid),
        "boundary_state": st(&boundary),
        "flux": [boundary.rho1 * v, boundary.rho2 * v],
    }))
}
