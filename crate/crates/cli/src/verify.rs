//! The verify command: run built-in experiments, evaluate their metrics
//! against the embedded expected values, and emit a verdict report.

use std::fs;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use crate::builtin::ScenarioRef;
use crate::sim::{self, Metric};

/// Scenario ids exercised by `verify all`, in run order.
pub const VERIFY_IDS: &[&str] = &[
    "ch2-ring-homogeneous",
    "ch2-ring-bottleneck",
    "ch3-merge",
    "ch3-merge-metered",
    "ch3-converge",
    "ch4-diverge-general",
    "ch4-diverge-extreme",
    "ch5-mixed-ring",
    "ch6-network",
    "ch6-converge",
    "ch7-equilibrium(0.4)",
    "ch7-equilibrium(0.6)",
    "ch7-periodic(0.45)",
    "ch7-periodic(0.25)",
];

pub const CH3_CONVERGE_RESOLUTIONS: &[usize] = &[64, 128, 256, 512, 1024];
pub const CH6_CONVERGE_RESOLUTIONS: &[usize] = &[200, 400, 800, 1600];

#[derive(Serialize)]
pub struct MetricReport {
    pub key: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_rel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_abs: Option<f64>,
    pub verdict: String,
}

#[derive(Serialize)]
pub struct ScenarioReport {
    pub id: String,
    pub pass: bool,
    pub metrics: Vec<MetricReport>,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub scenarios: Vec<ScenarioReport>,
    pub pass: bool,
}

pub fn metrics_for_id(id: &str) -> Result<Vec<Metric>> {
    let reference = ScenarioRef::parse(id)?;
    match reference.base.as_str() {
        "ch3-converge" => sim::run_ch3_converge(CH3_CONVERGE_RESOLUTIONS),
        "ch6-converge" => sim::run_ch6_converge(CH6_CONVERGE_RESOLUTIONS),
        _ => {
            let mut sets: Vec<(String, String)> = Vec::new();
            // Route splits outside the oscillatory band settle into an
            // equilibrium, but not within the short display horizon used
            // for the oscillation itself; give the relaxation room.
            if reference.base == "ch7-periodic" {
                let xi = reference.xi.unwrap_or(0.45);
                if !(1.0 / 3.0..0.5).contains(&xi) {
                    sets.push(("numerics.steps".into(), "32000".into()));
                    sets.push(("numerics.horizon".into(), "{\"hours\": 5.6}".into()));
                }
            }
            let output = sim::run_reference(&reference, &sets)?;
            sim::metrics_for(&reference, &output)
        }
    }
}

pub fn report_for(ids: &[String]) -> Result<VerifyReport> {
    let mut scenarios = Vec::new();
    let mut all_pass = true;
    for id in ids {
        let metrics = metrics_for_id(id)?;
        let mut pass = true;
        let rows = metrics
            .iter()
            .map(|m| {
                let verdict = match m.pass() {
                    Some(true) => "PASS",
                    Some(false) => {
                        pass = false;
                        "FAIL"
                    }
                    None => "INFO",
                };
                MetricReport {
                    key: m.key.clone(),
                    value: m.value,
                    expected: m.expected,
                    tol_rel: m.tol_rel,
                    tol_abs: m.tol_abs,
                    verdict: verdict.to_string(),
                }
            })
            .collect();
        all_pass &= pass;
        scenarios.push(ScenarioReport { id: id.clone(), pass, metrics: rows });
    }
    Ok(VerifyReport { scenarios, pass: all_pass })
}

pub fn print_human(report: &VerifyReport) {
    for s in &report.scenarios {
        println!("{} ... {}", s.id, if s.pass { "PASS" } else { "FAIL" });
        for m in &s.metrics {
            match m.expected {
                Some(e) => println!(
                    "  [{}] {} = {:.6} (expected {:.6}{})",
                    m.verdict,
                    m.key,
                    m.value,
                    e,
                    match (m.tol_rel, m.tol_abs) {
                        (Some(r), _) => format!(" +- {:.2}%", r * 100.0),
                        (None, Some(a)) => format!(" +- {a:.2e}"),
                        _ => String::new(),
                    }
                ),
                None => println!("  [{}] {} = {:.6}", m.verdict, m.key, m.value),
            }
        }
    }
    println!("overall: {}", if report.pass { "PASS" } else { "FAIL" });
}

pub fn write_json(report: &VerifyReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(dir.join("verify.json"), text)?;
    Ok(())
}
