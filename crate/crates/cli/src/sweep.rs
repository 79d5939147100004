//! Parameter sweeps over a scenario template, optionally in parallel.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::thread;

use anyhow::{anyhow, bail, Result};

use crate::builtin::ScenarioRef;
use crate::output::fmt_float;
use crate::sim;

pub struct SweepRow {
    pub value: f64,
    pub reached: bool,
    pub t_eq: Option<f64>,
    /// `(rho/rho_j, q/q_c)` for links 2..=5.
    pub links: [(f64, f64); 4],
    pub att0: f64,
    pub att1: f64,
    pub att: f64,
}

/// Parse "a:b:step" or a comma list into values.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            bail!("range must be start:end:step");
        }
        let (a, b, h): (f64, f64, f64) = (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
        if !(h > 0.0) {
            bail!("step must be positive");
        }
        let mut out = Vec::new();
        let mut i = 0usize;
        loop {
            let v = a + h * i as f64;
            if v > b + 1e-12 {
                break;
            }
            out.push((v * 1e12).round() / 1e12);
            i += 1;
        }
        Ok(out)
    } else if text.trim().is_empty() {
        Ok(Vec::new())
    } else {
        text.split(',').map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("{e}"))).collect()
    }
}

fn run_one(base: &str, param: &str, value: f64) -> Result<SweepRow> {
    if param != "xi" {
        bail!("unsupported sweep parameter `{param}` (the route split `xi` is supported)");
    }
    let reference = ScenarioRef { base: base.to_string(), xi: Some(value) };
    let output = sim::run_reference(&reference, &[])?;
    let m = sim::measure_equilibrium(&output, value)?;
    Ok(SweepRow {
        value,
        reached: m.reached,
        t_eq: m.t_eq,
        links: m.links,
        att0: m.att0,
        att1: m.att1,
        att: m.att,
    })
}

/// Run the sweep, preserving the input order of `values`. Each run is
/// single-threaded and deterministic; parallelism is across runs only.
pub fn sweep(base: &str, param: &str, values: &[f64], jobs: usize) -> Result<Vec<SweepRow>> {
    let jobs = jobs.max(1);
    let mut rows: Vec<Option<SweepRow>> = Vec::new();
    rows.resize_with(values.len(), || None);
    for chunk_start in (0..values.len()).step_by(jobs) {
        let chunk_end = (chunk_start + jobs).min(values.len());
        let handles: Vec<_> = (chunk_start..chunk_end)
            .map(|i| {
                let base = base.to_string();
                let param = param.to_string();
                let v = values[i];
                thread::spawn(move || run_one(&base, &param, v))
            })
            .collect();
        for (i, h) in (chunk_start..chunk_end).zip(handles) {
            rows[i] = Some(h.join().map_err(|_| anyhow!("worker panicked"))??);
        }
    }
    Ok(rows.into_iter().map(|r| r.expect("filled")).collect())
}

pub fn write_csv(rows: &[SweepRow], param: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "{param},equilibrium_reached,t_eq,\
         link2_rho,link2_q,link3_rho,link3_q,link4_rho,link4_q,link5_rho,link5_q,\
         att_0,att_1,att"
    )?;
    for r in rows {
        write!(f, "{}", fmt_float(r.value))?;
        write!(f, ",{}", if r.reached { 1 } else { 0 })?;
        write!(f, ",{}", r.t_eq.map(fmt_float).unwrap_or_default())?;
        for (rho, q) in r.links {
            write!(f, ",{},{}", fmt_float(rho), fmt_float(q))?;
        }
        writeln!(f, ",{},{},{}", fmt_float(r.att0), fmt_float(r.att1), fmt_float(r.att))?;
    }
    Ok(())
}
