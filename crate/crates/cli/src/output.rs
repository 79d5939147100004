//! CSV and manifest outputs. Floats are written with 17 significant digits
//! so files round-trip bit-exactly and golden comparisons are stable.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use kinwave_core::network::RunArtifacts;

use crate::schema::ScenarioDoc;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub id: &'a str,
    pub param_hash: String,
    pub l_km: f64,
    pub tau_s: f64,
    pub dt: f64,
    pub steps: usize,
    pub cfl: f64,
    pub conservation_defect: f64,
    pub warnings: &'a [String],
}

pub fn write_manifest(dir: &Path, doc: &ScenarioDoc, art: &RunArtifacts, units: (f64, f64)) -> Result<()> {
    let manifest = Manifest {
        schema_version: doc.schema_version,
        id: &doc.id,
        param_hash: doc.param_hash(),
        l_km: units.0,
        tau_s: units.1,
        dt: art.dt,
        steps: art.steps,
        cfl: art.cfl,
        conservation_defect: art.conservation_defect,
        warnings: &art.warnings,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One CSV per probe: `t,x,rho,q,v,xi_0..xi_P` in canonical units.
pub fn write_probes(dir: &Path, art: &RunArtifacts) -> Result<()> {
    for (pi, p) in art.probes.iter().enumerate() {
        let path = dir.join(format!("probe_{pi}_link{}.csv", p.link));
        let mut f = fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        write!(f, "t,x,rho,q,v")?;
        for c in &p.commodities {
            write!(f, ",xi_{c}")?;
        }
        writeln!(f)?;
        for (si, t) in p.t.iter().enumerate() {
            for (ci, x) in p.x.iter().enumerate() {
                write!(
                    f,
                    "{},{},{},{},{}",
                    fmt_float(*t),
                    fmt_float(*x),
                    fmt_float(p.rho[si][ci]),
                    fmt_float(p.flow[si][ci]),
                    fmt_float(p.speed[si][ci]),
                )?;
                for xi in &p.xi[si][ci] {
                    write!(f, ",{}", fmt_float(*xi))?;
                }
                writeln!(f)?;
            }
        }
    }
    Ok(())
}

/// One CSV per probed boundary: `t,flux,xi_0..xi_P`.
pub fn write_boundaries(dir: &Path, art: &RunArtifacts) -> Result<()> {
    for b in &art.boundary_probes {
        let path = dir.join(format!("boundary_link{}_b{}.csv", b.link, b.boundary));
        let mut f = fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        write!(f, "t,flux")?;
        for c in &b.commodities {
            write!(f, ",xi_{c}")?;
        }
        writeln!(f)?;
        for (si, flux) in b.flux.total.iter().enumerate() {
            let t = (si as f64 + 0.5) * art.dt;
            write!(f, "{},{}", fmt_float(t), fmt_float(*flux))?;
            for series in &b.flux.per_commodity {
                let share = if *flux > 0.0 { series[si] / flux } else { 0.0 };
                write!(f, ",{}", fmt_float(share))?;
            }
            writeln!(f)?;
        }
    }
    Ok(())
}

/// Cumulative-curve CSVs at both ends of every link:
/// `t,n_total,n_c0..n_cP` per file.
pub fn write_ncurves(dir: &Path, art: &RunArtifacts) -> Result<()> {
    for ef in &art.end_flux {
        for (end, series) in [("in", &ef.inflow), ("out", &ef.outflow)] {
            let path = dir.join(format!("ncurve_link{}_{end}.csv", ef.link));
            let mut f = fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))?;
            write!(f, "t,n_total")?;
            for c in &ef.commodities {
                write!(f, ",n_{c}")?;
            }
            writeln!(f)?;
            let mut totals = vec![0.0f64; 1 + series.per_commodity.len()];
            writeln!(
                f,
                "{},{}{}",
                fmt_float(0.0),
                fmt_float(0.0),
                ",0.0000000000000000e0".repeat(series.per_commodity.len())
            )?;
            for si in 0..series.total.len() {
                totals[0] += series.total[si] * art.dt;
                for (k, per) in series.per_commodity.iter().enumerate() {
                    totals[k + 1] += per[si] * art.dt;
                }
                let t = (si as f64 + 1.0) * art.dt;
                write!(f, "{},{}", fmt_float(t), fmt_float(totals[0]))?;
                for v in &totals[1..] {
                    write!(f, ",{}", fmt_float(*v))?;
                }
                writeln!(f)?;
            }
        }
    }
    Ok(())
}

/// Final density snapshot: `link,cell,x,lanes,rho,xi_0..`.
pub fn write_final_state(dir: &Path, art: &RunArtifacts) -> Result<()> {
    let path = dir.join("final_state.csv");
    let mut f = fs::File::create(&path)?;
    writeln!(f, "link,cell,x,lanes,rho,xi...")?;
    for link in &art.final_state {
        for (ci, cell) in link.cells.iter().enumerate() {
            write!(
                f,
                "{},{},{},{},{}",
                link.link,
                ci,
                fmt_float(cell.x),
                fmt_float(cell.lanes),
                fmt_float(cell.rho)
            )?;
            for xi in &cell.xi {
                write!(f, ",{}", fmt_float(*xi))?;
            }
            writeln!(f)?;
        }
    }
    Ok(())
}

pub fn write_all(dir: &Path, doc: &ScenarioDoc, art: &RunArtifacts, units: (f64, f64)) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_manifest(dir, doc, art, units)?;
    write_probes(dir, art)?;
    write_boundaries(dir, art)?;
    write_ncurves(dir, art)?;
    write_final_state(dir, art)?;
    Ok(())
}

/// Single-document JSON variant of the run artifacts.
pub fn write_all_json(
    dir: &Path,
    doc: &ScenarioDoc,
    art: &RunArtifacts,
    units: (f64, f64),
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_manifest(dir, doc, art, units)?;
    let probes: Vec<serde_json::Value> = art
        .probes
        .iter()
        .map(|p| {
            serde_json::json!({
                "link": p.link,
                "x": p.x,
                "t": p.t,
                "rho": p.rho,
                "q": p.flow,
                "v": p.speed,
                "xi": p.xi,
                "commodities": p.commodities,
            })
        })
        .collect();
    let boundaries: Vec<serde_json::Value> = art
        .boundary_probes
        .iter()
        .map(|b| {
            serde_json::json!({
                "link": b.link,
                "boundary": b.boundary,
                "flux": b.flux.total,
                "per_commodity": b.flux.per_commodity,
            })
        })
        .collect();
    let ncurves: Vec<serde_json::Value> = art
        .end_flux
        .iter()
        .map(|ef| {
            let accumulate = |series: &[f64]| {
                let mut acc = 0.0;
                let mut out = vec![0.0];
                for f in series {
                    acc += f * art.dt;
                    out.push(acc);
                }
                out
            };
            serde_json::json!({
                "link": ef.link,
                "commodities": ef.commodities,
                "arrival": accumulate(&ef.inflow.total),
                "departure": accumulate(&ef.outflow.total),
            })
        })
        .collect();
    let body = serde_json::json!({
        "dt": art.dt,
        "steps": art.steps,
        "probes": probes,
        "boundaries": boundaries,
        "ncurves": ncurves,
        "final_state": art
            .final_state
            .iter()
            .map(|l| {
                serde_json::json!({
                    "link": l.link,
                    "rho": l.cells.iter().map(|c| c.rho).collect::<Vec<_>>(),
                    "lanes": l.cells.iter().map(|c| c.lanes).collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&body)?;
    text.push('\n');
    fs::write(dir.join("run.json"), text)?;
    Ok(())
}
