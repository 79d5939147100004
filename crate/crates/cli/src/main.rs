use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use kinwave_cli::builtin::{self, ScenarioRef, BUILTIN_IDS};
use kinwave_cli::schema::{apply_overrides, ScenarioBody, ScenarioDoc};
use kinwave_cli::{output, riemann_io, sim, sweep, verify};
use kinwave_core::network::{cfl_number, StepError};
use kinwave_core::units::UnitSystem;

/// Exit codes: 2 schema violation, 3 CFL refusal, 4 runtime consistency
/// failure, 1 other errors or failed verification.
const EXIT_SCHEMA: u8 = 2;
const EXIT_CFL: u8 = 3;
const EXIT_CONSISTENCY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "kinwave",
    about = "Multi-commodity kinematic wave traffic simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SetArgs {
    /// Override a scenario field by dotted path, e.g. numerics.cells=200.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (a built-in id or a JSON file path) and write the
    /// probe, boundary, and cumulative-curve outputs.
    Simulate {
        scenario: String,
        #[arg(long, default_value = "runs/out")]
        out: PathBuf,
        #[command(flatten)]
        sets: SetArgs,
        /// Extra density probe `LINK[:CELL]` (whole link when no cell).
        /// Repeatable.
        #[arg(long = "probe", value_name = "LINK[:CELL]")]
        probes: Vec<String>,
        /// Output format for run artifacts.
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
        /// Print the fully resolved scenario document and exit.
        #[arg(long)]
        dump_scenario: bool,
    },
    /// Solve one boundary Riemann problem and print the wave fan as JSON.
    Riemann {
        /// link | diverge | mixed
        #[arg(long)]
        model: String,
        /// Fundamental diagram JSON (link and diverge models).
        #[arg(long)]
        fd: Option<String>,
        /// Mixed-ring parameter block JSON (mixed model).
        #[arg(long)]
        params: Option<String>,
        /// Left state: `lanes,rho` (link), `rho_own,k` (diverge), `rho1,rho2` (mixed).
        #[arg(long)]
        left: String,
        /// Right state: `lanes,rho` (link) or `rho1,rho2` (mixed).
        #[arg(long)]
        right: Option<String>,
        /// Right density (diverge model).
        #[arg(long)]
        rho_r: Option<f64>,
        /// Lane count of the diverge's roadway.
        #[arg(long, default_value_t = 1.0)]
        lanes: f64,
        /// Unit length in km for fd quantity conversion.
        #[arg(long, default_value_t = 0.028)]
        l_km: f64,
        /// Unit time in seconds for fd quantity conversion.
        #[arg(long, default_value_t = 5.0)]
        tau_s: f64,
    },
    /// Run built-in experiments and compare against their published targets.
    Verify {
        /// Scenario ids, or `all`.
        #[arg(default_value = "all")]
        ids: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep a parameter over a scenario template and write a table CSV.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "xi")]
        param: String,
        /// Range `start:end:step` or a comma list.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List the built-in scenario ids.
    List,
}

fn parse_sets(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| anyhow!("--set expects PATH=VALUE, got `{s}`"))
        })
        .collect()
}

fn load_scenario(spec: &str, sets: &[(String, String)]) -> Result<ScenarioDoc> {
    if builtin::is_builtin(spec) {
        let reference = ScenarioRef::parse(spec)?;
        builtin::load(&reference, sets)
    } else {
        let text = fs::read_to_string(spec)
            .with_context(|| format!("reading scenario file `{spec}`"))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| anyhow!("schema violation: {e}"))?;
        apply_overrides(&mut value, sets)?;
        ScenarioDoc::parse(&serde_json::to_string(&value)?)
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(step) = err.downcast_ref::<String>() {
        let _ = step;
    }
    let text = format!("{err:#}");
    if text.contains("schema violation") || text.contains("unsupported schema_version") {
        EXIT_SCHEMA
    } else if text.contains("CFL number") {
        EXIT_CFL
    } else if text.contains("negative density")
        || text.contains("above jam")
        || text.contains("inconsistent")
    {
        EXIT_CONSISTENCY
    } else {
        1
    }
}

fn simulate(
    scenario: &str,
    out: &PathBuf,
    sets: &[(String, String)],
    format: &str,
    dump: bool,
) -> Result<()> {
    let doc = load_scenario(scenario, sets)?;
    if dump {
        print!("{}", doc.canonical_json());
        return Ok(());
    }
    let units = match &doc.body {
        ScenarioBody::Network(n) => (n.units.l_km, n.units.tau_s),
        ScenarioBody::MixedRing(_) => {
            let u = UnitSystem::feet_seconds();
            (u.l_km, u.tau_s)
        }
    };
    match &doc.body {
        ScenarioBody::Network(network_doc) => {
            let scenario = kinwave_cli::schema::build_network_scenario(network_doc)?;
            let cfl = cfl_number(&scenario);
            if cfl > 1.0 + 1e-12 {
                return Err(anyhow!("{}", StepError::CflExceeded { number: cfl }));
            }
            let art = kinwave_core::network::run(&scenario).map_err(|e| anyhow!("{e}"))?;
            fs::create_dir_all(out)?;
            if format == "json" {
                output::write_all_json(out, &doc, &art, units)?;
            } else {
                output::write_all(out, &doc, &art, units)?;
            }
            for w in &art.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "wrote {} (cfl {:.4}, {} steps, conservation defect {:.3e})",
                out.display(),
                art.cfl,
                art.steps,
                art.conservation_defect
            );
        }
        ScenarioBody::MixedRing(ring_doc) => {
            let result = sim::run_mixed_ring(ring_doc)?;
            fs::create_dir_all(out)?;
            write_mixed_csv(out, &result)?;
            println!(
                "wrote {} ({} snapshots, class mass drift {:.3e})",
                out.display(),
                result.t.len(),
                result.mass_drift
            );
        }
    }
    Ok(())
}

fn write_mixed_csv(dir: &std::path::Path, r: &sim::MixedRingResult) -> Result<()> {
    use std::io::Write as _;
    let path = dir.join("mixed_ring.csv");
    let mut f = fs::File::create(&path)?;
    writeln!(f, "t,x,rho1,rho2,v,w")?;
    for (si, t) in r.t.iter().enumerate() {
        for (ci, x) in r.x.iter().enumerate() {
            let rho1 = r.rho1[si][ci];
            let rho2 = r.rho2[si][ci];
            let w = if rho1 > 0.0 { rho2 / rho1 } else { 0.0 };
            let v = r.speed[si][ci];
            writeln!(
                f,
                "{},{},{},{},{},{}",
                output::fmt_float(*t),
                output::fmt_float(*x),
                output::fmt_float(rho1),
                output::fmt_float(rho2),
                output::fmt_float(v),
                output::fmt_float(w)
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool> = (|| match cli.command {
        Command::Simulate { scenario, out, sets, probes, format, dump_scenario } => {
            let mut sets = parse_sets(&sets.sets)?;
            for (i, p) in probes.iter().enumerate() {
                let (link, cell) = match p.split_once(':') {
                    Some((l, c)) => (l.trim(), Some(c.trim())),
                    None => (p.trim(), None),
                };
                let link: usize =
                    link.parse().map_err(|_| anyhow!("--probe expects LINK[:CELL], got `{p}`"))?;
                let cells = match cell {
                    Some(c) => serde_json::json!(c.parse::<usize>()
                        .map_err(|_| anyhow!("--probe cell must be an integer in `{p}`"))?),
                    None => serde_json::json!("all"),
                };
                let _ = i;
                let probe = serde_json::json!({"link": link, "cells": cells, "every": 10});
                sets.push(("probes.+".to_string(), probe.to_string()));
            }
            simulate(&scenario, &out, &sets, &format, dump_scenario)?;
            Ok(true)
        }
        Command::Riemann { model, fd, params, left, right, rho_r, lanes, l_km, tau_s } => {
            let units = UnitSystem::new(l_km, tau_s).map_err(|e| anyhow!("{e}"))?;
            let json = match model.as_str() {
                "link" => {
                    let fd = fd.ok_or_else(|| anyhow!("--fd required for the link model"))?;
                    let right =
                        right.ok_or_else(|| anyhow!("--right required for the link model"))?;
                    serde_json::to_value(riemann_io::link_fan(&fd, &left, &right, &units)?)?
                }
                "diverge" => {
                    let fd = fd.ok_or_else(|| anyhow!("--fd required for the diverge model"))?;
                    let rho_r =
                        rho_r.ok_or_else(|| anyhow!("--rho-r required for the diverge model"))?;
                    serde_json::to_value(riemann_io::diverge_fan(&fd, lanes, &left, rho_r, &units)?)?
                }
                "mixed" => {
                    let params =
                        params.ok_or_else(|| anyhow!("--params required for the mixed model"))?;
                    let right =
                        right.ok_or_else(|| anyhow!("--right required for the mixed model"))?;
                    riemann_io::mixed_fan(&params, &left, &right)?
                }
                other => return Err(anyhow!("unknown model `{other}`")),
            };
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(true)
        }
        Command::Verify { ids, out } => {
            let ids: Vec<String> = if ids.len() == 1 && ids[0] == "all" {
                verify::VERIFY_IDS.iter().map(|s| s.to_string()).collect()
            } else {
                ids
            };
            let report = verify::report_for(&ids)?;
            verify::print_human(&report);
            if let Some(dir) = out {
                verify::write_json(&report, &dir)?;
            }
            Ok(report.pass)
        }
        Command::Sweep { scenario, param, values, out, jobs } => {
            let values = sweep::parse_values(&values)?;
            let rows = sweep::sweep(&scenario, &param, &values, jobs)?;
            sweep::write_csv(&rows, &param, &out)?;
            println!("wrote {} ({} rows)", out.display(), rows.len());
            Ok(true)
        }
        Command::List => {
            for id in BUILTIN_IDS {
                println!("{id}");
            }
            Ok(true)
        }
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
