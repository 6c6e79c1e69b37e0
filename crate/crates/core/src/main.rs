//! Command-line front end: plan a mission, sweep a parameter axis, or
//! re-audit an emitted result directory.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use airsea::pipeline::emit::{emit_outputs, validate_dir};
use airsea::pipeline::run::run_mission;
use airsea::pipeline::sweep::{sweep, SweepAxis};
use airsea::pipeline::Strategy;
use airsea::scenario::load_scenario;

#[derive(Parser)]
#[command(name = "airsea", about = "ISAC UAV-USV joint inspection planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one mission and write trajectory/beams/metrics/audit files.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "proposed")]
        strategy: Strategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override the SCA/AO convergence tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Override the SCA/AO iteration cap.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Sweep one scenario axis over a list of values and seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Axis: k | sigma | gamma-s | gamma-c | z | current
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "proposed")]
        strategy: Strategy,
        /// Dispersion used when the axis does not set it.
        #[arg(long, default_value_t = 40.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Independently re-audit an emitted result directory.
    Validate {
        #[arg(long)]
        result: PathBuf,
    },
}

impl clap::builder::ValueParserFactory for StrategyArg {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Strategy>())
    }
}

struct StrategyArg;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Plan { scenario, strategy, seed, out, tol, max_iters } => {
            let mut sc = load_scenario(&scenario)?;
            if let Some(t) = tol {
                sc.system.sca_tolerance = t;
            }
            if let Some(m) = max_iters {
                sc.system.max_iterations = m;
            }
            let result = run_mission(&sc, strategy, seed)?;
            emit_outputs(&sc, &result, &out)?;
            println!(
                "strategy {} seed {}: {:.2} kJ over {:.0} s ({} hover points), audit {}",
                result.strategy.name(),
                seed,
                result.report.total_j / 1e3,
                result.report.total_s,
                result.report.hover_points,
                if result.audit.pass { "pass" } else { "FAIL" },
            );
            println!("wrote {}", out.display());
        }
        Command::Sweep { scenario, axis, values, seeds, strategy, sigma, out } => {
            let sc = load_scenario(&scenario)?;
            let table = sweep(&sc, axis, &values, seeds, strategy, sigma)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("sweep.json");
            std::fs::write(&path, serde_json::to_string_pretty(&table)?)?;
            println!("value,mean_energy_j,sd_energy_j,mean_duration_s,mean_hover_points");
            for p in &table.points {
                println!(
                    "{},{:.1},{:.1},{:.1},{:.2}",
                    p.value, p.mean_energy_j, p.sd_energy_j, p.mean_duration_s, p.mean_hover_points
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Validate { result } => {
            let report = validate_dir(&result)?;
            for f in &report.families {
                println!(
                    "{:<18} checks {:>6}  max violation {:>12.3e}  {}",
                    f.name,
                    f.checks,
                    f.max_violation,
                    if f.max_violation <= report.tolerance { "ok" } else { "VIOLATED" }
                );
            }
            println!("audit: {}", if report.pass { "pass" } else { "FAIL" });
            if !report.pass {
                std::process::exit(2);
            }
        }
    }
    Ok(())
}
