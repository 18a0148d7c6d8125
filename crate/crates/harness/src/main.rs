use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use obstacle_harness::analysis::norms_csv;
use obstacle_harness::config::ProblemConfig;
use obstacle_harness::run::{norms_from_field, read_field, read_record, run, write_outputs};
use obstacle_harness::sweep::{sweep_cz_ratio, sweep_holder, CzSweepConfig, HolderSweepConfig};
use obstacle_harness::verify::verify;

#[derive(Parser)]
#[command(name = "obstacle", version, about = "Penalized obstacle problem solvers and experiment harness")]
struct Cli {
    /// Worker threads for sweep rows (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the sampler seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one config and write record.json, norms.csv and u.bin.
    Solve(RunArgs),
    /// Recheck the invariants of a stored record and its reproducibility.
    Verify {
        #[arg(long)]
        record: PathBuf,
    },
    /// Ratio |u| / (|f| + |psi|) over data scalings, grids and families.
    SweepCz(RunArgs),
    /// Holder seminorm of Du over grid sizes.
    SweepHolder(RunArgs),
    /// Norm table of a stored field, without solving.
    Norms {
        #[arg(long)]
        record: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Solve(a) => {
            let mut cfg = ProblemConfig::load(&a.config)?;
            if let Some(seed) = a.seed {
                cfg.sampler.seed = seed;
            }
            let out = run(&cfg)?;
            write_outputs(&cfg, &out, &a.out)?;
            let r = &out.record;
            println!("config {} -> {}", r.config_hash, a.out.display());
            println!(
                "fixed-point residual {:e} (tol {:e}), complementarity {:e}, {:.1} ms",
                r.residuals.fixed_point,
                r.residuals.tol_fp,
                r.residuals.complementarity.max(),
                r.timing.wall_ms
            );
            Ok(true)
        }
        Command::Verify { record } => {
            let report = verify(&record)?;
            for c in &report.checks {
                println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(report.passed())
        }
        Command::SweepCz(a) => {
            let mut sweep: CzSweepConfig = load(&a.config)?;
            if let Some(seed) = a.seed {
                sweep.base.sampler.seed = seed;
            }
            let result = sweep_cz_ratio(&sweep, Some(&a.out))?;
            for s in &result.summary {
                println!(
                    "{}: scaling spread {:.9}, grid drift {:.4}, max ratio {:.6e}, failed rows {}",
                    s.family, s.scaling_spread, s.grid_drift, s.max_ratio, s.failed_rows
                );
            }
            Ok(true)
        }
        Command::SweepHolder(a) => {
            let mut sweep: HolderSweepConfig = load(&a.config)?;
            if let Some(seed) = a.seed {
                sweep.base.sampler.seed = seed;
            }
            let result = sweep_holder(&sweep, Some(&a.out))?;
            println!("alpha = {}", result.alpha);
            for r in &result.rows {
                println!("N = {}: [Du]_alpha = {:.6e}", r.resolution, r.holder_du);
            }
            println!("refinement spread {:.4}", result.refinement_spread);
            Ok(true)
        }
        Command::Norms { record, out } => {
            let (cfg, rec) = read_record(&record)?;
            let field = read_field(&record)?;
            let csv = norms_csv(&rec.config_hash, &norms_from_field(&cfg, &field)?);
            match out {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
