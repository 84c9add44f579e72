use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rhno::allocation::build_allocation;
use rhno::harness::{
    compare, emit_outputs, run_experiment, write_json, AllocatorKind, ExperimentConfig,
};
use rhno::Error;

#[derive(Parser)]
#[command(name = "rhno", version, about = "Nullspace allocation experiments for an eight-rotor omnidirectional vehicle")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
        /// Output directory, defaults to the one in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the allocator in the config.
        #[arg(long, value_parser = parse_allocator)]
        allocator: Option<AllocatorKind>,
    },
    /// Run MBNO and the receding-horizon allocator on the same scenario.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plots: bool,
    },
    /// Load and validate a config, printing derived quantities.
    ValidateConfig { path: PathBuf },
}

fn parse_allocator(s: &str) -> Result<AllocatorKind, String> {
    match s {
        "mbno" => Ok(AllocatorKind::Mbno),
        "receding_horizon" => Ok(AllocatorKind::RecedingHorizon),
        "pseudoinverse_only" => Ok(AllocatorKind::PseudoinverseOnly),
        other => Err(format!(
            "unknown allocator {other:?} (mbno, receding_horizon, pseudoinverse_only)"
        )),
    }
}

/// Exit status for library errors.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Parameter(_) | Error::MotorConfig(_) | Error::GeometryRank { .. }) => 2,
        Some(Error::SolverFailure { .. } | Error::FallbackBudget { .. }) => 3,
        Some(Error::Numerical { .. }) => 4,
        _ => 1,
    }
}

fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            plots,
            out,
            allocator,
        } => {
            let mut cfg = load(&config, cli.seed)?;
            if let Some(a) = allocator {
                cfg.allocator = a;
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let started = Instant::now();
            let result = run_experiment(&cfg)?;
            log::info!("{} steps in {:.1} s", result.log.len(), started.elapsed().as_secs_f64());
            for path in emit_outputs(&result, &cfg, &dir, plots)? {
                println!("wrote {}", path.display());
            }
            let t = &result.metrics.tracking;
            println!(
                "{}: mean pos err {:.4e} m, rms {:.4e} m, mean ori err {:.4e} rad, total delta u {:.4e} N, min thrust {:.4e} N",
                cfg.allocator.as_str(),
                t.mean_pos_err,
                t.rms_pos_err,
                t.mean_ori_err,
                t.total_delta_u,
                t.min_motor_thrust
            );
        }
        Command::Compare { config, out, plots } => {
            let cfg = load(&config, cli.seed)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let base = cfg.with_allocator(AllocatorKind::Mbno);
            let variant = cfg.with_allocator(AllocatorKind::RecedingHorizon);
            let (report, a, b) = compare(&base, &variant)?;
            emit_outputs(&a, &base, &dir.join(AllocatorKind::Mbno.as_str()), plots)?;
            emit_outputs(&b, &variant, &dir.join(AllocatorKind::RecedingHorizon.as_str()), plots)?;
            let path = dir.join("comparison.json");
            write_json(&path, &report)?;
            print!("{}", report.render());
            println!("wrote {}", path.display());
        }
        Command::ValidateConfig { path } => {
            let cfg = load(&path, cli.seed).with_context(|| format!("validating {}", path.display()))?;
            let alloc = build_allocation(&cfg.geometry)?;
            let (fm, mf) = alloc.cross_coupling();
            println!("{}: ok", path.display());
            println!("  allocator          {}", cfg.allocator.as_str());
            println!("  steps              {} (dt {} s, duration {} s)", cfg.steps(), cfg.dt, cfg.duration);
            println!("  horizon            h = {}, h_c = {}", cfg.ocp.h, cfg.ocp.h_c);
            println!("  singular values    {:.4?}", alloc.singular_values.as_slice());
            println!("  cross coupling     {fm:.2e} / {mf:.2e}");
            println!("  mass               {} kg", cfg.vehicle.mass());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
