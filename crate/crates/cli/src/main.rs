use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gsmax_core::config::RunConfig;
use gsmax_core::oracle::{reference_gsmax, run_oracle_check};
use gsmax_core::pipeline::{self, ActivationDump};
use gsmax_core::Error;

#[derive(Parser)]
#[command(name = "gsmax", version, about = "Group softmax prior: training, oracle checks, and sub-class discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threads for eval-mode forward passes (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the configured labels; writes checkpoint, metrics, and activation dump.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Drop the GSMax layers (identity) and write into <out>/control.
        #[arg(long)]
        control: bool,
    },
    /// Associate penultimate neurons with sub-classes and report accuracy.
    Discover {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to evaluate (default <out>/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split the test set into disjoint association and evaluation halves.
        #[arg(long)]
        holdout: bool,
        /// Also evaluate <out>/control/checkpoint.bin and report the delta.
        #[arg(long)]
        control: bool,
    },
    /// Discovery directly from an activation dump.
    DiscoverDump {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        control_dump: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Holdout as FRACTION (association share) with --seed.
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// GSMax-vs-enumeration and finite-difference gradient suites.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        grad_instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export a layer's filters as a PPM grid (groups as columns).
    VisualizeFilters {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Output image (default <out>/filters.ppm).
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Generate the configured dataset and dump it with hierarchy sidecars.
    GenData {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn load(run: &RunArgs) -> Result<(RunConfig, PathBuf, usize), Error> {
    let mut cfg = RunConfig::from_path(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.train.seed = seed;
    }
    let out = run.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let workers = run.workers.unwrap_or(cfg.mode.workers);
    if workers == 0 {
        return Err(Error::config("--workers must be at least 1"));
    }
    Ok((cfg, out, workers))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string(value).map_err(|e| Error::format(e.to_string()))?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Train { run, control } => {
            let (cfg, out, workers) = load(&run)?;
            let a = pipeline::cmd_train(&cfg, &out, control || cfg.mode.control, workers)?;
            if let Some(last) = a.result.metrics.last() {
                print_json(last)?;
            }
            eprintln!("wrote {}", a.dir.display());
        }
        Command::Discover { run, checkpoint, holdout, control } => {
            let (cfg, out, workers) = load(&run)?;
            let r = pipeline::cmd_discover(
                &cfg,
                &out,
                checkpoint.as_deref(),
                holdout || cfg.mode.holdout,
                control || cfg.mode.control,
                workers,
            )?;
            print_json(&r.summary)?;
        }
        Command::DiscoverDump { dump, control_dump, out, holdout, seed } => {
            let d = ActivationDump::load(&dump)?;
            let c = control_dump.as_deref().map(ActivationDump::load).transpose()?;
            let r = pipeline::cmd_discover_dumps(&d, c.as_ref(), holdout.map(|f| (f, seed)), &out)?;
            print_json(&r.summary)?;
        }
        Command::OracleCheck { trials, grad_instances, seed } => {
            let report = run_oracle_check(trials, grad_instances, seed, reference_gsmax)?;
            print!("{}", report.render());
            return Ok(report.passed());
        }
        Command::VisualizeFilters { run, checkpoint, layer, image } => {
            let (cfg, out, _) = load(&run)?;
            let ckpt = checkpoint.unwrap_or_else(|| out.join(pipeline::CHECKPOINT_FILE));
            let net = pipeline::load_network(&cfg, false, &ckpt)?;
            let path = image.unwrap_or_else(|| out.join("filters.ppm"));
            let r = pipeline::cmd_visualize_filters(&net, layer, &path)?;
            if let Some(sim) = &r.similarity {
                print_json(sim)?;
            }
            eprintln!("wrote {} ({}x{})", path.display(), r.image.width(), r.image.height());
        }
        Command::GenData { run } => {
            let (cfg, out, _) = load(&run)?;
            let d = pipeline::cmd_gen_data(&cfg, &out)?;
            eprintln!("wrote {} train / {} test samples to {}", d.train.len(), d.test.len(), Path::new(&out).display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
