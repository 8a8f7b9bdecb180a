use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use holorecon::config::PipelineConfig;
use holorecon_cli::{
    apply_override, cmd_bench, cmd_evaluate, cmd_process, cmd_reconstruct, cmd_simulate, cmd_sweep, with_workers,
    BenchArgs, CliResult, EvaluateArgs, ProcessArgs, ReconstructArgs, SimulateArgs, SweepArgs,
};

/// Simulate, refocus and localize particles in in-line holograms.
#[derive(Parser)]
#[command(name = "holorecon", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file; falls back to $HOLORECON_CONFIG, then built-in defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Config override as dotted key=value, e.g. optics.n_planes=200. Repeatable.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (overrides run.workers).
    #[arg(long, short = 'j', global = true)]
    workers: Option<usize>,
    /// Master seed (overrides run.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate holograms with truth tables and a split manifest.
    Simulate {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        n_holograms: Option<usize>,
        #[arg(long)]
        n_particles: Option<usize>,
        /// Also write a tile training set (tiles/) from the train split.
        #[arg(long)]
        tile_dataset: bool,
    },
    /// Write refocused amplitude planes of one hologram.
    Reconstruct {
        hologram: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Depth in micrometres. Repeatable.
        #[arg(long = "z", value_name = "UM")]
        z_um: Vec<f64>,
        /// Plane index, reconstructed at its bin center. Repeatable.
        #[arg(long = "plane")]
        planes: Vec<usize>,
        /// Background image to divide by instead of the configured gray level.
        #[arg(long)]
        background: Option<PathBuf>,
        /// Also write 8-bit PNG previews.
        #[arg(long)]
        png: bool,
    },
    /// Run the full pipeline and write predicted particles.
    Process {
        /// Hologram files or directories of synthetic_<hid> images.
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Also write per-plane detections (input of `sweep`).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Truth table, required by the oracle segmenter.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Divide by the mean of all inputs instead of a constant level.
        #[arg(long)]
        ensemble_background: bool,
    },
    /// Score predictions against truth: metrics, histograms and optionally a sweep.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Pair distance counted as a hit (default: matching.threshold_um).
        #[arg(long)]
        hit_threshold: Option<f64>,
        /// Per-plane detections; adds sweep.csv.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Comma-separated clustering thresholds for the sweep.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        hist_bins: usize,
    },
    /// Re-cluster stored detections over a range of thresholds.
    Sweep {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Comma-separated thresholds (default: 25 log-spaced from 1 um to 1 m).
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
    },
    /// Time per-plane reconstruction at two sizes and one pipeline pass.
    Bench {
        #[arg(long, default_value_t = 5)]
        n_planes: usize,
        /// CSV destination for the timing rows.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn load(global: &Global) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::load(global.config.as_deref())?;
    for o in &global.overrides {
        cfg = apply_override(&cfg, o)?;
    }
    if let Some(w) = global.workers {
        cfg.run.workers = w;
    }
    if let Some(s) = global.seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load(&cli.global)?;
    let workers = cfg.run.workers;
    with_workers(workers, move || match cli.command {
        Command::Simulate { out, n_holograms, n_particles, tile_dataset } => {
            let s = cmd_simulate(&cfg, &SimulateArgs { out_dir: out, n_holograms, n_particles, tile_dataset })?;
            println!("{} holograms, {} truth rows, {} tiles", s.n_holograms, s.n_truth_rows, s.n_tiles);
            Ok(())
        }
        Command::Reconstruct { hologram, out, z_um, planes, background, png } => {
            let written =
                cmd_reconstruct(&cfg, &ReconstructArgs { hologram, out_dir: out, z_um, planes, background, png })?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Process { inputs, out, detections, truth, ensemble_background } => {
            let results = cmd_process(
                &cfg,
                &ProcessArgs { inputs, out, detections_out: detections, truth, ensemble_background },
            )?;
            for r in &results {
                println!("hologram {}: {} detections, {} particles", r.hid, r.detections.len(), r.clustering.count());
            }
            Ok(())
        }
        Command::Evaluate { pred, truth, out, hit_threshold, detections, thresholds, hist_bins } => {
            let args = EvaluateArgs {
                predictions: pred,
                truth,
                out_dir: out,
                hit_threshold_um: hit_threshold,
                detections,
                thresholds,
                hist_bins,
            };
            for p in cmd_evaluate(&cfg, &args)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Sweep { detections, truth, out, thresholds } => {
            cmd_sweep(&cfg, &SweepArgs { detections, truth, out, thresholds })
        }
        Command::Bench { n_planes, out } => {
            let report = cmd_bench(&cfg, &BenchArgs { n_planes, out })?;
            print!("{}", report.to_csv());
            println!(
                "scaling_ratio {:.3} ({}; limit {})",
                report.scaling_ratio,
                if report.scaling_ok() { "ok" } else { "above limit" },
                holorecon_cli::SCALING_LIMIT
            );
            Ok(())
        }
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
