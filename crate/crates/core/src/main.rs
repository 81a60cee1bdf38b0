use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sparse_splat::cli::{cmd_eval, cmd_gen, cmd_train, cmd_warp_debug, exit_code, DepthSource, RunConfig};
use sparse_splat::harness::{GenOptions, Preset};
use sparse_splat::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Sparse-view Gaussian splatting on the CPU")]
struct Cli {
    /// Worker threads; 1 also forces deterministic training.
    #[arg(long, global = true, env = "ICO_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ray-trace a synthetic dataset.
    Gen {
        #[arg(long)]
        preset: Preset,
        #[arg(long, default_value_t = 3)]
        views: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Per-view lighting and exposure changes.
        #[arg(long)]
        lighting: bool,
    },
    /// Train a model; writes model.icogs, metrics.csv, renders/, depth/ and summary.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set lr.position=1e-3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a checkpoint on the held-out views.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write warp, validity, cycle-error and reliability images for a view pair.
    WarpDebug {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "ref")]
        ref_id: usize,
        #[arg(long = "src")]
        src_id: usize,
        #[arg(long, value_enum, default_value_t = Depth::Gt)]
        depth: Depth,
        /// Required with `--depth checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        tau_factor: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Depth {
    Gt,
    Checkpoint,
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            preset,
            views,
            out,
            seed,
            size,
            lighting,
        } => {
            let ds = pool(cli.threads)?.install(|| cmd_gen(preset, views, &out, seed, &GenOptions { size, lighting }))?;
            println!(
                "wrote {} ({} train, {} test views)",
                out.display(),
                ds.split.train.len(),
                ds.split.test.len()
            );
        }
        Command::Train {
            config,
            overrides,
            dataset,
            output,
        } => {
            let mut cfg = RunConfig::load(config.as_deref(), &overrides)?;
            if let Some(d) = dataset {
                cfg.dataset = d;
            }
            if let Some(o) = output {
                cfg.output = o;
            }
            if cli.threads == Some(1) {
                cfg.train.deterministic = true;
            }
            let threads = if cfg.train.deterministic { Some(1) } else { cli.threads };
            let (_, summary) = pool(threads)?.install(|| cmd_train(&cfg))?;
            println!(
                "test PSNR {:.3} dB, SSIM {:.4}, {} gaussians -> {}",
                summary.mean.psnr,
                summary.mean.ssim,
                summary.n_gaussians,
                cfg.output.display()
            );
        }
        Command::Eval { checkpoint, dataset, json } => {
            let report = pool(cli.threads)?.install(|| cmd_eval(&checkpoint, &dataset))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for v in &report.per_view {
                    let depth = v.depth_error.map_or(String::new(), |d| format!("  depth err {d:.4}"));
                    println!("view {:>3}  PSNR {:7.3}  SSIM {:.4}{depth}", v.id, v.psnr, v.ssim);
                }
                let depth = report.mean.depth_error.map_or(String::new(), |d| format!("  depth err {d:.4}"));
                println!("mean      PSNR {:7.3}  SSIM {:.4}{depth}", report.mean.psnr, report.mean.ssim);
            }
        }
        Command::WarpDebug {
            dataset,
            ref_id,
            src_id,
            depth,
            checkpoint,
            tau_factor,
            out,
        } => {
            let source = match (depth, checkpoint) {
                (Depth::Gt, _) => DepthSource::GroundTruth,
                (Depth::Checkpoint, Some(p)) => DepthSource::Checkpoint(p),
                (Depth::Checkpoint, None) => return Err(Error::Config("--depth checkpoint needs --checkpoint".into())),
            };
            let d = pool(cli.threads)?.install(|| cmd_warp_debug(&dataset, ref_id, src_id, &source, tau_factor, &out))?;
            println!(
                "{} valid, {} reliable pixels (tau_d {:.3e}) -> {}",
                d.valid.count(),
                d.reliable.count(),
                d.tau_d,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
