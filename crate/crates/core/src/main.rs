use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use canet::harness::bench::{bench_attention, subquadratic, to_tsv, BenchConfig};
use canet::harness::gradcheck::{default_suite, gradcheck_config, GradcheckConfig};
use canet::harness::infer::InferMode;
use canet::harness::pipeline::{self, PhantomDatasetConfig, RunConfig};
use canet::harness::train::EpochStats;

#[derive(Parser)]
#[command(name = "canet", version, about = "Kidney structure segmentation on the CPU")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded synthetic dataset.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        cases: usize,
        /// Cube edge in voxels (at least 32).
        #[arg(long, default_value_t = 64)]
        edge: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute dataset statistics, resample and normalize every case.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a preprocessed directory.
    Train {
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Segment every image in a directory.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Preprocessed directory holding stats.toml.
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the [infer] section echoed in the model directory.
        #[arg(long)]
        config: Option<PathBuf>,
        /// One forward pass over the whole volume instead of sliding windows.
        #[arg(long)]
        whole_volume: bool,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on small networks.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        edge: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time axial against full attention.
    BenchAttn {
        #[arg(long, value_delimiter = ',', default_value = "8,16,24")]
        edges: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 4096)]
        full_max_tokens: usize,
        /// Write the table here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with [network], [train] and [infer] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Accepted for scripts; execution is always single-worker and ordered.
    #[arg(long)]
    deterministic: bool,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.network.seed = s;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Phantom { out, cases, edge, seed } => {
            let cfg = PhantomDatasetConfig { cases, dims: [edge; 3], seed, ..PhantomDatasetConfig::default() };
            let ids = pipeline::write_phantom_dataset(&out, &cfg)?;
            println!("wrote {} cases to {}", ids.len(), out.display());
        }
        Cmd::Preprocess { input, out } => {
            let s = pipeline::preprocess_dir(&input, &out)?;
            println!(
                "spacing {:?} clip [{:.3}, {:.3}] mu {:.3} sigma {:.3}",
                s.target_spacing, s.clip_lo, s.clip_hi, s.mu, s.sigma
            );
        }
        Cmd::Train { prep, out, run, fold, folds, epochs, max_steps } => {
            let mut cfg = run.load()?;
            if let Some(f) = fold {
                cfg.train.fold = f;
            }
            if let Some(f) = folds {
                cfg.train.folds = f;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if max_steps.is_some() {
                cfg.train.max_steps = max_steps;
            }
            println!("{}", EpochStats::TSV_HEADER);
            pipeline::train_dir(&prep, &out, &cfg, |e| println!("{}", e.tsv_row()))?;
            println!("model written to {}", out.join(pipeline::MODEL_FILE).display());
        }
        Cmd::Infer { input, model, prep, out, config, whole_volume } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?.infer,
                None => RunConfig::load(model.join(pipeline::CONFIG_FILE))?.infer,
            };
            if whole_volume {
                cfg.mode = InferMode::WholeVolume;
            }
            let ids = pipeline::infer_dir(&input, &model, &prep, &out, Some(&cfg))?;
            println!("segmented {} cases into {}", ids.len(), out.display());
        }
        Cmd::Eval { pred, gt, out } => {
            let reports = pipeline::eval_dir(&pred, &gt, &out)?;
            print!("{}", std::fs::read_to_string(out.join(pipeline::SUMMARY_FILE))?);
            println!("{} cases scored", reports.len());
        }
        Cmd::Gradcheck { edge, seed } => {
            let cfg = GradcheckConfig::default();
            let mut ok = true;
            for net in default_suite() {
                let r = gradcheck_config(net, edge, seed, &cfg)?;
                println!(
                    "{}: {} params, max rel err {:.3e} (second order {:.3e}), {} failures, {:.1}s",
                    r.label,
                    r.params,
                    r.max_rel_err,
                    r.max_rel_err_second_order,
                    r.failures.len(),
                    r.elapsed.as_secs_f64()
                );
                for f in r.failures.iter().take(5) {
                    println!("  {}[{}] analytic {:.6e} numeric {:.6e}", f.name, f.index, f.analytic, f.numeric);
                }
                ok &= r.passed();
            }
            return Ok(ok);
        }
        Cmd::BenchAttn { edges, channels, repeats, full_max_tokens, out } => {
            if edges.is_empty() {
                bail!("no edges given");
            }
            let cfg = BenchConfig { edges, channels, repeats, full_max_tokens, ..BenchConfig::default() };
            let rows = bench_attention(&cfg)?;
            let table = to_tsv(&rows);
            print!("{table}");
            if let Some(p) = out {
                std::fs::write(&p, &table)?;
            }
            let (pairs, ok) = subquadratic(&rows);
            for (t, q) in pairs {
                println!("axial time ratio {t:.2} (quadratic {q:.2})");
            }
            if rows.len() > 1 {
                println!("sub-quadratic: {}", if ok { "yes" } else { "no" });
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
