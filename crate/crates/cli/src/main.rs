mod experiment;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spnas::hypertune::{self, grid_study, Backend, HypertuneConfig, Method, SearchBackend};
use spnas::latency::lutgen;
use spnas::nas::{
    self, random_search, runtime_percentile, shared_subset_ablation, train_fixed, variance_study, Checkpoint,
    RunOptions, Variant,
};
use spnas::space::Architecture;
use spnas::{Error, Result};

use experiment::{load_arch, write_json, write_text, Experiment, DEFAULT_LUT_NOISE};

#[derive(Parser)]
#[command(name = "spnas", version, about = "Single-path architecture search with a differentiable runtime model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment JSON; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Target {
    /// Runtime target R_T in milliseconds.
    #[arg(long, conflicts_with = "target_percentile")]
    target_ms: Option<f64>,
    /// Set R_T to this percentile of all architectures' runtimes.
    #[arg(long)]
    target_percentile: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic latency table for the configured space.
    Lutgen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_LUT_NOISE)]
        noise: f64,
    },
    /// Run one architecture search.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Final supernet / architecture-parameter checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Per-step CSV log.
        #[arg(long)]
        step_log: Option<PathBuf>,
    },
    /// Decode the architecture stored in a search checkpoint.
    Derive {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train a fixed architecture from scratch.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Hard-mode runtime of an architecture.
    Latency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        lut: Option<PathBuf>,
    },
    /// Rejection-sampled random architectures in a runtime window.
    RandomSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        window_min: Option<f64>,
        #[arg(long)]
        window_max: Option<f64>,
    },
    /// Repeated searches per solver variant; mean and variance of the results.
    VarianceStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lut: Option<PathBuf>,
        /// Number of runs per variant, seeded `seed..seed + runs`.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Shared-superkernel versus standalone kernel training.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Tune λ against the runtime-targeted reward.
    Hypertune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        /// Total search epochs to spend.
        #[arg(long)]
        budget_epochs: Option<usize>,
        #[arg(long, default_value = "real")]
        backend: BackendKind,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Reward over a λ × budget grid, as CSV.
    GridStudy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1,10,100")]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        budgets: Vec<usize>,
        #[arg(long, default_value = "real")]
        backend: BackendKind,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum BackendKind {
    Real,
    Synthetic,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn save_json<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => Ok(()),
    }
}

fn resolve_target(exp: &Experiment, target: &Target, lut: Option<&Path>, backend: BackendKind) -> Result<f64> {
    match (target.target_ms, target.target_percentile) {
        (Some(ms), _) => Ok(ms),
        (None, Some(p)) => {
            if matches!(backend, BackendKind::Synthetic) {
                return Err(Error::Config("--target-percentile needs the real backend".into()));
            }
            let model = exp.runtime_model(lut)?;
            runtime_percentile(&model, &exp.space.resolve()?, p)
        }
        (None, None) => Ok(exp.hypertune.target_ms),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Lutgen { common, noise } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let table = lutgen(&exp.space, common.seed, noise)?;
            println!(
                "latency table: {} layers, fixed overhead {:.6} ms",
                table.num_layers(),
                table.fixed_overhead_ms
            );
            if let Some(p) = &common.out {
                table.save(p)?;
            }
        }
        Command::Search {
            common,
            lut,
            variant,
            lambda,
            epochs,
            steps,
            checkpoint,
            step_log,
        } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let mut cfg = exp.search.clone();
            cfg.seed = common.seed;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(l) = lambda {
                cfg.lambda = l;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if steps.is_some() {
                cfg.steps = steps;
            }
            let data = exp.dataset()?;
            let model = exp.runtime_model(lut.as_deref())?;
            let opts = RunOptions {
                divergence_checkpoint: checkpoint.as_ref().map(|p| p.with_extension("last_good")),
            };
            let run = nas::run_search(&cfg, &exp.space, &data, &model, &opts)?;
            if let Some(p) = &checkpoint {
                run.checkpoint(&cfg).save(p)?;
            }
            let report = run.report();
            if let Some(p) = &step_log {
                nas::logs::write_step_log(p, &report.steps)?;
            }
            let arch = report.decoded()?;
            println!("variant {} λ = {} seed {}", cfg.variant, cfg.lambda, cfg.seed);
            println!("optimizer steps: {}", report.optimizer_steps);
            println!("architecture: {}", describe(&arch));
            println!("hard-mode runtime: {:.6} ms", report.hard_runtime_ms);
            if let Some(a) = report.proxy_accuracy {
                println!("proxy accuracy: {a:.4}");
            }
            println!("wall clock: {:.1} s", report.wall_clock_s);
            save_json(&common.out, &report.without_timing())?;
        }
        Command::Derive { common, checkpoint } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let arch = nas::derive(&ck)?;
            println!("{}", describe(&arch));
            if let Some(p) = &common.out {
                write_text(p, &(arch.to_json() + "\n"))?;
            }
        }
        Command::Train { common, arch, epochs } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let arch = load_arch(&arch)?;
            let mut cfg = exp.train.clone();
            cfg.seed = common.seed;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let data = exp.dataset()?;
            let (report, _) = train_fixed::<f64>(&exp.space, &arch, &data, &cfg)?;
            println!("architecture: {}", describe(&arch));
            println!("validation accuracy: {:.4}", report.accuracy);
            save_json(&common.out, &report)?;
        }
        Command::Latency { common, arch, lut } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let arch = load_arch(&arch)?;
            let model = exp.runtime_model(lut.as_deref())?;
            let ms = model.architecture_runtime(&arch)?;
            println!("{ms}");
            save_json(&common.out, &serde_json::json!({ "runtime_ms": ms, "architecture": arch.to_records() }))?;
        }
        Command::RandomSearch {
            common,
            lut,
            samples,
            window_min,
            window_max,
        } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let mut cfg = exp.random.clone();
            cfg.seed = common.seed;
            if let Some(n) = samples {
                cfg.samples = n;
            }
            if let Some(lo) = window_min {
                cfg.window.0 = lo;
            }
            if let Some(hi) = window_max {
                cfg.window.1 = hi;
            }
            let data = exp.dataset()?;
            let model = exp.runtime_model(lut.as_deref())?;
            let report = random_search(&exp.space, &data, &model, &cfg)?;
            println!(
                "{} samples, acceptance rate {:.4}, accuracy {:.4} ± {:.4}, runtime {:.4} ± {:.4} ms",
                report.samples.len(),
                report.acceptance_rate,
                report.accuracy.mean,
                report.accuracy.std,
                report.runtime_ms.mean,
                report.runtime_ms.std
            );
            save_json(&common.out, &report)?;
        }
        Command::VarianceStudy {
            common,
            lut,
            runs,
            variants,
            workers,
        } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let mut vcfg = exp.variance.clone();
            vcfg.workers = workers;
            let n = runs.unwrap_or(vcfg.seeds.len());
            vcfg.seeds = (0..n as u64).map(|i| common.seed.wrapping_add(i)).collect();
            if let Some(v) = variants {
                vcfg.variants = v;
            }
            let data = exp.dataset()?;
            let model = exp.runtime_model(lut.as_deref())?;
            let report = variance_study(&exp.space, &data, &model, &exp.search, &vcfg)?;
            for c in &report.cells {
                println!(
                    "{:<20} {:?}: accuracy {:.4} (var {:.3e}), runtime {:.4} ms (var {:.3e})",
                    c.variant.name(),
                    c.kind,
                    c.accuracy.mean,
                    c.accuracy.variance,
                    c.runtime_ms.mean,
                    c.runtime_ms.variance
                );
            }
            if let Some(o) = &report.observation {
                println!("observation: {}", serde_json::to_string(o)?);
            }
            save_json(&common.out, &report)?;
        }
        Command::Ablation { common, epochs } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let mut cfg = exp.train.clone();
            cfg.seed = common.seed;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let data = exp.dataset()?;
            let rows = shared_subset_ablation(&exp.space, &data, &cfg)?;
            println!("{:<18} {:>6} {:>7} {:>9}", "row", "kernel", "shared", "accuracy");
            for r in &rows {
                println!("{:<18} {:>6} {:>7} {:>9.4}", r.name, r.kernel, r.shared, r.accuracy);
            }
            save_json(&common.out, &rows)?;
        }
        Command::Hypertune {
            common,
            target,
            lut,
            method,
            budget_epochs,
            backend,
            workers,
        } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let cfg = HypertuneConfig {
                method: method.unwrap_or(exp.hypertune.method),
                target_ms: resolve_target(&exp, &target, lut.as_deref(), backend)?,
                total_epoch_budget: budget_epochs.unwrap_or(exp.hypertune.total_epoch_budget),
                workers,
                seed: common.seed,
                ..exp.hypertune.clone()
            };
            let trace = with_backend(&exp, lut.as_deref(), backend, |b| hypertune::hypertune(&cfg, b))?;
            let best = trace.best_sample();
            println!(
                "{} over {} epochs ({} evaluations), R_T = {:.6} ms",
                cfg.method,
                trace.epochs_used,
                trace.samples.len(),
                cfg.target_ms
            );
            println!(
                "best: λ = {:.6e} at {} epochs, accuracy {:.4}, runtime {:.6} ms, reward {:.4}",
                best.lambda, best.budget_epochs, best.accuracy, best.runtime_ms, best.reward
            );
            save_json(&common.out, &trace)?;
        }
        Command::GridStudy {
            common,
            target,
            lut,
            lambdas,
            budgets,
            backend,
        } => {
            let exp = Experiment::load(common.config.as_deref())?;
            let target_ms = resolve_target(&exp, &target, lut.as_deref(), backend)?;
            let study = with_backend(&exp, lut.as_deref(), backend, |b| {
                grid_study(&lambdas, &budgets, target_ms, b, common.seed)
            })?;
            let csv = study.to_csv()?;
            print!("{csv}");
            if let Some(p) = &common.out {
                write_text(p, &csv)?;
            }
        }
    }
    Ok(())
}

fn with_backend<R>(
    exp: &Experiment,
    lut: Option<&Path>,
    kind: BackendKind,
    f: impl FnOnce(&dyn Backend) -> Result<R>,
) -> Result<R> {
    match kind {
        BackendKind::Synthetic => f(&exp.synthetic_backend),
        BackendKind::Real => {
            let data = exp.dataset()?;
            let model = exp.runtime_model(lut)?;
            let backend = SearchBackend {
                space: &exp.space,
                data: &data,
                model: &model,
                base: exp.search.clone(),
            };
            f(&backend)
        }
    }
}

fn describe(arch: &Architecture) -> String {
    arch.layers().iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" | ")
}
