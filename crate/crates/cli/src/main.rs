//! Experiment CLI: train, eval, gradcheck, gen-tasks, compare.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tanml_core::checkpoint::Checkpoint;
use tanml_core::config::{parse_config, parse_config_file, ExperimentConfig};
use tanml_core::eval::{
    compare_table, evaluate_state, reports_to_csv, run_experiment, EvalReport, RunEval, TaskEval,
};
use tanml_core::gradcheck::{run_gradcheck, GradcheckSettings};
use tanml_core::metalearners::{TraceRow, Trainer};
use tanml_core::predictors::Model;
use tanml_core::seeding::{derive_seed, stream};
use tanml_core::taskgen::{gen_task_set, read_task_file, write_task_file, TaskSourceSpec};
use tanml_core::Error;

#[derive(Parser)]
#[command(
    name = "tanml",
    version,
    about = "Task-similarity aware kernel meta-learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train one algorithm; writes a checkpoint and a training trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint on test tasks; writes a results CSV.
    Eval(EvalArgs),
    /// Check outer gradients against finite differences on small instances.
    Gradcheck(GradcheckArgs),
    /// Generate a task set file (line-delimited JSON records).
    GenTasks(GenTasksArgs),
    /// Run the Monte-Carlo comparison across all configured algorithms.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name: exp1, exp2a-10, exp2a-20, exp2b-10, exp2b-20, each
    /// optionally suffixed with an algorithm (e.g. exp1-tanml-gaussian).
    #[arg(long)]
    preset: Option<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (otherwise config / $TANML_OUT_DIR / "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated algorithm list override.
    #[arg(long)]
    algorithm: Option<String>,
    /// Gradient mode override: first-order | exact.
    #[arg(long)]
    gradient_mode: Option<String>,
    /// Monte-Carlo run count override.
    #[arg(long)]
    mc_runs: Option<usize>,
    /// Outer iteration count override (for `train --resume`: additional
    /// iterations).
    #[arg(long)]
    n_iter: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), preset) => parse_config_file(path, preset.as_deref())
                .with_context(|| format!("reading config {}", path.display()))?,
            (None, Some(preset)) => parse_config("", Some(preset))?,
            (None, None) => bail!("provide --config and/or --preset"),
        };
        let file_sets_out = match &self.config {
            Some(path) => std::fs::read_to_string(path)
                .unwrap_or_default()
                .lines()
                .any(|l| l.trim_start().starts_with("out_dir")),
            None => false,
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        } else if !file_sets_out {
            if let Ok(dir) = std::env::var("TANML_OUT_DIR") {
                cfg.out_dir = PathBuf::from(dir);
            }
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.task.seed = seed;
        }
        if let Some(algos) = &self.algorithm {
            let mut list = Vec::new();
            for name in algos.split(',') {
                let kind = tanml_core::config::AlgorithmKind::parse(name.trim())?;
                list.push(
                    cfg.algorithm(kind)
                        .cloned()
                        .unwrap_or_else(|| tanml_core::config::AlgorithmConfig::defaults(kind)),
                );
            }
            cfg.algorithms = list;
        }
        if let Some(mode) = &self.gradient_mode {
            cfg.gradient_mode = tanml_core::metalearners::GradientMode::parse(mode)?;
        }
        if let Some(r) = self.mc_runs {
            cfg.mc_runs = r;
        }
        if let Some(n) = self.n_iter {
            cfg.n_iter = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from an existing checkpoint (runs `--n-iter` more steps).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate against a task file instead of generated test tasks.
    #[arg(long)]
    tasks: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Linear instance parameter dimension.
    #[arg(long, default_value_t = 3)]
    input_dim: usize,
    /// Training task count of the instances.
    #[arg(long, default_value_t = 3)]
    t_tr: usize,
    /// Shots per task.
    #[arg(long, default_value_t = 4)]
    shots: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenTasksArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Which derived stream to draw from; eval uses the test stream.
    #[arg(long, default_value = "test")]
    split: String,
    /// Number of tasks (defaults to t_v for test, t_tr for train).
    #[arg(long)]
    count: Option<usize>,
    /// Output file path (defaults to <out_dir>/tasks-<split>.jsonl).
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iteration,objective,grad_norm_theta0,grad_norm_meta\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iteration, r.objective, r.grad_norm_theta0, r.grad_norm_meta
        ));
    }
    out
}

/// Training tasks of Monte-Carlo realization 0, the set `train` operates on.
fn training_tasks(cfg: &ExperimentConfig) -> Result<Vec<tanml_core::Task>> {
    let spec = TaskSourceSpec {
        seed: derive_seed(cfg.seed, stream::TRAIN_TASKS, 0),
        ..cfg.task.clone()
    };
    Ok(gen_task_set(&spec, cfg.t_tr)?)
}

fn test_tasks(cfg: &ExperimentConfig) -> Result<Vec<tanml_core::Task>> {
    let spec = TaskSourceSpec {
        seed: derive_seed(cfg.seed, stream::TEST_TASKS, 0),
        ..cfg.task.clone()
    };
    Ok(gen_task_set(&spec, cfg.t_v)?)
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    if cfg.algorithms.len() != 1 {
        bail!(
            "train needs exactly one algorithm; restrict with --algorithm or a \
             single-algorithm preset (got {})",
            cfg.algorithms.len()
        );
    }
    let algo = cfg.algorithms[0].clone();
    if algo.kind == tanml_core::config::AlgorithmKind::Oracle {
        bail!("the oracle baseline has nothing to train");
    }
    let tasks = training_tasks(&cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let mut trainer = match &args.resume {
        None => {
            let init_seed =
                derive_seed(derive_seed(cfg.seed, stream::INIT, 0), stream::INIT, 0);
            Trainer::new(&cfg, &algo, &tasks, init_seed)?
        }
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.fingerprint != cfg.fingerprint() {
                bail!(
                    "checkpoint fingerprint {} does not match config fingerprint {}",
                    ckpt.fingerprint,
                    cfg.fingerprint()
                );
            }
            if ckpt.algorithm != algo.kind {
                bail!(
                    "checkpoint holds `{}` but the config asks for `{}`",
                    ckpt.algorithm.name(),
                    algo.kind.name()
                );
            }
            Trainer::from_parts(
                Model::new(ckpt.model.clone())?,
                ckpt.state,
                ckpt.optimizer,
                ckpt.mode,
                ckpt.iteration,
                tasks,
            )?
        }
    };

    let outcome = trainer.run(cfg.n_iter);
    let name = algo.kind.name();
    std::fs::write(
        cfg.out_dir.join(format!("{name}-trace.csv")),
        trace_csv(trainer.trace()),
    )?;
    match outcome {
        Ok(()) => {
            let ckpt = Checkpoint {
                fingerprint: cfg.fingerprint(),
                algorithm: algo.kind,
                iteration: trainer.iteration(),
                mode: trainer.mode(),
                model: cfg.model.clone(),
                state: trainer.state().clone(),
                optimizer: trainer.optimizer().clone(),
            };
            let path = cfg.out_dir.join(format!("{name}.ckpt"));
            ckpt.save(&path)?;
            println!(
                "trained {name} for {} iterations -> {}",
                trainer.iteration(),
                path.display()
            );
            Ok(0)
        }
        Err(err @ Error::Divergence { .. }) => {
            eprintln!("{err}; partial trace written");
            Ok(2)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = Model::new(ckpt.model.clone())?;
    let tasks = match &args.tasks {
        Some(path) => read_task_file(path)?,
        None => test_tasks(&cfg)?,
    };
    let (score, per_task) = evaluate_state(&model, &ckpt.state, &tasks)?;
    let report = EvalReport {
        algorithm: ckpt.algorithm.name().to_string(),
        experiment: cfg.experiment.clone(),
        t_tr: cfg.t_tr,
        outlier_fraction: cfg.task.outlier_fraction,
        mc_runs: 1,
        nmse_mean: score,
        nmse_stderr: 0.0,
        n_iter: ckpt.iteration,
        gradient_mode: ckpt.mode.name().to_string(),
        seed: cfg.seed,
        fingerprint: cfg.fingerprint(),
        runs: vec![RunEval {
            run: 0,
            nmse: Some(score),
            per_task: per_task.clone(),
            divergence: None,
        }],
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg
        .out_dir
        .join(format!("eval-{}.csv", ckpt.algorithm.name()));
    std::fs::write(&path, reports_to_csv(&[report]))?;
    let total = per_task.iter().fold(
        TaskEval {
            numerator: 0.0,
            denominator: 0.0,
        },
        |acc, t| TaskEval {
            numerator: acc.numerator + t.numerator,
            denominator: acc.denominator + t.denominator,
        },
    );
    println!(
        "{}: nmse {} over {} tasks (sum err {} / sum energy {}) -> {}",
        ckpt.algorithm.name(),
        score,
        tasks.len(),
        total.numerator,
        total.denominator,
        path.display()
    );
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let settings = GradcheckSettings {
        input_dim: args.input_dim,
        t_tr: args.t_tr,
        shots: args.shots,
        seed: args.seed,
    };
    let report = run_gradcheck(&settings)?;
    for e in &report.entries {
        println!(
            "{} {:<42} max rel err {:>12.3e} (tol {:.0e})",
            if e.passed { "PASS" } else { "FAIL" },
            e.label,
            e.max_rel_err,
            e.tolerance
        );
    }
    if report.passed() {
        println!("gradcheck: all {} checks passed", report.entries.len());
        Ok(0)
    } else {
        eprintln!("gradcheck: FAILURES detected");
        Ok(1)
    }
}

fn cmd_gen_tasks(args: &GenTasksArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let (stream_tag, default_count) = match args.split.as_str() {
        "train" => (stream::TRAIN_TASKS, cfg.t_tr),
        "test" => (stream::TEST_TASKS, cfg.t_v),
        other => bail!("unknown split `{other}` (train|test)"),
    };
    let count = args.count.unwrap_or(default_count);
    let spec = TaskSourceSpec {
        seed: derive_seed(cfg.seed, stream_tag, 0),
        ..cfg.task.clone()
    };
    let tasks = gen_task_set(&spec, count)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = args
        .file
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("tasks-{}.jsonl", args.split)));
    write_task_file(&path, &tasks)?;
    println!("wrote {} tasks to {}", tasks.len(), path.display());
    Ok(0)
}

fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let reports = run_experiment(&cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("results.csv");
    std::fs::write(&csv_path, reports_to_csv(&reports))?;
    print!("{}", compare_table(&reports)?);
    let diverged: usize = reports
        .iter()
        .map(|r| r.runs.iter().filter(|x| x.divergence.is_some()).count())
        .sum();
    if diverged > 0 {
        eprintln!("note: {diverged} diverged runs were excluded from the means");
    }
    println!("results -> {}", csv_path.display());
    Ok(0)
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::GenTasks(args) => cmd_gen_tasks(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
