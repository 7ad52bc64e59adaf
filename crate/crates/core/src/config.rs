//! Experiment configuration: presets, key-value config files, canonical
//! serialization, and the config fingerprint.
//!
//! Config files are flat `key = value` text with `#` comments. Unknown or
//! duplicated keys are hard errors so a typo can never silently fall back to
//! a default. Per-algorithm settings use dotted keys such as
//! `tanml-gaussian.lr_psi = 5e-5`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metalearners::GradientMode;
use crate::optim::OptimizerKind;
use crate::predictors::ModelKind;
use crate::taskgen::{TaskKind, TaskSourceSpec};

/// The algorithms the experiment harness can run. The oracle baseline
/// predicts straight from the task's generator record and is only valid for
/// linear task sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AlgorithmKind {
    Maml,
    MetaSgd,
    Gmsgd,
    TanmlGaussian,
    TanmlCosine,
    Oracle,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 6] = [
        AlgorithmKind::Maml,
        AlgorithmKind::MetaSgd,
        AlgorithmKind::Gmsgd,
        AlgorithmKind::TanmlGaussian,
        AlgorithmKind::TanmlCosine,
        AlgorithmKind::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmKind::Maml => "maml",
            AlgorithmKind::MetaSgd => "meta-sgd",
            AlgorithmKind::Gmsgd => "gmsgd",
            AlgorithmKind::TanmlGaussian => "tanml-gaussian",
            AlgorithmKind::TanmlCosine => "tanml-cosine",
            AlgorithmKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::domain("algorithm", format!("unknown algorithm `{s}`")))
    }

    pub fn is_tanml(&self) -> bool {
        matches!(self, AlgorithmKind::TanmlGaussian | AlgorithmKind::TanmlCosine)
    }
}

/// Per-algorithm settings; defaults carry the published learning rates.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    /// Outer step size for the `theta0` group.
    pub lr_theta0: f64,
    /// Outer step size for the meta-coefficient group (alpha vector, W, or
    /// Psi); unused for MAML and the oracle.
    pub lr_meta: f64,
    /// Standardize descriptor coordinates over the bank before kernel
    /// evaluation. Off by default; kernel meta-learners only.
    pub standardize: bool,
}

impl AlgorithmConfig {
    pub fn defaults(kind: AlgorithmKind) -> Self {
        let (lr_theta0, lr_meta) = match kind {
            AlgorithmKind::Maml => (5e-4, 5e-4),
            AlgorithmKind::MetaSgd => (5e-4, 1e-6),
            AlgorithmKind::Gmsgd => (5e-4, 1e-6),
            AlgorithmKind::TanmlGaussian => (1e-3, 5e-5),
            AlgorithmKind::TanmlCosine => (5e-4, 1e-5),
            AlgorithmKind::Oracle => (1.0, 1.0),
        };
        AlgorithmConfig {
            kind,
            lr_theta0,
            lr_meta,
            standardize: false,
        }
    }
}

/// Full declarative description of an experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Label used in result tables ("exp1", "exp2a-10", "custom", ...).
    pub experiment: String,
    pub algorithms: Vec<AlgorithmConfig>,
    pub task: TaskSourceSpec,
    pub model: ModelKind,
    /// Training tasks per realization.
    pub t_tr: usize,
    /// Test tasks per realization.
    pub t_v: usize,
    pub n_iter: usize,
    /// Monte-Carlo realizations.
    pub mc_runs: usize,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    /// Adapt each network layer with its own kernel regression.
    pub per_layer: bool,
    pub mu: f64,
    /// MAML inner step size.
    pub inner_alpha: f64,
    /// Init range for learned step vectors.
    pub alpha_init: (f64, f64),
    /// Gaussian kernel bandwidth.
    pub sigma2: f64,
    pub optimizer: OptimizerKind,
    /// Fail the whole experiment on any diverged run instead of excluding it.
    pub strict: bool,
    /// Not part of the fingerprint.
    pub out_dir: PathBuf,
}

const BASE_PRESETS: [&str; 5] = ["exp1", "exp2a-10", "exp2a-20", "exp2b-10", "exp2b-20"];

fn table_algorithms() -> Vec<AlgorithmConfig> {
    [
        AlgorithmKind::Maml,
        AlgorithmKind::MetaSgd,
        AlgorithmKind::TanmlGaussian,
        AlgorithmKind::TanmlCosine,
    ]
    .iter()
    .map(|&k| AlgorithmConfig::defaults(k))
    .collect()
}

impl ExperimentConfig {
    /// Base for fully hand-written configs: the linear bimodal source with
    /// its documented defaults.
    pub fn custom_base() -> Self {
        ExperimentConfig {
            experiment: "custom".into(),
            algorithms: table_algorithms(),
            task: TaskSourceSpec {
                kind: TaskKind::LinearBimodal,
                shots: 16,
                test_shots: 16,
                noise_std: 1.0,
                outlier_fraction: 0.0,
                input_dim: 16,
                x_std: 1.0,
                seed: 0,
            },
            model: ModelKind::Linear { input_dim: 16 },
            t_tr: 32,
            t_v: 64,
            n_iter: 10_000,
            mc_runs: 30,
            seed: 0,
            gradient_mode: GradientMode::FirstOrder,
            per_layer: false,
            mu: 0.1,
            inner_alpha: 0.01,
            alpha_init: (0.001, 0.01),
            sigma2: 0.5,
            optimizer: OptimizerKind::Adam,
            strict: true,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Resolve a preset name. Base presets carry the published experiment
    /// settings; `<base>-<algorithm>` restricts to a single algorithm, e.g.
    /// `exp1-tanml-gaussian`.
    pub fn preset(name: &str) -> Result<Self> {
        let (base, algo) = match BASE_PRESETS.iter().find(|b| name == **b) {
            Some(b) => (*b, None),
            None => {
                let Some(b) = BASE_PRESETS
                    .iter()
                    .find(|b| name.starts_with(&format!("{b}-")))
                else {
                    return Err(Error::domain(
                        "preset",
                        format!(
                            "unknown preset `{name}` (bases: {})",
                            BASE_PRESETS.join(", ")
                        ),
                    ));
                };
                let algo = AlgorithmKind::parse(&name[b.len() + 1..])?;
                (*b, Some(algo))
            }
        };
        let mut cfg = Self::base_preset(base);
        if let Some(kind) = algo {
            cfg.algorithms
                .retain(|a| a.kind == kind);
            if cfg.algorithms.is_empty() {
                cfg.algorithms.push(AlgorithmConfig::defaults(kind));
            }
        }
        Ok(cfg)
    }

    fn base_preset(base: &str) -> Self {
        let mut cfg = Self::custom_base();
        cfg.experiment = base.to_string();
        match base {
            "exp1" => {
                // Linear predictors over the bimodal source. The paper fixes
                // the coefficient modes, learning rates, and sigma2 = 10 but
                // not the shot count, noise, or input scale; these values
                // put the raw descriptor geometry where that bandwidth is
                // meaningful (same-mode distances ~ sigma2) and keep one
                // inner gradient step at alpha = 0.01 from adapting much,
                // which is the regime the published table shows. With the
                // published Psi rate the kernel learners need ~25k outer
                // steps to converge here.
                cfg.sigma2 = 10.0;
                cfg.task.shots = 2048;
                cfg.task.test_shots = 1024;
                cfg.task.noise_std = 0.005;
                cfg.task.x_std = 0.01273;
                cfg.n_iter = 25_000;
            }
            exp2 => {
                cfg.task = TaskSourceSpec {
                    kind: if exp2.starts_with("exp2a") {
                        TaskKind::SineAmplitude
                    } else {
                        TaskKind::SineFrequency
                    },
                    shots: 4,
                    test_shots: 25,
                    noise_std: 0.0,
                    outlier_fraction: if exp2.ends_with("20") { 0.2 } else { 0.1 },
                    input_dim: 1,
                    x_std: 1.0,
                    seed: 0,
                };
                cfg.model = ModelKind::Mlp {
                    widths: vec![1, 16, 16, 1],
                };
                cfg.t_tr = 256;
                cfg.t_v = 64;
                cfg.n_iter = 60_000;
                cfg.mc_runs = 100;
                cfg.sigma2 = 0.5;
                cfg.per_layer = true;
            }
        }
        cfg
    }

    pub fn algorithm(&self, kind: AlgorithmKind) -> Option<&AlgorithmConfig> {
        self.algorithms.iter().find(|a| a.kind == kind)
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::domain("algorithms", "at least one algorithm"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.algorithms {
            if !seen.insert(a.kind.name()) {
                return Err(Error::domain(
                    "algorithms",
                    format!("algorithm `{}` listed twice", a.kind.name()),
                ));
            }
            if !(a.lr_theta0 > 0.0) || !(a.lr_meta > 0.0) {
                return Err(Error::domain(
                    format!("{}.lr", a.kind.name()),
                    "step sizes must be positive",
                ));
            }
            if a.standardize && !a.kind.is_tanml() {
                return Err(Error::domain(
                    format!("{}.standardize", a.kind.name()),
                    "standardization applies to kernel meta-learners only",
                ));
            }
            if a.standardize && self.gradient_mode == GradientMode::Exact {
                return Err(Error::domain(
                    "gradient_mode",
                    "standardized descriptors support first-order gradients only",
                ));
            }
            if a.kind == AlgorithmKind::Oracle && self.task.kind != TaskKind::LinearBimodal {
                return Err(Error::domain(
                    "algorithms",
                    "the oracle baseline requires the linear task source",
                ));
            }
        }
        self.task.validate()?;
        if self.t_tr == 0 || self.t_v == 0 || self.mc_runs == 0 {
            return Err(Error::domain("t_tr/t_v/mc_runs", "counts must be >= 1"));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::domain("mu", "must be >= 0"));
        }
        if !(self.inner_alpha > 0.0) {
            return Err(Error::domain("inner_alpha", "must be > 0"));
        }
        let (lo, hi) = self.alpha_init;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::domain(
                "alpha_init",
                "need 0 < alpha_init_min < alpha_init_max",
            ));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::domain("sigma2", "must be > 0"));
        }
        let model_in = match &self.model {
            ModelKind::Linear { input_dim } => *input_dim,
            ModelKind::Mlp { widths } => {
                if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
                    return Err(Error::domain("hidden", "mlp widths must be >= 1"));
                }
                if *widths.last().unwrap() != 1 {
                    return Err(Error::domain("hidden", "output width must be 1"));
                }
                widths[0]
            }
        };
        if model_in != self.task.input_dim {
            return Err(Error::domain(
                "input_dim",
                format!(
                    "model input dim {model_in} does not match task input dim {}",
                    self.task.input_dim
                ),
            ));
        }
        if self.task.seed != self.seed {
            return Err(Error::domain("seed", "task seed out of sync with master seed"));
        }
        Ok(())
    }

    /// Canonical text form; `parse_config(to_text(cfg), None)` reproduces the
    /// config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("experiment", self.experiment.clone());
        line(
            "algorithms",
            self.algorithms
                .iter()
                .map(|a| a.kind.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        line("task_kind", self.task.kind.name().into());
        line("shots", self.task.shots.to_string());
        line("test_shots", self.task.test_shots.to_string());
        line("noise_std", fmt_f64(self.task.noise_std));
        line("outlier_fraction", fmt_f64(self.task.outlier_fraction));
        line("input_dim", self.task.input_dim.to_string());
        line("x_std", fmt_f64(self.task.x_std));
        match &self.model {
            ModelKind::Linear { .. } => line("model", "linear".into()),
            ModelKind::Mlp { widths } => {
                line("model", "mlp".into());
                let hidden: Vec<String> = widths[1..widths.len() - 1]
                    .iter()
                    .map(|w| w.to_string())
                    .collect();
                line("hidden", hidden.join(","));
            }
        }
        line("t_tr", self.t_tr.to_string());
        line("t_v", self.t_v.to_string());
        line("n_iter", self.n_iter.to_string());
        line("mc_runs", self.mc_runs.to_string());
        line("seed", self.seed.to_string());
        line("gradient_mode", self.gradient_mode.name().into());
        line("per_layer", self.per_layer.to_string());
        line("mu", fmt_f64(self.mu));
        line("inner_alpha", fmt_f64(self.inner_alpha));
        line("alpha_init_min", fmt_f64(self.alpha_init.0));
        line("alpha_init_max", fmt_f64(self.alpha_init.1));
        line("sigma2", fmt_f64(self.sigma2));
        line("optimizer", self.optimizer.name().into());
        line("strict", self.strict.to_string());
        for a in &self.algorithms {
            line(&format!("{}.lr_theta0", a.kind.name()), fmt_f64(a.lr_theta0));
            line(&format!("{}.lr_meta", a.kind.name()), fmt_f64(a.lr_meta));
            line(
                &format!("{}.standardize", a.kind.name()),
                a.standardize.to_string(),
            );
        }
        line("out_dir", self.out_dir.display().to_string());
        s
    }

    /// Hash of every field that shapes the experiment's results, excluding
    /// the output directory and `n_iter`. The iteration count is a run
    /// length, not an identity: a checkpoint trained for n steps and resumed
    /// for m more must verify against the same fingerprint as a straight
    /// n+m run.
    pub fn fingerprint(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("out_dir ") && !l.starts_with("n_iter "))
            .collect::<Vec<_>>()
            .join("\n");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips to the same f64.
    format!("{v}")
}

struct KeyValue {
    line: usize,
    key: String,
    value: String,
}

fn tokenize(text: &str) -> Result<Vec<KeyValue>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let Some(eq) = content.find('=') else {
            return Err(Error::Parse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            });
        };
        let key = content[..eq].trim().to_string();
        let value = content[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty key".into(),
            });
        }
        if !seen.insert(key.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        out.push(KeyValue { line, key, value });
    }
    Ok(out)
}

fn parse_or<T: std::str::FromStr>(kv: &KeyValue) -> Result<T> {
    kv.value.parse().map_err(|_| Error::Parse {
        line: kv.line,
        message: format!("cannot parse `{}` for key `{}`", kv.value, kv.key),
    })
}

fn parse_bool(kv: &KeyValue) -> Result<bool> {
    match kv.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse {
            line: kv.line,
            message: format!("expected true/false for `{}`, got `{other}`", kv.key),
        }),
    }
}

/// Parse config text, starting from `preset` (from the file's own `preset`
/// key or the caller's flag) or from the custom base when the file sets
/// `task_kind` itself.
pub fn parse_config(text: &str, preset_flag: Option<&str>) -> Result<ExperimentConfig> {
    let kvs = tokenize(text)?;
    let file_preset = kvs.iter().find(|kv| kv.key == "preset");
    let preset_name = match (preset_flag, file_preset) {
        (Some(flag), Some(kv)) if flag != kv.value => {
            return Err(Error::Parse {
                line: kv.line,
                message: format!(
                    "preset `{}` conflicts with requested preset `{flag}`",
                    kv.value
                ),
            })
        }
        (Some(flag), _) => Some(flag.to_string()),
        (None, Some(kv)) => Some(kv.value.clone()),
        (None, None) => None,
    };
    let mut cfg = match &preset_name {
        Some(name) => ExperimentConfig::preset(name)?,
        None => {
            if !kvs.iter().any(|kv| kv.key == "task_kind") {
                return Err(Error::invalid(
                    "config needs a `preset` or an explicit `task_kind`",
                ));
            }
            ExperimentConfig::custom_base()
        }
    };

    // Hidden widths and model kind interact; collect then resolve.
    let mut model_kind: Option<String> = None;
    let mut hidden: Option<Vec<usize>> = None;

    for kv in &kvs {
        match kv.key.as_str() {
            "preset" => {}
            "experiment" => cfg.experiment = kv.value.clone(),
            "algorithms" => {
                let mut algos = Vec::new();
                for name in kv.value.split(',') {
                    let kind = AlgorithmKind::parse(name.trim())?;
                    // Keep any settings the preset had for this algorithm.
                    let existing = cfg.algorithm(kind).cloned();
                    algos.push(existing.unwrap_or_else(|| AlgorithmConfig::defaults(kind)));
                }
                cfg.algorithms = algos;
            }
            "task_kind" => cfg.task.kind = TaskKind::parse(&kv.value)?,
            "shots" => cfg.task.shots = parse_or(kv)?,
            "test_shots" => cfg.task.test_shots = parse_or(kv)?,
            "noise_std" => cfg.task.noise_std = parse_or(kv)?,
            "outlier_fraction" => cfg.task.outlier_fraction = parse_or(kv)?,
            "input_dim" => cfg.task.input_dim = parse_or(kv)?,
            "x_std" => cfg.task.x_std = parse_or(kv)?,
            "model" => model_kind = Some(kv.value.clone()),
            "hidden" => {
                let widths = kv
                    .value
                    .split(',')
                    .map(|w| {
                        w.trim().parse::<usize>().map_err(|_| Error::Parse {
                            line: kv.line,
                            message: format!("bad hidden width `{w}`"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                hidden = Some(widths);
            }
            "t_tr" => cfg.t_tr = parse_or(kv)?,
            "t_v" => cfg.t_v = parse_or(kv)?,
            "n_iter" => cfg.n_iter = parse_or(kv)?,
            "mc_runs" => cfg.mc_runs = parse_or(kv)?,
            "seed" => cfg.seed = parse_or(kv)?,
            "gradient_mode" => cfg.gradient_mode = GradientMode::parse(&kv.value)?,
            "per_layer" => cfg.per_layer = parse_bool(kv)?,
            "mu" => cfg.mu = parse_or(kv)?,
            "inner_alpha" => cfg.inner_alpha = parse_or(kv)?,
            "alpha_init_min" => cfg.alpha_init.0 = parse_or(kv)?,
            "alpha_init_max" => cfg.alpha_init.1 = parse_or(kv)?,
            "sigma2" => cfg.sigma2 = parse_or(kv)?,
            "optimizer" => cfg.optimizer = OptimizerKind::parse(&kv.value)?,
            "strict" => cfg.strict = parse_bool(kv)?,
            "out_dir" => cfg.out_dir = PathBuf::from(&kv.value),
            dotted if dotted.contains('.') => {
                let (algo_name, field) = dotted.split_once('.').unwrap();
                let kind = AlgorithmKind::parse(algo_name).map_err(|_| Error::Parse {
                    line: kv.line,
                    message: format!("unknown key `{dotted}`"),
                })?;
                if cfg.algorithm(kind).is_none() {
                    cfg.algorithms.push(AlgorithmConfig::defaults(kind));
                }
                let algo = cfg
                    .algorithms
                    .iter_mut()
                    .find(|a| a.kind == kind)
                    .unwrap();
                match field {
                    "lr_theta0" => algo.lr_theta0 = parse_or(kv)?,
                    "lr_meta" | "lr_psi" | "lr_alpha" | "lr_w" => algo.lr_meta = parse_or(kv)?,
                    "standardize" => algo.standardize = parse_bool(kv)?,
                    other => {
                        return Err(Error::Parse {
                            line: kv.line,
                            message: format!("unknown algorithm field `{other}`"),
                        })
                    }
                }
            }
            unknown => {
                return Err(Error::Parse {
                    line: kv.line,
                    message: format!("unknown key `{unknown}`"),
                })
            }
        }
    }

    // Resolve the model against task dimensions.
    match (model_kind.as_deref(), hidden) {
        (Some("linear"), _) => {
            cfg.model = ModelKind::Linear {
                input_dim: cfg.task.input_dim,
            }
        }
        (Some("mlp"), h) => {
            let hidden = h.unwrap_or_else(|| vec![16, 16]);
            let mut widths = vec![cfg.task.input_dim];
            widths.extend(hidden);
            widths.push(1);
            cfg.model = ModelKind::Mlp { widths };
        }
        (Some(other), _) => {
            return Err(Error::domain(
                "model",
                format!("unknown model `{other}` (linear|mlp)"),
            ))
        }
        (None, Some(hidden)) => {
            let mut widths = vec![cfg.task.input_dim];
            widths.extend(hidden);
            widths.push(1);
            cfg.model = ModelKind::Mlp { widths };
        }
        (None, None) => {
            // Keep the preset's model but follow an input_dim override.
            if let ModelKind::Linear { input_dim } = &mut cfg.model {
                *input_dim = cfg.task.input_dim;
            } else if let ModelKind::Mlp { widths } = &mut cfg.model {
                widths[0] = cfg.task.input_dim;
            }
        }
    }

    cfg.task.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path, preset_flag: Option<&str>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, preset_flag)
}
