//! Synthetic task sources: bimodal linear regression tasks, and sinusoid
//! tasks with a configurable fraction of linear outlier tasks mixed in.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Dataset;
use crate::seeding::{rng_for, stream};

/// Which synthetic data source tasks are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// `y = beta . x + e`, beta sampled from one of two isotropic Gaussian
    /// modes centered at -4*ones and +4*ones.
    LinearBimodal,
    /// `y = A sin(x)`, amplitude `A` uniform on (0, 1].
    SineAmplitude,
    /// `y = sin(omega x)`, frequency `omega` uniform on [1, 1.5].
    SineFrequency,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::LinearBimodal => "linear-bimodal",
            TaskKind::SineAmplitude => "sine-amplitude",
            TaskKind::SineFrequency => "sine-frequency",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear-bimodal" => Ok(TaskKind::LinearBimodal),
            "sine-amplitude" => Ok(TaskKind::SineAmplitude),
            "sine-frequency" => Ok(TaskKind::SineFrequency),
            other => Err(Error::domain(
                "task_kind",
                format!("unknown task kind `{other}`"),
            )),
        }
    }

    pub fn is_sine(&self) -> bool {
        matches!(self, TaskKind::SineAmplitude | TaskKind::SineFrequency)
    }
}

/// Fully describes a task source, including its RNG seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSourceSpec {
    pub kind: TaskKind,
    /// Training pairs per task (K).
    pub shots: usize,
    /// Test pairs per task.
    pub test_shots: usize,
    pub noise_std: f64,
    pub outlier_fraction: f64,
    pub input_dim: usize,
    /// Standard deviation of each input coordinate (linear source only;
    /// sine inputs are uniform on [-1, 1]).
    pub x_std: f64,
    pub seed: u64,
}

impl TaskSourceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::domain("shots", "must be >= 1"));
        }
        if self.test_shots == 0 {
            return Err(Error::domain("test_shots", "must be >= 1"));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::domain("noise_std", "must be a finite value >= 0"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::domain("outlier_fraction", "must lie in [0, 1)"));
        }
        if !(self.x_std > 0.0) || !self.x_std.is_finite() {
            return Err(Error::domain("x_std", "must be a positive finite value"));
        }
        match self.kind {
            TaskKind::LinearBimodal => {
                if self.input_dim == 0 {
                    return Err(Error::domain("input_dim", "must be >= 1"));
                }
                if self.outlier_fraction != 0.0 {
                    return Err(Error::domain(
                        "outlier_fraction",
                        "only sine task kinds admit outlier tasks",
                    ));
                }
            }
            TaskKind::SineAmplitude | TaskKind::SineFrequency => {
                if self.input_dim != 1 {
                    return Err(Error::domain("input_dim", "sine tasks have input_dim = 1"));
                }
                if self.noise_std != 0.0 {
                    return Err(Error::domain(
                        "noise_std",
                        "sine task targets are noiseless; set noise_std = 0",
                    ));
                }
                if self.x_std != 1.0 {
                    return Err(Error::domain(
                        "x_std",
                        "sine inputs are uniform on [-1, 1]; x_std must stay 1",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Exact record of the function a task was generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TaskMeta {
    Linear { beta: Vec<f64> },
    Sine { amplitude: f64, omega: f64 },
    OutlierLine { slope: f64 },
}

impl TaskMeta {
    pub fn is_outlier(&self) -> bool {
        matches!(self, TaskMeta::OutlierLine { .. })
    }

    /// Noiseless target the generator assigns to `x`. The linear case uses
    /// the same dot kernel as the linear predictor so a predictor holding
    /// the generator coefficients reproduces targets bit for bit.
    pub fn target(&self, x: &[f64]) -> f64 {
        match self {
            TaskMeta::Linear { beta } => {
                ndarray::ArrayView1::from(&beta[..]).dot(&ndarray::ArrayView1::from(x))
            }
            TaskMeta::Sine { amplitude, omega } => amplitude * (omega * x[0]).sin(),
            TaskMeta::OutlierLine { slope } => slope * x[0],
        }
    }
}

/// One meta-learning task: a train/test split drawn from one data source.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub train: Dataset,
    pub test: Dataset,
    pub meta: TaskMeta,
}

fn sample_pairs(
    rng: &mut impl Rng,
    n: usize,
    spec: &TaskSourceSpec,
    meta: &TaskMeta,
) -> Dataset {
    let dim = spec.input_dim;
    let mut xs = Array2::zeros((n, dim));
    let mut ys = Array2::zeros((n, 1));
    let mut xbuf = vec![0.0; dim];
    for k in 0..n {
        match spec.kind {
            TaskKind::LinearBimodal => {
                for j in 0..dim {
                    xbuf[j] = spec.x_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            TaskKind::SineAmplitude | TaskKind::SineFrequency => {
                xbuf[0] = rng.random_range(-1.0..=1.0);
            }
        }
        // The noise draw always happens so the stream layout does not depend
        // on noise_std; multiplying by 0 keeps noiseless targets exact.
        let e: f64 = rng.sample(StandardNormal);
        let y = meta.target(&xbuf) + spec.noise_std * e;
        for j in 0..dim {
            xs[[k, j]] = xbuf[j];
        }
        ys[[k, 0]] = y;
    }
    Dataset::new(xs, ys).expect("n >= 1 by validation")
}

/// Draw one bimodal linear regression task.
pub fn gen_linear_task(spec: &TaskSourceSpec, rng: &mut impl Rng) -> Result<Task> {
    spec.validate()?;
    if spec.kind != TaskKind::LinearBimodal {
        return Err(Error::invalid("gen_linear_task needs kind = linear-bimodal"));
    }
    let mode = if rng.random::<f64>() < 0.5 { -4.0 } else { 4.0 };
    let beta: Vec<f64> = (0..spec.input_dim)
        .map(|_| mode + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let meta = TaskMeta::Linear { beta };
    let train = sample_pairs(rng, spec.shots, spec, &meta);
    let test = sample_pairs(rng, spec.test_shots, spec, &meta);
    Ok(Task { train, test, meta })
}

/// Draw one inlier sinusoid task.
pub fn gen_sine_task(spec: &TaskSourceSpec, rng: &mut impl Rng) -> Result<Task> {
    spec.validate()?;
    let meta = match spec.kind {
        TaskKind::SineAmplitude => TaskMeta::Sine {
            // 1 - u maps [0, 1) onto (0, 1].
            amplitude: 1.0 - rng.random::<f64>(),
            omega: 1.0,
        },
        TaskKind::SineFrequency => TaskMeta::Sine {
            amplitude: 1.0,
            omega: rng.random_range(1.0..=1.5),
        },
        TaskKind::LinearBimodal => {
            return Err(Error::invalid("gen_sine_task needs a sine task kind"))
        }
    };
    let train = sample_pairs(rng, spec.shots, spec, &meta);
    let test = sample_pairs(rng, spec.test_shots, spec, &meta);
    Ok(Task { train, test, meta })
}

/// Draw one linear outlier task; the slope comes from the same distribution
/// as the inlier amplitude/frequency.
pub fn gen_outlier_task(spec: &TaskSourceSpec, rng: &mut impl Rng) -> Result<Task> {
    spec.validate()?;
    let slope = match spec.kind {
        TaskKind::SineAmplitude => 1.0 - rng.random::<f64>(),
        TaskKind::SineFrequency => rng.random_range(1.0..=1.5),
        TaskKind::LinearBimodal => {
            return Err(Error::invalid("outlier tasks exist only for sine kinds"))
        }
    };
    let meta = TaskMeta::OutlierLine { slope };
    let train = sample_pairs(rng, spec.shots, spec, &meta);
    let test = sample_pairs(rng, spec.test_shots, spec, &meta);
    Ok(Task { train, test, meta })
}

/// Which task indices are outliers: exactly `round(fraction * count)` of
/// them, at seeded-shuffled positions.
pub fn outlier_flags(spec: &TaskSourceSpec, count: usize) -> Vec<bool> {
    let n_out = (spec.outlier_fraction * count as f64).round() as usize;
    let mut flags = vec![false; count];
    if n_out == 0 {
        return flags;
    }
    let mut indices: Vec<usize> = (0..count).collect();
    let mut rng = rng_for(spec.seed, stream::OUTLIER_PLACEMENT, 0);
    use rand::seq::SliceRandom;
    indices.shuffle(&mut rng);
    for &i in indices.iter().take(n_out) {
        flags[i] = true;
    }
    flags
}

/// Generate exactly one task for a given index of the set.
pub fn gen_task_at(spec: &TaskSourceSpec, index: usize, outlier: bool) -> Result<Task> {
    let mut rng = rng_for(spec.seed, stream::TASK, index as u64);
    match (spec.kind, outlier) {
        (TaskKind::LinearBimodal, _) => gen_linear_task(spec, &mut rng),
        (_, false) => gen_sine_task(spec, &mut rng),
        (_, true) => gen_outlier_task(spec, &mut rng),
    }
}

/// Generate a task set of size `count`, deterministic in `(spec, seed)`.
pub fn gen_task_set(spec: &TaskSourceSpec, count: usize) -> Result<Vec<Task>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::invalid("task set count must be >= 1"));
    }
    let flags = outlier_flags(spec, count);
    (0..count)
        .map(|i| gen_task_at(spec, i, flags[i]))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    meta: TaskMeta,
    train_inputs: Vec<Vec<f64>>,
    train_targets: Vec<Vec<f64>>,
    test_inputs: Vec<Vec<f64>>,
    test_targets: Vec<Vec<f64>>,
}

fn rows(m: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// Write tasks as line-delimited JSON records; floats survive the round
/// trip bit-exactly.
pub fn write_task_file(path: &Path, tasks: &[Task]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for task in tasks {
        let record = TaskRecord {
            meta: task.meta.clone(),
            train_inputs: rows(task.train.inputs()),
            train_targets: rows(task.train.targets()),
            test_inputs: rows(task.test.inputs()),
            test_targets: rows(task.test.targets()),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::invalid(format!("task serialization failed: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_task_file(path: &Path) -> Result<Vec<Task>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut tasks = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: format!("bad task record: {e}"),
        })?;
        let train = Dataset::from_rows(&record.train_inputs, &record.train_targets)?;
        let test = Dataset::from_rows(&record.test_inputs, &record.test_targets)?;
        tasks.push(Task {
            train,
            test,
            meta: record.meta,
        });
    }
    if tasks.is_empty() {
        return Err(Error::invalid("task file contains no tasks"));
    }
    Ok(tasks)
}
