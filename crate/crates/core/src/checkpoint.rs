//! Versioned text checkpoints with bit-exact floats.
//!
//! Every f64 is written as the 16-hex-digit encoding of its IEEE-754 bits,
//! so `load(save(state))` reproduces the state bitwise, optimizer moments
//! included. The format is line-oriented `key = value` text, diffable across
//! implementations.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::config::AlgorithmKind;
use crate::error::{Error, Result};
use crate::kernels::{DescriptorBank, KernelSpec, TaskDescriptor};
use crate::metalearners::{
    GmsgdState, GradientMode, MamlState, MetaSgdState, MetaState, TanmlBlock, TanmlState,
};
use crate::optim::{OptimizerKind, OuterOptimizer};
use crate::params::ParamVector;
use crate::predictors::{Model, ModelKind};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "tanml-checkpoint";

/// Everything needed to resume meta-training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub algorithm: AlgorithmKind,
    pub iteration: usize,
    pub mode: GradientMode,
    pub model: ModelKind,
    pub state: MetaState,
    pub optimizer: OuterOptimizer,
}

fn f64_to_hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn f64_from_hex(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Checkpoint(format!("bad float word `{s}`")))
}

fn vec_to_hex(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(f64_to_hex)
        .collect::<Vec<_>>()
        .join(" ")
}

fn vec_from_hex(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(' ').map(f64_from_hex).collect()
}

struct Writer {
    out: String,
}

impl Writer {
    fn new() -> Self {
        Writer {
            out: format!("{MAGIC} v{FORMAT_VERSION}\n"),
        }
    }

    fn field(&mut self, key: &str, value: impl std::fmt::Display) {
        self.out.push_str(&format!("{key} = {value}\n"));
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut w = Writer::new();
        w.field("fingerprint", &self.fingerprint);
        w.field("algorithm", self.algorithm.name());
        w.field("iteration", self.iteration);
        w.field("gradient_mode", self.mode.name());
        match &self.model {
            ModelKind::Linear { input_dim } => {
                w.field("model", "linear");
                w.field("input_dim", input_dim);
            }
            ModelKind::Mlp { widths } => {
                w.field("model", "mlp");
                w.field(
                    "widths",
                    widths
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                );
            }
        }
        w.field("theta0", vec_to_hex(self.state.theta0().values().iter().copied()));
        match &self.state {
            MetaState::Maml(s) => {
                w.field("alpha", f64_to_hex(s.alpha));
            }
            MetaState::MetaSgd(s) => {
                w.field("alpha_vec", vec_to_hex(s.alpha.values().iter().copied()));
            }
            MetaState::Gmsgd(s) => {
                w.field("mu", f64_to_hex(s.mu));
                w.field("w1", vec_to_hex(s.w1.iter().copied()));
                w.field("w2", vec_to_hex(s.w2.iter().copied()));
            }
            MetaState::Tanml(s) => {
                w.field("mu", f64_to_hex(s.mu));
                match s.kernel {
                    KernelSpec::Gaussian { sigma2 } => {
                        w.field("kernel", "gaussian");
                        w.field("sigma2", f64_to_hex(sigma2));
                    }
                    KernelSpec::Cosine => w.field("kernel", "cosine"),
                }
                w.field("standardize", s.standardize);
                w.field("blocks", s.blocks.len());
                for (b, block) in s.blocks.iter().enumerate() {
                    w.field(
                        &format!("block_{b}_layer"),
                        block
                            .layer
                            .map_or("none".to_string(), |l| l.to_string()),
                    );
                    w.field(&format!("block_{b}_psi_rows"), block.psi.nrows());
                    w.field(&format!("block_{b}_psi"), vec_to_hex(block.psi.iter().copied()));
                    for i in 0..block.bank.len() {
                        w.field(
                            &format!("block_{b}_desc_{i}"),
                            vec_to_hex(block.bank.descriptor(i).values().iter().copied()),
                        );
                    }
                }
            }
        }
        w.field("opt_kind", self.optimizer.kind().name());
        w.field("opt_lrs", vec_to_hex(self.optimizer.group_lrs().iter().copied()));
        w.field("opt_step_count", self.optimizer.step_count());
        let (m, v) = self.optimizer.moments();
        for (g, (mg, vg)) in m.iter().zip(v.iter()).enumerate() {
            w.field(&format!("opt_m_{g}"), vec_to_hex(mg.iter().copied()));
            w.field(&format!("opt_v_{g}"), vec_to_hex(vg.iter().copied()));
        }
        w.out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        let expected = format!("{MAGIC} v{FORMAT_VERSION}");
        if header != expected {
            return Err(Error::Checkpoint(format!(
                "unsupported header `{header}` (expected `{expected}`)"
            )));
        }
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in lines.enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let Some(eq) = raw.find(" = ") else {
                return Err(Error::Parse {
                    line: idx + 2,
                    message: format!("bad checkpoint line `{raw}`"),
                });
            };
            let key = raw[..eq].to_string();
            let value = raw[eq + 3..].to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::Checkpoint(format!("duplicate key `{key}`")));
            }
        }
        let mut reader = Reader { map };
        let ckpt = reader.read()?;
        if !reader.map.is_empty() {
            let leftover: Vec<&String> = reader.map.keys().collect();
            return Err(Error::Checkpoint(format!(
                "unrecognized checkpoint keys: {leftover:?}"
            )));
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

struct Reader {
    map: BTreeMap<String, String>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Result<String> {
        self.map
            .remove(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing key `{key}`")))
    }

    fn take_usize(&mut self, key: &str) -> Result<usize> {
        self.take(key)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad integer for `{key}`")))
    }

    fn take_vec(&mut self, key: &str) -> Result<Vec<f64>> {
        vec_from_hex(&self.take(key)?)
    }

    fn read(&mut self) -> Result<Checkpoint> {
        let fingerprint = self.take("fingerprint")?;
        let algorithm = AlgorithmKind::parse(&self.take("algorithm")?)?;
        let iteration = self.take_usize("iteration")?;
        let mode = GradientMode::parse(&self.take("gradient_mode")?)?;
        let model_kind = match self.take("model")?.as_str() {
            "linear" => ModelKind::Linear {
                input_dim: self.take_usize("input_dim")?,
            },
            "mlp" => {
                let widths = self
                    .take("widths")?
                    .split(',')
                    .map(|w| {
                        w.parse::<usize>()
                            .map_err(|_| Error::Checkpoint(format!("bad width `{w}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ModelKind::Mlp { widths }
            }
            other => {
                return Err(Error::Checkpoint(format!("unknown model kind `{other}`")))
            }
        };
        let model = Model::new(model_kind.clone())?;
        let theta0 = ParamVector::new(
            Array1::from_vec(self.take_vec("theta0")?),
            model.layout().clone(),
        )
        .map_err(|e| Error::Checkpoint(format!("theta0: {e}")))?;
        let d = theta0.len();

        let state = match algorithm {
            AlgorithmKind::Maml => MetaState::Maml(MamlState {
                theta0,
                alpha: f64_from_hex(&self.take("alpha")?)?,
            }),
            AlgorithmKind::MetaSgd => {
                let alpha = ParamVector::new(
                    Array1::from_vec(self.take_vec("alpha_vec")?),
                    model.layout().clone(),
                )
                .map_err(|e| Error::Checkpoint(format!("alpha_vec: {e}")))?;
                MetaState::MetaSgd(MetaSgdState { theta0, alpha })
            }
            AlgorithmKind::Gmsgd => {
                let mu = f64_from_hex(&self.take("mu")?)?;
                let w1 = Array2::from_shape_vec((d, d), self.take_vec("w1")?)
                    .map_err(|_| Error::Checkpoint("w1 shape mismatch".into()))?;
                let w2 = Array2::from_shape_vec((d, d), self.take_vec("w2")?)
                    .map_err(|_| Error::Checkpoint("w2 shape mismatch".into()))?;
                MetaState::Gmsgd(GmsgdState { theta0, w1, w2, mu })
            }
            AlgorithmKind::TanmlGaussian | AlgorithmKind::TanmlCosine => {
                let mu = f64_from_hex(&self.take("mu")?)?;
                let kernel = match self.take("kernel")?.as_str() {
                    "gaussian" => KernelSpec::Gaussian {
                        sigma2: f64_from_hex(&self.take("sigma2")?)?,
                    },
                    "cosine" => KernelSpec::Cosine,
                    other => {
                        return Err(Error::Checkpoint(format!("unknown kernel `{other}`")))
                    }
                };
                let standardize = match self.take("standardize")?.as_str() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::Checkpoint(format!(
                            "bad standardize flag `{other}`"
                        )))
                    }
                };
                let n_blocks = self.take_usize("blocks")?;
                let mut blocks = Vec::with_capacity(n_blocks);
                for b in 0..n_blocks {
                    let layer = match self.take(&format!("block_{b}_layer"))?.as_str() {
                        "none" => None,
                        l => Some(l.parse::<usize>().map_err(|_| {
                            Error::Checkpoint(format!("bad layer in block {b}"))
                        })?),
                    };
                    let rows = self.take_usize(&format!("block_{b}_psi_rows"))?;
                    let psi_flat = self.take_vec(&format!("block_{b}_psi"))?;
                    if rows == 0 || psi_flat.len() % rows != 0 {
                        return Err(Error::Checkpoint(format!(
                            "psi of block {b} is not rectangular"
                        )));
                    }
                    let cols = psi_flat.len() / rows;
                    let psi = Array2::from_shape_vec((rows, cols), psi_flat)
                        .map_err(|_| Error::Checkpoint("psi shape mismatch".into()))?;
                    let block_range = match layer {
                        None => 0..d,
                        Some(l) => model.layout().layer_range(l)?,
                    };
                    if cols != block_range.len() {
                        return Err(Error::Checkpoint(format!(
                            "psi columns {cols} do not match block dim {}",
                            block_range.len()
                        )));
                    }
                    let mut descriptors = Vec::with_capacity(rows);
                    for i in 0..rows {
                        let values = self.take_vec(&format!("block_{b}_desc_{i}"))?;
                        let desc = TaskDescriptor::new(Array1::from_vec(values), layer)
                            .map_err(|e| Error::Checkpoint(format!("descriptor: {e}")))?;
                        if desc.len() != 2 * block_range.len() {
                            return Err(Error::Checkpoint(format!(
                                "descriptor {i} of block {b} has wrong length"
                            )));
                        }
                        // Self-consistency: the first half must be the stored
                        // theta0 restricted to this block.
                        let top = desc.values().slice(ndarray::s![..block_range.len()]);
                        let expected = theta0
                            .values()
                            .slice(ndarray::s![block_range.clone()]);
                        if top
                            .iter()
                            .zip(expected.iter())
                            .any(|(a, b)| a.to_bits() != b.to_bits())
                        {
                            return Err(Error::Checkpoint(format!(
                                "descriptor {i} of block {b} disagrees with theta0 snapshot"
                            )));
                        }
                        descriptors.push(desc);
                    }
                    let bank = DescriptorBank::new(descriptors, theta0.clone(), standardize)
                        .map_err(|e| Error::Checkpoint(format!("bank: {e}")))?;
                    blocks.push(TanmlBlock { layer, psi, bank });
                }
                MetaState::Tanml(TanmlState {
                    theta0,
                    kernel,
                    mu,
                    standardize,
                    blocks,
                })
            }
            AlgorithmKind::Oracle => {
                return Err(Error::Checkpoint(
                    "oracle baseline cannot be checkpointed".into(),
                ))
            }
        };

        let opt_kind = OptimizerKind::parse(&self.take("opt_kind")?)?;
        let lrs = self.take_vec("opt_lrs")?;
        let step_count = self.take("opt_step_count")?.parse::<u64>().map_err(|_| {
            Error::Checkpoint("bad opt_step_count".into())
        })?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for g in 0..lrs.len() {
            m.push(Array1::from_vec(self.take_vec(&format!("opt_m_{g}"))?));
            v.push(Array1::from_vec(self.take_vec(&format!("opt_v_{g}"))?));
        }
        let optimizer = OuterOptimizer::restore(opt_kind, lrs, step_count, m, v)?;
        let dims = state.group_dims();
        let (mm, _) = optimizer.moments();
        if mm.len() != dims.len()
            || mm.iter().zip(dims.iter()).any(|(a, &b)| a.len() != b)
        {
            return Err(Error::Checkpoint(
                "optimizer moments do not match meta-parameter groups".into(),
            ));
        }
        Ok(Checkpoint {
            fingerprint,
            algorithm,
            iteration,
            mode,
            model: model_kind,
            state,
            optimizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, AlgorithmKind};
    use crate::metalearners::{init_state, Trainer};
    use crate::taskgen::gen_task_set;

    fn tiny_config(algo: &str) -> crate::config::ExperimentConfig {
        let text = format!(
            "task_kind = linear-bimodal\ninput_dim = 3\nshots = 4\ntest_shots = 4\n\
             model = linear\nt_tr = 3\nt_v = 2\nn_iter = 2\nmc_runs = 1\nseed = 9\n\
             algorithms = {algo}\n"
        );
        parse_config(&text, None).unwrap()
    }

    fn round_trip(algo: &str) {
        let cfg = tiny_config(algo);
        let tasks = gen_task_set(&cfg.task, cfg.t_tr).unwrap();
        let mut trainer = Trainer::new(&cfg, &cfg.algorithms[0], &tasks, 7).unwrap();
        trainer.run(2).unwrap();
        let ckpt = Checkpoint {
            fingerprint: cfg.fingerprint(),
            algorithm: cfg.algorithms[0].kind,
            iteration: trainer.iteration(),
            mode: trainer.mode(),
            model: cfg.model.clone(),
            state: trainer.state().clone(),
            optimizer: trainer.optimizer().clone(),
        };
        let text = ckpt.to_text();
        let loaded = Checkpoint::parse(&text).unwrap();
        // Bitwise: re-serialization must reproduce the exact bytes.
        assert_eq!(text, loaded.to_text(), "{algo} round trip");
        assert_eq!(ckpt.iteration, loaded.iteration);
        assert_eq!(ckpt.state, loaded.state);
        assert_eq!(ckpt.optimizer, loaded.optimizer);
    }

    #[test]
    fn checkpoint_round_trip_all_algorithms() {
        for algo in ["maml", "meta-sgd", "gmsgd", "tanml-gaussian", "tanml-cosine"] {
            round_trip(algo);
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let err = Checkpoint::parse("tanml-checkpoint v99\n").unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn tampered_descriptor_snapshot_is_rejected() {
        let cfg = tiny_config("tanml-cosine");
        let tasks = gen_task_set(&cfg.task, cfg.t_tr).unwrap();
        let model = Model::new(cfg.model.clone()).unwrap();
        let state = init_state(&cfg, &cfg.algorithms[0], &model, &tasks, 7).unwrap();
        let opt = OuterOptimizer::new(
            OptimizerKind::Adam,
            &state.group_dims(),
            &[1e-3, 1e-5],
        )
        .unwrap();
        let ckpt = Checkpoint {
            fingerprint: cfg.fingerprint(),
            algorithm: AlgorithmKind::TanmlCosine,
            iteration: 0,
            mode: GradientMode::FirstOrder,
            model: cfg.model.clone(),
            state,
            optimizer: opt,
        };
        let text = ckpt.to_text();
        // Corrupt the first descriptor's first word.
        let tampered: String = text
            .lines()
            .map(|l| {
                if l.starts_with("block_0_desc_0 = ") {
                    let mut parts: Vec<&str> = l.split(' ').collect();
                    parts[2] = "3ff0000000000123";
                    parts.join(" ")
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        assert!(Checkpoint::parse(&tampered).is_err());
    }
}
