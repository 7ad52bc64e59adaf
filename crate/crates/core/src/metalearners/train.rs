//! Meta-training loop: state initialization, the outer step, and a small
//! trainer that owns the training tasks and emits a per-iteration trace.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{AlgorithmConfig, AlgorithmKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::optim::OuterOptimizer;
use crate::params::{ParamVector, SegmentRole};
use crate::predictors::Model;
use crate::taskgen::Task;

use super::gradient::outer_gradient;
use super::{
    GmsgdState, GradientMode, MamlState, MetaSgdState, MetaState, TanmlBlock, TanmlState,
};

/// Abort threshold for the outer objective.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// One meta-training iteration record.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm_theta0: f64,
    pub grad_norm_meta: f64,
}

fn norm(a: &Array1<f64>) -> f64 {
    a.dot(a).sqrt()
}

/// Glorot-uniform weights, zero biases.
fn init_theta0(model: &Model, rng: &mut impl Rng) -> ParamVector {
    let mut values = Array1::<f64>::zeros(model.param_dim());
    for seg in model.layout().segments() {
        if let SegmentRole::Weight { rows, cols } = seg.role {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            for i in seg.offset..seg.offset + seg.len {
                values[i] = rng.random_range(-limit..limit);
            }
        }
    }
    ParamVector::from_parts(values, model.layout().clone())
}

/// Deterministically initialize an algorithm's meta-state from a seed.
///
/// Draw order is fixed: `theta0` first, then the algorithm's extra
/// meta-parameters, so states for different algorithms share the same
/// initialization of `theta0` under the same seed.
pub fn init_state(
    cfg: &ExperimentConfig,
    algo: &AlgorithmConfig,
    model: &Model,
    tasks: &[Task],
    seed: u64,
) -> Result<MetaState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0 = init_theta0(model, &mut rng);
    let d = theta0.len();
    match algo.kind {
        AlgorithmKind::Maml => Ok(MetaState::Maml(MamlState {
            theta0,
            alpha: cfg.inner_alpha,
        })),
        AlgorithmKind::MetaSgd => {
            let (lo, hi) = cfg.alpha_init;
            let values = Array1::from_iter((0..d).map(|_| rng.random_range(lo..hi)));
            let alpha = ParamVector::from_parts(values, theta0.layout().clone());
            Ok(MetaState::MetaSgd(MetaSgdState { theta0, alpha }))
        }
        AlgorithmKind::Gmsgd => {
            let (lo, hi) = cfg.alpha_init;
            let w1 = Array2::eye(d);
            let mut w2 = Array2::zeros((d, d));
            for i in 0..d {
                w2[[i, i]] = -rng.random_range(lo..hi);
            }
            Ok(MetaState::Gmsgd(GmsgdState {
                theta0,
                w1,
                w2,
                mu: cfg.mu,
            }))
        }
        AlgorithmKind::TanmlGaussian | AlgorithmKind::TanmlCosine => {
            if tasks.is_empty() {
                return Err(Error::invalid("kernel meta-learner needs training tasks"));
            }
            let kernel = match algo.kind {
                AlgorithmKind::TanmlGaussian => KernelSpec::Gaussian { sigma2: cfg.sigma2 },
                _ => KernelSpec::Cosine,
            };
            kernel.validate()?;
            let layers: Vec<Option<usize>> = if cfg.per_layer {
                (0..model.layout().layer_count()).map(Some).collect()
            } else {
                vec![None]
            };
            let t_count = tasks.len();
            let psi_std = 1.0 / t_count as f64;
            let normal = Normal::new(0.0, psi_std)
                .map_err(|e| Error::invalid(format!("psi init: {e}")))?;
            let mut blocks = Vec::with_capacity(layers.len());
            for layer in layers {
                let d_block = match layer {
                    None => d,
                    Some(l) => model.layout().layer_range(l)?.len(),
                };
                let psi =
                    Array2::from_shape_fn((t_count, d_block), |_| normal.sample(&mut rng));
                // Placeholder bank; rebuilt below from theta0.
                blocks.push((layer, psi));
            }
            let mut state = TanmlState {
                theta0: theta0.clone(),
                kernel,
                mu: cfg.mu,
                standardize: algo.standardize,
                blocks: Vec::new(),
            };
            // Build banks in one pass over the tasks.
            let grads: Vec<ParamVector> = tasks
                .iter()
                .map(|t| model.grad_loss(&t.train, &theta0))
                .collect::<Result<_>>()?;
            for (layer, psi) in blocks {
                let descriptors = grads
                    .iter()
                    .map(|g| crate::kernels::descriptor_from_grad(&theta0, g, layer))
                    .collect::<Result<Vec<_>>>()?;
                let bank = crate::kernels::DescriptorBank::new(
                    descriptors,
                    theta0.clone(),
                    algo.standardize,
                )?;
                state.blocks.push(TanmlBlock { layer, psi, bank });
            }
            Ok(MetaState::Tanml(state))
        }
        AlgorithmKind::Oracle => Err(Error::invalid(
            "the oracle baseline has no trainable meta-state",
        )),
    }
}

/// One full-batch outer update; rebuilds kernel descriptor banks afterwards.
pub fn outer_step(
    state: &mut MetaState,
    model: &Model,
    tasks: &[Task],
    optimizer: &mut OuterOptimizer,
    mode: GradientMode,
    iteration: usize,
) -> Result<TraceRow> {
    let og = outer_gradient(state, model, tasks, mode)?;
    if !og.objective.is_finite() || og.objective > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            iteration,
            message: format!("outer objective {}", og.objective),
        });
    }
    if og
        .groups
        .iter()
        .any(|g| !g.iter().all(|x| x.is_finite()))
    {
        return Err(Error::Divergence {
            iteration,
            message: "non-finite outer gradient".into(),
        });
    }
    let mut groups = state.groups_to_arrays();
    optimizer.step(&mut groups, &og.groups)?;
    state.set_from_arrays(&groups)?;
    if let MetaState::Tanml(s) = state {
        s.refresh_banks(model, tasks)?;
    }
    Ok(TraceRow {
        iteration,
        objective: og.objective,
        grad_norm_theta0: norm(&og.groups[0]),
        grad_norm_meta: og.groups.get(1).map_or(0.0, norm),
    })
}

/// Owns one algorithm's state, optimizer, and training tasks.
pub struct Trainer {
    model: Model,
    state: MetaState,
    optimizer: OuterOptimizer,
    mode: GradientMode,
    iteration: usize,
    tasks: Vec<Task>,
    trace: Vec<TraceRow>,
}

impl Trainer {
    pub fn new(
        cfg: &ExperimentConfig,
        algo: &AlgorithmConfig,
        tasks: &[Task],
        seed: u64,
    ) -> Result<Self> {
        let model = Model::new(cfg.model.clone())?;
        let state = init_state(cfg, algo, &model, tasks, seed)?;
        let optimizer = OuterOptimizer::new(
            cfg.optimizer,
            &state.group_dims(),
            &group_lrs(&state, algo),
        )?;
        Ok(Trainer {
            model,
            state,
            optimizer,
            mode: cfg.gradient_mode,
            iteration: 0,
            tasks: tasks.to_vec(),
            trace: Vec::new(),
        })
    }

    /// Resume from checkpointed parts. `tasks` must be the original
    /// training tasks.
    pub fn from_parts(
        model: Model,
        state: MetaState,
        optimizer: OuterOptimizer,
        mode: GradientMode,
        iteration: usize,
        tasks: Vec<Task>,
    ) -> Result<Self> {
        if let MetaState::Tanml(s) = &state {
            if s.bank_size() != tasks.len() {
                return Err(Error::invalid(
                    "training task count does not match checkpointed bank",
                ));
            }
        }
        Ok(Trainer {
            model,
            state,
            optimizer,
            mode,
            iteration,
            tasks,
            trace: Vec::new(),
        })
    }

    pub fn step(&mut self) -> Result<&TraceRow> {
        let row = outer_step(
            &mut self.state,
            &self.model,
            &self.tasks,
            &mut self.optimizer,
            self.mode,
            self.iteration,
        )?;
        self.iteration += 1;
        self.trace.push(row);
        Ok(self.trace.last().unwrap())
    }

    /// Run `n_iter` outer steps; on divergence the partial trace survives.
    pub fn run(&mut self, n_iter: usize) -> Result<()> {
        for _ in 0..n_iter {
            self.step()?;
        }
        Ok(())
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn state(&self) -> &MetaState {
        &self.state
    }

    pub fn optimizer(&self) -> &OuterOptimizer {
        &self.optimizer
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn into_state(self) -> MetaState {
        self.state
    }
}

fn group_lrs(state: &MetaState, algo: &AlgorithmConfig) -> Vec<f64> {
    match state {
        MetaState::Maml(_) => vec![algo.lr_theta0],
        _ => vec![algo.lr_theta0, algo.lr_meta],
    }
}

/// Initialize and run a full meta-training; returns the final state and the
/// per-iteration trace.
pub fn meta_train(
    cfg: &ExperimentConfig,
    algo: &AlgorithmConfig,
    tasks: &[Task],
    seed: u64,
) -> Result<(MetaState, Vec<TraceRow>)> {
    let mut trainer = Trainer::new(cfg, algo, tasks, seed)?;
    trainer.run(cfg.n_iter)?;
    let trace = trainer.trace.clone();
    Ok((trainer.into_state(), trace))
}
