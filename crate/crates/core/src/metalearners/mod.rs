//! The four adaptation functions and their meta-training machinery.
//!
//! Every algorithm is described by a meta-state (its learned meta-parameters)
//! plus a shared adaptation contract: given a task's training split, produce
//! task-specific predictor parameters. MAML takes one gradient step from a
//! learned initialization, Meta-SGD learns per-coordinate step sizes,
//! Generalized Meta-SGD learns a full linear map of the task descriptor, and
//! the kernel meta-learner regresses task parameters onto kernel similarities
//! between task descriptors.

mod gradient;
mod train;

pub use gradient::{inner_gradients, outer_gradient, surrogate_objective, OuterGradient};
pub use train::{init_state, meta_train, outer_step, TraceRow, Trainer};

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::kernels::{
    descriptor_from_grad, kernel_matrix, kernel_vector, DescriptorBank, KernelSpec,
};
use crate::params::{Dataset, ParamVector};
use crate::predictors::Model;
use crate::taskgen::Task;

/// How the outer update differentiates through the inner adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    /// Gradient-valued quantities inside the adaptation are treated as
    /// constants with respect to the initialization.
    FirstOrder,
    /// Differentiates through the inner gradients via Hessian-vector
    /// products.
    Exact,
}

impl GradientMode {
    pub fn name(&self) -> &'static str {
        match self {
            GradientMode::FirstOrder => "first-order",
            GradientMode::Exact => "exact",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "first-order" => Ok(GradientMode::FirstOrder),
            "exact" => Ok(GradientMode::Exact),
            other => Err(Error::domain(
                "gradient_mode",
                format!("unknown gradient mode `{other}` (first-order|exact)"),
            )),
        }
    }
}

/// MAML: `g(theta0, task) = theta0 - alpha * grad`.
#[derive(Clone, Debug, PartialEq)]
pub struct MamlState {
    pub theta0: ParamVector,
    pub alpha: f64,
}

/// Meta-SGD: `g = theta0 - alpha_vec (.) grad` with a learned step vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaSgdState {
    pub theta0: ParamVector,
    pub alpha: ParamVector,
}

/// Generalized Meta-SGD: `g = W1^T theta0 + W2^T grad`.
#[derive(Clone, Debug, PartialEq)]
pub struct GmsgdState {
    pub theta0: ParamVector,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub mu: f64,
}

/// One kernel-regression block: either the whole parameter vector or one
/// network layer, with its own coefficients and descriptor bank.
#[derive(Clone, Debug, PartialEq)]
pub struct TanmlBlock {
    pub layer: Option<usize>,
    /// `T_tr x D_block` coefficient matrix, one row per training task.
    pub psi: Array2<f64>,
    pub bank: DescriptorBank,
}

/// Kernel meta-learner state: `g = Psi^T k(theta0, task)` per block.
#[derive(Clone, Debug, PartialEq)]
pub struct TanmlState {
    pub theta0: ParamVector,
    pub kernel: KernelSpec,
    pub mu: f64,
    pub standardize: bool,
    pub blocks: Vec<TanmlBlock>,
}

impl TanmlState {
    pub fn block_range(&self, block: usize) -> Result<std::ops::Range<usize>> {
        let b = &self.blocks[block];
        match b.layer {
            None => Ok(0..self.theta0.len()),
            Some(l) => self.theta0.layout().layer_range(l),
        }
    }

    pub fn bank_size(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.bank.len())
    }

    /// Rebuild every block's descriptor bank from the current `theta0`.
    /// `tasks` must be the training tasks the coefficient rows refer to, in
    /// their original order.
    pub fn refresh_banks(&mut self, model: &Model, tasks: &[Task]) -> Result<()> {
        let grads: Vec<ParamVector> = tasks
            .iter()
            .map(|t| model.grad_loss(&t.train, &self.theta0))
            .collect::<Result<_>>()?;
        for block in &mut self.blocks {
            let descriptors = grads
                .iter()
                .map(|g| descriptor_from_grad(&self.theta0, g, block.layer))
                .collect::<Result<Vec<_>>>()?;
            block.bank =
                DescriptorBank::new(descriptors, self.theta0.clone(), self.standardize)?;
        }
        Ok(())
    }

    fn check_consistency(&self) -> Result<()> {
        for (b, block) in self.blocks.iter().enumerate() {
            if block.bank.theta0_snapshot() != &self.theta0 {
                return Err(Error::invalid(format!(
                    "descriptor bank of block {b} is stale (theta0 changed)"
                )));
            }
            if block.psi.nrows() != block.bank.len() {
                return Err(Error::invalid(format!(
                    "psi rows {} do not match bank size {} in block {b}",
                    block.psi.nrows(),
                    block.bank.len()
                )));
            }
        }
        Ok(())
    }
}

/// Algorithm-specific learned meta-parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum MetaState {
    Maml(MamlState),
    MetaSgd(MetaSgdState),
    Gmsgd(GmsgdState),
    Tanml(TanmlState),
}

impl MetaState {
    pub fn theta0(&self) -> &ParamVector {
        match self {
            MetaState::Maml(s) => &s.theta0,
            MetaState::MetaSgd(s) => &s.theta0,
            MetaState::Gmsgd(s) => &s.theta0,
            MetaState::Tanml(s) => &s.theta0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MetaState::Maml(_) => "maml",
            MetaState::MetaSgd(_) => "meta-sgd",
            MetaState::Gmsgd(_) => "gmsgd",
            MetaState::Tanml(s) => match s.kernel {
                KernelSpec::Gaussian { .. } => "tanml-gaussian",
                KernelSpec::Cosine => "tanml-cosine",
            },
        }
    }

    /// Test-time adaptation: dispatch to the algorithm's adaptation function.
    pub fn adapt(&self, model: &Model, task_train: &Dataset) -> Result<ParamVector> {
        match self {
            MetaState::Maml(s) => adapt_maml(s, model, task_train),
            MetaState::MetaSgd(s) => adapt_metasgd(s, model, task_train),
            MetaState::Gmsgd(s) => adapt_gmsgd(s, model, task_train),
            MetaState::Tanml(s) => adapt_tanml(s, model, task_train),
        }
    }

    /// Dimensions of the flat optimizer groups: `[theta0]` for MAML,
    /// `[theta0, meta-coefficients]` for the others.
    pub fn group_dims(&self) -> Vec<usize> {
        let d = self.theta0().len();
        match self {
            MetaState::Maml(_) => vec![d],
            MetaState::MetaSgd(_) => vec![d, d],
            MetaState::Gmsgd(_) => vec![d, 2 * d * d],
            MetaState::Tanml(s) => {
                let meta: usize = s.blocks.iter().map(|b| b.psi.len()).collect::<Vec<_>>().iter().sum();
                vec![d, meta]
            }
        }
    }

    /// Snapshot the meta-parameters as flat optimizer groups.
    pub fn groups_to_arrays(&self) -> Vec<Array1<f64>> {
        match self {
            MetaState::Maml(s) => vec![s.theta0.values().clone()],
            MetaState::MetaSgd(s) => {
                vec![s.theta0.values().clone(), s.alpha.values().clone()]
            }
            MetaState::Gmsgd(s) => {
                let mut w = Vec::with_capacity(2 * s.w1.len());
                w.extend(s.w1.iter().copied());
                w.extend(s.w2.iter().copied());
                vec![s.theta0.values().clone(), Array1::from_vec(w)]
            }
            MetaState::Tanml(s) => {
                let mut psi = Vec::new();
                for block in &s.blocks {
                    psi.extend(block.psi.iter().copied());
                }
                vec![s.theta0.values().clone(), Array1::from_vec(psi)]
            }
        }
    }

    /// Write flat optimizer groups back into the state. For the kernel
    /// meta-learner the caller must refresh the descriptor banks afterwards.
    pub fn set_from_arrays(&mut self, groups: &[Array1<f64>]) -> Result<()> {
        let dims = self.group_dims();
        if groups.len() != dims.len()
            || groups.iter().zip(dims.iter()).any(|(g, &d)| g.len() != d)
        {
            return Err(Error::invalid("meta-parameter group shape mismatch"));
        }
        match self {
            MetaState::Maml(s) => {
                s.theta0 = ParamVector::from_parts(groups[0].clone(), s.theta0.layout().clone());
            }
            MetaState::MetaSgd(s) => {
                s.theta0 = ParamVector::from_parts(groups[0].clone(), s.theta0.layout().clone());
                s.alpha = ParamVector::from_parts(groups[1].clone(), s.alpha.layout().clone());
            }
            MetaState::Gmsgd(s) => {
                s.theta0 = ParamVector::from_parts(groups[0].clone(), s.theta0.layout().clone());
                let d = s.theta0.len();
                for i in 0..d {
                    for j in 0..d {
                        s.w1[[i, j]] = groups[1][i * d + j];
                        s.w2[[i, j]] = groups[1][d * d + i * d + j];
                    }
                }
            }
            MetaState::Tanml(s) => {
                s.theta0 = ParamVector::from_parts(groups[0].clone(), s.theta0.layout().clone());
                let mut offset = 0;
                for block in &mut s.blocks {
                    let n = block.psi.len();
                    let (rows, cols) = block.psi.dim();
                    for r in 0..rows {
                        for c in 0..cols {
                            block.psi[[r, c]] = groups[1][offset + r * cols + c];
                        }
                    }
                    offset += n;
                }
            }
        }
        Ok(())
    }
}

/// One explicit gradient step from the initialization.
pub fn adapt_maml(state: &MamlState, model: &Model, task_train: &Dataset) -> Result<ParamVector> {
    if !(state.alpha > 0.0) {
        return Err(Error::domain("alpha", "inner step size must be positive"));
    }
    let grad = model.grad_loss(task_train, &state.theta0)?;
    Ok(maml_combine(&state.theta0, state.alpha, &grad))
}

/// Element-wise learned step sizes.
pub fn adapt_metasgd(
    state: &MetaSgdState,
    model: &Model,
    task_train: &Dataset,
) -> Result<ParamVector> {
    if !state.theta0.same_layout(&state.alpha) {
        return Err(Error::invalid("alpha vector layout mismatch"));
    }
    let grad = model.grad_loss(task_train, &state.theta0)?;
    Ok(metasgd_combine(&state.theta0, &state.alpha, &grad))
}

/// Full linear map of the task descriptor.
pub fn adapt_gmsgd(state: &GmsgdState, model: &Model, task_train: &Dataset) -> Result<ParamVector> {
    let d = state.theta0.len();
    if state.w1.dim() != (d, d) || state.w2.dim() != (d, d) {
        return Err(Error::invalid(format!(
            "W blocks must be {d}x{d}, got {:?} and {:?}",
            state.w1.dim(),
            state.w2.dim()
        )));
    }
    let grad = model.grad_loss(task_train, &state.theta0)?;
    Ok(gmsgd_combine(&state.theta0, &state.w1, &state.w2, &grad))
}

/// Kernel regression of task parameters against the descriptor bank.
pub fn adapt_tanml(state: &TanmlState, model: &Model, task_train: &Dataset) -> Result<ParamVector> {
    state.check_consistency()?;
    let grad = model.grad_loss(task_train, &state.theta0)?;
    let mut values = Array1::zeros(state.theta0.len());
    for (b, block) in state.blocks.iter().enumerate() {
        let z = descriptor_from_grad(&state.theta0, &grad, block.layer)?;
        let k = kernel_vector(&state.kernel, &block.bank, &z)?;
        let contrib = block.psi.t().dot(&k);
        let range = state.block_range(b)?;
        values.slice_mut(ndarray::s![range]).assign(&contrib);
    }
    Ok(ParamVector::from_parts(values, state.theta0.layout().clone()))
}

pub(crate) fn maml_combine(theta0: &ParamVector, alpha: f64, grad: &ParamVector) -> ParamVector {
    let mut out = theta0.values().clone();
    for (o, g) in out.iter_mut().zip(grad.values().iter()) {
        *o -= alpha * g;
    }
    ParamVector::from_parts(out, theta0.layout().clone())
}

pub(crate) fn metasgd_combine(
    theta0: &ParamVector,
    alpha: &ParamVector,
    grad: &ParamVector,
) -> ParamVector {
    let mut out = theta0.values().clone();
    for ((o, a), g) in out
        .iter_mut()
        .zip(alpha.values().iter())
        .zip(grad.values().iter())
    {
        *o -= a * g;
    }
    ParamVector::from_parts(out, theta0.layout().clone())
}

/// `W1^T theta0 + W2^T grad` with explicit scalar loops: when `W1 = I` and
/// `W2 = -diag(alpha)` this reproduces the Meta-SGD update bit for bit.
pub(crate) fn gmsgd_combine(
    theta0: &ParamVector,
    w1: &Array2<f64>,
    w2: &Array2<f64>,
    grad: &ParamVector,
) -> ParamVector {
    let d = theta0.len();
    let t = theta0.values();
    let g = grad.values();
    let mut out = Array1::zeros(d);
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += w1[[j, i]] * t[j];
        }
        for j in 0..d {
            acc += w2[[j, i]] * g[j];
        }
        out[i] = acc;
    }
    ParamVector::from_parts(out, theta0.layout().clone())
}

/// `trace(Psi^T K Psi)`; the squared norm of the kernel-regression function.
pub fn rkhs_norm(psi: ArrayView2<'_, f64>, k: ArrayView2<'_, f64>) -> Result<f64> {
    let t = psi.nrows();
    if k.dim() != (t, t) {
        return Err(Error::invalid(format!(
            "kernel matrix {:?} does not match psi with {t} rows",
            k.dim()
        )));
    }
    for i in 0..t {
        for j in (i + 1)..t {
            let (a, b) = (k[[i, j]], k[[j, i]]);
            if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::invalid("kernel matrix is not symmetric"));
            }
        }
    }
    let kp = k.dot(&psi);
    Ok((&kp * &psi).sum())
}

/// Adapted-test-loss objective the outer loop descends, including the
/// algorithm's regularization term.
pub fn outer_objective(state: &MetaState, model: &Model, tasks: &[Task]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::invalid("outer objective needs at least one task"));
    }
    let mut objective = 0.0;
    match state {
        MetaState::Maml(_) | MetaState::MetaSgd(_) => {
            for task in tasks {
                let theta = state.adapt(model, &task.train)?;
                objective += model.loss(&task.test, &theta)?;
            }
        }
        MetaState::Gmsgd(s) => {
            for task in tasks {
                let theta = state.adapt(model, &task.train)?;
                objective += model.loss(&task.test, &theta)?;
            }
            if s.mu != 0.0 {
                let frob = s.w1.iter().map(|w| w * w).sum::<f64>()
                    + s.w2.iter().map(|w| w * w).sum::<f64>();
                objective += s.mu * frob;
            }
        }
        MetaState::Tanml(s) => {
            s.check_consistency()?;
            if s.bank_size() != tasks.len() {
                return Err(Error::invalid(format!(
                    "bank holds {} tasks but {} were supplied",
                    s.bank_size(),
                    tasks.len()
                )));
            }
            let layout = s.theta0.layout().clone();
            let kmats: Vec<_> = s
                .blocks
                .iter()
                .map(|b| kernel_matrix(&s.kernel, &b.bank))
                .collect::<Result<_>>()?;
            for (i, task) in tasks.iter().enumerate() {
                let mut values = Array1::zeros(s.theta0.len());
                for (b, block) in s.blocks.iter().enumerate() {
                    let contrib = block.psi.t().dot(&kmats[b].row(i));
                    let range = s.block_range(b)?;
                    values.slice_mut(ndarray::s![range]).assign(&contrib);
                }
                let theta = ParamVector::from_parts(values, layout.clone());
                objective += model.loss(&task.test, &theta)?;
            }
            if s.mu != 0.0 {
                for (b, block) in s.blocks.iter().enumerate() {
                    objective += s.mu * rkhs_norm(block.psi.view(), kmats[b].view())?;
                }
            }
        }
    }
    Ok(objective)
}
