//! Outer-loop optimizer with independent step sizes per parameter group.
//!
//! Meta-training updates two groups (the shared initialization and the
//! algorithm's meta-coefficients) at different learning rates, so the
//! optimizer keeps per-group state.

use ndarray::Array1;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent.
    Gd,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Gd => "gd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "gd" => Ok(OptimizerKind::Gd),
            other => Err(Error::domain(
                "optimizer",
                format!("unknown optimizer `{other}`"),
            )),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam (or plain GD) over a fixed set of parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterOptimizer {
    kind: OptimizerKind,
    group_lrs: Vec<f64>,
    step_count: u64,
    m: Vec<Array1<f64>>,
    v: Vec<Array1<f64>>,
}

impl OuterOptimizer {
    pub fn new(kind: OptimizerKind, group_dims: &[usize], group_lrs: &[f64]) -> Result<Self> {
        if group_dims.len() != group_lrs.len() {
            return Err(Error::invalid("group dims / lrs length mismatch"));
        }
        if group_dims.is_empty() {
            return Err(Error::invalid("optimizer needs at least one group"));
        }
        if group_lrs.iter().any(|lr| !(*lr > 0.0) || !lr.is_finite()) {
            return Err(Error::domain("lr", "step sizes must be positive"));
        }
        Ok(OuterOptimizer {
            kind,
            group_lrs: group_lrs.to_vec(),
            step_count: 0,
            m: group_dims.iter().map(|&d| Array1::zeros(d)).collect(),
            v: group_dims.iter().map(|&d| Array1::zeros(d)).collect(),
        })
    }

    /// Rebuild from checkpointed state.
    pub fn restore(
        kind: OptimizerKind,
        group_lrs: Vec<f64>,
        step_count: u64,
        m: Vec<Array1<f64>>,
        v: Vec<Array1<f64>>,
    ) -> Result<Self> {
        if m.len() != v.len() || m.len() != group_lrs.len() {
            return Err(Error::Checkpoint(
                "optimizer moment group count mismatch".into(),
            ));
        }
        for (mi, vi) in m.iter().zip(v.iter()) {
            if mi.len() != vi.len() {
                return Err(Error::Checkpoint("optimizer moment shape mismatch".into()));
            }
        }
        Ok(OuterOptimizer {
            kind,
            group_lrs,
            step_count,
            m,
            v,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn group_lrs(&self) -> &[f64] {
        &self.group_lrs
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Array1<f64>], &[Array1<f64>]) {
        (&self.m, &self.v)
    }

    /// Apply one update to every group in place.
    pub fn step(&mut self, params: &mut [Array1<f64>], grads: &[Array1<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("optimizer group count mismatch"));
        }
        for g in 0..params.len() {
            if params[g].len() != self.m[g].len() || grads[g].len() != self.m[g].len() {
                return Err(Error::invalid(format!(
                    "optimizer group {g} dimension mismatch"
                )));
            }
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Gd => {
                for g in 0..params.len() {
                    params[g].scaled_add(-self.group_lrs[g], &grads[g]);
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for g in 0..params.len() {
                    let lr = self.group_lrs[g];
                    let (m, v) = (&mut self.m[g], &mut self.v[g]);
                    for i in 0..params[g].len() {
                        let grad = grads[g][i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad * grad;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        params[g][i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                    }
                }
            }
        }
        Ok(())
    }
}
