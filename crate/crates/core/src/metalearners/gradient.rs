//! Outer-loop gradients for all four algorithms.
//!
//! First-order mode treats gradient-valued quantities inside the adaptation
//! (the inner training gradients, i.e. the second half of every task
//! descriptor) as constants with respect to `theta0`. Exact mode pushes
//! cotangents through those gradients with Hessian-vector products.
//!
//! For the kernel meta-learner the `theta0` gradient is assembled from
//! descriptor cotangents: with pair weights `C[i][j] = v_i . psi_j + mu *
//! (Psi Psi^T)[i][j]` the objective's kernel part is `sum C[i][j] k(z_i,
//! z_j)`, whose descriptor gradient reduces to two `T x T` by `T x 2D`
//! matrix products per block.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::kernels::{descriptor_from_grad, kernel_eval_raw, kernel_matrix, KernelSpec};
use crate::params::ParamVector;
use crate::predictors::Model;
use crate::taskgen::Task;

use super::{
    gmsgd_combine, maml_combine, metasgd_combine, rkhs_norm, GmsgdState, GradientMode, MamlState,
    MetaSgdState, MetaState, TanmlState,
};

/// Objective value and flat per-group gradients at the current state.
#[derive(Clone, Debug)]
pub struct OuterGradient {
    pub objective: f64,
    pub groups: Vec<Array1<f64>>,
}

/// Full-batch outer gradient over all training tasks.
pub fn outer_gradient(
    state: &MetaState,
    model: &Model,
    tasks: &[Task],
    mode: GradientMode,
) -> Result<OuterGradient> {
    if tasks.is_empty() {
        return Err(Error::invalid("outer gradient needs at least one task"));
    }
    match state {
        MetaState::Maml(s) => grad_maml(s, model, tasks, mode),
        MetaState::MetaSgd(s) => grad_metasgd(s, model, tasks, mode),
        MetaState::Gmsgd(s) => grad_gmsgd(s, model, tasks, mode),
        MetaState::Tanml(s) => grad_tanml(s, model, tasks, mode),
    }
}

fn grad_maml(
    s: &MamlState,
    model: &Model,
    tasks: &[Task],
    mode: GradientMode,
) -> Result<OuterGradient> {
    let mut objective = 0.0;
    let mut g_theta = Array1::zeros(s.theta0.len());
    for task in tasks {
        let g_train = model.grad_loss(&task.train, &s.theta0)?;
        let theta_i = maml_combine(&s.theta0, s.alpha, &g_train);
        objective += model.loss(&task.test, &theta_i)?;
        let v = model.grad_loss(&task.test, &theta_i)?;
        match mode {
            GradientMode::FirstOrder => g_theta += v.values(),
            GradientMode::Exact => {
                let hv = model.hvp_loss(&task.train, &s.theta0, &v)?;
                g_theta += v.values();
                g_theta.scaled_add(-s.alpha, hv.values());
            }
        }
    }
    Ok(OuterGradient {
        objective,
        groups: vec![g_theta],
    })
}

fn grad_metasgd(
    s: &MetaSgdState,
    model: &Model,
    tasks: &[Task],
    mode: GradientMode,
) -> Result<OuterGradient> {
    let d = s.theta0.len();
    let mut objective = 0.0;
    let mut g_theta = Array1::zeros(d);
    let mut g_alpha = Array1::zeros(d);
    for task in tasks {
        let g_train = model.grad_loss(&task.train, &s.theta0)?;
        let theta_i = metasgd_combine(&s.theta0, &s.alpha, &g_train);
        objective += model.loss(&task.test, &theta_i)?;
        let v = model.grad_loss(&task.test, &theta_i)?;
        // d theta_i / d alpha = -diag(g_train) in both modes.
        for i in 0..d {
            g_alpha[i] -= g_train.values()[i] * v.values()[i];
        }
        match mode {
            GradientMode::FirstOrder => g_theta += v.values(),
            GradientMode::Exact => {
                let av = ParamVector::from_parts(
                    s.alpha.values() * v.values(),
                    s.theta0.layout().clone(),
                );
                let hv = model.hvp_loss(&task.train, &s.theta0, &av)?;
                g_theta += v.values();
                g_theta -= hv.values();
            }
        }
    }
    Ok(OuterGradient {
        objective,
        groups: vec![g_theta, g_alpha],
    })
}

fn grad_gmsgd(
    s: &GmsgdState,
    model: &Model,
    tasks: &[Task],
    mode: GradientMode,
) -> Result<OuterGradient> {
    let d = s.theta0.len();
    let mut objective = 0.0;
    let mut g_theta = Array1::zeros(d);
    let mut g_w1 = Array2::<f64>::zeros((d, d));
    let mut g_w2 = Array2::<f64>::zeros((d, d));
    for task in tasks {
        let g_train = model.grad_loss(&task.train, &s.theta0)?;
        let theta_i = gmsgd_combine(&s.theta0, &s.w1, &s.w2, &g_train);
        objective += model.loss(&task.test, &theta_i)?;
        let v = model.grad_loss(&task.test, &theta_i)?;
        for j in 0..d {
            g_w1.row_mut(j).scaled_add(s.theta0.values()[j], v.values());
            g_w2.row_mut(j).scaled_add(g_train.values()[j], v.values());
        }
        match mode {
            GradientMode::FirstOrder => {
                g_theta += &s.w1.dot(v.values());
            }
            GradientMode::Exact => {
                g_theta += &s.w1.dot(v.values());
                let w2v =
                    ParamVector::from_parts(s.w2.dot(v.values()), s.theta0.layout().clone());
                let hv = model.hvp_loss(&task.train, &s.theta0, &w2v)?;
                g_theta += hv.values();
            }
        }
    }
    if s.mu != 0.0 {
        let frob =
            s.w1.iter().map(|w| w * w).sum::<f64>() + s.w2.iter().map(|w| w * w).sum::<f64>();
        objective += s.mu * frob;
        g_w1.scaled_add(2.0 * s.mu, &s.w1);
        g_w2.scaled_add(2.0 * s.mu, &s.w2);
    }
    let mut g_w = Vec::with_capacity(2 * d * d);
    g_w.extend(g_w1.iter().copied());
    g_w.extend(g_w2.iter().copied());
    Ok(OuterGradient {
        objective,
        groups: vec![g_theta, Array1::from_vec(g_w)],
    })
}

fn grad_tanml(
    s: &TanmlState,
    model: &Model,
    tasks: &[Task],
    mode: GradientMode,
) -> Result<OuterGradient> {
    s.check_consistency()?;
    let t_count = tasks.len();
    if s.bank_size() != t_count {
        return Err(Error::invalid(format!(
            "bank holds {} tasks but {} were supplied",
            s.bank_size(),
            t_count
        )));
    }
    let d = s.theta0.len();
    let layout = s.theta0.layout().clone();
    let n_blocks = s.blocks.len();

    // Effective descriptor rows and kernel matrices per block.
    let z_mats: Vec<Array2<f64>> = s.blocks.iter().map(|b| b.bank.effective_matrix()).collect();
    let k_mats: Vec<Array2<f64>> = s
        .blocks
        .iter()
        .map(|b| kernel_matrix(&s.kernel, &b.bank))
        .collect::<Result<_>>()?;
    let ranges: Vec<std::ops::Range<usize>> = (0..n_blocks)
        .map(|b| s.block_range(b))
        .collect::<Result<_>>()?;

    // Adapt every training task and collect test-loss gradients, restricted
    // to each block's coordinate range.
    let mut objective = 0.0;
    let mut v_mats: Vec<Array2<f64>> = ranges
        .iter()
        .map(|r| Array2::zeros((t_count, r.len())))
        .collect();
    for (i, task) in tasks.iter().enumerate() {
        let mut values = Array1::zeros(d);
        for b in 0..n_blocks {
            let contrib = s.blocks[b].psi.t().dot(&k_mats[b].row(i));
            values
                .slice_mut(ndarray::s![ranges[b].clone()])
                .assign(&contrib);
        }
        let theta_i = ParamVector::from_parts(values, layout.clone());
        objective += model.loss(&task.test, &theta_i)?;
        let v = model.grad_loss(&task.test, &theta_i)?;
        for b in 0..n_blocks {
            v_mats[b]
                .row_mut(i)
                .assign(&v.values().slice(ndarray::s![ranges[b].clone()]));
        }
    }

    let mut g_theta = Array1::<f64>::zeros(d);
    let mut grad_cotangents: Option<Vec<Array1<f64>>> = match mode {
        GradientMode::Exact => Some(vec![Array1::zeros(d); t_count]),
        GradientMode::FirstOrder => None,
    };
    let mut g_psi_flat = Vec::new();

    for b in 0..n_blocks {
        let block = &s.blocks[b];
        let range = ranges[b].clone();
        let d_block = range.len();
        let k = &k_mats[b];
        let z = &z_mats[b];

        // Coefficient gradient: K V + 2 mu K Psi.
        let mut g_psi = k.dot(&v_mats[b]);
        if s.mu != 0.0 {
            objective += s.mu * rkhs_norm(block.psi.view(), k.view())?;
            g_psi.scaled_add(2.0 * s.mu, &k.dot(&block.psi));
        }

        // Pair weights for the descriptor cotangent.
        let mut c = v_mats[b].dot(&block.psi.t());
        if s.mu != 0.0 {
            c.scaled_add(s.mu, &block.psi.dot(&block.psi.t()));
        }
        let b_sym = &c + &c.t();

        let mut u = match s.kernel {
            KernelSpec::Gaussian { sigma2 } => {
                let bk = &b_sym * k;
                let row_sums = bk.sum_axis(Axis(1));
                let mut u = bk.dot(z);
                for a in 0..t_count {
                    let za = z.row(a).to_owned();
                    u.row_mut(a).scaled_add(-row_sums[a], &za);
                }
                u *= 2.0 / sigma2;
                u
            }
            KernelSpec::Cosine => {
                let norms: Array1<f64> = (0..t_count)
                    .map(|a| z.row(a).dot(&z.row(a)).sqrt())
                    .collect();
                let mut p = b_sym.clone();
                let mut q = Array1::<f64>::zeros(t_count);
                for a in 0..t_count {
                    for j in 0..t_count {
                        p[[a, j]] /= norms[a] * norms[j];
                        q[a] += b_sym[[a, j]] * k[[a, j]];
                    }
                    q[a] /= norms[a] * norms[a];
                }
                let mut u = p.dot(z);
                for a in 0..t_count {
                    let za = z.row(a).to_owned();
                    u.row_mut(a).scaled_add(-q[a], &za);
                }
                u
            }
        };

        // Chain through the (frozen) per-coordinate standardization.
        if let Some(standardizer) = block.bank.standardizer() {
            u = u / standardizer.scale();
        }

        for a in 0..t_count {
            let row = u.row(a);
            let top = row.slice(ndarray::s![..d_block]);
            let bot = row.slice(ndarray::s![d_block..]);
            let mut g_slice = g_theta.slice_mut(ndarray::s![range.clone()]);
            g_slice += &top;
            if let Some(cot) = grad_cotangents.as_mut() {
                let mut w_slice = cot[a].slice_mut(ndarray::s![range.clone()]);
                w_slice += &bot;
            }
        }

        g_psi_flat.extend(g_psi.iter().copied());
    }

    // Exact mode: cotangents on the inner gradients flow back through the
    // training-loss Hessian, one HVP per task.
    if let Some(cots) = grad_cotangents {
        for (a, task) in tasks.iter().enumerate() {
            let w = ParamVector::from_parts(cots[a].clone(), layout.clone());
            let hv = model.hvp_loss(&task.train, &s.theta0, &w)?;
            g_theta += hv.values();
        }
    }

    Ok(OuterGradient {
        objective,
        groups: vec![g_theta, Array1::from_vec(g_psi_flat)],
    })
}

/// Inner training-loss gradients at the current initialization, the
/// quantities first-order mode freezes.
pub fn inner_gradients(
    state: &MetaState,
    model: &Model,
    tasks: &[Task],
) -> Result<Vec<ParamVector>> {
    tasks
        .iter()
        .map(|t| model.grad_loss(&t.train, state.theta0()))
        .collect()
}

/// The objective with inner training gradients held at `frozen`.
///
/// The first-order [`outer_gradient`] is the exact derivative of this
/// function with respect to the meta-parameters, which is what the gradient
/// checker differentiates numerically. Descriptor standardization (when
/// enabled) is applied with the statistics stored in the state's banks.
pub fn surrogate_objective(
    state: &MetaState,
    model: &Model,
    tasks: &[Task],
    frozen: &[ParamVector],
) -> Result<f64> {
    if frozen.len() != tasks.len() {
        return Err(Error::invalid("frozen gradient count mismatch"));
    }
    let mut objective = 0.0;
    match state {
        MetaState::Maml(s) => {
            for (task, g) in tasks.iter().zip(frozen.iter()) {
                let theta = maml_combine(&s.theta0, s.alpha, g);
                objective += model.loss(&task.test, &theta)?;
            }
        }
        MetaState::MetaSgd(s) => {
            for (task, g) in tasks.iter().zip(frozen.iter()) {
                let theta = metasgd_combine(&s.theta0, &s.alpha, g);
                objective += model.loss(&task.test, &theta)?;
            }
        }
        MetaState::Gmsgd(s) => {
            for (task, g) in tasks.iter().zip(frozen.iter()) {
                let theta = gmsgd_combine(&s.theta0, &s.w1, &s.w2, g);
                objective += model.loss(&task.test, &theta)?;
            }
            if s.mu != 0.0 {
                let frob = s.w1.iter().map(|w| w * w).sum::<f64>()
                    + s.w2.iter().map(|w| w * w).sum::<f64>();
                objective += s.mu * frob;
            }
        }
        MetaState::Tanml(s) => {
            let t_count = tasks.len();
            let layout = s.theta0.layout().clone();
            let mut thetas = vec![Array1::<f64>::zeros(s.theta0.len()); t_count];
            for (b, block) in s.blocks.iter().enumerate() {
                if block.psi.nrows() != t_count {
                    return Err(Error::invalid("psi rows do not match task count"));
                }
                let range = s.block_range(b)?;
                let rows: Vec<Array1<f64>> = frozen
                    .iter()
                    .map(|g| {
                        let z = descriptor_from_grad(&s.theta0, g, block.layer)?;
                        Ok(match block.bank.standardizer() {
                            Some(st) => st.apply(z.view()),
                            None => z.values().clone(),
                        })
                    })
                    .collect::<Result<_>>()?;
                let mut k = Array2::<f64>::zeros((t_count, t_count));
                for i in 0..t_count {
                    for j in i..t_count {
                        let v = kernel_eval_raw(&s.kernel, rows[i].view(), rows[j].view())?;
                        k[[i, j]] = v;
                        k[[j, i]] = v;
                    }
                }
                for i in 0..t_count {
                    let contrib = block.psi.t().dot(&k.row(i));
                    thetas[i]
                        .slice_mut(ndarray::s![range.clone()])
                        .assign(&contrib);
                }
                if s.mu != 0.0 {
                    objective += s.mu * rkhs_norm(block.psi.view(), k.view())?;
                }
            }
            for (task, values) in tasks.iter().zip(thetas.into_iter()) {
                let theta = ParamVector::from_parts(values, layout.clone());
                objective += model.loss(&task.test, &theta)?;
            }
        }
    }
    Ok(objective)
}
