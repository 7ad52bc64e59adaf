//! Numerical verification of the outer gradients against central finite
//! differences, on instances small enough for dense differencing.
//!
//! Exact mode is checked against the true outer objective (descriptor banks
//! rebuilt at every probe point). First-order mode is checked against the
//! first-order surrogate: the objective with the inner training gradients
//! frozen at the base point, which is exactly the function whose derivative
//! the first-order update uses.

use ndarray::Array1;

use crate::config::{AlgorithmConfig, AlgorithmKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metalearners::{
    init_state, inner_gradients, outer_gradient, outer_objective, surrogate_objective,
    GradientMode, MetaState,
};
use crate::params::ParamVector;
use crate::predictors::Model;
use crate::taskgen::{gen_task_set, Task, TaskSourceSpec};

/// Instance sizes for the check battery.
#[derive(Clone, Debug)]
pub struct GradcheckSettings {
    /// Parameter dimension of the linear instances.
    pub input_dim: usize,
    pub t_tr: usize,
    pub shots: usize,
    pub seed: u64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            input_dim: 3,
            t_tr: 3,
            shots: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckEntry {
    pub label: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

fn rel_err(analytic: &Array1<f64>, numeric: &Array1<f64>) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6 * scale))
        .fold(0.0, f64::max)
}

fn instance_config(settings: &GradcheckSettings, algo: AlgorithmKind) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::custom_base();
    cfg.experiment = "gradcheck".into();
    cfg.algorithms = vec![AlgorithmConfig::defaults(algo)];
    cfg.task = TaskSourceSpec {
        kind: crate::taskgen::TaskKind::LinearBimodal,
        shots: settings.shots,
        test_shots: settings.shots,
        noise_std: 1.0,
        outlier_fraction: 0.0,
        input_dim: settings.input_dim,
        x_std: 1.0,
        seed: settings.seed,
    };
    cfg.model = crate::predictors::ModelKind::Linear {
        input_dim: settings.input_dim,
    };
    cfg.t_tr = settings.t_tr;
    cfg.t_v = 1;
    cfg.mc_runs = 1;
    cfg.n_iter = 0;
    cfg.seed = settings.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn perturbed_state(
    base: &MetaState,
    groups: &[Array1<f64>],
    model: &Model,
    tasks: &[Task],
    refresh: bool,
) -> Result<MetaState> {
    let mut state = base.clone();
    state.set_from_arrays(groups)?;
    if refresh {
        if let MetaState::Tanml(s) = &mut state {
            s.refresh_banks(model, tasks)?;
        }
    }
    Ok(state)
}

/// Central finite differences of the mode's reference objective over every
/// meta-parameter group.
fn fd_gradient(
    base: &MetaState,
    model: &Model,
    tasks: &[Task],
    mode: GradientMode,
    frozen: &[ParamVector],
    h: f64,
) -> Result<Vec<Array1<f64>>> {
    let groups = base.groups_to_arrays();
    let mut out = Vec::with_capacity(groups.len());
    for g in 0..groups.len() {
        let mut grad = Array1::zeros(groups[g].len());
        for i in 0..groups[g].len() {
            let mut plus = groups.clone();
            plus[g][i] += h;
            let mut minus = groups.clone();
            minus[g][i] -= h;
            let (f_plus, f_minus) = match mode {
                GradientMode::Exact => {
                    let sp = perturbed_state(base, &plus, model, tasks, true)?;
                    let sm = perturbed_state(base, &minus, model, tasks, true)?;
                    (
                        outer_objective(&sp, model, tasks)?,
                        outer_objective(&sm, model, tasks)?,
                    )
                }
                GradientMode::FirstOrder => {
                    let sp = perturbed_state(base, &plus, model, tasks, false)?;
                    let sm = perturbed_state(base, &minus, model, tasks, false)?;
                    (
                        surrogate_objective(&sp, model, tasks, frozen)?,
                        surrogate_objective(&sm, model, tasks, frozen)?,
                    )
                }
            };
            grad[i] = (f_plus - f_minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Check one algorithm's outer gradient in one mode; returns one entry per
/// parameter group.
pub fn check_algorithm(
    settings: &GradcheckSettings,
    algo: AlgorithmKind,
    mode: GradientMode,
) -> Result<Vec<GradcheckEntry>> {
    let cfg = instance_config(settings, algo)?;
    let algo_cfg = cfg.algorithms[0].clone();
    let model = Model::new(cfg.model.clone())?;
    let tasks = gen_task_set(&cfg.task, cfg.t_tr)?;
    let state = init_state(&cfg, &algo_cfg, &model, &tasks, settings.seed ^ 0x5ca1e)?;

    let meta_params: usize = state.group_dims().iter().sum();
    if meta_params > 2000 {
        return Err(Error::invalid(format!(
            "instance has {meta_params} meta-parameters; dense differencing is capped at 2000"
        )));
    }

    let analytic = outer_gradient(&state, &model, &tasks, mode)?;
    let frozen = inner_gradients(&state, &model, &tasks)?;
    let numeric = fd_gradient(&state, &model, &tasks, mode, &frozen, 1e-5)?;

    let tolerance = 1e-4;
    let group_names: Vec<String> = match analytic.groups.len() {
        1 => vec!["theta0".into()],
        _ => vec!["theta0".into(), "meta".into()],
    };
    Ok(analytic
        .groups
        .iter()
        .zip(numeric.iter())
        .zip(group_names)
        .map(|((a, n), gname)| {
            let err = rel_err(a, n);
            GradcheckEntry {
                label: format!("{} {} {}", algo.name(), mode.name(), gname),
                max_rel_err: err,
                tolerance,
                passed: err < tolerance,
            }
        })
        .collect())
}

/// Predictor gradient checks: analytic backprop against finite differences
/// of the loss.
pub fn check_predictors(seed: u64) -> Result<Vec<GradcheckEntry>> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9d);
    let mut entries = Vec::new();
    for (label, model, tol) in [
        ("linear grad_loss", Model::linear(5)?, 1e-6),
        ("mlp grad_loss", Model::mlp(vec![2, 8, 8, 1])?, 1e-5),
    ] {
        let theta = model.params_from(Array1::from_iter(
            (0..model.param_dim()).map(|_| rng.random_range(-1.0..1.0)),
        ))?;
        let xs = ndarray::Array2::from_shape_fn((6, model.input_dim()), |_| {
            rng.random_range(-1.0..1.0)
        });
        let ys = ndarray::Array2::from_shape_fn((6, model.output_dim()), |_| {
            rng.random_range(-1.0..1.0)
        });
        let data = crate::params::Dataset::new(xs, ys)?;
        let grad = model.grad_loss(&data, &theta)?;
        let h = 1e-5;
        let mut fd = Array1::zeros(theta.len());
        for i in 0..theta.len() {
            let mut plus = theta.values().clone();
            plus[i] += h;
            let mut minus = theta.values().clone();
            minus[i] -= h;
            let fp = model.loss(&data, &model.params_from(plus)?)?;
            let fm = model.loss(&data, &model.params_from(minus)?)?;
            fd[i] = (fp - fm) / (2.0 * h);
        }
        let err = rel_err(grad.values(), &fd);
        entries.push(GradcheckEntry {
            label: label.into(),
            max_rel_err: err,
            tolerance: tol,
            passed: err < tol,
        });
    }
    Ok(entries)
}

/// The full battery: predictor gradients, then every algorithm in both
/// gradient modes, plus the degenerate single-task instance.
pub fn run_gradcheck(settings: &GradcheckSettings) -> Result<GradcheckReport> {
    let mut entries = check_predictors(settings.seed)?;
    let algorithms = [
        AlgorithmKind::Maml,
        AlgorithmKind::MetaSgd,
        AlgorithmKind::Gmsgd,
        AlgorithmKind::TanmlGaussian,
        AlgorithmKind::TanmlCosine,
    ];
    for algo in algorithms {
        for mode in [GradientMode::Exact, GradientMode::FirstOrder] {
            entries.extend(check_algorithm(settings, algo, mode)?);
        }
    }
    // No cross-task kernel coupling beyond the self-entry.
    let singleton = GradcheckSettings {
        t_tr: 1,
        ..settings.clone()
    };
    for algo in [AlgorithmKind::TanmlGaussian, AlgorithmKind::TanmlCosine] {
        let mut es = check_algorithm(&singleton, algo, GradientMode::Exact)?;
        for e in &mut es {
            e.label = format!("{} [t_tr=1]", e.label);
        }
        entries.extend(es);
    }
    Ok(GradcheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_battery_passes() {
        let report = run_gradcheck(&GradcheckSettings::default()).unwrap();
        for e in &report.entries {
            assert!(
                e.passed,
                "{}: rel err {} >= {}",
                e.label, e.max_rel_err, e.tolerance
            );
        }
    }

    #[test]
    fn oversized_instances_are_rejected() {
        let settings = GradcheckSettings {
            input_dim: 40,
            ..Default::default()
        };
        // 2 * 40^2 = 3200 meta-parameters for the full-matrix learner.
        assert!(check_algorithm(
            &settings,
            AlgorithmKind::Gmsgd,
            GradientMode::Exact
        )
        .is_err());
    }
}
