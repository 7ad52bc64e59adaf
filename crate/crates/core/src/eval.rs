//! NMSE computation and the Monte-Carlo comparison harness.
//!
//! NMSE is a single ratio: summed squared prediction errors over summed
//! squared targets, across all test tasks and shots. Across Monte-Carlo
//! realizations we report the mean of per-realization NMSEs with its
//! standard error.

use rayon::prelude::*;

use crate::config::{AlgorithmKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metalearners::{meta_train, MetaState};
use crate::params::ParamVector;
use crate::predictors::Model;
use crate::seeding::{derive_seed, stream};
use crate::taskgen::{gen_task_set, Task, TaskMeta, TaskSourceSpec};

/// Squared-error numerator and target-energy denominator of one test task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskEval {
    pub numerator: f64,
    pub denominator: f64,
}

/// Error/energy components of predictions on one task's test split.
pub fn task_eval(model: &Model, theta: &ParamVector, task: &Task) -> Result<TaskEval> {
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for k in 0..task.test.len() {
        let pred = model.forward(theta, task.test.input_row(k))?;
        let target = task.test.target_row(k);
        for j in 0..pred.len() {
            let d = target[j] - pred[j];
            numerator += d * d;
            denominator += target[j] * target[j];
        }
    }
    Ok(TaskEval {
        numerator,
        denominator,
    })
}

/// Ratio-of-sums NMSE over per-task components.
pub fn nmse(components: &[TaskEval]) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::invalid("nmse needs at least one task"));
    }
    let num: f64 = components.iter().map(|c| c.numerator).sum();
    let den: f64 = components.iter().map(|c| c.denominator).sum();
    if den == 0.0 {
        return Err(Error::degenerate("nmse denominator is zero"));
    }
    Ok(num / den)
}

/// One Monte-Carlo realization of one algorithm.
#[derive(Clone, Debug)]
pub struct RunEval {
    pub run: usize,
    /// None when the run diverged.
    pub nmse: Option<f64>,
    pub per_task: Vec<TaskEval>,
    pub divergence: Option<String>,
}

/// Aggregated result of one algorithm under one experiment config.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub algorithm: String,
    pub experiment: String,
    pub t_tr: usize,
    pub outlier_fraction: f64,
    pub mc_runs: usize,
    pub nmse_mean: f64,
    pub nmse_stderr: f64,
    pub n_iter: usize,
    pub gradient_mode: String,
    pub seed: u64,
    pub fingerprint: String,
    pub runs: Vec<RunEval>,
}

impl EvalReport {
    pub fn included_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.nmse.is_some()).count()
    }
}

/// Evaluate a trained state on a set of test tasks: adapt on each task's
/// training split, score predictions on its test split.
pub fn evaluate_state(
    model: &Model,
    state: &MetaState,
    test_tasks: &[Task],
) -> Result<(f64, Vec<TaskEval>)> {
    let components = test_tasks
        .iter()
        .map(|task| {
            let theta = state.adapt(model, &task.train)?;
            task_eval(model, &theta, task)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((nmse(&components)?, components))
}

/// The generator-oracle baseline: read the true coefficients out of the
/// task record. Only linear tasks admit an exact parameterization.
pub fn oracle_params(model: &Model, task: &Task) -> Result<ParamVector> {
    match &task.meta {
        TaskMeta::Linear { beta } => {
            model.params_from(ndarray::Array1::from_vec(beta.clone()))
        }
        _ => Err(Error::invalid(
            "the oracle baseline supports linear tasks only",
        )),
    }
}

fn evaluate_oracle(model: &Model, test_tasks: &[Task]) -> Result<(f64, Vec<TaskEval>)> {
    let components = test_tasks
        .iter()
        .map(|task| {
            let theta = oracle_params(model, task)?;
            task_eval(model, &theta, task)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((nmse(&components)?, components))
}

fn run_one_realization(
    cfg: &ExperimentConfig,
    model: &Model,
    run: usize,
) -> Result<Vec<RunEval>> {
    let train_spec = TaskSourceSpec {
        seed: derive_seed(cfg.seed, stream::TRAIN_TASKS, run as u64),
        ..cfg.task.clone()
    };
    let test_spec = TaskSourceSpec {
        seed: derive_seed(cfg.seed, stream::TEST_TASKS, run as u64),
        ..cfg.task.clone()
    };
    let train_tasks = gen_task_set(&train_spec, cfg.t_tr)?;
    let test_tasks = gen_task_set(&test_spec, cfg.t_v)?;

    let mut out = Vec::with_capacity(cfg.algorithms.len());
    for (ai, algo) in cfg.algorithms.iter().enumerate() {
        if algo.kind == AlgorithmKind::Oracle {
            let (score, per_task) = evaluate_oracle(model, &test_tasks)?;
            out.push(RunEval {
                run,
                nmse: Some(score),
                per_task,
                divergence: None,
            });
            continue;
        }
        let init_seed = derive_seed(
            derive_seed(cfg.seed, stream::INIT, run as u64),
            stream::INIT,
            ai as u64,
        );
        match meta_train(cfg, algo, &train_tasks, init_seed) {
            Ok((state, _trace)) => {
                let (score, per_task) = evaluate_state(model, &state, &test_tasks)?;
                out.push(RunEval {
                    run,
                    nmse: Some(score),
                    per_task,
                    divergence: None,
                });
            }
            Err(err @ Error::Divergence { .. }) => {
                if cfg.strict {
                    return Err(err);
                }
                out.push(RunEval {
                    run,
                    nmse: None,
                    per_task: Vec::new(),
                    divergence: Some(err.to_string()),
                });
            }
            Err(other) => return Err(other),
        }
    }
    Ok(out)
}

/// Run the full experiment: `mc_runs` realizations of tasks, each algorithm
/// meta-trained on fresh training tasks and scored on fresh test tasks.
/// Realizations execute in parallel but reduce in run order, so the result
/// is bitwise independent of the worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let model = Model::new(cfg.model.clone())?;
    let per_run: Vec<Vec<RunEval>> = (0..cfg.mc_runs)
        .into_par_iter()
        .map(|run| run_one_realization(cfg, &model, run))
        .collect::<Result<_>>()?;

    let fingerprint = cfg.fingerprint();
    let mut reports = Vec::with_capacity(cfg.algorithms.len());
    for (ai, algo) in cfg.algorithms.iter().enumerate() {
        let runs: Vec<RunEval> = per_run.iter().map(|r| r[ai].clone()).collect();
        let included: Vec<f64> = runs.iter().filter_map(|r| r.nmse).collect();
        if included.is_empty() {
            return Err(Error::degenerate(format!(
                "every run of `{}` diverged",
                algo.kind.name()
            )));
        }
        let mean = included.iter().sum::<f64>() / included.len() as f64;
        let stderr = if included.len() > 1 {
            let var = included.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (included.len() - 1) as f64;
            (var / included.len() as f64).sqrt()
        } else {
            0.0
        };
        reports.push(EvalReport {
            algorithm: algo.kind.name().to_string(),
            experiment: cfg.experiment.clone(),
            t_tr: cfg.t_tr,
            outlier_fraction: cfg.task.outlier_fraction,
            mc_runs: cfg.mc_runs,
            nmse_mean: mean,
            nmse_stderr: stderr,
            n_iter: cfg.n_iter,
            gradient_mode: cfg.gradient_mode.name().to_string(),
            seed: cfg.seed,
            fingerprint: fingerprint.clone(),
            runs,
        });
    }
    Ok(reports)
}

/// CSV header shared by every result writer.
pub const CSV_HEADER: &str =
    "algorithm,experiment,t_tr,outlier_fraction,mc_runs,nmse_mean,nmse_stderr,n_iter,gradient_mode,seed";

/// Render reports as CSV rows under [`CSV_HEADER`]. Floats use the shortest
/// representation that parses back to the identical value.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.algorithm,
            r.experiment,
            r.t_tr,
            r.outlier_fraction,
            r.mc_runs,
            r.nmse_mean,
            r.nmse_stderr,
            r.n_iter,
            r.gradient_mode,
            r.seed
        ));
    }
    out
}

/// Table-1/2 style text table: one row per algorithm, one column per
/// `(t_tr, outlier_fraction)` setting. Reports must share the experiment
/// label; duplicate cells are an error.
pub fn compare_table(reports: &[EvalReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to tabulate"));
    }
    let experiment = &reports[0].experiment;
    if reports.iter().any(|r| &r.experiment != experiment) {
        return Err(Error::invalid(
            "reports with different experiment labels cannot share a table",
        ));
    }
    let mut columns: Vec<(usize, f64)> = Vec::new();
    let mut rows: Vec<&str> = Vec::new();
    for r in reports {
        let col = (r.t_tr, r.outlier_fraction);
        if !columns.contains(&col) {
            columns.push(col);
        }
        if !rows.iter().any(|a| *a == r.algorithm) {
            rows.push(&r.algorithm);
        }
    }
    let mut cells: Vec<Vec<Option<String>>> = vec![vec![None; columns.len()]; rows.len()];
    for r in reports {
        let ci = columns
            .iter()
            .position(|c| *c == (r.t_tr, r.outlier_fraction))
            .unwrap();
        let ri = rows.iter().position(|a| *a == r.algorithm).unwrap();
        if cells[ri][ci].is_some() {
            return Err(Error::invalid(format!(
                "duplicate report for `{}` at t_tr={} outliers={}",
                r.algorithm, r.t_tr, r.outlier_fraction
            )));
        }
        cells[ri][ci] = Some(format!("{:.4} ± {:.4}", r.nmse_mean, r.nmse_stderr));
    }

    let mut header = vec![format!("{experiment} NMSE")];
    for (t_tr, frac) in &columns {
        if *frac == 0.0 {
            header.push(format!("T_tr={t_tr}"));
        } else {
            header.push(format!("T_tr={t_tr} out={:.0}%", frac * 100.0));
        }
    }
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for (ri, row) in rows.iter().enumerate() {
        width[0] = width[0].max(row.len());
        for (ci, cell) in cells[ri].iter().enumerate() {
            if let Some(c) = cell {
                width[ci + 1] = width[ci + 1].max(c.len());
            }
        }
    }
    let mut out = String::new();
    let fmt_row = |fields: Vec<String>, width: &[usize]| -> String {
        fields
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{:<w$}", f, w = width[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&fmt_row(header, &width));
    out.push('\n');
    for (ri, row) in rows.iter().enumerate() {
        let mut fields = vec![row.to_string()];
        for cell in &cells[ri] {
            fields.push(cell.clone().unwrap_or_else(|| "-".into()));
        }
        out.push_str(&fmt_row(fields, &width));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_trivial_identities() {
        // Perfect predictions.
        let perfect = [TaskEval {
            numerator: 0.0,
            denominator: 5.0,
        }];
        assert_eq!(nmse(&perfect).unwrap(), 0.0);
        // Zero predictor: numerator equals denominator exactly.
        let zero_pred = [
            TaskEval {
                numerator: 4.0,
                denominator: 4.0,
            },
            TaskEval {
                numerator: 9.0,
                denominator: 9.0,
            },
        ];
        assert_eq!(nmse(&zero_pred).unwrap(), 1.0);
    }

    #[test]
    fn nmse_hand_case_one_fourteenth() {
        // Task 1: y = {1, 2}, yhat = {0, 2}; task 2: y = {3}, yhat = {3}.
        let components = [
            TaskEval {
                numerator: 1.0,
                denominator: 5.0,
            },
            TaskEval {
                numerator: 0.0,
                denominator: 9.0,
            },
        ];
        assert_eq!(nmse(&components).unwrap(), 1.0 / 14.0);
    }

    #[test]
    fn nmse_zero_denominator_is_degenerate() {
        let components = [TaskEval {
            numerator: 1.0,
            denominator: 0.0,
        }];
        assert!(matches!(
            nmse(&components),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn nmse_scale_consistency() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let components: Vec<TaskEval> = (0..4)
                .map(|_| TaskEval {
                    numerator: rng.random_range(0.0..10.0),
                    denominator: rng.random_range(0.1..10.0),
                })
                .collect();
            let c: f64 = rng.random_range(0.5..3.0);
            let scaled: Vec<TaskEval> = components
                .iter()
                .map(|t| TaskEval {
                    numerator: c * c * t.numerator,
                    denominator: c * c * t.denominator,
                })
                .collect();
            let a = nmse(&components).unwrap();
            let b = nmse(&scaled).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
