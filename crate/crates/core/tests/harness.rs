//! Monte-Carlo harness behavior: worker-count independence, aggregation
//! identities, CSV round-trips, and the comparison table.

use tanml_core::config::parse_config;
use tanml_core::error::Error;
use tanml_core::eval::{
    compare_table, evaluate_state, nmse, reports_to_csv, run_experiment, TaskEval,
};
use tanml_core::metalearners::meta_train;
use tanml_core::predictors::Model;
use tanml_core::seeding::{derive_seed, stream};
use tanml_core::taskgen::{gen_task_set, TaskSourceSpec};

fn tiny_cfg(extra: &str) -> tanml_core::ExperimentConfig {
    let base = [
        "task_kind = linear-bimodal",
        "input_dim = 4",
        "shots = 6",
        "test_shots = 6",
        "noise_std = 1",
        "model = linear",
        "t_tr = 4",
        "t_v = 4",
        "n_iter = 8",
        "mc_runs = 3",
        "seed = 5",
    ];
    let extra_keys: Vec<&str> = extra
        .lines()
        .filter_map(|l| l.split('=').next())
        .map(str::trim)
        .collect();
    let mut text = String::new();
    for line in base {
        if !extra_keys.contains(&line.split('=').next().unwrap().trim()) {
            text.push_str(line);
            text.push('\n');
        }
    }
    text.push_str(extra);
    parse_config(&text, None).unwrap()
}

#[test]
fn run_experiment_is_bitwise_reproducible_across_worker_counts() {
    let cfg = tiny_cfg("algorithms = maml,tanml-cosine\n");
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_experiment(&cfg))
        .unwrap();
    let multi = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| run_experiment(&cfg))
        .unwrap();
    assert_eq!(reports_to_csv(&single), reports_to_csv(&multi));
    for (a, b) in single.iter().zip(multi.iter()) {
        for (ra, rb) in a.runs.iter().zip(b.runs.iter()) {
            assert_eq!(
                ra.nmse.unwrap().to_bits(),
                rb.nmse.unwrap().to_bits(),
                "{} run {}",
                a.algorithm,
                ra.run
            );
        }
    }
}

#[test]
fn report_nmse_recomputes_from_stored_components() {
    let cfg = tiny_cfg("algorithms = meta-sgd\n");
    let reports = run_experiment(&cfg).unwrap();
    let report = &reports[0];
    let mut per_run = Vec::new();
    for run in &report.runs {
        per_run.push(nmse(&run.per_task).unwrap());
    }
    let mean = per_run.iter().sum::<f64>() / per_run.len() as f64;
    assert_eq!(mean.to_bits(), report.nmse_mean.to_bits());
}

#[test]
fn csv_values_parse_back_exactly() {
    let cfg = tiny_cfg("algorithms = maml,tanml-gaussian\n");
    let reports = run_experiment(&cfg).unwrap();
    let csv = reports_to_csv(&reports);
    for (line, report) in csv.lines().skip(1).zip(reports.iter()) {
        let fields: Vec<&str> = line.split(',').collect();
        let mean: f64 = fields[5].parse().unwrap();
        let stderr: f64 = fields[6].parse().unwrap();
        assert_eq!(mean.to_bits(), report.nmse_mean.to_bits());
        assert_eq!(stderr.to_bits(), report.nmse_stderr.to_bits());
    }
}

#[test]
fn compare_table_shapes_and_errors() {
    let cfg = tiny_cfg("algorithms = maml\n");
    let reports = run_experiment(&cfg).unwrap();
    // Single report renders a single-cell table.
    let table = compare_table(&reports).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.contains("maml"));

    // Two reports from one run share the fingerprint: two rows.
    let cfg2 = tiny_cfg("algorithms = maml,meta-sgd\n");
    let reports2 = run_experiment(&cfg2).unwrap();
    assert_eq!(reports2[0].fingerprint, reports2[1].fingerprint);
    let table2 = compare_table(&reports2).unwrap();
    assert_eq!(table2.lines().count(), 3);

    // Mismatched experiment labels are rejected.
    let mut other = reports2.clone();
    other[1].experiment = "elsewhere".into();
    assert!(matches!(
        compare_table(&other),
        Err(Error::InvalidArgument(_))
    ));

    // Duplicate (algorithm, column) cells are rejected.
    let dup = vec![reports[0].clone(), reports[0].clone()];
    assert!(compare_table(&dup).is_err());
}

#[test]
fn oracle_predictor_scores_zero_on_noiseless_tasks() {
    let cfg = tiny_cfg("algorithms = oracle\nnoise_std = 0\nmc_runs = 1\nt_v = 1\n");
    let reports = run_experiment(&cfg).unwrap();
    assert_eq!(reports[0].nmse_mean, 0.0);
}

#[test]
fn strict_mode_propagates_divergence() {
    let cfg = tiny_cfg(
        "algorithms = maml\noptimizer = gd\nmaml.lr_theta0 = 1e9\nn_iter = 30\nmc_runs = 2\n",
    );
    assert!(matches!(
        run_experiment(&cfg),
        Err(Error::Divergence { .. })
    ));
    // Non-strict mode records the divergences; with every run diverged the
    // mean is undefined and the experiment is degenerate.
    let lax = tiny_cfg(
        "algorithms = maml\noptimizer = gd\nmaml.lr_theta0 = 1e9\nn_iter = 30\nmc_runs = 2\nstrict = false\n",
    );
    assert!(matches!(
        run_experiment(&lax),
        Err(Error::DegenerateInput(_))
    ));
}

#[test]
fn adapted_sinusoid_tasks_beat_the_unadapted_initialization() {
    let text = "preset = exp2a-10\nt_tr = 16\nt_v = 16\nn_iter = 1500\nmc_runs = 1\nseed = 3\n";
    let cfg = parse_config(text, None).unwrap();
    let model = Model::new(cfg.model.clone()).unwrap();
    let train_spec = TaskSourceSpec {
        seed: derive_seed(cfg.seed, stream::TRAIN_TASKS, 0),
        ..cfg.task.clone()
    };
    let test_spec = TaskSourceSpec {
        seed: derive_seed(cfg.seed, stream::TEST_TASKS, 0),
        ..cfg.task.clone()
    };
    let train_tasks = gen_task_set(&train_spec, cfg.t_tr).unwrap();
    let test_tasks = gen_task_set(&test_spec, cfg.t_v).unwrap();
    let algo = cfg
        .algorithm(tanml_core::config::AlgorithmKind::TanmlCosine)
        .unwrap()
        .clone();
    let (state, _) = meta_train(&cfg, &algo, &train_tasks, 77).unwrap();
    let (adapted_nmse, _) = evaluate_state(&model, &state, &test_tasks).unwrap();

    // Unadapted baseline: predict every test task with theta0 itself.
    let theta0 = state.theta0();
    let mut components = Vec::new();
    for task in &test_tasks {
        components.push(
            tanml_core::eval::task_eval(&model, theta0, task).unwrap(),
        );
    }
    let unadapted = nmse(&components).unwrap();
    assert!(
        adapted_nmse < unadapted,
        "adapted {adapted_nmse} vs unadapted {unadapted}"
    );
}

#[test]
fn nmse_component_shapes() {
    // Mixed target energies aggregate as a ratio of sums, not a mean of
    // ratios: two tasks with NMSE 1.0 and 0.0 but unequal energies.
    let components = [
        TaskEval {
            numerator: 3.0,
            denominator: 3.0,
        },
        TaskEval {
            numerator: 0.0,
            denominator: 9.0,
        },
    ];
    assert_eq!(nmse(&components).unwrap(), 0.25);
}
