use tanml_core::config::parse_config;
use tanml_core::metalearners::{MetaState, Trainer};
use tanml_core::seeding::{derive_seed, stream};
use tanml_core::taskgen::{gen_task_set, TaskSourceSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let preset = args.get(1).map(|s| s.as_str()).unwrap_or("exp1-tanml-cosine");
    let overrides = args.get(2).cloned().unwrap_or_default().replace(';', "\n");
    let cfg = parse_config(&overrides, Some(preset)).unwrap();
    let spec = TaskSourceSpec { seed: derive_seed(cfg.seed, stream::TRAIN_TASKS, 0), ..cfg.task.clone() };
    let tasks = gen_task_set(&spec, cfg.t_tr).unwrap();
    let algo = &cfg.algorithms[0];
    let init_seed = derive_seed(derive_seed(cfg.seed, stream::INIT, 0), stream::INIT, 0);
    let mut trainer = Trainer::new(&cfg, algo, &tasks, init_seed).unwrap();
    for chunk in 0..(cfg.n_iter / 1000).max(1) {
        trainer.run(1000.min(cfg.n_iter)).unwrap();
        let row = trainer.trace().last().unwrap();
        let (psi_max, psi_rms, theta_norm) = match trainer.state() {
            MetaState::Tanml(s) => {
                let mut mx = 0.0f64;
                let mut sum2 = 0.0;
                let mut n = 0usize;
                for b in &s.blocks {
                    for v in b.psi.iter() {
                        mx = mx.max(v.abs());
                        sum2 += v * v;
                        n += 1;
                    }
                }
                (mx, (sum2 / n as f64).sqrt(), s.theta0.norm())
            }
            st => (0.0, 0.0, st.theta0().norm()),
        };
        eprintln!(
            "iter {:>6}  obj {:>12.3}  g0 {:>10.3}  gm {:>12.3}  |psi|max {:.4} rms {:.5}  |theta0| {:.3}",
            (chunk + 1) * 1000, row.objective, row.grad_norm_theta0, row.grad_norm_meta, psi_max, psi_rms, theta_norm
        );
    }
}
