use tanml_core::config::parse_config;
use tanml_core::eval::{compare_table, run_experiment};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let preset = args.get(1).map(|s| s.as_str()).unwrap_or("exp1");
    let overrides = args.get(2).cloned().unwrap_or_default();
    let text = overrides.replace(';', "\n");
    let cfg = parse_config(&text, Some(preset)).unwrap();
    eprintln!(
        "preset={preset} t_tr={} n_iter={} mc_runs={} shots={} sigma2={}",
        cfg.t_tr, cfg.n_iter, cfg.mc_runs, cfg.task.shots, cfg.sigma2
    );
    let start = std::time::Instant::now();
    let reports = run_experiment(&cfg).unwrap();
    eprintln!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    println!("{}", compare_table(&reports).unwrap());
}
