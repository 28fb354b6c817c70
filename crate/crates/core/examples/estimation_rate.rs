// Log-log slope of the gradient-EM error against the prompt length in both
// SNR regimes.

use mor_icl::eval::{median, rate_fit};
use mor_icl::experiments::{em_rate_error, Experiment, ExperimentConfig};

fn run_example() -> mor_icl::Result<()> {
    let cfg = ExperimentConfig { seeds: 8, ..ExperimentConfig::defaults_for(Experiment::Rates) };
    for &eta in &cfg.etas {
        let ns: Vec<f64> = cfg.ns.iter().map(|&n| n as f64).collect();
        let mut meds = Vec::new();
        for &n in &cfg.ns {
            let errs = cfg.seed_list().into_iter().map(|s| em_rate_error(&cfg, eta, n, s)).collect::<mor_icl::Result<Vec<_>>>()?;
            meds.push(median(&errs));
        }
        let fit = rate_fit(&ns, &meds)?;
        println!("η = {eta}: median errors {meds:.4?}, slope {:.3} (r² {:.3})", fit.slope, fit.r2);
    }
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
