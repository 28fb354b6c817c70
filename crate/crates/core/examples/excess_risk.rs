// Excess risk of a perturbed oracle predictor equals the squared size of
// the perturbation.

use mor_icl::data::{oracle_beta, sample_model, Mixing};
use mor_icl::eval::excess_risk_mc;
use nalgebra::DVector;

fn run_example() -> mor_icl::Result<()> {
    let model = sample_model(4, 3, 0.5, false, 2)?;
    let or = oracle_beta(&model);
    for eps in [0.0, 0.25, 0.5, 1.0] {
        let bhat = &or + DVector::from_element(4, eps / 2.0);
        let r = excess_risk_mc(|p| p.query.dot(&bhat), &model, Mixing::PerSample, 1, 50_000, 9)?;
        println!("‖β̂ − β^OR‖² = {:.4}  excess risk {:.4} ± {:.4}", eps * eps, r.mean, r.se);
    }
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
