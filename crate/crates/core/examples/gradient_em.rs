// Symmetric two-component gradient EM on a single prompt.

use mor_icl::data::{sample_model, sample_prompt, Mixing};
use mor_icl::em::{run_gradient_em_two, warm_start};
use mor_icl::eval::sign_aligned_error;
use mor_icl::rng::child_rng;

fn run_example() -> mor_icl::Result<()> {
    let model = sample_model(8, 2, 1.0, true, 1)?.with_snr(10.0)?;
    let star = &model.components()[0];
    let prompt = sample_prompt(&model, 2000, Mixing::PerSample, 2)?;
    let init = warm_start(star, 0.9, 1.0, &mut child_rng(3, &[]));
    let traj = run_gradient_em_two(&init, &prompt, 0.5, 10, 20, model.noise_sd())?;
    let csv = traj.to_csv(star, &prompt, model.noise_sd())?;
    for line in csv.lines().take(6) {
        println!("{line}");
    }
    let err = sign_aligned_error(traj.estimate(), star);
    println!("final error {err:.4} after {} outer steps", traj.betas.len() - 1);
    assert!(err < sign_aligned_error(&init, star));
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
