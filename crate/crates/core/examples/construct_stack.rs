// Build the attention stack that emulates gradient EM and check it against
// the reference solver, loop by loop.

use mor_icl::data::{embed_h, sample_model, sample_prompt, Mixing, SlotMap};
use mor_icl::em::{run_gradient_em_two, warm_start};
use mor_icl::rng::child_rng;
use mor_icl::tf::{build_em_transformer, read_beta, read_y, tf_forward, tf_forward_trace, tf_norm};

fn run_example() -> mor_icl::Result<()> {
    let (d, n, t, t0) = (4, 32, 5, 3);
    let model = sample_model(d, 2, 1.0, true, 3)?.with_snr(10.0)?;
    let theta = model.noise_sd();
    let prompt = sample_prompt(&model, n, Mixing::PerSample, 4)?;
    let init = warm_start(&model.components()[0], 0.9, 1.0, &mut child_rng(5, &[]));

    let tf = build_em_transformer(t, t0, 0.5, theta, d, SlotMap::min_height(d), n)?;
    print!("{}", tf.describe().lines().take(14).collect::<Vec<_>>().join("\n"));
    println!("\n… {} layers, norm {:.1}", tf.layer_count(), tf_norm(&tf));

    let mut h = embed_h(&prompt, tf.meta.height)?;
    h.set_beta(&init);
    let reference = run_gradient_em_two(&init, &prompt, 0.5, t, t0, theta)?;
    for (k, snap) in tf_forward_trace(&tf, &h)?.iter().enumerate() {
        let diff = (read_beta(snap) - &reference.betas[k + 1]).amax();
        println!("loop {}: max |β_tf − β_em| = {diff:.2e}", k + 1);
        assert!(diff < 1e-6);
    }
    let out = tf_forward(&tf, &h)?;
    println!("query prediction {:.4} (π₁ = π₂ gives the oracle predictor 0)", read_y(&out));
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
