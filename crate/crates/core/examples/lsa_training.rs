// Full-batch gradient descent on sampled prompts, compared with the
// closed-form population optimum.

use mor_icl::data::{mixture_moments, sample_prompt, Mixing, MoRModel};
use mor_icl::lsa::{closed_form_optimum, population_loss, population_loss_mc, train_lsa_empirical, LsaParams, TrainConfig};
use nalgebra::{DMatrix, DVector};

fn run_example() -> mor_icl::Result<()> {
    let model = MoRModel::symmetric(DVector::from_column_slice(&[1.0, 0.5]), 0.5)?;
    let n = 10;
    let prompts = (0..4000)
        .map(|i| sample_prompt(&model, n, Mixing::PerPrompt, i))
        .collect::<mor_icl::Result<Vec<_>>>()?;
    let start = LsaParams::diagonal(DMatrix::identity(2, 2) * 0.3, 0.3);
    let cfg = TrainConfig { lr: 0.2, epochs: 300, clip_r: 100.0, norm_bound: None };
    let res = train_lsa_empirical(&prompts, &start, &cfg)?;
    let mm = mixture_moments(&model);
    let opt = closed_form_optimum(&mm, n, 0.5)?;
    // training leaves the u12 = u21 = 0 manifold, so score it by Monte Carlo
    let fitted = population_loss_mc(&res.params, &model, Mixing::PerPrompt, n, 20_000, 1)?.mse.mean;
    let best = population_loss(&opt.params(), &mm, n, 0.5)?.mse;
    println!("empirical loss {:.4} → {:.4}", res.loss_history[0], res.loss_history[res.loss_history.len() - 1]);
    println!("population MSE of the trained layer {fitted:.4}, of the optimum {best:.4}");
    println!("trained product u₋₁U11:\n{}", &res.params.u11 * res.params.u_neg1);
    println!("optimal product Γ⁻¹Eββᵀ:\n{}", opt.product);
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
