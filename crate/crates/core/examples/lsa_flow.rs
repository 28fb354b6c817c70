// Gradient flow of the single linear-attention layer on its population
// loss, from a small balanced start to the global minimum.

use mor_icl::data::{mixture_moments, MoRModel};
use mor_icl::lsa::{closed_form_optimum, gradient_flow, init_params, FlowConfig};
use nalgebra::{DMatrix, DVector};

fn run_example() -> mor_icl::Result<()> {
    let model = MoRModel::symmetric(DVector::from_column_slice(&[1.0, 0.0, 0.0]), 1.0)?;
    let mm = mixture_moments(&model);
    let n = 100;
    let init = init_params(0.2, &DMatrix::identity(3, 3), &mm, n, 1.0)?;
    let cfg = FlowConfig { record_every: 2000, ..FlowConfig::default() };
    let traj = gradient_flow(&init.params, &mm, n, 1.0, &cfg)?;
    for line in traj.to_csv().lines().take(8) {
        println!("{line}");
    }
    let opt = closed_form_optimum(&mm, n, 1.0)?;
    println!(
        "{} steps, u₋₁ = {:.6} (closed form {:.6}), conservation drift {:.1e}",
        traj.steps, traj.params.u_neg1, opt.u_neg1, traj.max_drift
    );
    assert!(traj.converged);
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
