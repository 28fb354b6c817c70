// Infinite-sample gradient-EM update: Gauss–Hermite coordinates against a
// Monte-Carlo estimate of the same step.

use mor_icl::data::MoRModel;
use mor_icl::em::{population_coords, population_em_update_mc};
use nalgebra::DVector;

fn run_example() -> mor_icl::Result<()> {
    let (b1, b1s, b2s, theta) = (0.5, 0.8, 0.3, 1.0);
    let c = population_coords(b1, b1s, b2s, theta)?;
    println!("S = {:.5}, R = {:.5}", c.s, c.r);
    let (alpha, t) = (0.5, 3);
    let (n1, n2) = c.next(alpha, t);
    let model = MoRModel::symmetric(DVector::from_column_slice(&[b1s, b2s, 0.0]), theta)?;
    let beta = DVector::from_column_slice(&[b1, 0.0, 0.0]);
    let mc = population_em_update_mc(&beta, &model, alpha, t, 100_000, 1)?;
    let se = mc.se();
    println!("quadrature ({n1:.4}, {n2:.4})  MC ({:.4} ± {:.4}, {:.4} ± {:.4})", mc.mean[0], se[0], mc.mean[1], se[1]);
    println!("tan angle {:.4} → {:.4}", c.tan_angle(), c.next_tan_angle(alpha, t));
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
