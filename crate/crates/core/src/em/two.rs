//! Symmetric two-component gradient EM (β₁ = −β₂ = β, π = ½).

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{check_noise, check_step};
use crate::data::{unit_sphere, Prompt};
use crate::error::Result;
use crate::eval::sign_aligned_error;
use crate::linalg::{mat_pow, spd_solve};

/// Posterior probability that (x, y) came from +β rather than −β.
///
/// Evaluated from the log-likelihood ratio 2y·xᵀβ/ϑ² so that neither
/// likelihood is ever exponentiated on its own.
pub fn weight_two(beta: &DVector<f64>, x: &DVector<f64>, y: f64, theta: f64) -> f64 {
    let llr = 2.0 * y * x.dot(beta) / (theta * theta);
    if llr >= 0.0 {
        1.0 / (1.0 + (-llr).exp())
    } else {
        let e = llr.exp();
        e / (1.0 + e)
    }
}

pub fn weights_two(beta: &DVector<f64>, prompt: &Prompt, theta: f64) -> DVector<f64> {
    DVector::from_fn(prompt.n(), |i, _| weight_two(beta, &prompt.row(i), prompt.y[i], theta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmStateTwo {
    pub beta: DVector<f64>,
    pub weights: DVector<f64>,
    pub t: usize,
}

impl EmStateTwo {
    pub fn new(beta: DVector<f64>, prompt: &Prompt, theta: f64) -> Result<Self> {
        check_noise(theta)?;
        let weights = weights_two(&beta, prompt, theta);
        Ok(Self { beta, weights, t: 0 })
    }

    /// μ̂ = (1/n) Σ (2w_i − 1) y_i x_i.
    pub fn mu_hat(&self, prompt: &Prompt) -> DVector<f64> {
        let signed = self.weights.map(|w| 2.0 * w - 1.0).component_mul(&prompt.y);
        prompt.x.tr_mul(&signed) / prompt.n() as f64
    }
}

/// L̂_n(β′) = (1/n) Σ [w_i (y_i − x_iᵀβ′)² + (1 − w_i)(y_i + x_iᵀβ′)²].
pub fn q_loss(beta: &DVector<f64>, state: &EmStateTwo, prompt: &Prompt) -> f64 {
    let s = &prompt.x * beta;
    let n = prompt.n();
    (0..n)
        .map(|i| {
            let w = state.weights[i];
            w * (prompt.y[i] - s[i]).powi(2) + (1.0 - w) * (prompt.y[i] + s[i]).powi(2)
        })
        .sum::<f64>()
        / n as f64
}

/// ∇L̂_n(β′) = 2Σ̂β′ − 2μ̂.
pub fn grad_q(beta: &DVector<f64>, state: &EmStateTwo, prompt: &Prompt) -> DVector<f64> {
    (prompt.gram() * beta - state.mu_hat(prompt)) * 2.0
}

/// T gradient steps of size α on ½L̂_n, in closed form:
/// β⁺ = (I − αΣ̂)ᵀβ + (I − (I − αΣ̂)ᵀ) Σ̂⁻¹ μ̂.
pub fn gradient_em_step_two(state: &EmStateTwo, prompt: &Prompt, alpha: f64, t_steps: usize, theta: f64) -> Result<EmStateTwo> {
    check_step(alpha)?;
    let d = prompt.d();
    let sigma = prompt.gram();
    let mu = state.mu_hat(prompt);
    let z = spd_solve(&sigma, &mu, "sample covariance")?;
    let p = mat_pow(&(DMatrix::identity(d, d) - &sigma * alpha), t_steps);
    let beta = &p * &state.beta + &z - &p * &z;
    let mut next = EmStateTwo::new(beta, prompt, theta)?;
    next.t = state.t + 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// β⁽⁰⁾ … β⁽ᵀ⁰⁾.
    pub betas: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn estimate(&self) -> &DVector<f64> {
        self.betas.last().expect("trajectory holds the initial iterate")
    }

    /// CSV rows (t, aligned error, |cos angle|, loss at the iterate's own weights).
    pub fn to_csv(&self, beta_star: &DVector<f64>, prompt: &Prompt, theta: f64) -> Result<String> {
        let mut s = String::from("t,aligned_error,cos_angle,loss\n");
        for (t, b) in self.betas.iter().enumerate() {
            let state = EmStateTwo::new(b.clone(), prompt, theta)?;
            let cos = if b.norm() > 0.0 { b.dot(beta_star).abs() / (b.norm() * beta_star.norm()) } else { 0.0 };
            let _ = writeln!(s, "{t},{},{cos},{}", sign_aligned_error(b, beta_star), q_loss(b, &state, prompt));
        }
        Ok(s)
    }
}

pub fn run_gradient_em_two(
    init: &DVector<f64>,
    prompt: &Prompt,
    alpha: f64,
    t_steps: usize,
    outer: usize,
    theta: f64,
) -> Result<Trajectory> {
    let mut state = EmStateTwo::new(init.clone(), prompt, theta)?;
    let mut betas = vec![init.clone()];
    for _ in 0..outer {
        state = gradient_em_step_two(&state, prompt, alpha, t_steps, theta)?;
        betas.push(state.beta.clone());
    }
    Ok(Trajectory { betas })
}

/// Random direction rotated toward `target` until cos∠ ≥ `cos_min`, scaled
/// to `scale`·‖target‖.
pub fn warm_start<R: Rng + ?Sized>(target: &DVector<f64>, cos_min: f64, scale: f64, rng: &mut R) -> DVector<f64> {
    let e = target.normalize();
    let u = unit_sphere(target.len(), rng);
    let c = u.dot(&e);
    let dir = if c >= cos_min {
        u
    } else {
        let perp = &u - &e * c;
        let pn = perp.norm();
        if pn < 1e-12 {
            e.clone()
        } else {
            &e * cos_min + perp * ((1.0 - cos_min * cos_min).sqrt() / pn)
        }
    };
    dir * (scale * target.norm())
}
