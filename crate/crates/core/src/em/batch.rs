//! Batch EM across prompts: each prompt belongs to a single component.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use super::check_noise;
use super::multi::{check_components, EmStateMulti, COLLAPSE_MASS};
use super::two::warm_start;
use crate::data::{unit_sphere, Prompt};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, spd_solve};

pub const DEFAULT_EPS: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchInit {
    pub betas: Vec<DVector<f64>>,
    pub pis: Vec<f64>,
}

/// Unit-sphere components and Dirichlet(1) weights.
///
/// With `warm = Some(truth)`, component j is rotated toward truth[j] until
/// cos∠ > 0.8.
pub fn batch_init<R: Rng + ?Sized>(k: usize, d: usize, warm: Option<&[DVector<f64>]>, rng: &mut R) -> Result<BatchInit> {
    if k == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!("K = {k}, d = {d}")));
    }
    let betas = match warm {
        Some(truth) => {
            if truth.len() != k {
                return Err(Error::InvalidParameter(format!("{} warm targets for K = {k}", truth.len())));
            }
            truth.iter().map(|t| warm_start(t, 0.8 + 1e-9, 1.0 / t.norm(), rng)).collect()
        }
        None => (0..k).map(|_| unit_sphere(d, rng)).collect(),
    };
    let pis = if k == 1 {
        vec![1.0]
    } else {
        // Dirichlet(1, …, 1) as normalized Exp(1) draws
        let mut p: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        // keep every weight positive so log π stays finite
        for v in &mut p {
            *v = v.max(1e-12);
        }
        let s: f64 = p.iter().sum();
        p.iter().map(|v| v / s).collect()
    };
    Ok(BatchInit { betas, pis })
}

#[derive(Debug, Clone)]
pub struct BatchEmResult {
    /// Final parameters; `gammas` is B×K (one row per prompt).
    pub state: EmStateMulti,
    pub iterations: usize,
    pub converged: bool,
    /// max_j ‖β_j⁽ᵗ⁾ − β_j⁽ᵗ⁻¹⁾‖ at the last iteration.
    pub final_delta: f64,
    /// Observed-data negative log-likelihood evaluated before each M-step.
    pub nll: Vec<f64>,
}

struct PromptStats {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
}

impl PromptStats {
    fn new(p: &Prompt) -> Self {
        Self { xtx: p.x.tr_mul(&p.x), xty: p.x.tr_mul(&p.y), yty: p.y.norm_squared(), n: p.n() }
    }

    fn rss(&self, b: &DVector<f64>) -> f64 {
        (self.yty - 2.0 * b.dot(&self.xty) + b.dot(&(&self.xtx * b))).max(0.0)
    }
}

/// Per-prompt responsibilities γ_ij ∝ π_j Π_ℓ N(y_ℓ; x_ℓᵀβ_j, ϑ²) and the
/// observed-data negative log-likelihood.
fn e_step(stats: &[PromptStats], betas: &[DVector<f64>], pis: &[f64], theta: f64) -> (DMatrix<f64>, f64) {
    let k = betas.len();
    let two_var = 2.0 * theta * theta;
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI * theta * theta).ln();
    let mut g = DMatrix::zeros(stats.len(), k);
    let mut nll = 0.0;
    let mut logs = vec![0.0; k];
    for (i, s) in stats.iter().enumerate() {
        for j in 0..k {
            logs[j] = pis[j].ln() - s.rss(&betas[j]) / two_var - s.n as f64 * log_norm;
        }
        let z = log_sum_exp(&logs);
        nll -= z;
        for j in 0..k {
            g[(i, j)] = (logs[j] - z).exp();
        }
    }
    (g, nll)
}

pub fn batch_em(prompts: &[Prompt], init: &BatchInit, theta: f64, eps: f64, max_iter: usize) -> Result<BatchEmResult> {
    check_noise(theta)?;
    let first = prompts.first().ok_or_else(|| Error::InvalidParameter("need at least one prompt".into()))?;
    let d = first.d();
    if prompts.iter().any(|p| p.d() != d) {
        return Err(Error::DimensionMismatch("prompts differ in dimension".into()));
    }
    check_components(&init.betas, &init.pis, d)?;
    let stats: Vec<PromptStats> = prompts.iter().map(PromptStats::new).collect();
    let k = init.betas.len();
    let b = prompts.len() as f64;
    let mut betas = init.betas.clone();
    let mut pis = init.pis.clone();
    let mut nll = Vec::new();
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let (g, obj) = e_step(&stats, &betas, &pis, theta);
        nll.push(obj);
        let mut next = Vec::with_capacity(k);
        for j in 0..k {
            let mass = g.column(j).sum();
            if mass < COLLAPSE_MASS {
                return Err(Error::ComponentCollapse { component: j, mass });
            }
            let mut a = DMatrix::zeros(d, d);
            let mut rhs = DVector::zeros(d);
            for (i, s) in stats.iter().enumerate() {
                a += &s.xtx * g[(i, j)];
                rhs += &s.xty * g[(i, j)];
            }
            next.push(spd_solve(&a, &rhs, "weighted Gram")?);
        }
        pis = (0..k).map(|j| g.column(j).sum() / b).collect();
        delta = betas.iter().zip(&next).map(|(o, n)| (o - n).norm()).fold(0.0, f64::max);
        betas = next;
        iterations += 1;
        if delta <= eps {
            break;
        }
    }
    let converged = delta <= eps;
    if !converged {
        log::warn!("batch EM stopped at {iterations} iterations with delta {delta:.3e}");
    }
    let (gammas, obj) = e_step(&stats, &betas, &pis, theta);
    nll.push(obj);
    Ok(BatchEmResult {
        state: EmStateMulti { betas, pis, gammas },
        iterations,
        converged,
        final_delta: delta,
        nll,
    })
}

/// Posterior-mean coefficient Σ_j γ_j β̂_j for a fresh prompt, with γ from
/// the prompt's own labelled pairs under the fitted mixture.
pub fn posterior_beta(state: &EmStateMulti, prompt: &Prompt, theta: f64) -> DVector<f64> {
    let (g, _) = e_step(&[PromptStats::new(prompt)], &state.betas, &state.pis, theta);
    state.betas.iter().enumerate().fold(DVector::zeros(prompt.d()), |acc, (j, b)| acc + b * g[(0, j)])
}
