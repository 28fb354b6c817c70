//! Risk, parameter-error and rate metrics.

use nalgebra::DVector;

use crate::data::{oracle_beta, sample_prompt_with, Mixing, MoRModel, Prompt};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Scalar Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McScalar {
    pub mean: f64,
    pub se: f64,
}

impl McScalar {
    pub fn from_samples(v: &[f64]) -> Self {
        let m = v.len() as f64;
        let mean = v.iter().sum::<f64>() / m;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Self { mean, se: (var / m).sqrt() }
    }

    /// |mean − target| ≤ k·se.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// inf_β E(xᵀβ − y)² = ϑ² + Eβᵀβ − ‖β^OR‖².
pub fn risk_infimum(model: &MoRModel) -> f64 {
    let second: f64 = model
        .components()
        .iter()
        .zip(model.weights())
        .map(|(b, &p)| p * b.norm_squared())
        .sum();
    model.noise_sd().powi(2) + second - oracle_beta(model).norm_squared()
}

/// E(ŷ − y_{n+1})² minus the best fixed linear risk, over `m` fresh prompts.
pub fn excess_risk_mc<F>(predictor: F, model: &MoRModel, mixing: Mixing, n: usize, m: usize, seed: u64) -> Result<McScalar>
where
    F: Fn(&Prompt) -> f64,
{
    if m < 2 {
        return Err(Error::InvalidParameter("need m ≥ 2 prompts".into()));
    }
    let inf = risk_infimum(model);
    let mut rng = rng_from_seed(seed);
    let mut v = Vec::with_capacity(m);
    for _ in 0..m {
        let p = sample_prompt_with(model, n, mixing, &mut rng)?;
        v.push((predictor(&p) - p.label).powi(2) - inf);
    }
    Ok(McScalar::from_samples(&v))
}

/// Excess risk of a prompt-dependent linear rule ŷ = x_{n+1}ᵀb(prompt), with
/// the query point integrated exactly: E[(x_{n+1}ᵀ(b − β_k) − v)²] = ‖b − β_k‖² + ϑ².
///
/// Only prompt sampling is Monte-Carlo, which strips the query noise from
/// the estimate.
pub fn excess_risk_linear_mc<F>(rule: F, model: &MoRModel, mixing: Mixing, n: usize, m: usize, seed: u64) -> Result<McScalar>
where
    F: Fn(&Prompt) -> DVector<f64>,
{
    if m < 2 {
        return Err(Error::InvalidParameter("need m ≥ 2 prompts".into()));
    }
    let inf = risk_infimum(model);
    let noise = model.noise_sd().powi(2);
    let mut rng = rng_from_seed(seed);
    let mut v = Vec::with_capacity(m);
    for _ in 0..m {
        let p = sample_prompt_with(model, n, mixing, &mut rng)?;
        let k = p.assignments[p.n()];
        v.push((rule(&p) - &model.components()[k]).norm_squared() + noise - inf);
    }
    Ok(McScalar::from_samples(&v))
}

/// min(‖β̂ − β*‖, ‖β̂ + β*‖).
pub fn sign_aligned_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (estimate - truth).norm().min((estimate + truth).norm())
}

/// Max-over-components ℓ₂ error after the best relabeling.
///
/// A single estimate against a symmetric two-component model is compared up
/// to sign; otherwise components are matched by permutation (exhaustive for
/// K ≤ 8, greedy beyond).
pub fn param_error(estimates: &[DVector<f64>], model: &MoRModel) -> Result<f64> {
    let truth = model.components();
    if estimates.len() == 1 && model.is_symmetric() {
        return Ok(sign_aligned_error(&estimates[0], &truth[0]));
    }
    if estimates.len() != truth.len() {
        return Err(Error::InvalidParameter(format!("{} estimates for K = {}", estimates.len(), truth.len())));
    }
    let k = truth.len();
    let cost: Vec<Vec<f64>> = estimates.iter().map(|e| truth.iter().map(|t| (e - t).norm()).collect()).collect();
    if k <= 8 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &cost, &mut best);
        Ok(best)
    } else {
        let mut used = vec![false; k];
        let mut worst: f64 = 0.0;
        for row in &cost {
            let (j, c) = row
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("a free component remains");
            used[j] = true;
            worst = worst.max(*c);
        }
        Ok(worst)
    }
}

fn permute(perm: &mut [usize], i: usize, cost: &[Vec<f64>], best: &mut f64) {
    if i == perm.len() {
        let v = perm.iter().enumerate().map(|(e, &t)| cost[e][t]).fold(0.0, f64::max);
        *best = best.min(v);
        return;
    }
    for j in i..perm.len() {
        perm.swap(i, j);
        permute(perm, i + 1, cost, best);
        perm.swap(i, j);
    }
}

/// Least-squares fit of log(error) on log(n).
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub ns: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn rate_fit(ns: &[f64], errors: &[f64]) -> Result<RateFit> {
    if ns.len() != errors.len() {
        return Err(Error::InvalidParameter("sizes and errors differ in length".into()));
    }
    if ns.len() < 3 {
        return Err(Error::InvalidParameter("need at least three sizes".into()));
    }
    if errors.iter().chain(ns).any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter("sizes and errors must be positive".into()));
    }
    let lx: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("sizes must not all be equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit { ns: ns.to_vec(), errors: errors.to_vec(), slope, intercept: my - slope * mx, r2 })
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}
