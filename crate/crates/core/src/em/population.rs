//! Infinite-sample oracles for the symmetric two-component model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::check_noise;
use crate::data::{standard_normal_vec, MoRModel};
use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;
use crate::rng::rng_from_seed;

/// Monte-Carlo mean with the covariance of the mean estimator.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl McEstimate {
    /// Per-coordinate standard errors.
    pub fn se(&self) -> DVector<f64> {
        self.cov.diagonal().map(f64::sqrt)
    }

    /// Standard error of vᵀmean.
    pub fn project_se(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.cov * v)).max(0.0).sqrt()
    }
}

/// β′ = (1−α)ᵀβ + (1−(1−α)ᵀ) E[tanh(Y Xᵀβ/ϑ²) Y X], estimated from `m` draws.
pub fn population_em_update_mc(
    beta: &DVector<f64>,
    model: &MoRModel,
    alpha: f64,
    t_steps: usize,
    m: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !model.is_symmetric() {
        return Err(Error::InvalidParameter("population update needs the symmetric two-component model".into()));
    }
    if m < 2 {
        return Err(Error::InvalidParameter("need m ≥ 2 draws".into()));
    }
    let theta = model.noise_sd();
    check_noise(theta)?;
    let d = model.dim();
    if beta.len() != d {
        return Err(Error::DimensionMismatch(format!("β has length {}, model d = {d}", beta.len())));
    }
    let star = &model.components()[0];
    let lambda = (1.0 - alpha).powi(t_steps as i32);
    let mut rng = rng_from_seed(seed);
    let mut sum = DVector::zeros(d);
    let mut sq = DMatrix::zeros(d, d);
    for _ in 0..m {
        let x = standard_normal_vec(d, &mut rng);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let noise: f64 = rng.sample(StandardNormal);
        let y = sign * x.dot(star) + theta * noise;
        let v = &x * ((y * x.dot(beta) / (theta * theta)).tanh() * y);
        sq += &v * v.transpose();
        sum += v;
    }
    let mf = m as f64;
    let mean = &sum / mf;
    let cov = (sq / mf - &mean * mean.transpose()) * (mf / (mf - 1.0)) / mf;
    Ok(McEstimate {
        mean: beta * lambda + mean * (1.0 - lambda),
        cov: cov * (1.0 - lambda).powi(2),
    })
}

/// Orthonormal basis (v₁, v₂) of span{β, β*} with β = b₁v₁ and
/// β* = b₁*v₁ + b₂*v₂, oriented so b₁* ≥ 0 and b₂* ≥ 0.
#[derive(Debug, Clone)]
pub struct AdaptedBasis {
    pub v1: DVector<f64>,
    pub v2: DVector<f64>,
    pub b1: f64,
    pub b1_star: f64,
    pub b2_star: f64,
    /// −1 when β* had to be replaced by its mirror −β*.
    pub star_sign: f64,
}

pub fn adapted_basis(beta: &DVector<f64>, beta_star: &DVector<f64>) -> Result<AdaptedBasis> {
    let b1 = beta.norm();
    if b1 == 0.0 {
        return Err(Error::Degenerate("β = 0 has no direction".into()));
    }
    let v1 = beta / b1;
    let mut star_sign = 1.0;
    let mut s = beta_star.clone();
    if s.dot(&v1) < 0.0 {
        s = -s;
        star_sign = -1.0;
    }
    let b1_star = s.dot(&v1);
    let perp = &s - &v1 * b1_star;
    let b2_star = perp.norm();
    let v2 = if b2_star > 1e-14 {
        perp / b2_star
    } else {
        // any unit vector orthogonal to v1
        let j = v1.iamin();
        let mut e = DVector::zeros(v1.len());
        e[j] = 1.0;
        let o = &e - &v1 * v1[j];
        o.normalize()
    };
    Ok(AdaptedBasis { v1, v2, b1, b1_star, b2_star, star_sign })
}

/// Two-dimensional reduction of the population update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopCoords {
    pub b1: f64,
    pub b1_star: f64,
    pub b2_star: f64,
    pub theta: f64,
    pub s: f64,
    pub r: f64,
}

impl PopCoords {
    /// (b₁′, b₂′) after T gradient steps of size α.
    pub fn next(&self, alpha: f64, t_steps: usize) -> (f64, f64) {
        let lambda = (1.0 - alpha).powi(t_steps as i32);
        (
            lambda * self.b1 + (1.0 - lambda) * (self.b1_star * self.s + self.r),
            (1.0 - lambda) * self.b2_star * self.s,
        )
    }

    /// tan∠(β, β*) = b₂*/b₁*.
    pub fn tan_angle(&self) -> f64 {
        self.b2_star / self.b1_star
    }

    /// tan∠(β′, β*).
    pub fn next_tan_angle(&self, alpha: f64, t_steps: usize) -> f64 {
        let (b1, b2) = self.next(alpha, t_steps);
        let cross = (b1 * self.b2_star - b2 * self.b1_star).abs();
        let dot = b1 * self.b1_star + b2 * self.b2_star;
        cross / dot
    }
}

pub const DEFAULT_NODES: usize = 64;

pub fn population_coords(b1: f64, b1_star: f64, b2_star: f64, theta: f64) -> Result<PopCoords> {
    population_coords_with(b1, b1_star, b2_star, theta, &GaussHermite::new(DEFAULT_NODES))
}

/// S = E[tanh z + z·tanh′z] and R = (ϑ² + ‖β*‖²)·E[α₁²(b₁/ϑ²)tanh′z], where
/// z = (α₁b₁/ϑ²)(y + α₁b₁*), α₁ ~ N(0,1), y ~ N(0, ϑ² + b₂*²).
pub fn population_coords_with(b1: f64, b1_star: f64, b2_star: f64, theta: f64, gh: &GaussHermite) -> Result<PopCoords> {
    check_noise(theta)?;
    if !(b1 >= 0.0) {
        return Err(Error::InvalidParameter(format!("b1 = {b1} must be nonnegative")));
    }
    let var = theta * theta;
    let sd2 = (var + b2_star * b2_star).sqrt();
    let c = b1 / var;
    let z = |a: f64, u: f64| c * a * (sd2 * u + a * b1_star);
    let dtanh = |z: f64| {
        let t = z.tanh();
        1.0 - t * t
    };
    let s = gh.expect2(|a, u| {
        let zz = z(a, u);
        zz.tanh() + zz * dtanh(zz)
    });
    let norm2 = b1_star * b1_star + b2_star * b2_star;
    let r = (var + norm2) * gh.expect2(|a, u| a * a * c * dtanh(z(a, u)));
    Ok(PopCoords { b1, b1_star, b2_star, theta, s, r })
}
