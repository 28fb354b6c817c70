//! K-component gradient EM inside a single prompt.

use nalgebra::{DMatrix, DVector};

use super::{check_noise, check_step};
use crate::data::Prompt;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, mat_pow, spd_solve};

/// Total responsibility below which a component counts as collapsed.
pub const COLLAPSE_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EmStateMulti {
    pub betas: Vec<DVector<f64>>,
    pub pis: Vec<f64>,
    /// Rows are samples (or prompts, for batch EM), columns components.
    pub gammas: DMatrix<f64>,
}

impl EmStateMulti {
    pub fn new(betas: Vec<DVector<f64>>, pis: Vec<f64>, prompt: &Prompt, theta: f64) -> Result<Self> {
        check_noise(theta)?;
        check_components(&betas, &pis, prompt.d())?;
        let gammas = sample_responsibilities(&betas, &pis, prompt, theta);
        Ok(Self { betas, pis, gammas })
    }

    pub fn k(&self) -> usize {
        self.betas.len()
    }
}

pub(crate) fn check_components(betas: &[DVector<f64>], pis: &[f64], d: usize) -> Result<()> {
    if betas.is_empty() || betas.len() != pis.len() {
        return Err(Error::InvalidParameter(format!("{} betas vs {} weights", betas.len(), pis.len())));
    }
    if betas.iter().any(|b| b.len() != d) {
        return Err(Error::DimensionMismatch(format!("component dimension differs from d = {d}")));
    }
    if pis.iter().any(|&p| !(p > 0.0)) || (pis.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter("mixing weights must be positive and sum to one".into()));
    }
    Ok(())
}

fn sample_responsibilities(betas: &[DVector<f64>], pis: &[f64], prompt: &Prompt, theta: f64) -> DMatrix<f64> {
    let (n, k) = (prompt.n(), betas.len());
    let two_var = 2.0 * theta * theta;
    let fits: Vec<DVector<f64>> = betas.iter().map(|b| &prompt.x * b).collect();
    let mut g = DMatrix::zeros(n, k);
    let mut logs = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            logs[j] = pis[j].ln() - (prompt.y[i] - fits[j][i]).powi(2) / two_var;
        }
        let z = log_sum_exp(&logs);
        for j in 0..k {
            g[(i, j)] = (logs[j] - z).exp();
        }
    }
    g
}

/// γ_ij ∝ π_j exp{−(y_i − x_iᵀβ_j)²/2ϑ²}, normalized per row.
pub fn responsibilities(state: &EmStateMulti, prompt: &Prompt, theta: f64) -> DMatrix<f64> {
    sample_responsibilities(&state.betas, &state.pis, prompt, theta)
}

/// Gradient of (1/2n) Σ_i γ_ij (y_i − x_iᵀβ)² at `beta`, for column `j`.
pub fn component_grad(gammas: &DMatrix<f64>, j: usize, beta: &DVector<f64>, prompt: &Prompt) -> DVector<f64> {
    let resid = &prompt.x * beta - &prompt.y;
    let weighted = resid.component_mul(&gammas.column(j));
    prompt.x.tr_mul(&weighted) / prompt.n() as f64
}

/// Weighted Gram Σ̂_w = (1/n) Σ γ_ij x_i x_iᵀ and moment (1/n) Σ γ_ij y_i x_i.
fn weighted_stats(gammas: &DMatrix<f64>, j: usize, prompt: &Prompt) -> (DMatrix<f64>, DVector<f64>) {
    let n = prompt.n() as f64;
    let g = gammas.column(j);
    let mut xw = prompt.x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= g[i];
    }
    (prompt.x.tr_mul(&xw) / n, xw.tr_mul(&prompt.y) / n)
}

/// One E-step followed by T gradient steps per component and a π refresh.
pub fn gradient_em_step_multi(state: &EmStateMulti, prompt: &Prompt, alpha: f64, t_steps: usize, theta: f64) -> Result<EmStateMulti> {
    check_step(alpha)?;
    check_noise(theta)?;
    let d = prompt.d();
    let gammas = responsibilities(state, prompt, theta);
    let mut betas = Vec::with_capacity(state.k());
    for j in 0..state.k() {
        let mass = gammas.column(j).sum();
        if mass < COLLAPSE_MASS {
            return Err(Error::ComponentCollapse { component: j, mass });
        }
        let (sw, b) = weighted_stats(&gammas, j, prompt);
        let z = spd_solve(&sw, &b, "weighted covariance")?;
        let p = mat_pow(&(DMatrix::identity(d, d) - &sw * alpha), t_steps);
        betas.push(&p * &state.betas[j] + &z - &p * &z);
    }
    let n = prompt.n() as f64;
    let pis: Vec<f64> = (0..state.k()).map(|j| gammas.column(j).sum() / n).collect();
    let gammas = sample_responsibilities(&betas, &pis, prompt, theta);
    Ok(EmStateMulti { betas, pis, gammas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_model, sample_prompt, Mixing, MoRModel};
    use crate::em::two::{grad_q, EmStateTwo};
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn prompt(d: usize, k: usize, n: usize, seed: u64) -> Prompt {
        let m = sample_model(d, k, 0.2, false, seed).unwrap();
        sample_prompt(&m, n, Mixing::PerSample, seed ^ 0xabc).unwrap()
    }

    #[test]
    fn identical_components_give_prior() {
        let p = prompt(3, 3, 12, 1);
        let b = dv(&[0.1, 0.2, 0.3]);
        let st = EmStateMulti::new(vec![b.clone(), b.clone(), b], vec![0.2, 0.3, 0.5], &p, 0.5).unwrap();
        for i in 0..12 {
            for (j, &pi) in [0.2, 0.3, 0.5].iter().enumerate() {
                assert!((st.gammas[(i, j)] - pi).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_temperature_is_one_hot() {
        let m = MoRModel::new(vec![dv(&[2.0, 0.0]), dv(&[0.0, -2.0])], vec![0.5, 0.5], 0.0).unwrap();
        let p = sample_prompt(&m, 30, Mixing::PerSample, 2).unwrap();
        let st = EmStateMulti::new(m.components().to_vec(), vec![0.5, 0.5], &p, 1e-3).unwrap();
        for i in 0..30 {
            let truth = p.assignments[i];
            let fits: Vec<f64> = m.components().iter().map(|b| (p.y[i] - p.row(i).dot(b)).abs()).collect();
            if (fits[0] - fits[1]).abs() > 0.05 {
                assert!((st.gammas[(i, truth)] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_case_matches_direct_exponents() {
        let p = Prompt {
            x: DMatrix::from_row_slice(3, 1, &[1.0, -0.5, 2.0]),
            y: dv(&[0.7, 0.2, -1.1]),
            query: dv(&[0.0]),
            label: 0.0,
            assignments: vec![0; 4],
        };
        let betas = vec![dv(&[0.5]), dv(&[-0.4])];
        let pis = vec![0.3, 0.7];
        let st = EmStateMulti::new(betas.clone(), pis.clone(), &p, 0.8).unwrap();
        for i in 0..3 {
            let e: Vec<f64> = (0..2)
                .map(|j| pis[j] * (-(p.y[i] - p.x[(i, 0)] * betas[j][0]).powi(2) / (2.0 * 0.64)).exp())
                .collect();
            for j in 0..2 {
                assert!((st.gammas[(i, j)] - e[j] / (e[0] + e[1])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_component_is_gd_toward_ols() {
        let p = prompt(3, 1, 40, 3);
        let st = EmStateMulti::new(vec![DVector::zeros(3)], vec![1.0], &p, 0.5).unwrap();
        let next = gradient_em_step_multi(&st, &p, 0.5, 3, 0.5).unwrap();
        let mut b = DVector::zeros(3);
        let sigma = p.gram();
        let xy = p.x.tr_mul(&p.y) / 40.0;
        for _ in 0..3 {
            b = &b - (&sigma * &b - &xy) * 0.5;
        }
        assert!((&next.betas[0] - b).amax() < 1e-12);
        assert_eq!(next.pis, vec![1.0]);
    }

    #[test]
    fn collapse_is_reported() {
        let m = MoRModel::new(vec![dv(&[1.0, 0.0])], vec![1.0], 0.0).unwrap();
        let p = sample_prompt(&m, 20, Mixing::PerSample, 4).unwrap();
        let st = EmStateMulti::new(vec![dv(&[1.0, 0.0]), dv(&[50.0, 50.0])], vec![0.5, 0.5], &p, 0.05).unwrap();
        match gradient_em_step_multi(&st, &p, 0.5, 2, 0.05) {
            Err(Error::ComponentCollapse { component, .. }) => assert_eq!(component, 1),
            other => panic!("expected collapse, got {other:?}"),
        }
    }

    #[test]
    fn symmetric_pair_reduces_to_two_component_path() {
        for seed in 0..5 {
            let m = sample_model(4, 2, 0.4, true, seed).unwrap();
            let p = sample_prompt(&m, 30, Mixing::PerSample, seed + 10).unwrap();
            let b = dv(&[0.2, -0.1, 0.4, 0.3]);
            let st = EmStateMulti::new(vec![b.clone(), -&b], vec![0.5, 0.5], &p, 0.4).unwrap();
            let two = EmStateTwo::new(b.clone(), &p, 0.4).unwrap();
            for i in 0..30 {
                assert!((st.gammas[(i, 0)] - two.weights[i]).abs() < 1e-14);
                assert!((st.gammas[(i, 1)] - (1.0 - two.weights[i])).abs() < 1e-14);
            }
            // ½∇L̂_n(β) = g₁(β) − g₂(−β)
            let lhs = grad_q(&b, &two, &p) * 0.5;
            let rhs = component_grad(&st.gammas, 0, &b, &p) - component_grad(&st.gammas, 1, &(-&b), &p);
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn closed_form_equals_explicit_loop(seed in 0u64..300, t in 1usize..8, alpha in 0.05f64..0.9) {
            let p = prompt(3, 3, 40, seed);
            let betas = vec![dv(&[0.3, 0.0, 0.1]), dv(&[-0.2, 0.5, 0.0]), dv(&[0.0, -0.3, 0.4])];
            let st = EmStateMulti::new(betas.clone(), vec![0.3, 0.3, 0.4], &p, 0.6).unwrap();
            let next = gradient_em_step_multi(&st, &p, alpha, t, 0.6).unwrap();
            let g = responsibilities(&st, &p, 0.6);
            for (j, beta) in betas.iter().enumerate() {
                let mut b = beta.clone();
                for _ in 0..t {
                    b = &b - component_grad(&g, j, &b, &p) * alpha;
                }
                prop_assert!((&next.betas[j] - b).amax() < 1e-10);
            }
            prop_assert!((next.pis.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..40 {
                prop_assert!((next.gammas.row(i).sum() - 1.0).abs() < 1e-10);
            }
        }
    }
}
