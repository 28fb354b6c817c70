//! Single-layer linear self-attention on the (d+1)×(n+1) embedding.
//!
//! With W_KQ = KᵀQ and the value/key-query blocks
//! V = [[·, ·], [u21ᵀ, u₋₁]], W_KQ = [[U11, ·], [u12ᵀ, ·]]
//! the query prediction depends only on (U11, u12, u21, u₋₁).

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::data::{embed_e, sample_prompt_with, EmbeddingE, Mixing, MixtureMoments, MoRModel, Prompt};
use crate::error::{Error, Result};
use crate::eval::McScalar;
use crate::linalg::{op_norm, spd_solve, sym_eig_range, sym_sqrt};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LsaParams {
    pub u11: DMatrix<f64>,
    pub u12: DVector<f64>,
    pub u21: DVector<f64>,
    pub u_neg1: f64,
}

impl LsaParams {
    pub fn zeros(d: usize) -> Self {
        Self { u11: DMatrix::zeros(d, d), u12: DVector::zeros(d), u21: DVector::zeros(d), u_neg1: 0.0 }
    }

    /// A point with u12 = u21 = 0.
    pub fn diagonal(u11: DMatrix<f64>, u_neg1: f64) -> Self {
        let d = u11.nrows();
        Self { u11, u12: DVector::zeros(d), u21: DVector::zeros(d), u_neg1 }
    }

    pub fn dim(&self) -> usize {
        self.u11.nrows()
    }

    pub fn on_manifold(&self) -> bool {
        self.u12.iter().chain(self.u21.iter()).all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.u11.iter().chain(self.u12.iter()).chain(self.u21.iter()).all(|v| v.is_finite()) && self.u_neg1.is_finite()
    }

    /// Full (V, W_KQ) with the unused blocks set to zero.
    pub fn to_full(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut v = DMatrix::zeros(d + 1, d + 1);
        v.view_mut((d, 0), (1, d)).copy_from(&self.u21.transpose());
        v[(d, d)] = self.u_neg1;
        let mut w = DMatrix::zeros(d + 1, d + 1);
        w.view_mut((0, 0), (d, d)).copy_from(&self.u11);
        w.view_mut((d, 0), (1, d)).copy_from(&self.u12.transpose());
        (v, w)
    }

    /// Reads the prediction-relevant blocks out of full (V, W_KQ).
    pub fn from_full(v: &DMatrix<f64>, w: &DMatrix<f64>) -> Self {
        let d = v.nrows() - 1;
        Self {
            u11: w.view((0, 0), (d, d)).into_owned(),
            u12: w.row(d).columns(0, d).transpose(),
            u21: v.row(d).columns(0, d).transpose(),
            u_neg1: v[(d, d)],
        }
    }

    /// ‖V‖_op + max(‖Q‖_op, ‖K‖_op) under the factorization K = I, Q = W_KQ.
    pub fn norm(&self) -> f64 {
        let (v, w) = self.to_full();
        op_norm(&v) + op_norm(&w).max(1.0)
    }

    /// "# lsa d=<d>" header, then U11 (row-major), u12, u21, u₋₁ on one line.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut vals: Vec<f64> = Vec::with_capacity(d * d + 2 * d + 1);
        for i in 0..d {
            vals.extend(self.u11.row(i).iter());
        }
        vals.extend(self.u12.iter());
        vals.extend(self.u21.iter());
        vals.push(self.u_neg1);
        let body: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
        format!("# lsa d={d}\n{}\n", body.join(","))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| Error::Config("empty parameter file".into()))?;
        let d: usize = head
            .strip_prefix("# lsa d=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config(format!("bad header `{head}`")))?;
        let vals: Vec<f64> = lines
            .next()
            .unwrap_or("")
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<_>>()?;
        if vals.len() != d * d + 2 * d + 1 {
            return Err(Error::Config(format!("expected {} values, got {}", d * d + 2 * d + 1, vals.len())));
        }
        Ok(Self {
            u11: DMatrix::from_row_slice(d, d, &vals[..d * d]),
            u12: DVector::from_column_slice(&vals[d * d..d * d + d]),
            u21: DVector::from_column_slice(&vals[d * d + d..d * d + 2 * d]),
            u_neg1: vals[d * d + 2 * d],
        })
    }
}

/// Prompt statistics A = XᵀX/n, b = Xᵀy/n, c = yᵀy/n.
#[derive(Debug, Clone)]
struct PromptStats {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    query: DVector<f64>,
}

impl PromptStats {
    fn from_embedding(e: &EmbeddingE) -> Self {
        let (d, n) = (e.d(), e.n());
        let x = e.matrix.view((0, 0), (d, n));
        let y = e.matrix.view((d, 0), (1, n));
        let nf = n as f64;
        Self {
            a: x * x.transpose() / nf,
            b: (x * y.transpose()).column(0) / nf,
            c: (y * y.transpose())[(0, 0)] / nf,
            query: e.matrix.view((0, n), (d, 1)).column(0).into_owned(),
        }
    }

    fn predict(&self, p: &LsaParams) -> f64 {
        let row = p.u11.tr_mul(&(&self.a * &p.u21 + &self.b * p.u_neg1));
        row.dot(&self.query) + (p.u21.dot(&self.b) + p.u_neg1 * self.c) * p.u12.dot(&self.query)
    }

    /// ∂ŷ/∂θ.
    fn grad(&self, p: &LsaParams) -> LsaParams {
        let left = &self.a * &p.u21 + &self.b * p.u_neg1;
        let u11x = &p.u11 * &self.query;
        let u12x = p.u12.dot(&self.query);
        LsaParams {
            u11: &left * self.query.transpose(),
            u12: &self.query * (p.u21.dot(&self.b) + p.u_neg1 * self.c),
            u21: &self.a * &u11x + &self.b * u12x,
            u_neg1: self.b.dot(&u11x) + self.c * u12x,
        }
    }
}

/// Query prediction ŷ_{n+1} via the block decomposition.
pub fn lsa_forward(e: &EmbeddingE, params: &LsaParams) -> f64 {
    PromptStats::from_embedding(e).predict(params)
}

/// Full-matrix forward E + V·E·M·(KE)ᵀ(QE)/n, where M masks the query
/// column out of the key/value sum. Returns the whole output.
pub fn lsa_forward_full(e: &EmbeddingE, v: &DMatrix<f64>, k: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = e.n();
    let mut masked = e.matrix.clone();
    masked.column_mut(n).fill(0.0);
    let scores = (k * &e.matrix).transpose() * (q * &e.matrix);
    &e.matrix + v * masked * scores / n as f64
}

fn check_centered(moments: &MixtureMoments) -> Result<()> {
    if moments.mean.amax() > 1e-12 {
        return Err(Error::ContractViolation("closed-form LSA objects need Eβ = 0".into()));
    }
    Ok(())
}

fn check_manifold(params: &LsaParams) -> Result<()> {
    if !params.on_manifold() {
        return Err(Error::ContractViolation("parameters are off the u12 = u21 = 0 manifold".into()));
    }
    Ok(())
}

/// Γ = (n+1)/n·Eββᵀ + (Eβᵀβ + ϑ²)/n·I.
pub fn gamma_matrix(moments: &MixtureMoments, n: usize, theta: f64) -> DMatrix<f64> {
    let nf = n as f64;
    let d = moments.dim();
    &moments.second_moment * ((nf + 1.0) / nf) + DMatrix::identity(d, d) * ((moments.trace_second + theta * theta) / nf)
}

/// ℓ̃ and its MSE-scale counterpart E(ŷ − y)² = 2ℓ̃ − (Eβᵀβ + ϑ²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationLoss {
    pub tilde: f64,
    pub mse: f64,
}

pub fn population_loss(params: &LsaParams, moments: &MixtureMoments, n: usize, theta: f64) -> Result<PopulationLoss> {
    check_manifold(params)?;
    check_centered(moments)?;
    let g = gamma_matrix(moments, n, theta);
    let u = params.u_neg1;
    let uu = &params.u11 * params.u11.transpose();
    let base = moments.trace_second + theta * theta;
    let tilde = 0.5 * u * u * (&g * uu).trace() - u * (&params.u11 * &moments.second_moment).trace() + base;
    Ok(PopulationLoss { tilde, mse: 2.0 * tilde - base })
}

/// Monte-Carlo E(ŷ − y)² (and half of it) over fresh prompts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMc {
    pub mse: McScalar,
    pub half: McScalar,
}

pub fn population_loss_mc(params: &LsaParams, model: &MoRModel, mixing: Mixing, n: usize, m: usize, seed: u64) -> Result<LossMc> {
    if m < 2 {
        return Err(Error::InvalidParameter("need m ≥ 2 prompts".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut v = Vec::with_capacity(m);
    for _ in 0..m {
        let p = sample_prompt_with(model, n, mixing, &mut rng)?;
        v.push((lsa_forward(&embed_e(&p), params) - p.label).powi(2));
    }
    let mse = McScalar::from_samples(&v);
    Ok(LossMc { mse, half: McScalar { mean: mse.mean / 2.0, se: mse.se / 2.0 } })
}

/// ∇ℓ̃ on the manifold; the flow is its negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LsaGrad {
    pub d_u11: DMatrix<f64>,
    pub d_u_neg1: f64,
}

impl LsaGrad {
    pub fn norm(&self) -> f64 {
        (self.d_u11.norm_squared() + self.d_u_neg1 * self.d_u_neg1).sqrt()
    }
}

fn grad_raw(u11: &DMatrix<f64>, u: f64, gamma: &DMatrix<f64>, second: &DMatrix<f64>) -> LsaGrad {
    let gu = gamma * u11;
    LsaGrad {
        d_u11: &gu * (u * u) - second * u,
        d_u_neg1: u * (u11.transpose() * &gu).trace() - (u11 * second).trace(),
    }
}

pub fn population_grad(params: &LsaParams, moments: &MixtureMoments, n: usize, theta: f64) -> Result<LsaGrad> {
    check_manifold(params)?;
    check_centered(moments)?;
    let g = gamma_matrix(moments, n, theta);
    Ok(grad_raw(&params.u11, params.u_neg1, &g, &moments.second_moment))
}

/// Upper limit on γ for which the flow keeps u₋₁ ≥ 0:
/// sqrt(2λ_min / (√d·((n+d+1)/n·λ_max + ϑ²/n))).
pub fn gamma_bound(moments: &MixtureMoments, n: usize, theta: f64) -> f64 {
    let (lmin, lmax) = sym_eig_range(&moments.second_moment);
    let d = moments.dim() as f64;
    let nf = n as f64;
    (2.0 * lmin.max(0.0) / (d.sqrt() * ((nf + d + 1.0) / nf * lmax + theta * theta / nf))).sqrt()
}

#[derive(Debug, Clone)]
pub struct LsaInit {
    pub params: LsaParams,
    pub gamma_bound: f64,
    pub within_bound: bool,
}

/// u₋₁ = γ, u12 = u21 = 0, U11 = γ S^{1/2}ΘΘᵀS^{1/2} with S = Eββᵀ and Θ
/// rescaled so that tr(ΘΘᵀSΘΘᵀS) = 1.
pub fn init_params(gamma: f64, theta_mat: &DMatrix<f64>, moments: &MixtureMoments, n: usize, theta: f64) -> Result<LsaInit> {
    let s = &moments.second_moment;
    if theta_mat.nrows() != s.nrows() {
        return Err(Error::DimensionMismatch(format!("Θ has {} rows, d = {}", theta_mat.nrows(), s.nrows())));
    }
    let tt = theta_mat * theta_mat.transpose();
    let m = &tt * s;
    let q = (&m * &m).trace();
    if !(q > 1e-300) {
        return Err(Error::Degenerate("ΘᵀEββᵀ = 0; cannot initialize".into()));
    }
    let tt = tt / q.sqrt();
    let root = sym_sqrt(s);
    let u11 = &root * tt * &root * gamma;
    let bound = gamma_bound(moments, n, theta);
    let within = gamma <= bound;
    if !within {
        log::warn!("γ = {gamma} exceeds the positivity bound {bound:.6}");
    }
    Ok(LsaInit { params: LsaParams::diagonal(u11, gamma), gamma_bound: bound, within_bound: within })
}

/// Global minimizer on the zero-conservation branch:
/// u₋₁* = ‖Γ⁻¹Eββᵀ‖_F^{1/2}, U11* = Γ⁻¹Eββᵀ / u₋₁*.
#[derive(Debug, Clone)]
pub struct LsaOptimum {
    pub u11: DMatrix<f64>,
    pub u_neg1: f64,
    /// Γ⁻¹Eββᵀ = u₋₁*·U11*.
    pub product: DMatrix<f64>,
    /// min ℓ̃ = −½tr(Γ⁻¹(Eββᵀ)²) + Eβᵀβ + ϑ².
    pub min_loss: f64,
}

impl LsaOptimum {
    pub fn params(&self) -> LsaParams {
        LsaParams::diagonal(self.u11.clone(), self.u_neg1)
    }
}

pub fn closed_form_optimum(moments: &MixtureMoments, n: usize, theta: f64) -> Result<LsaOptimum> {
    check_centered(moments)?;
    let s = &moments.second_moment;
    if s.amax() == 0.0 {
        return Err(Error::Degenerate("zero second moment".into()));
    }
    let g = gamma_matrix(moments, n, theta);
    let mut prod = DMatrix::zeros(s.nrows(), s.ncols());
    for j in 0..s.ncols() {
        prod.set_column(j, &spd_solve(&g, &s.column(j).into_owned(), "Γ")?);
    }
    let u = prod.norm().sqrt();
    let min_loss = -0.5 * (&prod * s).trace() + moments.trace_second + theta * theta;
    Ok(LsaOptimum { u11: &prod / u, u_neg1: u, product: prod, min_loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub h: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub integrator: Integrator,
    /// Keep every k-th step in the trajectory (the last step is always kept).
    pub record_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { h: 1e-3, max_steps: 1_000_000, grad_tol: 1e-8, integrator: Integrator::Rk4, record_every: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowRecord {
    pub t: f64,
    pub loss: f64,
    pub grad_norm: f64,
    /// tr(U11U11ᵀ) − u₋₁².
    pub conservation: f64,
    /// ‖u₋₁U11 − Γ⁻¹Eββᵀ‖_F.
    pub dist_to_optimum: f64,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub records: Vec<FlowRecord>,
    pub params: LsaParams,
    pub steps: usize,
    pub converged: bool,
    /// Largest |conservation(t) − conservation(0)| over every step.
    pub max_drift: f64,
}

impl FlowTrajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,loss,grad_norm,conservation_residual,dist_to_optimum\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.t, r.loss, r.grad_norm, r.conservation, r.dist_to_optimum);
        }
        s
    }
}

/// Integrates dθ/dt = −∇ℓ̃ on the manifold.
///
/// Ten consecutive loss increases beyond 1e-10 (relative) abort with
/// [`Error::StepSize`].
pub fn gradient_flow(params0: &LsaParams, moments: &MixtureMoments, n: usize, theta: f64, cfg: &FlowConfig) -> Result<FlowTrajectory> {
    check_manifold(params0)?;
    check_centered(moments)?;
    if !(cfg.h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h = {}", cfg.h)));
    }
    let g = gamma_matrix(moments, n, theta);
    let s = &moments.second_moment;
    let target = closed_form_optimum(moments, n, theta)?.product;
    let base = moments.trace_second + theta * theta;
    let loss = |u11: &DMatrix<f64>, u: f64| {
        0.5 * u * u * (&g * u11 * u11.transpose()).trace() - u * (u11 * s).trace() + base
    };
    let cons = |u11: &DMatrix<f64>, u: f64| u11.norm_squared() - u * u;
    let record = |t: f64, u11: &DMatrix<f64>, u: f64, gn: f64| FlowRecord {
        t,
        loss: loss(u11, u),
        grad_norm: gn,
        conservation: cons(u11, u),
        dist_to_optimum: (u11 * u - &target).norm(),
    };
    let field = |u11: &DMatrix<f64>, u: f64| grad_raw(u11, u, &g, s);

    let mut u11 = params0.u11.clone();
    let mut u = params0.u_neg1;
    let c0 = cons(&u11, u);
    let mut max_drift: f64 = 0.0;
    let mut grad = field(&u11, u);
    let mut records = vec![record(0.0, &u11, u, grad.norm())];
    let mut prev = records[0].loss;
    let mut rises = 0;
    let mut steps = 0;
    let h = cfg.h;
    while steps < cfg.max_steps && grad.norm() > cfg.grad_tol {
        match cfg.integrator {
            Integrator::Euler => {
                u11 -= &grad.d_u11 * h;
                u -= grad.d_u_neg1 * h;
            }
            Integrator::Rk4 => {
                let k1 = &grad;
                let k2 = field(&(&u11 - &k1.d_u11 * (h / 2.0)), u - k1.d_u_neg1 * h / 2.0);
                let k3 = field(&(&u11 - &k2.d_u11 * (h / 2.0)), u - k2.d_u_neg1 * h / 2.0);
                let k4 = field(&(&u11 - &k3.d_u11 * h), u - k3.d_u_neg1 * h);
                u11 -= (&k1.d_u11 + &k2.d_u11 * 2.0 + &k3.d_u11 * 2.0 + &k4.d_u11) * (h / 6.0);
                u -= (k1.d_u_neg1 + 2.0 * k2.d_u_neg1 + 2.0 * k3.d_u_neg1 + k4.d_u_neg1) * h / 6.0;
            }
        }
        steps += 1;
        grad = field(&u11, u);
        let l = loss(&u11, u);
        if !l.is_finite() {
            return Err(Error::NonFinite { step: steps });
        }
        if l > prev + 1e-10 * prev.abs().max(1.0) {
            rises += 1;
            if rises >= 10 {
                return Err(Error::StepSize { step: steps, loss: l });
            }
        } else {
            rises = 0;
        }
        prev = l;
        max_drift = max_drift.max((cons(&u11, u) - c0).abs());
        if steps % cfg.record_every.max(1) == 0 {
            records.push(record(steps as f64 * h, &u11, u, grad.norm()));
        }
    }
    if records.last().map(|r| r.t) != Some(steps as f64 * h) {
        records.push(record(steps as f64 * h, &u11, u, grad.norm()));
    }
    let converged = grad.norm() <= cfg.grad_tol;
    Ok(FlowTrajectory { records, params: LsaParams::diagonal(u11, u), steps, converged, max_drift })
}

/// clip_R(v): projection onto [−R, R].
pub fn clip(v: f64, r: f64) -> f64 {
    v.clamp(-r, r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub clip_r: f64,
    /// Warn (once) when ‖θ‖ exceeds this bound.
    pub norm_bound: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: LsaParams,
    /// Empirical loss before each epoch, plus the final value.
    pub loss_history: Vec<f64>,
}

fn axpy(p: &mut LsaParams, g: &LsaParams, a: f64) {
    p.u11 += &g.u11 * a;
    p.u12 += &g.u12 * a;
    p.u21 += &g.u21 * a;
    p.u_neg1 += g.u_neg1 * a;
}

/// Full-batch gradient descent on (1/B)Σ ½[y_{n+1} − clip_R(ŷ)]².
pub fn train_lsa_empirical(prompts: &[Prompt], params0: &LsaParams, cfg: &TrainConfig) -> Result<TrainResult> {
    if prompts.is_empty() {
        return Err(Error::InvalidParameter("need at least one prompt".into()));
    }
    if !(cfg.clip_r >= 0.0) {
        return Err(Error::InvalidParameter(format!("clip radius {}", cfg.clip_r)));
    }
    let stats: Vec<(PromptStats, f64)> =
        prompts.iter().map(|p| (PromptStats::from_embedding(&embed_e(p)), p.label)).collect();
    let bf = stats.len() as f64;
    let mut params = params0.clone();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut warned = false;
    for epoch in 0..=cfg.epochs {
        let mut loss = 0.0;
        let mut grad = LsaParams::zeros(params.dim());
        for (st, y) in &stats {
            let yhat = st.predict(&params);
            let resid = y - clip(yhat, cfg.clip_r);
            loss += 0.5 * resid * resid;
            if yhat.abs() <= cfg.clip_r {
                axpy(&mut grad, &st.grad(&params), -resid / bf);
            }
        }
        loss /= bf;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step: epoch });
        }
        history.push(loss);
        if epoch == cfg.epochs {
            break;
        }
        axpy(&mut params, &grad, -cfg.lr);
        if let Some(bound) = cfg.norm_bound {
            if !warned && params.norm() > bound {
                log::warn!("‖θ‖ = {:.4} exceeds M′ = {bound} at epoch {epoch}", params.norm());
                warned = true;
            }
        }
    }
    Ok(TrainResult { params, loss_history: history })
}
