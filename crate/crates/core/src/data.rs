//! Generative model, prompts and the two embedding layouts.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Ground-truth mixture of linear regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct MoRModel {
    dim: usize,
    components: Vec<DVector<f64>>,
    weights: Vec<f64>,
    noise_sd: f64,
}

impl MoRModel {
    pub fn new(components: Vec<DVector<f64>>, weights: Vec<f64>, noise_sd: f64) -> Result<Self> {
        let k = components.len();
        if k == 0 {
            return Err(Error::InvalidParameter("need at least one component".into()));
        }
        let dim = components[0].len();
        if dim == 0 || components.iter().any(|b| b.len() != dim) {
            return Err(Error::InvalidParameter("components must share a positive dimension".into()));
        }
        if weights.len() != k {
            return Err(Error::InvalidParameter(format!("{} weights for {k} components", weights.len())));
        }
        if weights.iter().any(|&p| !(p > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("weights must be positive and sum to one".into()));
        }
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::InvalidParameter(format!("noise_sd = {noise_sd}")));
        }
        Ok(Self { dim, components, weights, noise_sd })
    }

    /// Two components ±β with equal weights.
    pub fn symmetric(beta: DVector<f64>, noise_sd: f64) -> Result<Self> {
        let neg = -&beta;
        Self::new(vec![beta, neg], vec![0.5, 0.5], noise_sd)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[DVector<f64>] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise_sd = {noise_sd}")));
        }
        self.noise_sd = noise_sd;
        Ok(self)
    }

    /// Sets ϑ so that the model's SNR equals `eta`.
    pub fn with_snr(self, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidParameter(format!("eta = {eta}")));
        }
        let r = min_separation(&self.components)?;
        self.with_noise_sd(r / eta)
    }

    /// True when the model is K=2 with β₂ = −β₁ and equal weights.
    pub fn is_symmetric(&self) -> bool {
        self.k() == 2
            && (&self.components[0] + &self.components[1]).norm() <= 1e-12
            && (self.weights[0] - 0.5).abs() <= 1e-12
    }

    pub fn to_toml(&self) -> String {
        let file = ModelFile {
            d: self.dim,
            k: self.k(),
            noise_sd: self.noise_sd,
            weights: self.weights.clone(),
            betas: self.components.iter().flat_map(|b| b.iter().copied()).collect(),
        };
        toml::to_string(&file).expect("model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: ModelFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if f.betas.len() != f.d * f.k {
            return Err(Error::Config(format!("expected {} coefficients, got {}", f.d * f.k, f.betas.len())));
        }
        let comps = f.betas.chunks(f.d).map(DVector::from_column_slice).collect();
        Self::new(comps, f.weights, f.noise_sd)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    d: usize,
    k: usize,
    noise_sd: f64,
    weights: Vec<f64>,
    /// Row-major K×d.
    betas: Vec<f64>,
}

fn min_separation(components: &[DVector<f64>]) -> Result<f64> {
    if components.len() < 2 {
        return Err(Error::UndefinedSnr("need at least two components"));
    }
    let mut best = f64::INFINITY;
    for i in 0..components.len() {
        for j in i + 1..components.len() {
            best = best.min((&components[i] - &components[j]).norm());
        }
    }
    Ok(best)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Uniform draw on the unit sphere in R^d.
pub fn unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = standard_normal_vec(d, rng);
        let n = v.norm();
        if n > 1e-300 {
            return v / n;
        }
    }
}

/// Unit-norm Gaussian components with uniform weights.
///
/// `symmetric` (K = 2 only) forces β₂ = −β₁.
pub fn sample_model(d: usize, k: usize, noise_sd: f64, symmetric: bool, seed: u64) -> Result<MoRModel> {
    if d == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!("d = {d}, K = {k}")));
    }
    if symmetric && k != 2 {
        return Err(Error::InvalidParameter("symmetric models have K = 2".into()));
    }
    let mut rng = rng_from_seed(seed);
    let components = if symmetric {
        let b = unit_sphere(d, &mut rng);
        vec![b.clone(), -b]
    } else {
        (0..k).map(|_| unit_sphere(d, &mut rng)).collect()
    };
    MoRModel::new(components, vec![1.0 / k as f64; k], noise_sd)
}

/// R_min / ϑ.
pub fn snr(model: &MoRModel) -> Result<f64> {
    if model.k() < 2 {
        return Err(Error::UndefinedSnr("K = 1"));
    }
    if model.noise_sd == 0.0 {
        return Err(Error::UndefinedSnr("noise level is zero"));
    }
    Ok(min_separation(&model.components)? / model.noise_sd)
}

/// Σ π_k β_k, the best fixed linear predictor.
pub fn oracle_beta(model: &MoRModel) -> DVector<f64> {
    model
        .components
        .iter()
        .zip(&model.weights)
        .fold(DVector::zeros(model.dim), |acc, (b, &p)| acc + b * p)
}

/// How components are assigned inside a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mixing {
    /// Every sample (query included) draws its own component.
    PerSample,
    /// One component per prompt, shared by all samples and the query.
    PerPrompt,
}

/// One in-context instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    /// n×d, rows are samples.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub query: DVector<f64>,
    pub label: f64,
    /// Length n+1; the last entry belongs to the query.
    pub assignments: Vec<usize>,
}

impl Prompt {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// Σ̂ = XᵀX/n.
    pub fn gram(&self) -> DMatrix<f64> {
        self.x.tr_mul(&self.x) / self.n() as f64
    }

    /// CSV block: one row per sample, the last row is the query and its label.
    pub fn to_csv(&self) -> String {
        let d = self.d();
        let mut s = String::new();
        let head: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
        let _ = writeln!(s, "{},y,assignment", head.join(","));
        let mut push = |x: &[f64], y: f64, a: usize| {
            for v in x {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{y},{a}");
        };
        for i in 0..self.n() {
            let r: Vec<f64> = self.x.row(i).iter().copied().collect();
            push(&r, self.y[i], self.assignments[i]);
        }
        push(self.query.as_slice(), self.label, self.assignments[self.n()]);
        s
    }
}

pub fn sample_prompt_with<R: Rng + ?Sized>(model: &MoRModel, n: usize, mixing: Mixing, rng: &mut R) -> Result<Prompt> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let d = model.dim;
    let pick = WeightedIndex::new(&model.weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let shared = pick.sample(rng);
    let draw = |rng: &mut R| -> (DVector<f64>, f64, usize) {
        let k = match mixing {
            Mixing::PerSample => pick.sample(rng),
            Mixing::PerPrompt => shared,
        };
        let x = standard_normal_vec(d, rng);
        let noise: f64 = rng.sample(StandardNormal);
        let y = x.dot(&model.components[k]) + model.noise_sd * noise;
        (x, y, k)
    };
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut assignments = Vec::with_capacity(n + 1);
    for i in 0..n {
        let (xi, yi, k) = draw(rng);
        x.set_row(i, &xi.transpose());
        y[i] = yi;
        assignments.push(k);
    }
    let (query, label, k) = draw(rng);
    assignments.push(k);
    Ok(Prompt { x, y, query, label, assignments })
}

pub fn sample_prompt(model: &MoRModel, n: usize, mixing: Mixing, seed: u64) -> Result<Prompt> {
    sample_prompt_with(model, n, mixing, &mut rng_from_seed(seed))
}

/// Row roles of the constructed-transformer embedding (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotMap {
    pub d: usize,
    /// Embedding height D.
    pub height: usize,
}

impl SlotMap {
    pub fn new(d: usize, height: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Layout("d must be positive".into()));
        }
        if height < Self::min_height(d) {
            return Err(Error::Layout(format!("D = {height} < 3d + 8 = {}", Self::min_height(d))));
        }
        Ok(Self { d, height })
    }

    pub fn min_height(d: usize) -> usize {
        3 * d + 8
    }

    pub fn x(&self) -> Range<usize> {
        0..self.d
    }
    pub fn y(&self) -> usize {
        self.d
    }
    pub fn beta(&self) -> Range<usize> {
        self.d + 1..2 * self.d + 1
    }
    pub fn neg_beta(&self) -> Range<usize> {
        2 * self.d + 1..3 * self.d + 1
    }
    pub fn r(&self) -> usize {
        3 * self.d + 1
    }
    pub fn r_tilde(&self) -> usize {
        3 * self.d + 2
    }
    pub fn pad(&self) -> Range<usize> {
        3 * self.d + 3..self.height - 3
    }
    /// First pad row; holds (2w − 1)·y′ between the E- and M-steps.
    pub fn signed_label(&self) -> usize {
        3 * self.d + 3
    }
    pub fn one(&self) -> usize {
        self.height - 3
    }
    pub fn t(&self) -> usize {
        self.height - 2
    }
    pub fn w(&self) -> usize {
        self.height - 1
    }
}

/// D×(n+1) embedding consumed by the constructed transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingH {
    pub matrix: DMatrix<f64>,
    pub slots: SlotMap,
}

impl EmbeddingH {
    /// Number of training columns n.
    pub fn n(&self) -> usize {
        self.matrix.ncols() - 1
    }

    pub fn query_col(&self) -> usize {
        self.n()
    }

    pub fn slice(&self, rows: Range<usize>, col: usize) -> DVector<f64> {
        self.matrix.view((rows.start, col), (rows.len(), 1)).into_owned().column(0).into_owned()
    }

    /// Writes `beta` into the beta slot of every column.
    pub fn set_beta(&mut self, beta: &DVector<f64>) {
        let r = self.slots.beta();
        for c in 0..self.matrix.ncols() {
            self.matrix.view_mut((r.start, c), (r.len(), 1)).copy_from(beta);
        }
    }
}

/// Builds H: column i = [x_i; y′_i; β; −β; r; r̃; pad; 1; t_i; w_i].
///
/// The beta, scratch and weight slots start at zero and the query column has
/// t = 0 and y′ = 0.
pub fn embed_h(prompt: &Prompt, height: usize) -> Result<EmbeddingH> {
    let slots = SlotMap::new(prompt.d(), height)?;
    let n = prompt.n();
    let mut m = DMatrix::zeros(height, n + 1);
    for i in 0..=n {
        let x = if i < n { prompt.row(i) } else { prompt.query.clone() };
        m.view_mut((0, i), (slots.d, 1)).copy_from(&x);
        let t = if i < n { 1.0 } else { 0.0 };
        m[(slots.y(), i)] = if i < n { prompt.y[i] } else { 0.0 };
        m[(slots.one(), i)] = 1.0;
        m[(slots.t(), i)] = t;
    }
    Ok(EmbeddingH { matrix: m, slots })
}

/// (d+1)×(n+1) embedding consumed by linear self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingE {
    pub matrix: DMatrix<f64>,
}

impl EmbeddingE {
    pub fn d(&self) -> usize {
        self.matrix.nrows() - 1
    }
    pub fn n(&self) -> usize {
        self.matrix.ncols() - 1
    }
}

pub fn embed_e(prompt: &Prompt) -> EmbeddingE {
    let (n, d) = (prompt.n(), prompt.d());
    let mut m = DMatrix::zeros(d + 1, n + 1);
    m.view_mut((0, 0), (d, n)).copy_from(&prompt.x.transpose());
    m.view_mut((d, 0), (1, n)).copy_from(&prompt.y.transpose());
    m.view_mut((0, n), (d, 1)).copy_from(&prompt.query);
    EmbeddingE { matrix: m }
}

/// Moments of the discrete coefficient distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMoments {
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
    pub trace_second: f64,
}

impl MixtureMoments {
    /// Moments of a zero-mean law with the given second moment.
    pub fn centered(second_moment: DMatrix<f64>) -> Self {
        let d = second_moment.nrows();
        let trace_second = second_moment.trace();
        Self { mean: DVector::zeros(d), second_moment, trace_second }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn mixture_moments(model: &MoRModel) -> MixtureMoments {
    let d = model.dim;
    let mut second = DMatrix::zeros(d, d);
    for (b, &p) in model.components.iter().zip(&model.weights) {
        second += b * b.transpose() * p;
    }
    second = (&second + second.transpose()) * 0.5;
    MixtureMoments {
        mean: oracle_beta(model),
        trace_second: second.trace(),
        second_moment: second,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::child_rng;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn symmetric_sample_is_antipodal_unit() {
        let m = sample_model(32, 2, 0.2, true, 1).unwrap();
        assert!((&m.components()[0] + &m.components()[1]).norm() == 0.0);
        assert!((m.components()[0].norm() - 1.0).abs() < 1e-12);
        assert!(m.is_symmetric());
    }

    #[test]
    fn one_dimensional_component_is_sign() {
        for seed in 0..10 {
            let m = sample_model(1, 1, 0.0, false, seed).unwrap();
            assert_eq!(m.components()[0][0].abs(), 1.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_model(3, 2, 0.1, false, 9).unwrap(), sample_model(3, 2, 0.1, false, 9).unwrap());
        let m = sample_model(3, 2, 0.1, false, 9).unwrap();
        let a = sample_prompt(&m, 20, Mixing::PerSample, 4).unwrap();
        let b = sample_prompt(&m, 20, Mixing::PerSample, 4).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(sample_model(0, 2, 0.1, false, 0).is_err());
        assert!(sample_model(3, 0, 0.1, false, 0).is_err());
        assert!(MoRModel::new(vec![dv(&[1.0])], vec![0.9], 0.1).is_err());
        assert!(MoRModel::new(vec![dv(&[1.0])], vec![1.0], -1.0).is_err());
    }

    #[test]
    fn snr_examples() {
        let m = MoRModel::symmetric(dv(&[0.6, 0.8]), 0.2).unwrap();
        assert!((snr(&m).unwrap() - 10.0).abs() < 1e-12);
        let same = MoRModel::new(vec![dv(&[1.0]), dv(&[1.0])], vec![0.5, 0.5], 1.0).unwrap();
        assert_eq!(snr(&same).unwrap(), 0.0);
        let one = MoRModel::new(vec![dv(&[1.0])], vec![1.0], 1.0).unwrap();
        assert!(matches!(snr(&one), Err(Error::UndefinedSnr(_))));
        assert!(matches!(snr(&m.clone().with_noise_sd(0.0).unwrap()), Err(Error::UndefinedSnr(_))));
    }

    #[test]
    fn snr_triple_brute_force() {
        let c = vec![dv(&[0.0, 0.0]), dv(&[3.0, 4.0]), dv(&[1.0, 1.0])];
        let m = MoRModel::new(c.clone(), vec![0.2, 0.3, 0.5], 0.5).unwrap();
        let mut best = f64::MAX;
        for a in &c {
            for b in &c {
                let dist = (a - b).norm();
                if dist > 0.0 {
                    best = best.min(dist);
                }
            }
        }
        assert!((snr(&m).unwrap() - best / 0.5).abs() < 1e-12);
    }

    #[test]
    fn with_snr_sets_noise() {
        let m = MoRModel::symmetric(dv(&[1.0, 0.0]), 1.0).unwrap().with_snr(10.0).unwrap();
        assert!((m.noise_sd() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn oracle_beta_examples() {
        let m = MoRModel::symmetric(dv(&[1.0, 2.0]), 0.1).unwrap();
        assert_eq!(oracle_beta(&m), DVector::zeros(2));
        let one = MoRModel::new(vec![dv(&[1.5, -2.0])], vec![1.0], 0.1).unwrap();
        assert_eq!(oracle_beta(&one), dv(&[1.5, -2.0]));
    }

    #[test]
    fn oracle_beta_minimizes_risk_against_normal_equations() {
        // K=3, uneven weights, PerSample law; the empirical risk minimizer is
        // the OLS solution on a large sample.
        let m = MoRModel::new(
            vec![dv(&[1.0, 0.0]), dv(&[0.0, 2.0]), dv(&[-1.0, -1.0])],
            vec![0.5, 0.3, 0.2],
            0.3,
        )
        .unwrap();
        let p = sample_prompt(&m, 1_000_000, Mixing::PerSample, 11).unwrap();
        let xtx = p.x.tr_mul(&p.x);
        let xty = p.x.tr_mul(&p.y);
        let ols = xtx.cholesky().unwrap().solve(&xty);
        let or = oracle_beta(&m);
        assert!((ols - &or).norm() < 5e-3, "oracle {or}");
        // and a grid search never beats it by more than MC noise
        let risk = |b: &DVector<f64>| (&p.y - &p.x * b).norm_squared() / p.n() as f64;
        let r0 = risk(&or);
        for dx in [-0.05, 0.05] {
            for dy in [-0.05, 0.05] {
                assert!(risk(&(&or + dv(&[dx, dy]))) > r0);
            }
        }
    }

    #[test]
    fn noiseless_single_component_is_exact() {
        let m = MoRModel::new(vec![dv(&[0.3, -0.7, 2.0])], vec![1.0], 0.0).unwrap();
        let p = sample_prompt(&m, 50, Mixing::PerSample, 3).unwrap();
        assert_eq!(&p.x * &m.components()[0], p.y);
        assert_eq!(p.query.dot(&m.components()[0]), p.label);
    }

    #[test]
    fn component_frequencies_follow_weights() {
        let m = MoRModel::new(
            vec![dv(&[1.0]), dv(&[2.0]), dv(&[3.0])],
            vec![0.2, 0.5, 0.3],
            0.0,
        )
        .unwrap();
        let n = 100_000;
        let p = sample_prompt(&m, n, Mixing::PerSample, 5).unwrap();
        for (k, &pi) in m.weights().iter().enumerate() {
            let c = p.assignments[..n].iter().filter(|&&a| a == k).count() as f64;
            let sd = (n as f64 * pi * (1.0 - pi)).sqrt();
            assert!((c - n as f64 * pi).abs() < 3.0 * sd, "component {k}: {c}");
        }
    }

    #[test]
    fn per_prompt_shares_component() {
        let m = sample_model(4, 5, 0.1, false, 2).unwrap();
        let p = sample_prompt(&m, 30, Mixing::PerPrompt, 8).unwrap();
        assert!(p.assignments.iter().all(|&a| a == p.assignments[0]));
        assert_eq!(p.assignments.len(), 31);
    }

    #[test]
    fn embed_h_layout() {
        let m = sample_model(2, 2, 0.1, true, 0).unwrap();
        let p = sample_prompt(&m, 2, Mixing::PerSample, 0).unwrap();
        let h = embed_h(&p, 14).unwrap();
        let s = h.slots;
        let t: Vec<f64> = (0..3).map(|c| h.matrix[(s.t(), c)]).collect();
        assert_eq!(t, vec![1.0, 1.0, 0.0]);
        assert_eq!(h.matrix[(s.y(), 2)], 0.0);
        for i in 0..2 {
            assert_eq!(h.slice(s.x(), i), p.row(i));
            assert_eq!(h.matrix[(s.y(), i)], p.y[i]);
            assert_eq!(h.matrix[(s.one(), i)], 1.0);
        }
        assert_eq!(h.slice(s.x(), 2), p.query);
        assert!(embed_h(&p, 13).is_err());
    }

    #[test]
    fn slot_map_is_a_partition() {
        let s = SlotMap::new(3, 20).unwrap();
        let mut rows = [0usize; 20];
        let mut mark = |r: Range<usize>| r.for_each(|i| rows[i] += 1);
        mark(s.x());
        mark(s.y()..s.y() + 1);
        mark(s.beta());
        mark(s.neg_beta());
        mark(s.r()..s.r() + 1);
        mark(s.r_tilde()..s.r_tilde() + 1);
        mark(s.pad());
        mark(s.one()..s.one() + 1);
        mark(s.t()..s.t() + 1);
        mark(s.w()..s.w() + 1);
        assert!(rows.iter().all(|&c| c == 1));
        assert!(s.pad().contains(&s.signed_label()));
    }

    #[test]
    fn embed_e_hand_case() {
        let p = Prompt {
            x: DMatrix::from_row_slice(1, 1, &[1.0]),
            y: dv(&[2.0]),
            query: dv(&[3.0]),
            label: 0.0,
            assignments: vec![0, 0],
        };
        let e = embed_e(&p);
        assert_eq!(e.matrix, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 0.0]));
    }

    #[test]
    fn moments_examples() {
        let b = dv(&[0.6, 0.8]);
        let m = mixture_moments(&MoRModel::symmetric(b.clone(), 0.1).unwrap());
        assert_eq!(m.mean, DVector::zeros(2));
        assert!((m.second_moment.clone() - &b * b.transpose()).norm() < 1e-15);
        assert!((m.trace_second - 1.0).abs() < 1e-12);
        let one = mixture_moments(&MoRModel::new(vec![b.clone()], vec![1.0], 0.1).unwrap());
        assert_eq!(one.mean, b);
    }

    #[test]
    fn moments_match_empirical_draws() {
        let model = MoRModel::new(
            (0..4).map(|k| dv(&[k as f64 - 1.5, 0.5 * k as f64, 1.0])).collect(),
            vec![0.1, 0.2, 0.3, 0.4],
            0.0,
        )
        .unwrap();
        let mm = mixture_moments(&model);
        let pick = WeightedIndex::new(model.weights()).unwrap();
        let mut rng = child_rng(1, &[2]);
        let m = 1_000_000;
        let d = 3;
        let mut s1 = DVector::zeros(d);
        let mut s2 = DMatrix::zeros(d, d);
        let mut sq1 = DVector::zeros(d);
        for _ in 0..m {
            let b = &model.components()[pick.sample(&mut rng)];
            s1 += b;
            sq1 += b.component_mul(b);
            s2 += b * b.transpose();
        }
        let mf = m as f64;
        for j in 0..d {
            let mean = s1[j] / mf;
            let var = sq1[j] / mf - mean * mean;
            let se = (var / mf).sqrt();
            assert!((mean - mm.mean[j]).abs() < 3.0 * se + 1e-12);
        }
        assert!((s2 / mf - &mm.second_moment).amax() < 0.01);
        assert!((mm.trace_second - mm.second_moment.trace()).abs() < 1e-12);
    }

    #[test]
    fn model_round_trips_through_text() {
        let m = sample_model(3, 4, 0.25, false, 77).unwrap();
        let back = MoRModel::from_toml(&m.to_toml()).unwrap();
        assert_eq!(m, back);
    }

    proptest! {
        #[test]
        fn noiseless_residuals_vanish(seed in 0u64..1000, d in 1usize..6, k in 1usize..4) {
            let m = sample_model(d, k, 0.0, false, seed).unwrap();
            let p = sample_prompt(&m, 10, Mixing::PerSample, seed + 1).unwrap();
            for i in 0..p.n() {
                let b = &m.components()[p.assignments[i]];
                prop_assert_eq!(p.y[i] - p.row(i).dot(b), 0.0);
            }
        }

        #[test]
        fn snr_rotation_invariant(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU) {
            let m = sample_model(2, 3, 0.5, false, seed).unwrap();
            let (c, s) = (angle.cos(), angle.sin());
            let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let rotated = MoRModel::new(
                m.components().iter().map(|b| &rot * b).collect(),
                m.weights().to_vec(),
                0.5,
            ).unwrap();
            prop_assert!((snr(&m).unwrap() - snr(&rotated).unwrap()).abs() < 1e-10);
        }
    }
}
