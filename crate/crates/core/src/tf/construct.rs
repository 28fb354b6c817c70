//! Assembly of the EM-emulating stack.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::layer::{Activation, AttnHead, AttnLayer};
use super::primitive::Primitive;
use crate::data::{embed_h, EmbeddingH, Prompt, SlotMap};
use crate::error::{Error, Result};
use crate::linalg::op_norm;

/// Masking constant: scores of masked pairs are shifted by −MASK_R.
pub const MASK_R: f64 = 1e6;

/// ReLU-sum representation Σ c_m·relu(a_m s + b_m t + d_m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluSum {
    pub terms: [(f64, f64, f64, f64); 4],
}

impl ReluSum {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.terms.iter().map(|&(c, a, b, d)| c * (a * s + b * t + d).max(0.0)).sum()
    }

    pub fn coef_l1(&self) -> f64 {
        self.terms.iter().map(|t| t.0.abs()).sum()
    }
}

/// Exact ReLU form of ∂_s[w(s−t)² + (1−w)(s+t)²] = 2w(s−t) + 2(1−w)(s+t).
pub fn relu_decompose(w: f64) -> ReluSum {
    let v = 1.0 - w;
    ReluSum {
        terms: [
            (4.0 * w, 0.5, -0.5, 0.0),
            (-4.0 * w, -0.5, 0.5, 0.0),
            (4.0 * v, 0.5, 0.5, 0.0),
            (-4.0 * v, -0.5, -0.5, 0.0),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Attn(AttnLayer),
    Prim(Primitive),
}

impl Stage {
    fn apply(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Stage::Attn(l) => l.apply(h),
            Stage::Prim(p) => p.apply(h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackMeta {
    pub d: usize,
    pub height: usize,
    /// Prompt length the value scales were built for.
    pub n: usize,
    pub t_steps: usize,
    pub outer: usize,
    pub alpha: f64,
    pub theta: f64,
    pub pis: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfStack {
    pub stages: Vec<Stage>,
    /// Stage count after each outer loop.
    pub loop_ends: Vec<usize>,
    pub meta: StackMeta,
}

impl TfStack {
    pub fn layer_count(&self) -> usize {
        self.stages.len()
    }

    /// Layer kinds, head counts and slot footprints, one line per layer.
    pub fn describe(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "stack d={} D={} n={} T={} T0={} alpha={} theta={} layers={}",
            m.d,
            m.height,
            m.n,
            m.t_steps,
            m.outer,
            m.alpha,
            m.theta,
            self.layer_count()
        );
        for (i, st) in self.stages.iter().enumerate() {
            match st {
                Stage::Attn(l) => {
                    let writes: Vec<usize> = (0..m.height)
                        .filter(|&r| l.heads.iter().any(|h| h.v.row(r).iter().any(|&v| v != 0.0)))
                        .collect();
                    let reads: Vec<usize> = (0..m.height)
                        .filter(|&c| {
                            l.heads.iter().any(|h| {
                                h.q.column(c).iter().chain(h.k.column(c).iter()).chain(h.v.column(c).iter()).any(|&v| v != 0.0)
                            })
                        })
                        .collect();
                    let _ = writeln!(s, "{i:4} attn {:?} heads={} reads={reads:?} writes={writes:?}", l.activation, l.heads.len());
                }
                Stage::Prim(p) => {
                    let (r, w) = p.footprint();
                    let _ = writeln!(s, "{i:4} prim {} reads={r:?} writes={w:?}", p.kind());
                }
            }
        }
        s
    }
}

/// E-step: write w_i = weight_two(β, x_i, y_i, ϑ) into the w slot of every
/// training column, plus the signed label (2w_i − 1)·y′_i.
pub fn build_estep_layers(theta: f64, slots: &SlotMap, n: usize) -> Result<Vec<Primitive>> {
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!("ϑ = {theta}")));
    }
    let d = slots.d;
    let cols = 0..n;
    let nb = slots.neg_beta();
    let (y, r, rt, w, sl) = (slots.y(), slots.r(), slots.r_tilde(), slots.w(), slots.signed_label());
    let fit: Vec<(usize, f64)> = nb.clone().map(|k| (k, 1.0)).collect();
    let mut plus = vec![(y, 1.0)];
    plus.extend(fit.iter().copied());
    let mut minus = vec![(y, 1.0)];
    minus.extend(fit.iter().map(|&(k, c)| (k, -c)));
    let q = -1.0 / (2.0 * theta * theta);
    Ok(vec![
        Primitive::CopyDown { src: slots.beta(), dst: nb.start, scale: -1.0, cols: cols.clone() },
        Primitive::Mul { a: slots.x().start, b: nb.start, dst: nb.start, len: d, scale: 1.0, cols: cols.clone() },
        // r = y − xᵀβ, r̃ = y + xᵀβ
        Primitive::Affine { terms: plus, bias: 0.0, dst: r, cols: cols.clone() },
        Primitive::Affine { terms: minus, bias: 0.0, dst: rt, cols: cols.clone() },
        Primitive::Mul { a: r, b: r, dst: r, len: 1, scale: q, cols: cols.clone() },
        Primitive::Mul { a: rt, b: rt, dst: rt, len: 1, scale: q, cols: cols.clone() },
        Primitive::Soft { src: r..rt + 1, dst: r, cols: cols.clone() },
        Primitive::CopyDown { src: r..r + 1, dst: w, scale: 1.0, cols: cols.clone() },
        Primitive::Affine { terms: vec![(w, 2.0)], bias: -1.0, dst: sl, cols: cols.clone() },
        Primitive::Mul { a: sl, b: y, dst: sl, len: 1, scale: 1.0, cols: cols.clone() },
        Primitive::Clear { rows: nb.start..rt + 1, cols },
    ])
}

/// Two-head layer adding (x_iᵀb − y′_i) to the query's y′ slot, where
/// b = `coef`·β; training columns are masked through −R·t_i.
fn readout_layer(slots: &SlotMap, n_cols: usize, coef: f64) -> AttnLayer {
    let dim = slots.height;
    let nf = n_cols as f64;
    let heads = [1.0, -1.0]
        .iter()
        .map(|&sign| {
            let mut h = AttnHead::zeros(dim);
            // Q h_j = [coef·β_j; 1; 1]
            for (row, b) in slots.beta().enumerate() {
                h.q[(row, b)] = coef;
            }
            h.q[(slots.d, slots.one())] = 1.0;
            h.q[(slots.d + 1, slots.one())] = 1.0;
            // K h_i = [±x_i; ∓y′_i; −R·t_i]
            for (row, x) in slots.x().enumerate() {
                h.k[(row, x)] = sign;
            }
            h.k[(slots.d, slots.y())] = -sign;
            h.k[(slots.d + 1, slots.t())] = -MASK_R;
            h.v[(slots.y(), slots.one())] = sign * nf;
            h
        })
        .collect();
    AttnLayer { heads, activation: Activation::NormalizedRelu }
}

/// T gradient layers β ← β − (α/2)∇L̂_n(β) followed by the query readout.
///
/// Each gradient layer uses the identity relu(z) − relu(−z) = z with
/// z = ½(x_jᵀβ − ỹ_j) and ỹ_j = (2w_j − 1)y′_j, so the ReLU sum equals
/// relu_decompose(w_j) evaluated at (x_jᵀβ, y′_j) up to the factor 4.
pub fn build_mstep_layers(t_steps: usize, alpha: f64, slots: &SlotMap, n: usize) -> Result<Vec<AttnLayer>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("α = {alpha} outside (0, 1)")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let dim = slots.height;
    let d = slots.d;
    let big_n = (n + 1) as f64;
    let kappa = -2.0 * alpha * big_n * big_n / n as f64;
    let mut layers = Vec::with_capacity(t_steps + 1);
    for _ in 0..t_steps {
        let heads = [1.0, -1.0]
            .iter()
            .map(|&sign| {
                let mut h = AttnHead::zeros(dim);
                // Q h_j = [x_j; ỹ_j; 1 − t_j]
                for (row, x) in slots.x().enumerate() {
                    h.q[(row, x)] = 1.0;
                }
                h.q[(d, slots.signed_label())] = 1.0;
                h.q[(d + 1, slots.one())] = 1.0;
                h.q[(d + 1, slots.t())] = -1.0;
                // K h_i = [±½β_i; ∓½; −R]
                for (row, b) in slots.beta().enumerate() {
                    h.k[(row, b)] = 0.5 * sign;
                }
                h.k[(d, slots.one())] = -0.5 * sign;
                h.k[(d + 1, slots.one())] = -MASK_R;
                // V h_j = ±κ·x_j into the beta rows
                for (b, x) in slots.beta().zip(slots.x()) {
                    h.v[(b, x)] = sign * kappa;
                }
                h
            })
            .collect();
        layers.push(AttnLayer { heads, activation: Activation::NormalizedRelu });
    }
    layers.push(readout_layer(slots, n + 1, 1.0));
    Ok(layers)
}

/// [E-step; M-step] × T₀ followed by the β̂^OR = (π₁ − π₂)β readout.
#[allow(clippy::too_many_arguments)]
pub fn build_em_transformer(t_steps: usize, outer: usize, alpha: f64, theta: f64, d: usize, height: usize, n: usize) -> Result<TfStack> {
    let slots = SlotMap::new(d, height)?;
    let estep = build_estep_layers(theta, &slots, n)?;
    let mstep = build_mstep_layers(t_steps, alpha, &slots, n)?;
    let pis = (0.5, 0.5);
    let mut stages = Vec::new();
    let mut loop_ends = Vec::with_capacity(outer);
    for _ in 0..outer {
        stages.extend(estep.iter().cloned().map(Stage::Prim));
        stages.extend(mstep.iter().cloned().map(Stage::Attn));
        loop_ends.push(stages.len());
    }
    stages.push(Stage::Attn(readout_layer(&slots, n + 1, pis.0 - pis.1)));
    Ok(TfStack {
        stages,
        loop_ends,
        meta: StackMeta { d, height, n, t_steps, outer, alpha, theta, pis },
    })
}

fn check_input(tf: &TfStack, h: &EmbeddingH) -> Result<()> {
    let m = &tf.meta;
    if h.slots.d != m.d || h.slots.height != m.height || h.n() != m.n {
        return Err(Error::Layout(format!(
            "stack built for (d, D, n) = ({}, {}, {}), embedding is ({}, {}, {})",
            m.d,
            m.height,
            m.n,
            h.slots.d,
            h.slots.height,
            h.n()
        )));
    }
    Ok(())
}

pub fn tf_forward(tf: &TfStack, h: &EmbeddingH) -> Result<EmbeddingH> {
    check_input(tf, h)?;
    let mut m = h.matrix.clone();
    for st in &tf.stages {
        m = st.apply(&m)?;
    }
    Ok(EmbeddingH { matrix: m, slots: h.slots })
}

/// Embeddings after each outer loop (before the final readout).
pub fn tf_forward_trace(tf: &TfStack, h: &EmbeddingH) -> Result<Vec<EmbeddingH>> {
    check_input(tf, h)?;
    let mut m = h.matrix.clone();
    let mut out = Vec::with_capacity(tf.loop_ends.len());
    let mut ends = tf.loop_ends.iter().peekable();
    for (i, st) in tf.stages.iter().enumerate() {
        m = st.apply(&m)?;
        if ends.peek() == Some(&&(i + 1)) {
            ends.next();
            out.push(EmbeddingH { matrix: m.clone(), slots: h.slots });
        }
    }
    Ok(out)
}

/// y′ slot of the query column.
pub fn read_y(h: &EmbeddingH) -> f64 {
    h.matrix[(h.slots.y(), h.query_col())]
}

/// Beta slot of the query column.
pub fn read_beta(h: &EmbeddingH) -> DVector<f64> {
    h.slice(h.slots.beta(), h.query_col())
}

pub use crate::lsa::clip;

/// ½[y_{n+1} − clip_R(read_y(TF(H)))]², with β⁽⁰⁾ written into every column.
pub fn icl_loss(tf: &TfStack, prompt: &Prompt, init: &DVector<f64>, r: f64) -> Result<f64> {
    let mut h = embed_h(prompt, tf.meta.height)?;
    h.set_beta(init);
    let out = tf_forward(tf, &h)?;
    Ok(0.5 * (prompt.label - clip(read_y(&out), r)).powi(2))
}

/// max over attention layers of (max_m max(‖Q_m‖, ‖K_m‖) + Σ_m ‖V_m‖).
pub fn tf_norm(tf: &TfStack) -> f64 {
    tf.stages
        .iter()
        .filter_map(|s| match s {
            Stage::Attn(l) => Some(layer_norm(l)),
            Stage::Prim(_) => None,
        })
        .fold(0.0, f64::max)
}

fn layer_norm(l: &AttnLayer) -> f64 {
    let qk = l.heads.iter().map(|h| op_norm(&h.q).max(op_norm(&h.k))).fold(0.0, f64::max);
    qk + l.heads.iter().map(|h| op_norm(&h.v)).sum::<f64>()
}
