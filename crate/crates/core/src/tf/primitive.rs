//! Exact column-wise primitives used for the E-step.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::data::EmbeddingH;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// h[dst + t] ← scale·h[src.start + t], with dst ≥ src.end.
    CopyDown { src: Range<usize>, dst: usize, scale: f64, cols: Range<usize> },
    /// h_i[dst + t] ← h_{i−1}[src.start + t] (column 0 is left alone).
    CopyOver { src: Range<usize>, dst: usize, cols: Range<usize> },
    /// h[dst + t] ← scale·h[a + t]·h[b + t] for t < len.
    Mul { a: usize, b: usize, dst: usize, len: usize, scale: f64, cols: Range<usize> },
    /// h_i[dst + t] ← scale·Σ_{j ∈ over} h_j[weight]·h_j[src.start + t].
    ScaledAgg { src: Range<usize>, weight: usize, dst: usize, scale: f64, over: Range<usize>, cols: Range<usize> },
    /// h[dst + t] ← exp(h[src.start + t]) / Σ_t′ exp(h[src.start + t′]).
    Soft { src: Range<usize>, dst: usize, cols: Range<usize> },
    /// h[dst] ← bias + Σ c·h[row].
    Affine { terms: Vec<(usize, f64)>, bias: f64, dst: usize, cols: Range<usize> },
    /// h[rows] ← 0.
    Clear { rows: Range<usize>, cols: Range<usize> },
}

impl Primitive {
    pub fn kind(&self) -> &'static str {
        match self {
            Primitive::CopyDown { .. } => "copy_down",
            Primitive::CopyOver { .. } => "copy_over",
            Primitive::Mul { .. } => "mul",
            Primitive::ScaledAgg { .. } => "scaled_agg",
            Primitive::Soft { .. } => "soft",
            Primitive::Affine { .. } => "affine",
            Primitive::Clear { .. } => "clear",
        }
    }

    /// (rows read, rows written) for the audit report.
    pub fn footprint(&self) -> (Vec<usize>, Range<usize>) {
        match self {
            Primitive::CopyDown { src, dst, .. } | Primitive::CopyOver { src, dst, .. } => {
                (src.clone().collect(), *dst..dst + src.len())
            }
            Primitive::Mul { a, b, dst, len, .. } => ((*a..a + len).chain(*b..b + len).collect(), *dst..dst + len),
            Primitive::ScaledAgg { src, weight, dst, .. } => {
                (src.clone().chain(std::iter::once(*weight)).collect(), *dst..dst + src.len())
            }
            Primitive::Soft { src, dst, .. } => (src.clone().collect(), *dst..dst + src.len()),
            Primitive::Affine { terms, dst, .. } => (terms.iter().map(|t| t.0).collect(), *dst..dst + 1),
            Primitive::Clear { rows, .. } => (Vec::new(), rows.clone()),
        }
    }

    fn cols(&self) -> &Range<usize> {
        match self {
            Primitive::CopyDown { cols, .. }
            | Primitive::CopyOver { cols, .. }
            | Primitive::Mul { cols, .. }
            | Primitive::ScaledAgg { cols, .. }
            | Primitive::Soft { cols, .. }
            | Primitive::Affine { cols, .. }
            | Primitive::Clear { cols, .. } => cols,
        }
    }

    fn check(&self, rows: usize, ncols: usize) -> Result<()> {
        let (read, write) = self.footprint();
        let bad_row = read.iter().any(|&r| r >= rows) || write.end > rows;
        let c = self.cols();
        let bad_col = c.end > ncols || matches!(self, Primitive::ScaledAgg { over, .. } if over.end > ncols);
        if bad_row || bad_col {
            return Err(Error::IndexOutOfRange(format!("{} touches rows {read:?}/{write:?}, cols {c:?} of a {rows}×{ncols} embedding", self.kind())));
        }
        if let Primitive::CopyDown { src, dst, .. } = self {
            if *dst < src.end {
                return Err(Error::IndexOutOfRange(format!("copy_down target {dst} overlaps source {src:?}")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(h.nrows(), h.ncols())?;
        let mut out = h.clone();
        match self {
            Primitive::CopyDown { src, dst, scale, cols } => {
                for i in cols.clone() {
                    for (t, r) in src.clone().enumerate() {
                        out[(dst + t, i)] = scale * h[(r, i)];
                    }
                }
            }
            Primitive::CopyOver { src, dst, cols } => {
                for i in cols.clone().filter(|&i| i > 0) {
                    for (t, r) in src.clone().enumerate() {
                        out[(dst + t, i)] = h[(r, i - 1)];
                    }
                }
            }
            Primitive::Mul { a, b, dst, len, scale, cols } => {
                for i in cols.clone() {
                    for t in 0..*len {
                        out[(dst + t, i)] = scale * h[(a + t, i)] * h[(b + t, i)];
                    }
                }
            }
            Primitive::ScaledAgg { src, weight, dst, scale, over, cols } => {
                for (t, r) in src.clone().enumerate() {
                    let s: f64 = over.clone().map(|j| h[(*weight, j)] * h[(r, j)]).sum();
                    for i in cols.clone() {
                        out[(dst + t, i)] = scale * s;
                    }
                }
            }
            Primitive::Soft { src, dst, cols } => {
                for i in cols.clone() {
                    let mx = src.clone().map(|r| h[(r, i)]).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = src.clone().map(|r| (h[(r, i)] - mx).exp()).sum();
                    for (t, r) in src.clone().enumerate() {
                        out[(dst + t, i)] = (h[(r, i)] - mx).exp() / z;
                    }
                }
            }
            Primitive::Affine { terms, bias, dst, cols } => {
                for i in cols.clone() {
                    out[(*dst, i)] = bias + terms.iter().map(|&(r, c)| c * h[(r, i)]).sum::<f64>();
                }
            }
            Primitive::Clear { rows, cols } => {
                for i in cols.clone() {
                    for r in rows.clone() {
                        out[(r, i)] = 0.0;
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn apply_primitive(h: &EmbeddingH, p: &Primitive) -> Result<EmbeddingH> {
    Ok(EmbeddingH { matrix: p.apply(&h.matrix)?, slots: h.slots })
}
