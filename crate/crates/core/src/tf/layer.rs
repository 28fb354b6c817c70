use nalgebra::DMatrix;

use crate::data::EmbeddingH;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// t ↦ max(t, 0)/N.
    NormalizedRelu,
    /// Column-wise softmax over the aggregated index.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnHead {
    pub v: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl AttnHead {
    pub fn zeros(dim: usize) -> Self {
        Self { v: DMatrix::zeros(dim, dim), q: DMatrix::zeros(dim, dim), k: DMatrix::zeros(dim, dim) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnLayer {
    pub heads: Vec<AttnHead>,
    pub activation: Activation,
}

impl AttnLayer {
    pub fn dim(&self) -> Option<usize> {
        self.heads.first().map(|h| h.v.nrows())
    }

    /// H + (1/N) Σ_m (V_m H)·σ((Q_m H)ᵀ(K_m H)).
    ///
    /// Column i of the output aggregates V_m h_j weighted by σ(⟨Q_m h_j, K_m h_i⟩).
    pub fn apply(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dim = h.nrows();
        let n = h.ncols();
        let nf = n as f64;
        let mut out = h.clone();
        for (m, head) in self.heads.iter().enumerate() {
            for (name, mat) in [("V", &head.v), ("Q", &head.q), ("K", &head.k)] {
                if mat.nrows() != dim || mat.ncols() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "head {m}: {name} is {}×{}, embedding height {dim}",
                        mat.nrows(),
                        mat.ncols()
                    )));
                }
            }
            let mut scores = (&head.q * h).tr_mul(&(&head.k * h));
            match self.activation {
                Activation::NormalizedRelu => scores.apply(|s| *s = s.max(0.0) / nf),
                Activation::Softmax => {
                    for mut col in scores.column_iter_mut() {
                        let mx = col.max();
                        col.apply(|s| *s = (*s - mx).exp());
                        let z = col.sum();
                        col /= z;
                    }
                }
            }
            out += (&head.v * h) * scores / nf;
        }
        Ok(out)
    }
}

pub fn attention_forward(h: &EmbeddingH, layer: &AttnLayer) -> Result<EmbeddingH> {
    Ok(EmbeddingH { matrix: layer.apply(&h.matrix)?, slots: h.slots })
}
