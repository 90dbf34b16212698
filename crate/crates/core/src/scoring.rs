//! Per-region predictive scores.
//!
//! `g_i = (1/v) sum_j <Z_j, Z_i>` and `s_i = ||h_i|| * sigmoid(g_i)`.

use nalgebra::DVector;
use thiserror::Error;

use crate::cmfc::StrengthLatent;
use crate::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("zero-norm latent row {0}")]
    ZeroNormRow(usize),
    #[error("latent has {latent} rows but embedding has {embedding}")]
    ShapeMismatch { latent: usize, embedding: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    pub s: DVector<f64>,
    /// Regions sorted by descending score, ties to the lower index.
    pub rank: Vec<usize>,
}

impl NodeScores {
    pub fn from_scores(s: DVector<f64>) -> Self {
        let rank = rank_descending(s.as_slice());
        Self { s, rank }
    }

    /// 1-based position of `region` in the ranking.
    pub fn position(&self, region: usize) -> usize {
        self.rank.iter().position(|&r| r == region).expect("rank is a permutation") + 1
    }

    pub fn argmax(&self) -> usize {
        self.rank[0]
    }
}

pub fn rank_descending(s: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn node_scores(latent: &StrengthLatent, z: &Matrix) -> Result<NodeScores, ScoringError> {
    let v = latent.h.nrows();
    if z.nrows() != v {
        return Err(ScoringError::ShapeMismatch { latent: v, embedding: z.nrows() });
    }
    let norms = latent.row_norms();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(ScoringError::ZeroNormRow(i));
    }
    // sum_j Z_j is shared by every g_i.
    let col_sum = DVector::from_fn(z.ncols(), |c, _| z.column(c).sum());
    let s = DVector::from_fn(v, |i, _| {
        let g = z.row(i).transpose().dot(&col_sum) / v as f64;
        norms[i] * logistic(g)
    });
    Ok(NodeScores::from_scores(s))
}
