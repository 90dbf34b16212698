//! Contrastive masked connectivity-strength loss.
//!
//! Regions whose mean absolute connectivity `C_i` is at or above the mean
//! form the positive set, the rest the negative set. A small perceptron
//! lifts each scalar `C_i` to a latent vector `h_i`; pairs inside the
//! positive set are pulled together under a row-wise softmax of cosine
//! similarities and pairs inside the negative set are pushed apart.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tape::{Tape, Var};
use crate::Matrix;

pub const LATENT_HIDDEN: usize = 8;
pub const LATENT_DIM: usize = 8;
pub const CMFC_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum CmfcError {
    #[error("zero-norm latent row {0}")]
    ZeroNormRow(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

type Result<T> = std::result::Result<T, CmfcError>;

#[derive(Debug, Clone, PartialEq)]
pub struct FcStrength {
    pub c: DVector<f64>,
    pub mu: f64,
    pub t: usize,
}

/// `C_i = (1/v) sum_j |A_ij|` and its mean.
pub fn fc_strength(a_dyn: &Matrix, t: usize) -> FcStrength {
    let v = a_dyn.nrows();
    let c = DVector::from_fn(v, |i, _| a_dyn.row(i).iter().map(|x| x.abs()).sum::<f64>() / v as f64);
    let mu = if v == 0 { 0.0 } else { c.sum() / v as f64 };
    FcStrength { c, mu, t }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastMasks {
    pub v: usize,
    pub pos_pairs: Vec<(usize, usize)>,
    pub neg_pairs: Vec<(usize, usize)>,
}

impl ContrastMasks {
    pub fn pos_matrix(&self) -> Matrix {
        pair_matrix(self.v, &self.pos_pairs)
    }

    pub fn neg_matrix(&self) -> Matrix {
        pair_matrix(self.v, &self.neg_pairs)
    }
}

fn pair_matrix(v: usize, pairs: &[(usize, usize)]) -> Matrix {
    let mut m = Matrix::zeros(v, v);
    for &(i, j) in pairs {
        m[(i, j)] = 1.0;
    }
    m
}

/// Ordered pairs `i != j` with both strengths `>= mu` (positive) or both
/// `< mu` (negative), in row-major order.
pub fn build_masks(strength: &FcStrength) -> ContrastMasks {
    let v = strength.c.len();
    let high: Vec<bool> = strength.c.iter().map(|&c| c >= strength.mu).collect();
    let mut pos_pairs = Vec::new();
    let mut neg_pairs = Vec::new();
    for i in 0..v {
        for j in 0..v {
            if i == j {
                continue;
            }
            match (high[i], high[j]) {
                (true, true) => pos_pairs.push((i, j)),
                (false, false) => neg_pairs.push((i, j)),
                _ => {}
            }
        }
    }
    ContrastMasks { v, pos_pairs, neg_pairs }
}

/// Latent vectors `h_i`, one row per region.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthLatent {
    pub h: Matrix,
}

impl StrengthLatent {
    pub fn row_norms(&self) -> DVector<f64> {
        DVector::from_fn(self.h.nrows(), |i, _| self.h.row(i).norm())
    }
}

/// `h = tanh(C w1 + b1) w2 + b2`, applied to each scalar strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthProjection {
    #[serde(with = "crate::linalg::matrix_serde")]
    pub w1: Matrix,
    #[serde(with = "crate::linalg::matrix_serde")]
    pub b1: Matrix,
    #[serde(with = "crate::linalg::matrix_serde")]
    pub w2: Matrix,
    #[serde(with = "crate::linalg::matrix_serde")]
    pub b2: Matrix,
}

/// Tape handles for the projection parameters.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl StrengthProjection {
    /// Xavier-uniform weights; biases uniform in `[-0.5, 0.5)` so the hidden
    /// units do not all pass through the origin.
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let w1 = xavier(rng, 1, LATENT_HIDDEN);
        let b1 = Matrix::from_fn(1, LATENT_HIDDEN, |_, _| rng.random_range(-0.5..0.5));
        let w2 = xavier(rng, LATENT_HIDDEN, LATENT_DIM);
        let b2 = Matrix::from_fn(1, LATENT_DIM, |_, _| rng.random_range(-0.5..0.5));
        Self { w1, b1, w2, b2 }
    }

    pub fn forward(&self, strength: &FcStrength) -> StrengthLatent {
        let c = Matrix::from_column_slice(strength.c.len(), 1, strength.c.as_slice());
        let mut hidden = c * &self.w1;
        for mut row in hidden.row_iter_mut() {
            row += &self.b1;
        }
        let hidden = hidden.map(f64::tanh);
        let mut h = hidden * &self.w2;
        for mut row in h.row_iter_mut() {
            row += &self.b2;
        }
        StrengthLatent { h }
    }

    pub fn leaves(&self, tape: &mut Tape) -> ProjectionVars {
        ProjectionVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    pub fn forward_tape(tape: &mut Tape, p: ProjectionVars, strength: &FcStrength) -> Var {
        let c = tape.constant(Matrix::from_column_slice(strength.c.len(), 1, strength.c.as_slice()));
        let pre = tape.matmul(c, p.w1);
        let pre = tape.add_row_broadcast(pre, p.b1);
        let hidden = tape.tanh(pre);
        let out = tape.matmul(hidden, p.w2);
        tape.add_row_broadcast(out, p.b2)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmfcLoss {
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_total: f64,
}

fn check_rows(h: &Matrix, masks: &ContrastMasks) -> Result<()> {
    if h.nrows() != masks.v {
        return Err(CmfcError::ShapeMismatch(format!("latent has {} rows, masks cover {}", h.nrows(), masks.v)));
    }
    for i in 0..h.nrows() {
        if h.row(i).norm() == 0.0 {
            return Err(CmfcError::ZeroNormRow(i));
        }
    }
    Ok(())
}

/// Row-softmax weights `P_ij = exp S_ij / (sum_k exp S_ik + eps)` over
/// cosine similarities.
fn softmax_weights(h: &Matrix) -> Matrix {
    let v = h.nrows();
    let norms: Vec<f64> = (0..v).map(|i| h.row(i).norm()).collect();
    let s = Matrix::from_fn(v, v, |i, j| h.row(i).dot(&h.row(j)) / (norms[i] * norms[j]));
    let e = s.map(f64::exp);
    let denom: Vec<f64> = (0..v).map(|i| e.row(i).sum() + CMFC_EPSILON).collect();
    Matrix::from_fn(v, v, |i, j| e[(i, j)] / denom[i])
}

/// Loss values for one segment. An empty mask set contributes zero.
pub fn cmfc(latent: &StrengthLatent, masks: &ContrastMasks) -> Result<CmfcLoss> {
    check_rows(&latent.h, masks)?;
    let p = softmax_weights(&latent.h);
    let l_pos = if masks.pos_pairs.is_empty() {
        0.0
    } else {
        -masks.pos_pairs.iter().map(|&(i, j)| p[(i, j)].ln()).sum::<f64>() / masks.pos_pairs.len() as f64
    };
    let l_neg = if masks.neg_pairs.is_empty() {
        0.0
    } else {
        -masks.neg_pairs.iter().map(|&(i, j)| (1.0 - p[(i, j)]).ln()).sum::<f64>() / masks.neg_pairs.len() as f64
    };
    Ok(CmfcLoss { l_pos, l_neg, l_total: l_pos + l_neg })
}

/// Same loss recorded on a tape; returns `(l_pos, l_neg)` nodes.
pub fn cmfc_tape(tape: &mut Tape, h: Var, masks: &ContrastMasks) -> Result<(Var, Var)> {
    check_rows(tape.value(h), masks)?;
    let sq = tape.hadamard(h, h);
    let norm2 = tape.row_sums(sq);
    let inv_norm = tape.pow_const(norm2, -0.5);
    let ht = tape.transpose(h);
    let gram = tape.matmul(h, ht);
    let s = tape.row_scale(gram, inv_norm);
    let s = tape.col_scale(s, inv_norm);
    let e = tape.exp(s);
    let denom = tape.row_sums(e);
    let denom = tape.add_const(denom, CMFC_EPSILON);
    let inv_denom = tape.recip(denom);
    let p = tape.row_scale(e, inv_denom);

    let l_pos = if masks.pos_pairs.is_empty() {
        tape.scalar(0.0)
    } else {
        let lp = tape.ln(p);
        let total = tape.masked_sum(lp, masks.pos_matrix());
        tape.scale(total, -1.0 / masks.pos_pairs.len() as f64)
    };
    let l_neg = if masks.neg_pairs.is_empty() {
        tape.scalar(0.0)
    } else {
        let neg_p = tape.scale(p, -1.0);
        let one_minus = tape.add_const(neg_p, 1.0);
        let lq = tape.ln(one_minus);
        let total = tape.masked_sum(lq, masks.neg_matrix());
        tape.scale(total, -1.0 / masks.neg_pairs.len() as f64)
    };
    Ok((l_pos, l_neg))
}
