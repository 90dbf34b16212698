//! Small dense helpers shared by the numeric modules.

use nalgebra::DVector;

use crate::Matrix;

/// Singular values below `PINV_RTOL * sigma_max` are treated as zero.
pub const PINV_RTOL: f64 = 1e-10;

/// Result of a truncated Moore-Penrose pseudoinverse.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub pinv: Matrix,
    /// `sigma_max / sigma_min` over all singular values (infinite when the
    /// smallest is zero).
    pub condition: f64,
    pub rank: usize,
}

/// Pseudoinverse through a thin SVD, truncating relative to the largest
/// singular value.
pub fn pseudo_inverse(m: &Matrix) -> PseudoInverse {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return PseudoInverse { pinv: Matrix::zeros(cols, rows), condition: f64::INFINITY, rank: 0 };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;
    let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let s_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cutoff = PINV_RTOL * s_max;

    let mut pinv = Matrix::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in sv.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        rank += 1;
        // pinv += v_i * u_i^T / s
        let vi = v_t.row(i).transpose();
        let ui = u.column(i);
        pinv += (vi * ui.transpose()) / s;
    }
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    PseudoInverse { pinv, condition, rank }
}

/// Largest singular value with its left and right singular vectors, from a
/// full SVD.
pub fn top_singular_triplet(m: &Matrix) -> (f64, DVector<f64>, DVector<f64>) {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let sv = &svd.singular_values;
    let mut best = 0;
    for i in 1..sv.len() {
        if sv[i] > sv[best] {
            best = i;
        }
    }
    if sv.is_empty() {
        return (0.0, DVector::zeros(rows), DVector::zeros(cols));
    }
    let u = svd.u.as_ref().expect("u requested").column(best).into_owned();
    let v = svd.v_t.as_ref().expect("v_t requested").row(best).transpose();
    (sv[best], u, v)
}

/// Largest singular value from a full SVD.
pub fn spectral_norm_svd(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

/// `max |m_ij - m_ji|`.
pub fn max_asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// `P m P^T` for the permutation sending old index `perm[i]` to new index `i`.
pub fn permute_symmetric(m: &Matrix, perm: &[usize]) -> Matrix {
    let n = perm.len();
    Matrix::from_fn(n, n, |i, j| m[(perm[i], perm[j])])
}

/// Row permutation: row `i` of the result is row `perm[i]` of `m`.
pub fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(perm.len(), m.ncols(), |i, j| m[(perm[i], j)])
}

/// `C(n, k)` computed exactly in 128-bit integers.
pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Serde adapter storing a matrix as `{rows, cols, data}` with `data` in
/// row-major order.
pub mod matrix_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::Matrix;

    #[derive(Serialize, Deserialize)]
    struct Record {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
        Record { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let r = Record::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                r.data.len(),
                r.rows,
                r.cols
            )));
        }
        Ok(Matrix::from_row_slice(r.rows, r.cols, &r.data))
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        use crate::Matrix;

        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] Matrix);

        pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
            let w: Vec<Wrap> = ms.iter().cloned().map(Wrap).collect();
            w.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
            Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_row() {
        let row: Vec<u128> = (0..=6).map(|k| binomial(6, k)).collect();
        assert_eq!(row, vec![1, 6, 15, 20, 15, 6, 1]);
        assert_eq!(binomial(64, 32), 1_832_624_140_942_590_534);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn pinv_of_invertible_is_inverse() {
        let m = Matrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 4.0]);
        let p = pseudo_inverse(&m);
        assert_eq!(p.rank, 3);
        let id = &m * &p.pinv;
        assert!((id - Matrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn pinv_truncates_rank_deficient() {
        // second row is twice the first
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let p = pseudo_inverse(&m);
        assert_eq!(p.rank, 1);
        assert!(p.condition.is_infinite() || p.condition > 1e12);
        // Penrose identity m p m = m
        assert!((&m * &p.pinv * &m - &m).abs().max() < 1e-12);
    }
}
