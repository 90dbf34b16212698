//! Static, per-segment and ODE-effective connectivity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::pseudo_inverse;
use crate::{standardize_age, Matrix};

/// Condition numbers above this trigger a rank-deficiency warning.
pub const CONDITION_WARN: f64 = 1e12;
pub const DEFAULT_SEGMENTS: usize = 2;
pub const DEFAULT_ETA: f64 = 1.0;
pub const DEFAULT_RHO: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum FcError {
    #[error("zero-variance region {region}")]
    ZeroVariance { region: usize },
    #[error("need at least {min} samples, got {found}")]
    TooShort { min: usize, found: usize },
    #[error("n_segments must be >= 1")]
    NoSegments,
    #[error("{n} segments too many for T={t} (need T >= 2n)")]
    TooManySegments { n: usize, t: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid ODE parameters: {0}")]
    InvalidParams(String),
}

type Result<T> = std::result::Result<T, FcError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConnectivityKind {
    StaticPearson,
    SegmentPearson(usize),
    OdeEffective(usize),
}

impl ConnectivityKind {
    /// File stem used when matrices are dumped to disk.
    pub fn file_stem(&self) -> String {
        match self {
            ConnectivityKind::StaticPearson => "static".to_string(),
            ConnectivityKind::SegmentPearson(t) => format!("seg{t}_pearson"),
            ConnectivityKind::OdeEffective(t) => format!("seg{t}_ode"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    pub data: Matrix,
    pub kind: ConnectivityKind,
    pub v: usize,
}

/// Parameters of the discretised ODE `dX = eta*A*X + rho*theta*X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeParams {
    pub eta: f64,
    pub rho: f64,
    /// Always `1 / eta`.
    pub phi: f64,
    /// Age in years; standardised internally.
    pub theta: f64,
}

impl OdeParams {
    pub fn new(eta: f64, rho: f64, theta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(FcError::InvalidParams(format!("eta must be positive, got {eta}")));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(FcError::InvalidParams(format!("rho must lie in (0, 1], got {rho}")));
        }
        if !theta.is_finite() || theta < 0.0 {
            return Err(FcError::InvalidParams(format!("theta must be finite and non-negative, got {theta}")));
        }
        Ok(Self { eta, rho, phi: 1.0 / eta, theta })
    }

    pub fn with_defaults(theta: f64) -> Result<Self> {
        Self::new(DEFAULT_ETA, DEFAULT_RHO, theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicBackend {
    #[default]
    Pearson,
    Ode,
}

impl fmt::Display for DynamicBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DynamicBackend::Pearson => "pearson",
            DynamicBackend::Ode => "ode",
        })
    }
}

impl FromStr for DynamicBackend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pearson" => Ok(DynamicBackend::Pearson),
            "ode" => Ok(DynamicBackend::Ode),
            other => Err(format!("unknown dynamic backend `{other}` (expected pearson|ode)")),
        }
    }
}

fn pearson_matrix(signal: &Matrix) -> Result<Matrix> {
    let (v, t) = signal.shape();
    if t < 3 {
        return Err(FcError::TooShort { min: 3, found: t });
    }
    let n = t as f64;
    let mut z = signal.clone();
    let mut ss = Vec::with_capacity(v);
    for r in 0..v {
        let mean = z.row(r).sum() / n;
        z.row_mut(r).add_scalar_mut(-mean);
        let s = z.row(r).dot(&z.row(r));
        if s <= 0.0 {
            return Err(FcError::ZeroVariance { region: r });
        }
        ss.push(s);
    }
    // sqrt(s * s) == s exactly, so identical rows give exactly 1.
    let mut out = Matrix::identity(v, v);
    for i in 0..v {
        for j in (i + 1)..v {
            let r = (z.row(i).dot(&z.row(j)) / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0);
            out[(i, j)] = r;
            out[(j, i)] = r;
        }
    }
    Ok(out)
}

/// Sample Pearson correlation between every pair of rows.
pub fn pearson_fc(signal: &Matrix) -> Result<ConnectivityMatrix> {
    let data = pearson_matrix(signal)?;
    Ok(ConnectivityMatrix { v: data.nrows(), data, kind: ConnectivityKind::StaticPearson })
}

/// Pearson correlation of one segment, tagged with its index.
pub fn segment_pearson(segment: &Matrix, index: usize) -> Result<ConnectivityMatrix> {
    let data = pearson_matrix(segment)?;
    Ok(ConnectivityMatrix { v: data.nrows(), data, kind: ConnectivityKind::SegmentPearson(index) })
}

/// Splits columns into `n_segments` contiguous windows of `T / n` samples;
/// the last window takes the remainder.
pub fn segment_series(signal: &Matrix, n_segments: usize) -> Result<Vec<Matrix>> {
    if n_segments == 0 {
        return Err(FcError::NoSegments);
    }
    let t = signal.ncols();
    if t < 2 * n_segments {
        return Err(FcError::TooManySegments { n: n_segments, t });
    }
    let width = t / n_segments;
    Ok((0..n_segments)
        .map(|s| {
            let start = s * width;
            let len = if s + 1 == n_segments { t - start } else { width };
            signal.columns(start, len).into_owned()
        })
        .collect())
}

/// Solves `X' - X = eta*A*X + rho*theta*X` for `A` with a right
/// pseudoinverse of `X`. Ill-conditioned `X` only logs a warning; the
/// result is then the minimum-norm least-squares solution.
pub fn effective_connectivity(
    x_t: &Matrix,
    x_next: &Matrix,
    params: &OdeParams,
    segment_index: usize,
) -> Result<ConnectivityMatrix> {
    if x_t.shape() != x_next.shape() {
        return Err(FcError::ShapeMismatch(format!("X(t) is {:?} but X(t+1) is {:?}", x_t.shape(), x_next.shape())));
    }
    let v = x_t.nrows();
    let theta = standardize_age(params.theta);
    let pinv = pseudo_inverse(x_t);
    if pinv.condition > CONDITION_WARN {
        log::warn!(
            "fc_builder: X(t) of segment {segment_index} is numerically rank-deficient (condition {:.3e}, rank {}/{v})",
            pinv.condition,
            pinv.rank
        );
    }
    let drive = x_next - x_t - x_t * (params.rho * theta);
    let data = (drive * &pinv.pinv) * params.phi;
    Ok(ConnectivityMatrix { data, kind: ConnectivityKind::OdeEffective(segment_index), v })
}

/// Per-segment dynamic matrices `A^d(t)` for the selected backend. The ODE
/// backend pairs consecutive samples inside each segment.
pub fn dynamic_connectivity(
    signal: &Matrix,
    n_segments: usize,
    backend: DynamicBackend,
    params: &OdeParams,
) -> Result<Vec<ConnectivityMatrix>> {
    let segments = segment_series(signal, n_segments)?;
    segments
        .iter()
        .enumerate()
        .map(|(t, seg)| match backend {
            DynamicBackend::Pearson => segment_pearson(seg, t),
            DynamicBackend::Ode => {
                let len = seg.ncols();
                let x_t = seg.columns(0, len - 1).into_owned();
                let x_next = seg.columns(1, len - 1).into_owned();
                effective_connectivity(&x_t, &x_next, params, t)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_asymmetry, permute_rows, permute_symmetric};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for k in 0..x.len() {
            cov += (x[k] - mx) * (y[k] - my);
            vx += (x[k] - mx).powi(2);
            vy += (y[k] - my).powi(2);
        }
        cov / (vx.sqrt() * vy.sqrt())
    }

    #[test]
    fn identical_and_negated_rows() {
        let mut m = random(3, 20, 1);
        let r0 = m.row(0).into_owned();
        m.set_row(1, &r0);
        m.set_row(2, &(-r0));
        let fc = pearson_fc(&m).unwrap();
        assert_eq!(fc.data[(0, 1)], 1.0);
        assert_eq!(fc.data[(0, 2)], -1.0);
        assert_eq!(fc.kind, ConnectivityKind::StaticPearson);
    }

    #[test]
    fn matches_two_pass_oracle() {
        let m = random(4, 100, 2);
        let fc = pearson_fc(&m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let xi: Vec<f64> = m.row(i).iter().copied().collect();
                let xj: Vec<f64> = m.row(j).iter().copied().collect();
                let want = if i == j { 1.0 } else { naive_pearson(&xi, &xj) };
                assert!((fc.data[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_variance_is_error() {
        let mut m = random(3, 10, 3);
        m.row_mut(2).fill(4.0);
        assert_eq!(pearson_fc(&m).unwrap_err(), FcError::ZeroVariance { region: 2 });
    }

    #[test]
    fn segmentation_rules() {
        let m = random(2, 10, 4);
        let s = segment_series(&m, 2).unwrap();
        assert_eq!((s[0].ncols(), s[1].ncols()), (5, 5));
        let m11 = random(2, 11, 5);
        let s = segment_series(&m11, 2).unwrap();
        assert_eq!((s[0].ncols(), s[1].ncols()), (5, 6));
        let mut joined = Matrix::zeros(2, 11);
        joined.columns_mut(0, 5).copy_from(&s[0]);
        joined.columns_mut(5, 6).copy_from(&s[1]);
        assert_eq!(joined, m11);
        assert_eq!(segment_series(&m, 1).unwrap(), vec![m.clone()]);
        assert_eq!(segment_series(&m, 6).unwrap_err(), FcError::TooManySegments { n: 6, t: 10 });
        assert_eq!(segment_series(&m, 0).unwrap_err(), FcError::NoSegments);
    }

    #[test]
    fn ode_params_validation() {
        let p = OdeParams::new(2.0, 0.5, 30.0).unwrap();
        assert!((p.phi * p.eta - 1.0).abs() < 1e-12);
        assert!(OdeParams::new(0.0, 0.5, 30.0).is_err());
        assert!(OdeParams::new(1.0, 1.5, 30.0).is_err());
    }

    #[test]
    fn stationary_zero_age_gives_zero() {
        let x = random(3, 8, 6);
        let p = OdeParams::new(1.0, 0.5, 0.0).unwrap();
        let a = effective_connectivity(&x, &x, &p, 0).unwrap();
        assert!(a.data.abs().max() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let p = OdeParams::with_defaults(30.0).unwrap();
        assert!(matches!(effective_connectivity(&random(3, 8, 1), &random(3, 7, 1), &p, 0), Err(FcError::ShapeMismatch(_))));
    }

    pub(crate) fn planted_system(v: usize, seed: u64, eta: f64, rho: f64, age: f64) -> (Matrix, Matrix, Matrix) {
        let a_star = random(v, v, seed) * 0.5;
        let x = random(v, 2 * v, seed + 1000);
        let m = Matrix::identity(v, v) + &a_star * eta + Matrix::identity(v, v) * (rho * standardize_age(age));
        let x_next = m * &x;
        (a_star, x, x_next)
    }

    #[test]
    fn recovers_planted_coupling() {
        for seed in 0..20 {
            let (a_star, x, x_next) = planted_system(6, seed, 1.3, 0.5, 40.0);
            let p = OdeParams::new(1.3, 0.5, 40.0).unwrap();
            let a = effective_connectivity(&x, &x_next, &p, 0).unwrap();
            assert!((a.data - a_star).norm() < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_gives_least_squares_minimum() {
        // X has rank 2 in 3 dimensions.
        let basis = random(3, 2, 9);
        let x = &basis * random(2, 6, 10);
        let x_next = random(3, 6, 11);
        let p = OdeParams::new(1.0, 0.5, 30.0).unwrap();
        let a = effective_connectivity(&x, &x_next, &p, 0).unwrap().data;
        let theta = standardize_age(30.0);
        let drive = &x_next - &x - &x * (0.5 * theta);
        let residual = |a: &Matrix| (&drive - a * &x).norm();
        // Normal-equations oracle: any A solving A X X^T = D X^T attains the
        // least-squares minimum.
        let grad = (&drive - &a * &x) * x.transpose();
        assert!(grad.abs().max() < 1e-10);
        let r0 = residual(&a);
        for s in 0..10 {
            let perturbed = &a + random(3, 3, 100 + s) * 1e-3;
            assert!(residual(&perturbed) >= r0 - 1e-12);
        }
        // Minimum norm: rows of A lie in the column space of X.
        let null = {
            let svd = x.clone().svd(true, false);
            svd.u.unwrap().column(2).into_owned()
        };
        assert!((&a * null).abs().max() < 1e-8);
    }

    #[test]
    fn dynamic_backends_produce_one_matrix_per_segment() {
        let m = random(4, 40, 12);
        let p = OdeParams::with_defaults(30.0).unwrap();
        let pe = dynamic_connectivity(&m, 2, DynamicBackend::Pearson, &p).unwrap();
        let od = dynamic_connectivity(&m, 2, DynamicBackend::Ode, &p).unwrap();
        assert_eq!(pe.len(), 2);
        assert_eq!(od[1].kind, ConnectivityKind::OdeEffective(1));
        assert_eq!(pe[0].kind, ConnectivityKind::SegmentPearson(0));
        assert_eq!("ode".parse::<DynamicBackend>().unwrap(), DynamicBackend::Ode);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pearson_symmetric_and_bounded(v in 2usize..7, t in 5usize..40, seed in any::<u64>()) {
            let fc = pearson_fc(&random(v, t, seed)).unwrap();
            prop_assert_eq!(max_asymmetry(&fc.data), 0.0);
            prop_assert!(fc.data.iter().all(|x| x.abs() <= 1.0 + 1e-12));
            for i in 0..v { prop_assert_eq!(fc.data[(i, i)], 1.0); }
        }

        #[test]
        fn ode_permutation_equivariant(v in 2usize..7, seed in any::<u64>()) {
            let x = random(v, 2 * v + 1, seed);
            let x_next = random(v, 2 * v + 1, seed.wrapping_add(1));
            let mut perm: Vec<usize> = (0..v).collect();
            perm.rotate_left(1);
            perm.swap(0, v - 1);
            let p = OdeParams::with_defaults(35.0).unwrap();
            let a = effective_connectivity(&x, &x_next, &p, 0).unwrap().data;
            let ap = effective_connectivity(&permute_rows(&x, &perm), &permute_rows(&x_next, &perm), &p, 0).unwrap().data;
            prop_assert!((ap - permute_symmetric(&a, &perm)).abs().max() < 1e-9);
        }

        #[test]
        fn ode_recovery_property(v in 2usize..=8, seed in any::<u64>(), eta in 0.5f64..2.0, age in 18.0f64..60.0) {
            let (a_star, x, x_next) = planted_system(v, seed % 1_000_000, eta, 0.5, age);
            let p = OdeParams::new(eta, 0.5, age).unwrap();
            let a = effective_connectivity(&x, &x_next, &p, 0).unwrap();
            prop_assert!((a.data - a_star).norm() < 1e-8);
        }
    }
}
