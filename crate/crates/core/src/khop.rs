//! k-hop connectivity operator and its normalisation.
//!
//! `A_hat_k = Gamma .* A_s .* M^k` with `M = lambda*A_d + (1-lambda)*A_d^T`,
//! then `Phi_k = D^-1/2 A_hat_k D^-1/2` where `D` holds row sums of
//! `|A_hat_k|` plus a small epsilon. `Phi_k` is finally divided by
//! `max(1, ||Phi_k||_2)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{binomial, spectral_norm_svd};
use crate::Matrix;

pub const MAX_HOPS: usize = 64;
pub const MAX_EXPANSION_HOPS: usize = 20;
pub const DEFAULT_EPSILON_DEG: f64 = 1e-8;
pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const POWER_ITER_MAX: usize = 10_000;
pub const DEFAULT_NORM_TOL: f64 = 1e-12;
const SQUARE_EVERY: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum KHopError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("lambda must lie strictly inside (0, 1), got {0}")]
    Lambda(f64),
    #[error("hop order {k} exceeds limit {limit}")]
    TooManyHops { k: usize, limit: usize },
    #[error("gamma has non-finite entries")]
    NonFiniteGamma,
    #[error("epsilon_deg must be positive, got {0}")]
    Epsilon(f64),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),
}

type Result<T> = std::result::Result<T, KHopError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KHopConfig {
    pub lambda: f64,
    pub k: usize,
    #[serde(with = "crate::linalg::matrix_serde")]
    pub gamma: Matrix,
    pub epsilon_deg: f64,
}

impl KHopConfig {
    pub fn new(v: usize, lambda: f64, k: usize) -> Result<Self> {
        let cfg = Self { lambda, k, gamma: Matrix::from_element(v, v, 1.0), epsilon_deg: DEFAULT_EPSILON_DEG };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.k > MAX_HOPS {
            return Err(KHopError::TooManyHops { k: self.k, limit: MAX_HOPS });
        }
        if !self.gamma.iter().all(|x| x.is_finite()) {
            return Err(KHopError::NonFiniteGamma);
        }
        if !(self.epsilon_deg > 0.0) {
            return Err(KHopError::Epsilon(self.epsilon_deg));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KHopOperator {
    pub a_hat: Matrix,
    pub phi: Matrix,
    pub config: KHopConfig,
    pub segment_index: usize,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(KHopError::Lambda(lambda))
    }
}

fn check_square(name: &str, m: &Matrix, v: usize) -> Result<()> {
    if m.shape() != (v, v) {
        return Err(KHopError::ShapeMismatch(format!("{name} is {:?}, expected {v}x{v}", m.shape())));
    }
    Ok(())
}

/// `lambda*A + (1-lambda)*A^T`.
pub fn mixing_matrix(a_dyn: &Matrix, lambda: f64) -> Matrix {
    a_dyn * lambda + a_dyn.transpose() * (1.0 - lambda)
}

/// `M^k` by repeated multiplication. Accepts the closed interval for
/// `lambda` so the pure-direction limits can be evaluated.
pub fn mixed_power(a_dyn: &Matrix, lambda: f64, k: usize) -> Result<Matrix> {
    let v = a_dyn.nrows();
    check_square("A_d", a_dyn, v)?;
    if k > MAX_HOPS {
        return Err(KHopError::TooManyHops { k, limit: MAX_HOPS });
    }
    let m = mixing_matrix(a_dyn, lambda);
    let mut out = Matrix::identity(v, v);
    for _ in 0..k {
        out = &out * &m;
    }
    Ok(out)
}

/// Expansion of `M^k` grouped by the number `i` of forward factors:
/// `sum_i lambda^i (1-lambda)^(k-i) S_i`, where `S_i` is the sum of all
/// `C(k,i)` ordered products with `i` copies of `A` and `k-i` of `A^T`.
/// Evaluated by a recursion over word length, independent of the
/// repeated-product route in [`mixed_power`].
pub fn binomial_expansion(a_dyn: &Matrix, lambda: f64, k: usize) -> Result<Matrix> {
    let v = a_dyn.nrows();
    check_square("A_d", a_dyn, v)?;
    if k > MAX_EXPANSION_HOPS {
        return Err(KHopError::TooManyHops { k, limit: MAX_EXPANSION_HOPS });
    }
    let at = a_dyn.transpose();
    // words[i] = sum of words of the current length with i forward factors
    let mut words = vec![Matrix::identity(v, v)];
    for n in 1..=k {
        let mut next = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let mut acc = Matrix::zeros(v, v);
            if i > 0 {
                acc += &words[i - 1] * a_dyn;
            }
            if i < n {
                acc += &words[i] * &at;
            }
            next.push(acc);
        }
        words = next;
    }
    let mut out = Matrix::zeros(v, v);
    for (i, w) in words.iter().enumerate() {
        out += w * (lambda.powi(i as i32) * (1.0 - lambda).powi((k - i) as i32));
    }
    Ok(out)
}

/// Closed form `sum_i C(k,i) lambda^i (1-lambda)^(k-i) A^i (A^T)^(k-i)`.
/// Equals [`binomial_expansion`] only when `A` commutes with `A^T`.
pub fn binomial_expansion_commuting(a_dyn: &Matrix, lambda: f64, k: usize) -> Result<Matrix> {
    let v = a_dyn.nrows();
    check_square("A_d", a_dyn, v)?;
    if k > MAX_EXPANSION_HOPS {
        return Err(KHopError::TooManyHops { k, limit: MAX_EXPANSION_HOPS });
    }
    let at = a_dyn.transpose();
    let mut pow_a = vec![Matrix::identity(v, v)];
    let mut pow_at = vec![Matrix::identity(v, v)];
    for i in 1..=k {
        pow_a.push(&pow_a[i - 1] * a_dyn);
        pow_at.push(&pow_at[i - 1] * &at);
    }
    let mut out = Matrix::zeros(v, v);
    for i in 0..=k {
        let coeff = binomial(k as u32, i as u32) as f64 * lambda.powi(i as i32) * (1.0 - lambda).powi((k - i) as i32);
        out += (&pow_a[i] * &pow_at[k - i]) * coeff;
    }
    Ok(out)
}

/// Symmetric degree normalisation followed by the unit-norm rescale.
pub fn normalize(a_hat: &Matrix, epsilon_deg: f64) -> Matrix {
    let v = a_hat.nrows();
    let inv_sqrt: DVector<f64> = DVector::from_fn(v, |i, _| {
        let d = a_hat.row(i).iter().map(|x| x.abs()).sum::<f64>() + epsilon_deg;
        1.0 / d.sqrt()
    });
    let phi = Matrix::from_fn(v, v, |i, j| inv_sqrt[i] * a_hat[(i, j)] * inv_sqrt[j]);
    let norm = spectral_norm_svd(&phi);
    if norm > 1.0 {
        phi / norm
    } else {
        phi
    }
}

/// Builds `A_hat_k` and `Phi_k` for one segment.
pub fn assemble(a_static: &Matrix, a_dyn: &Matrix, config: &KHopConfig, segment_index: usize) -> Result<KHopOperator> {
    config.validate()?;
    let v = a_static.nrows();
    check_square("A_s", a_static, v)?;
    check_square("A_d", a_dyn, v)?;
    check_square("Gamma", &config.gamma, v)?;
    let mk = mixed_power(a_dyn, config.lambda, config.k)?;
    let a_hat = config.gamma.component_mul(a_static).component_mul(&mk);
    let phi = normalize(&a_hat, config.epsilon_deg);
    Ok(KHopOperator { a_hat, phi, config: config.clone(), segment_index })
}

/// Largest singular value by power iteration on `M^T M`, started from the
/// normalised all-ones vector. The iteration operator is squared
/// periodically, which keeps nearly tied top singular values converging.
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(KHopError::Tolerance(tol));
    }
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return Ok(0.0);
    }
    let gram = m.transpose() * m;
    if gram.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    if (&gram * &x).norm() <= 1e-14 * gram.norm() {
        // All-ones start is orthogonal to the range; tilt it deterministically.
        x = DVector::from_fn(n, |i, _| 1.0 + (i + 1) as f64 / n as f64);
        x /= x.norm();
    }
    // Stepping operator; squared every SQUARE_EVERY steps so a small gap
    // between the top two singular values does not stall the iteration.
    let mut step = gram.clone();
    let mut est = 0.0_f64;
    for it in 0..POWER_ITER_MAX {
        let y = &gram * &x;
        let rayleigh = x.dot(&y);
        let residual = (&y - &x * rayleigh).norm();
        if y.norm() == 0.0 {
            return Ok(0.0);
        }
        let stalled = (rayleigh - est).abs() <= tol * rayleigh;
        est = rayleigh;
        if residual <= tol * rayleigh || stalled {
            return Ok(est.max(0.0).sqrt());
        }
        if it > 0 && it % SQUARE_EVERY == 0 {
            step = &step * &step;
            let n = step.norm();
            step /= n;
        }
        let z = &step * &x;
        let znorm = z.norm();
        if znorm == 0.0 {
            return Ok(est.max(0.0).sqrt());
        }
        x = z / znorm;
    }
    Err(KHopError::NoConvergence(POWER_ITER_MAX))
}

/// One row of a spectral convergence profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub k: usize,
    pub phi_norm: f64,
    pub ahat_norm: f64,
    /// `||Gamma|| ||A_s|| (2 max(lambda,1-lambda) ||A_d||)^k`.
    pub bound: f64,
    /// The same without the `(2 ||A_d||)^k` factor; valid only for
    /// `||A_d|| <= 1/2`.
    pub short_bound: f64,
}

impl ProfileRow {
    pub fn within_bound(&self) -> bool {
        self.ahat_norm <= self.bound + 1e-9
    }

    pub fn within_short_bound(&self) -> bool {
        self.ahat_norm <= self.short_bound + 1e-9
    }
}

/// Norms of `Phi_k`, `A_hat_k` and the bound envelope for `k = 0..=k_max`.
pub fn convergence_profile(
    a_static: &Matrix,
    a_dyn: &Matrix,
    gamma: &Matrix,
    lambda: f64,
    k_max: usize,
) -> Result<Vec<ProfileRow>> {
    check_lambda(lambda)?;
    if k_max > MAX_HOPS {
        return Err(KHopError::TooManyHops { k: k_max, limit: MAX_HOPS });
    }
    let v = a_static.nrows();
    check_square("A_s", a_static, v)?;
    check_square("A_d", a_dyn, v)?;
    check_square("Gamma", gamma, v)?;
    let g_norm = spectral_norm(gamma, DEFAULT_NORM_TOL)?;
    let s_norm = spectral_norm(a_static, DEFAULT_NORM_TOL)?;
    let d_norm = spectral_norm(a_dyn, DEFAULT_NORM_TOL)?;
    let m = lambda.max(1.0 - lambda);
    let mixing = mixing_matrix(a_dyn, lambda);
    let gated = gamma.component_mul(a_static);

    let mut power = Matrix::identity(v, v);
    let mut rows = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        if k > 0 {
            power = &power * &mixing;
        }
        let a_hat = gated.component_mul(&power);
        let phi = normalize(&a_hat, DEFAULT_EPSILON_DEG);
        rows.push(ProfileRow {
            k,
            phi_norm: spectral_norm(&phi, DEFAULT_NORM_TOL)?,
            ahat_norm: spectral_norm(&a_hat, DEFAULT_NORM_TOL)?,
            bound: g_norm * s_norm * (2.0 * m * d_norm).powi(k as i32),
            short_bound: g_norm * s_norm * m.powi(k as i32),
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln ||A_hat_k||` over rows with `k >= k_from`.
pub fn log_norm_slope(rows: &[ProfileRow], k_from: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.k >= k_from && r.ahat_norm > 0.0).map(|r| (r.k as f64, r.ahat_norm.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// `max ||Phi(t1) - Phi(t2)||_2 / |t1 - t2|` over all segment pairs; zero
/// for fewer than two segments.
pub fn lipschitz_estimate(phis: &[Matrix]) -> f64 {
    let mut worst = 0.0_f64;
    for a in 0..phis.len() {
        for b in (a + 1)..phis.len() {
            let ratio = spectral_norm_svd(&(&phis[a] - &phis[b])) / (b - a) as f64;
            worst = worst.max(ratio);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_asymmetry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(v: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(v, v, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_sym(v: usize, seed: u64) -> Matrix {
        let m = random(v, seed);
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn zeroth_power_is_identity() {
        assert_eq!(mixed_power(&random(4, 1), 0.3, 0).unwrap(), Matrix::identity(4, 4));
    }

    #[test]
    fn pure_forward_limit() {
        let a = random(4, 2);
        assert!((mixed_power(&a, 1.0, 2).unwrap() - &a * &a).abs().max() < 1e-14);
    }

    #[test]
    fn expansion_base_case() {
        let a = random(4, 3);
        let want = &a * 0.3 + a.transpose() * 0.7;
        assert!((binomial_expansion(&a, 0.3, 1).unwrap() - want).abs().max() < 1e-15);
    }

    #[test]
    fn expansion_symmetric_collapse() {
        let a = random_sym(4, 4);
        assert!((binomial_expansion(&a, 0.3, 2).unwrap() - &a * &a).abs().max() < 1e-12);
    }

    #[test]
    fn expansion_matches_power() {
        let a = random(5, 5);
        let diff = (mixed_power(&a, 0.3, 4).unwrap() - binomial_expansion(&a, 0.3, 4).unwrap()).abs().max();
        assert!(diff < 1e-10, "diff={diff}");
    }

    #[test]
    fn closed_form_needs_commuting_factors() {
        // Symmetric matrices commute with their transpose.
        let s = random_sym(5, 5);
        for k in 0..=6 {
            let diff = (binomial_expansion_commuting(&s, 0.3, k).unwrap() - binomial_expansion(&s, 0.3, k).unwrap()).abs().max();
            assert!(diff < 1e-10, "k={k} diff={diff}");
        }
        let a = random(5, 6);
        let diff = (binomial_expansion_commuting(&a, 0.3, 2).unwrap() - mixed_power(&a, 0.3, 2).unwrap()).abs().max();
        assert!(diff > 1e-6);
    }

    #[test]
    fn word_counts_are_binomial() {
        // With A = [1] each S_i collapses to its word count C(k, i).
        let one = Matrix::from_element(1, 1, 1.0);
        for k in 0..=20usize {
            let lambda = 0.37;
            let got = binomial_expansion(&one, lambda, k).unwrap()[(0, 0)];
            let want: f64 = (0..=k)
                .map(|i| binomial(k as u32, i as u32) as f64 * lambda.powi(i as i32) * (1.0 - lambda).powi((k - i) as i32))
                .sum();
            assert!((got - want).abs() < 1e-12 && (got - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expansion_is_directional() {
        let a = random(4, 6);
        let e = binomial_expansion(&a, 0.3, 3).unwrap();
        assert!(max_asymmetry(&e) > 1e-6);
    }

    #[test]
    fn expansion_guard() {
        assert_eq!(binomial_expansion(&random(2, 1), 0.5, 21).unwrap_err(), KHopError::TooManyHops { k: 21, limit: 20 });
    }

    #[test]
    fn zero_gamma_annihilates() {
        let mut cfg = KHopConfig::new(4, 0.3, 2).unwrap();
        cfg.gamma.fill(0.0);
        let op = assemble(&random_sym(4, 1), &random(4, 2), &cfg, 0).unwrap();
        assert_eq!(op.a_hat, Matrix::zeros(4, 4));
        assert_eq!(op.phi, Matrix::zeros(4, 4));
    }

    #[test]
    fn half_lambda_is_symmetric() {
        let cfg = KHopConfig::new(5, 0.5, 3).unwrap();
        let op = assemble(&random_sym(5, 3), &random(5, 4), &cfg, 0).unwrap();
        assert!(max_asymmetry(&op.a_hat) < 1e-12);
    }

    #[test]
    fn assemble_rejects_bad_inputs() {
        assert_eq!(KHopConfig::new(3, 1.0, 2).unwrap_err(), KHopError::Lambda(1.0));
        let cfg = KHopConfig::new(3, 0.3, 2).unwrap();
        assert!(matches!(assemble(&random(3, 1), &random(4, 1), &cfg, 0), Err(KHopError::ShapeMismatch(_))));
    }

    #[test]
    fn power_iteration_examples() {
        assert!((spectral_norm(&Matrix::identity(5, 5), 1e-12).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0]));
        assert!((spectral_norm(&d, 1e-12).unwrap() - 3.0).abs() < 1e-10);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 3), 1e-12).unwrap(), 0.0);
        assert!(spectral_norm(&d, 0.0).is_err());
    }

    #[test]
    fn power_iteration_orthogonal_start() {
        // All-ones is in the null space of this matrix.
        let m = Matrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
        assert!((spectral_norm(&m, 1e-12).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn power_iteration_nearly_tied_values() {
        // Plain iteration needs roughly 70k steps for this gap.
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![0.9999, -1.0, 0.5]));
        assert!((spectral_norm(&d, 1e-12).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn profile_examples() {
        let v = 5;
        let a_s = {
            let s = random_sym(v, 10);
            &s / spectral_norm_svd(&s)
        };
        let a_d = {
            let d = random(v, 11);
            &d * (0.4 / spectral_norm_svd(&d))
        };
        let gamma = Matrix::from_element(v, v, 1.0);
        let rows = convergence_profile(&a_s, &a_d, &gamma, 0.5, 12).unwrap();
        assert!(rows[12].ahat_norm < rows[1].ahat_norm * 1e-2);
        let slope = log_norm_slope(&rows, 2).unwrap();
        assert!(slope <= 0.4_f64.ln() + 0.05, "slope {slope}");
        let diag_max = (0..v).map(|i| a_s[(i, i)].abs()).fold(0.0, f64::max);
        assert!((rows[0].ahat_norm - diag_max).abs() < 1e-10);
        let high = convergence_profile(&a_s, &a_d, &gamma, 0.9, 12).unwrap();
        for k in 1..=12 {
            assert!(high[k].bound > rows[k].bound);
        }
        assert!(rows.iter().all(|r| r.within_bound() && r.within_short_bound() && r.phi_norm <= 1.0 + 1e-9));
    }

    #[test]
    fn lipschitz_is_finite() {
        let phis = vec![random(3, 1), random(3, 2), random(3, 3)];
        let l = lipschitz_estimate(&phis);
        assert!(l.is_finite() && l > 0.0);
        assert_eq!(lipschitz_estimate(&phis[..1]), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn power_equals_expansion(v in 1usize..=8, seed in any::<u64>(), li in 1usize..=9, k in 0usize..=6) {
            let a = random(v, seed);
            let lambda = li as f64 / 10.0;
            let diff = (mixed_power(&a, lambda, k).unwrap() - binomial_expansion(&a, lambda, k).unwrap()).abs().max();
            prop_assert!(diff < 1e-10, "diff {}", diff);
        }

        #[test]
        fn power_iteration_matches_svd(v in 1usize..8, seed in any::<u64>()) {
            let m = random(v, seed);
            let p = spectral_norm(&m, 1e-12).unwrap();
            let s = spectral_norm_svd(&m);
            prop_assert!((p - s).abs() <= 1e-8 * s.max(1.0));
        }

        #[test]
        fn phi_is_contractive(v in 2usize..8, seed in any::<u64>(), k in 0usize..6, lambda in 0.05f64..0.95) {
            let cfg = KHopConfig::new(v, lambda, k).unwrap();
            let op = assemble(&(random_sym(v, seed) * 3.0), &(random(v, seed ^ 1) * 2.0), &cfg, 0).unwrap();
            prop_assert!(spectral_norm_svd(&op.phi) <= 1.0 + 1e-9);
        }

        #[test]
        fn rigorous_bound_holds(v in 2usize..8, seed in any::<u64>(), k in 0usize..6, lambda in 0.05f64..0.95) {
            let a_s = random_sym(v, seed);
            let a_d = random(v, seed ^ 7);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
            let gamma = Matrix::from_fn(v, v, |_, _| rng.random_range(0.0..2.0));
            let mut cfg = KHopConfig::new(v, lambda, k).unwrap();
            cfg.gamma = gamma.clone();
            let op = assemble(&a_s, &a_d, &cfg, 0).unwrap();
            let m = lambda.max(1.0 - lambda);
            let bound = spectral_norm_svd(&gamma) * spectral_norm_svd(&a_s) * (2.0 * m * spectral_norm_svd(&a_d)).powi(k as i32);
            prop_assert!(spectral_norm_svd(&op.a_hat) <= bound + 1e-9);
        }

        #[test]
        fn asymmetric_unless_half(v in 3usize..8, seed in any::<u64>(), k in 1usize..5) {
            let a_s = Matrix::from_element(v, v, 1.0);
            let a_d = random(v, seed);
            let sym = assemble(&a_s, &a_d, &KHopConfig::new(v, 0.5, k).unwrap(), 0).unwrap();
            prop_assert!((&sym.a_hat - sym.a_hat.transpose()).norm() < 1e-12);
            let asym = assemble(&a_s, &a_d, &KHopConfig::new(v, 0.2, k).unwrap(), 0).unwrap();
            prop_assert!((&asym.a_hat - asym.a_hat.transpose()).norm() > 0.0);
        }
    }
}
