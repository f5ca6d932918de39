//! Small numeric helpers shared by the spatial methods.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Cholesky factorization; on failure retries with diagonal jitter
/// `jitter * mean(diag)`, growing tenfold up to four times.
pub fn cholesky_with_jitter(m: DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = (m.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut eps = jitter * scale;
    for _ in 0..5 {
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
        eps *= 10.0;
    }
    Err(Error::Numerical(format!(
        "{n}x{n} covariance matrix is not positive definite after jitter"
    )))
}

/// log-determinant from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Solves L x = b in place, L lower triangular from a Cholesky factor.
pub fn forward_solve(chol: &Cholesky<f64, Dyn>, b: &mut DVector<f64>) {
    let l = chol.l_dirty();
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(p)
}

/// Two-sided 95% Gaussian multiplier (1.959963...).
pub fn z975() -> f64 {
    standard_normal_quantile(0.975)
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean shifted by the first value; exact for constant input.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else { return f64::NAN };
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator); zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Monte-Carlo standard error of a chain mean by non-overlapping batch means.
pub fn batch_means_se(chain: &[f64], n_batches: usize) -> f64 {
    let b = n_batches.max(2);
    let size = chain.len() / b;
    if size == 0 {
        return (sample_variance(chain) / chain.len().max(1) as f64).sqrt();
    }
    let means: Vec<f64> = (0..b).map(|k| mean(&chain[k * size..(k + 1) * size])).collect();
    (sample_variance(&means) / b as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_relative_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_relative_eq!(z975(), 1.959_963_984_540_054, epsilon = 1e-9);
        assert_relative_eq!(student_t_quantile(0.975, 10.0), 2.228_138_851_986_274, epsilon = 1e-9);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let c = cholesky_with_jitter(m, 1e-8).unwrap();
        assert!(log_det(&c).is_finite());
        assert!(cholesky_with_jitter(DMatrix::from_element(2, 2, -1.0), 1e-8).is_err());
    }

    #[test]
    fn forward_solve_matches_dense() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let c = Cholesky::new(m).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut x = b.clone();
        forward_solve(&c, &mut x);
        let back = c.l() * x;
        assert_relative_eq!(back, b, epsilon = 1e-12);
    }
}
