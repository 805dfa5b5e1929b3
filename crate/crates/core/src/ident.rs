//! Recursive least-squares estimation of the payload cross-coupling matrix
//! `R_cp` in `R_cp * w = diag(M, J) * a` and its inverse, the rectifier.
//!
//! All six output rows share the same regressor `w`, so with a common
//! forgetting factor their covariance recursions are identical; a single
//! covariance is kept for all rows.

use std::io::Write;

use nalgebra::{Matrix6, Vector6};
use thiserror::Error;

use crate::plant::condition_number;

/// Largest estimate condition number accepted by [`rectifier`].
pub const MAX_ESTIMATE_CONDITION: f64 = 1e6;

pub const DEFAULT_INITIAL_COVARIANCE: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentError {
    #[error("estimate is singular or ill-conditioned (condition {0:e})")]
    SingularEstimate(f64),
    #[error("forgetting factor {0} outside (0, 1]")]
    BadForgetting(f64),
    #[error("initial covariance must be positive, got {0}")]
    BadCovariance(f64),
    #[error("matrix export failed: {0}")]
    Export(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsEstimator {
    estimate: Matrix6<f64>,
    covariance: Matrix6<f64>,
    initial: Matrix6<f64>,
    initial_covariance: f64,
    forgetting: f64,
    samples: usize,
}

impl RlsEstimator {
    /// Starts from `initial` (rows are the prior coefficient vectors) with
    /// covariance `p0 * I`.
    pub fn new(initial: Matrix6<f64>, p0: f64, forgetting: f64) -> Result<Self, IdentError> {
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(IdentError::BadForgetting(forgetting));
        }
        if !(p0 > 0.0 && p0.is_finite()) {
            return Err(IdentError::BadCovariance(p0));
        }
        Ok(Self {
            estimate: initial,
            covariance: Matrix6::identity() * p0,
            initial,
            initial_covariance: p0,
            forgetting,
            samples: 0,
        })
    }

    pub fn estimate(&self) -> &Matrix6<f64> {
        &self.estimate
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    pub fn initial(&self) -> &Matrix6<f64> {
        &self.initial
    }

    pub fn initial_covariance(&self) -> f64 {
        self.initial_covariance
    }

    pub fn forgetting(&self) -> f64 {
        self.forgetting
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Smallest eigenvalue of the (symmetric) covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.covariance.symmetric_eigenvalues().min()
    }

    /// Standard RLS step on regression target `y` with regressor `w`.
    pub fn update_target(&mut self, w: &Vector6<f64>, y: &Vector6<f64>) {
        let pw = self.covariance * w;
        let denom = self.forgetting + w.dot(&pw);
        let gain = pw / denom;
        let residual = y - self.estimate * w;
        self.estimate += residual * gain.transpose();
        let p = (self.covariance - gain * pw.transpose()) / self.forgetting;
        self.covariance = (p + p.transpose()) * 0.5;
        self.samples += 1;
    }
}

impl Default for RlsEstimator {
    fn default() -> Self {
        Self::new(Matrix6::identity(), DEFAULT_INITIAL_COVARIANCE, 1.0).expect("valid defaults")
    }
}

/// Regression target `diag(M, J) * a` for the block inertia `diag(M I, J)`.
pub fn inertial_target(inertia: &Matrix6<f64>, accel: &Vector6<f64>) -> Vector6<f64> {
    inertia * accel
}

/// One estimator update from commanded wrench `w` and measured
/// accelerations `a`.
pub fn rls_update(est: &mut RlsEstimator, w: &Vector6<f64>, a: &Vector6<f64>, inertia: &Matrix6<f64>) {
    est.update_target(w, &inertial_target(inertia, a));
}

/// Regularized normal-equations solution matching an RLS run with
/// `lambda = 1` from prior `theta0` and covariance `p0 * I`.
pub fn batch_least_squares(
    regressors: &[Vector6<f64>],
    targets: &[Vector6<f64>],
    theta0: &Matrix6<f64>,
    p0: f64,
) -> Option<Matrix6<f64>> {
    let mut sww = Matrix6::identity() / p0;
    let mut syw = theta0 / p0;
    for (w, y) in regressors.iter().zip(targets) {
        sww += w * w.transpose();
        syw += y * w.transpose();
    }
    sww.try_inverse().map(|inv| syw * inv)
}

/// `R_rt = R_cp^-1` for a well-conditioned estimate.
pub fn rectifier(estimate: &Matrix6<f64>) -> Result<Matrix6<f64>, IdentError> {
    let cond = condition_number(estimate);
    if !(cond < MAX_ESTIMATE_CONDITION) {
        return Err(IdentError::SingularEstimate(cond));
    }
    estimate.try_inverse().ok_or(IdentError::SingularEstimate(f64::INFINITY))
}

/// Writes `m` as six comma-separated rows with 12 significant digits.
pub fn write_matrix<W: Write>(mut out: W, m: &Matrix6<f64>) -> Result<(), IdentError> {
    for i in 0..6 {
        let row: Vec<String> = (0..6).map(|j| format!("{:.11e}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(",")).map_err(|e| IdentError::Export(e.to_string()))?;
    }
    Ok(())
}

/// Parses the output of [`write_matrix`].
pub fn read_matrix(text: &str) -> Result<Matrix6<f64>, IdentError> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != 6 {
        return Err(IdentError::Export(format!("expected 6 rows, found {}", rows.len())));
    }
    let mut m = Matrix6::zeros();
    for (i, line) in rows.iter().enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IdentError::Export(e.to_string()))?;
        if vals.len() != 6 {
            return Err(IdentError::Export(format!("row {i} has {} entries", vals.len())));
        }
        for (j, v) in vals.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng) -> Vector6<f64> {
        Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_plant_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inertia = Matrix6::from_diagonal(&Vector6::new(15.0, 15.0, 15.0, 0.3, 0.3, 0.5));
        let inv = inertia.try_inverse().unwrap();
        let mut est = RlsEstimator::default();
        for _ in 0..200 {
            let w = random_vec(&mut rng);
            let a = inv * w;
            rls_update(&mut est, &w, &a, &inertia);
        }
        assert!((est.estimate() - Matrix6::identity()).abs().max() < 1e-10);
    }

    #[test]
    fn matches_batch_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = Matrix6::identity() + Matrix6::from_fn(|_, _| 0.05 * rng.random_range(-1.0..1.0));
        let mut est = RlsEstimator::default();
        let (mut ws, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..500 {
            let w = random_vec(&mut rng) * 3.0;
            let y = truth * w + random_vec(&mut rng) * 0.1;
            est.update_target(&w, &y);
            ws.push(w);
            ys.push(y);
        }
        let batch = batch_least_squares(&ws, &ys, &Matrix6::identity(), 1e4).unwrap();
        assert!((est.estimate() - batch).norm() / batch.norm() < 1e-8);
        assert!(est.min_covariance_eigenvalue() > 0.0);
        assert_eq!(est.covariance(), &est.covariance().transpose());
    }

    #[test]
    fn error_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = Matrix6::identity() + Matrix6::from_fn(|_, _| 0.05 * rng.random_range(-1.0..1.0));
        let mut est = RlsEstimator::default();
        let mut last = f64::INFINITY;
        for n in 1..=2000 {
            let w = random_vec(&mut rng);
            est.update_target(&w, &(truth * w));
            if [100, 500, 2000].contains(&n) {
                let e = (est.estimate() - truth).norm();
                assert!(e <= last);
                last = e;
            }
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn rectifier_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(rectifier(&Matrix6::identity()).unwrap(), Matrix6::identity());
        for _ in 0..20 {
            let m = Matrix6::identity() + Matrix6::from_fn(|_, _| 0.1 * rng.random_range(-1.0..1.0));
            let r = rectifier(&m).unwrap();
            assert!((r * m - Matrix6::identity()).abs().max() < 1e-10);
        }
        let mut sing = Matrix6::identity();
        sing[(5, 5)] = 0.0;
        assert!(matches!(rectifier(&sing), Err(IdentError::SingularEstimate(_))));
    }

    #[test]
    fn bad_parameters() {
        assert!(RlsEstimator::new(Matrix6::identity(), 1e4, 0.0).is_err());
        assert!(RlsEstimator::new(Matrix6::identity(), 1e4, 1.5).is_err());
        assert!(RlsEstimator::new(Matrix6::identity(), -1.0, 1.0).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let m = Matrix6::from_fn(|i, j| (i as f64 + 1.0) / (j as f64 + 3.0) - 0.2);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let back = read_matrix(std::str::from_utf8(&buf).unwrap()).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-11);
        }
    }
}
