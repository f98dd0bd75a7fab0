//! Mean and covariance estimation, smoothing and two-sample combination.

pub mod bspline;
mod smoothing;

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fnspace::{check_grid, read_curves_csv, write_curves_csv, CovOperator, Curve, Grid, Quadrature};

pub use smoothing::{
    basis_matrix, loocv, loocv_scores, smooth_bspline, smooth_penalized, smoother_for, smoother_matrix, twofold_cv,
    Basis, Selection, SmoothSpec, DEFAULT_DEGREE,
};

/// An iid sample of curves on one grid.
#[derive(Debug, Clone)]
pub struct FunctionalSample {
    grid: Arc<Grid>,
    curves: Vec<Curve>,
}

impl FunctionalSample {
    pub fn new(curves: Vec<Curve>) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::invalid("a sample needs at least one curve"))?;
        let grid = first.grid().clone();
        for c in &curves {
            check_grid(&grid, c.grid())?;
        }
        Ok(FunctionalSample { grid, curves })
    }

    /// Rows of `values` (N x P) as curves.
    pub fn from_matrix(grid: Arc<Grid>, values: &DMatrix<f64>) -> Result<Self> {
        let curves = (0..values.nrows())
            .map(|i| Curve::new(grid.clone(), values.row(i).iter().copied().collect()))
            .collect::<Result<Vec<_>>>()?;
        FunctionalSample::new(curves)
    }

    pub fn read_csv(path: impl AsRef<Path>, rule: Quadrature) -> Result<Self> {
        let (_, curves) = read_curves_csv(path, rule)?;
        FunctionalSample::new(curves)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_curves_csv(path, &self.curves)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    /// N x P matrix of values.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.grid.len(), |i, j| self.curves[i].values()[j])
    }

    /// Subsample by indices.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        FunctionalSample::new(idx.iter().map(|&i| self.curves[i].clone()).collect())
    }
}

/// Pointwise sample mean.
pub fn mean(sample: &FunctionalSample) -> Curve {
    let p = sample.grid.len();
    let mut m = vec![0.0; p];
    for c in &sample.curves {
        for (a, v) in m.iter_mut().zip(c.values()) {
            *a += v;
        }
    }
    let n = sample.n() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    Curve::from_vec_unchecked(sample.grid.clone(), m)
}

/// Sample mean and the `(N - 1)^{-1}` sample covariance.
pub fn mean_cov(sample: &FunctionalSample) -> Result<(Curve, CovOperator)> {
    let n = sample.n();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least two curves"));
    }
    let m = mean(sample);
    let cov = covariance_about(sample, &m)?;
    Ok((m, cov))
}

/// `(N - 1)^{-1} sum_i (X_i - center)(X_i - center)'`.
pub fn covariance_about(sample: &FunctionalSample, center: &Curve) -> Result<CovOperator> {
    check_grid(&sample.grid, center.grid())?;
    let n = sample.n();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least two curves"));
    }
    let p = sample.grid.len();
    let c = center.values();
    let centered = DMatrix::from_fn(n, p, |i, j| sample.curves[i].values()[j] - c[j]);
    let k = centered.tr_mul(&centered) / (n - 1) as f64;
    let k = (&k + k.transpose()) * 0.5;
    Ok(CovOperator::from_kernel_unchecked(sample.grid.clone(), k))
}

/// Pointwise standard deviation from a covariance.
pub fn pointwise_sd(cov: &CovOperator) -> Curve {
    let sd = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    Curve::from_vec_unchecked(cov.grid().clone(), sd)
}

/// Difference of two group means with the covariance of that difference.
///
/// `combined_cov` is `C_1 / N_1 + C_2 / N_2`, i.e. already the covariance of
/// the estimator; regions built from it take `N = 1`.
#[derive(Debug, Clone)]
pub struct TwoSampleResult {
    pub diff_mean: Curve,
    pub combined_cov: CovOperator,
    pub n1: usize,
    pub n2: usize,
}

impl TwoSampleResult {
    /// Sample size to pass to region constructors.
    pub const EFFECTIVE_N: usize = 1;

    pub fn effective_scaling(&self) -> &'static str {
        "combined covariance is C1/N1 + C2/N2; regions use N = 1"
    }
}

pub fn two_sample(s1: &FunctionalSample, s2: &FunctionalSample) -> Result<TwoSampleResult> {
    check_grid(&s1.grid, &s2.grid)?;
    let (m1, c1) = mean_cov(s1)?;
    let (m2, c2) = mean_cov(s2)?;
    let diff_mean = m1.sub(&m2)?;
    let combined_cov = c1.combine(1.0 / s1.n() as f64, &c2, 1.0 / s2.n() as f64)?;
    Ok(TwoSampleResult {
        diff_mean,
        combined_cov,
        n1: s1.n(),
        n2: s2.n(),
    })
}
