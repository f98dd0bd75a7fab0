//! Gaussian process sampling by Karhunen-Loève synthesis.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::FunctionalSample;
use crate::fnspace::{
    check_grid, eigensystem, read_curves_csv, write_curves_csv, CovOperator, Curve, EigenSystem, Grid, Quadrature,
    DEFAULT_TRIM,
};

/// Draws curves `theta + sum_j sqrt(lambda_j) Z_j v_j` with a cached
/// eigensystem.
#[derive(Debug, Clone)]
pub struct GpSampler {
    mean: Curve,
    eig: Arc<EigenSystem>,
    /// Columns `sqrt(lambda_j) v_j`.
    loadings: DMatrix<f64>,
}

impl GpSampler {
    pub fn new(mean: Curve, cov: &CovOperator) -> Result<Self> {
        check_grid(mean.grid(), cov.grid())?;
        let eig = Arc::new(eigensystem(cov, DEFAULT_TRIM)?);
        Ok(GpSampler::from_eigensystem(mean, eig))
    }

    pub fn from_eigensystem(mean: Curve, eig: Arc<EigenSystem>) -> Self {
        let v = eig.eigenfunction_matrix();
        let l = eig.eigenvalues();
        let loadings = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * l[j].sqrt());
        GpSampler { mean, eig, loadings }
    }

    pub fn mean(&self) -> &Curve {
        &self.mean
    }

    pub fn eigensystem(&self) -> &Arc<EigenSystem> {
        &self.eig
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.mean.grid()
    }

    /// `n` curves as an N x P matrix.
    pub fn draw_matrix<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let j = self.loadings.ncols();
        let z = DMatrix::from_fn(n, j, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = z * self.loadings.transpose();
        let m = self.mean.values();
        for mut row in x.row_iter_mut() {
            for (v, mu) in row.iter_mut().zip(m) {
                *v += mu;
            }
        }
        x
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<FunctionalSample> {
        if n == 0 {
            return Err(Error::invalid("cannot draw an empty sample"));
        }
        FunctionalSample::from_matrix(self.grid().clone(), &self.draw_matrix(n, rng))
    }
}

/// `n` iid draws from `N(mean, cov)`; deterministic in `seed`.
pub fn sample_gp(mean: &Curve, cov: &CovOperator, n: usize, seed: u64) -> Result<FunctionalSample> {
    let s = GpSampler::new(mean.clone(), cov)?;
    s.draw(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Writes a kernel as CSV: grid points on the first row, then one kernel row
/// per grid point.
pub fn write_cov_csv(path: impl AsRef<Path>, cov: &CovOperator) -> Result<()> {
    let rows: Vec<Curve> = cov
        .kernel()
        .row_iter()
        .map(|r| Curve::from_vec_unchecked(cov.grid().clone(), r.iter().copied().collect()))
        .collect();
    write_curves_csv(path, &rows)
}

/// Reads a kernel written by [`write_cov_csv`].
pub fn read_cov_csv(path: impl AsRef<Path>, rule: Quadrature) -> Result<CovOperator> {
    let (grid, rows) = read_curves_csv(path.as_ref(), rule)?;
    if rows.len() != grid.len() {
        return Err(Error::Parse {
            path: path.as_ref().to_path_buf(),
            line: rows.len() + 1,
            msg: format!("expected {} kernel rows, found {}", grid.len(), rows.len()),
        });
    }
    let p = grid.len();
    let k = DMatrix::from_fn(p, p, |i, j| rows[i].values()[j]);
    CovOperator::new(grid, k)
}

/// Synthetic two-parameter data: a sample drawn from a mean curve CSV (first
/// curve) and a kernel CSV on the same grid.
pub fn dti_like(
    mean_path: impl AsRef<Path>,
    cov_path: impl AsRef<Path>,
    n: usize,
    seed: u64,
    rule: Quadrature,
) -> Result<FunctionalSample> {
    let (_, means) = read_curves_csv(mean_path.as_ref(), rule)?;
    let mean = means
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("mean file holds no curve"))?;
    let cov = read_cov_csv(cov_path, rule)?;
    if mean.grid().points() != cov.grid().points() {
        return Err(Error::GridMismatch);
    }
    let mean = Curve::new(cov.grid().clone(), mean.into_values())?;
    sample_gp(&mean, &cov, n, seed)
}
