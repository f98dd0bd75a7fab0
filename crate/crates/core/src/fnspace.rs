//! Discretized Hilbert space: grids with quadrature weights, curves, covariance
//! operators and their weighted eigendecomposition.
//!
//! Every function is represented by its values on a [`Grid`]. The inner product
//! is the quadrature rule `<f, g> = sum_i w_i f(t_i) g(t_i)`, so a covariance
//! kernel `K` acts as the integral operator `(C f)(t_i) = sum_k K_ik w_k f(t_k)`.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default trimming threshold for eigenvalues.
pub const DEFAULT_TRIM: f64 = 1e-18;

/// Quadrature rule used to build grid weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Composite trapezoid rule (end points get half weight).
    #[default]
    Trapezoid,
    /// Equal weights `L / P`, i.e. a plain Riemann sum.
    Riemann,
}

/// Evaluation points on a compact interval together with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Builds a grid from explicit points and weights.
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Arc<Self>> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("no points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite point".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("points not strictly increasing".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidGrid("weights must be positive".into()));
        }
        Ok(Arc::new(Grid { points, weights }))
    }

    /// Builds quadrature weights for arbitrary strictly increasing points.
    pub fn from_points(points: Vec<f64>, rule: Quadrature) -> Result<Arc<Self>> {
        let p = points.len();
        if p < 2 {
            return Err(Error::InvalidGrid("need at least two points".into()));
        }
        let weights = match rule {
            Quadrature::Trapezoid => (0..p)
                .map(|i| {
                    let left = if i > 0 { points[i] - points[i - 1] } else { 0.0 };
                    let right = if i + 1 < p { points[i + 1] - points[i] } else { 0.0 };
                    0.5 * (left + right)
                })
                .collect(),
            Quadrature::Riemann => {
                let len = points[p - 1] - points[0];
                vec![len / p as f64; p]
            }
        };
        Grid::new(points, weights)
    }

    /// `n` equally spaced points on `[a, b]`, end points included.
    pub fn uniform(n: usize, a: f64, b: f64, rule: Quadrature) -> Result<Arc<Self>> {
        if n < 2 || !(b > a) {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs n >= 2 and b > a (n={n}, [{a}, {b}])"
            )));
        }
        let h = (b - a) / (n - 1) as f64;
        let points = (0..n).map(|i| if i + 1 == n { b } else { a + h * i as f64 }).collect();
        Grid::from_points(points, rule)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Length of the domain covered by the grid.
    pub fn domain_length(&self) -> f64 {
        self.points[self.points.len() - 1] - self.points[0]
    }

    /// Index of the grid point nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate() {
            if (p - t).abs() < (self.points[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn check_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Function values on a grid.
#[derive(Clone, PartialEq)]
pub struct Curve {
    values: Vec<f64>,
    grid: Arc<Grid>,
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Curve")
            .field("len", &self.values.len())
            .field("values", &self.values)
            .finish()
    }
}

impl Curve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(Curve { values, grid })
    }

    /// Evaluates `f` at every grid point.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Curve { values, grid }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        Curve { values, grid }
    }

    pub(crate) fn from_vec_unchecked(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Curve { values, grid }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        weighted_dot(self.grid.weights(), &self.values, &self.values).sqrt()
    }

    /// `self - other`.
    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        check_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Curve::from_vec_unchecked(self.grid.clone(), values))
    }

    /// `self + other`.
    pub fn add(&self, other: &Curve) -> Result<Curve> {
        check_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Curve::from_vec_unchecked(self.grid.clone(), values))
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Curve) -> Result<Curve> {
        check_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect();
        Ok(Curve::from_vec_unchecked(self.grid.clone(), values))
    }

    pub fn scale(&self, a: f64) -> Curve {
        let values = self.values.iter().map(|x| a * x).collect();
        Curve::from_vec_unchecked(self.grid.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Curve {
        let values = self.values.iter().map(|&x| f(x)).collect();
        Curve::from_vec_unchecked(self.grid.clone(), values)
    }
}

pub(crate) fn weighted_dot(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g).sum()
}

/// Quadrature inner product of two curves on the same grid.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    check_grid(&f.grid, &g.grid)?;
    Ok(weighted_dot(f.grid.weights(), &f.values, &g.values))
}

/// `sqrt(<f, f>)`.
pub fn norm(f: &Curve) -> f64 {
    f.norm()
}

/// Covariance kernel `C(t_i, t_j)` on a grid, viewed as an integral operator.
#[derive(Debug, Clone)]
pub struct CovOperator {
    kernel: DMatrix<f64>,
    grid: Arc<Grid>,
}

impl CovOperator {
    /// Wraps a kernel matrix. The matrix must be symmetric to within `1e-10`
    /// (relative to its largest entry); it is symmetrized exactly afterwards.
    pub fn new(grid: Arc<Grid>, kernel: DMatrix<f64>) -> Result<Self> {
        let p = grid.len();
        if kernel.nrows() != p || kernel.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: kernel.nrows().max(kernel.ncols()),
            });
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel has non-finite entries"));
        }
        let scale = kernel.amax().max(1.0);
        let mut asym: f64 = 0.0;
        for i in 0..p {
            for j in 0..i {
                asym = asym.max((kernel[(i, j)] - kernel[(j, i)]).abs());
            }
        }
        if asym > 1e-10 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let kernel = (&kernel + kernel.transpose()) * 0.5;
        Ok(CovOperator { kernel, grid })
    }

    /// Evaluates the kernel function on all grid pairs.
    pub fn from_fn(grid: Arc<Grid>, k: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let pts = grid.points();
        let p = pts.len();
        let kernel = DMatrix::from_fn(p, p, |i, j| k(pts[i], pts[j]));
        CovOperator::new(grid, kernel)
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let p = grid.len();
        CovOperator {
            kernel: DMatrix::zeros(p, p),
            grid,
        }
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub(crate) fn from_kernel_unchecked(grid: Arc<Grid>, kernel: DMatrix<f64>) -> Self {
        CovOperator { kernel, grid }
    }

    /// Pointwise variance `C(t, t)`.
    pub fn diagonal(&self) -> Vec<f64> {
        self.kernel.diagonal().iter().copied().collect()
    }

    /// Operator trace, the quadrature of the kernel diagonal.
    pub fn trace(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.kernel[(i, i)])
            .sum()
    }

    /// `(C f)(t_i) = sum_k C(t_i, t_k) w_k f(t_k)`.
    pub fn apply(&self, f: &Curve) -> Result<Curve> {
        check_grid(&self.grid, f.grid())?;
        let wf = DVector::from_iterator(f.len(), f.values().iter().zip(self.grid.weights()).map(|(v, w)| v * w));
        let out = &self.kernel * wf;
        Ok(Curve::from_vec_unchecked(
            self.grid.clone(),
            out.iter().copied().collect(),
        ))
    }

    /// `<C f, g>`.
    pub fn quadratic_form(&self, f: &Curve, g: &Curve) -> Result<f64> {
        let cf = self.apply(f)?;
        inner_product(&cf, g)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &CovOperator, b: f64) -> Result<CovOperator> {
        check_grid(&self.grid, &other.grid)?;
        Ok(CovOperator {
            kernel: &self.kernel * a + &other.kernel * b,
            grid: self.grid.clone(),
        })
    }

    pub fn scale(&self, a: f64) -> CovOperator {
        CovOperator {
            kernel: &self.kernel * a,
            grid: self.grid.clone(),
        }
    }

    /// The symmetrized operator `W^{1/2} K W^{1/2}`, whose ordinary spectrum is
    /// the spectrum of the integral operator.
    pub(crate) fn symmetrized(&self) -> DMatrix<f64> {
        let sw: Vec<f64> = self.grid.weights().iter().map(|w| w.sqrt()).collect();
        let p = sw.len();
        DMatrix::from_fn(p, p, |i, j| sw[i] * self.kernel[(i, j)] * sw[j])
    }

    /// Largest absolute eigenvalue of the integral operator `self - other`
    /// (the operator norm on the discretized space).
    pub fn op_norm_diff(&self, other: &CovOperator) -> Result<f64> {
        let d = self.combine(1.0, other, -1.0)?;
        let eig = SymmetricEigen::new(d.symmetrized());
        Ok(eig.eigenvalues.amax())
    }

    /// Hilbert-Schmidt norm of `self - other`.
    pub fn hs_norm_diff(&self, other: &CovOperator) -> Result<f64> {
        let d = self.combine(1.0, other, -1.0)?;
        Ok(d.symmetrized().norm())
    }
}

/// Eigenvalues (nonincreasing) and weighted-orthonormal eigenfunctions of a
/// covariance operator, together with the spectral gaps.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    grid: Arc<Grid>,
    eigenvalues: Vec<f64>,
    /// Column `j` holds the values of eigenfunction `j` on the grid.
    eigenfunctions: DMatrix<f64>,
    gaps: Vec<f64>,
}

impl EigenSystem {
    /// Assembles an eigensystem from parts. Eigenvalues must be nonnegative
    /// and nonincreasing; columns of `eigenfunctions` are the curves `v_j`.
    pub fn from_parts(grid: Arc<Grid>, eigenvalues: Vec<f64>, eigenfunctions: DMatrix<f64>) -> Result<Self> {
        if eigenfunctions.nrows() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: eigenfunctions.nrows(),
            });
        }
        if eigenfunctions.ncols() != eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len(),
                got: eigenfunctions.ncols(),
            });
        }
        if eigenvalues.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::invalid("eigenvalues must be finite and nonnegative"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("eigenvalues must be nonincreasing"));
        }
        let gaps = spectral_gaps(&eigenvalues);
        Ok(EigenSystem {
            grid,
            eigenvalues,
            eigenfunctions,
            gaps,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Spectral gaps `alpha_j`.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// Number of retained eigenpairs.
    pub fn j_max(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Grid matrix whose columns are the eigenfunctions.
    pub fn eigenfunction_matrix(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    /// Eigenfunction `j` (zero based).
    pub fn eigenfunction(&self, j: usize) -> Curve {
        let col = self.eigenfunctions.column(j).iter().copied().collect();
        Curve::from_vec_unchecked(self.grid.clone(), col)
    }

    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Scores `<f, v_j>` for `j < count`, computed from raw grid values.
    pub(crate) fn scores_raw(&self, values: &[f64], count: usize) -> Vec<f64> {
        let w = self.grid.weights();
        let wf: Vec<f64> = values.iter().zip(w).map(|(v, w)| v * w).collect();
        (0..count)
            .map(|j| self.eigenfunctions.column(j).iter().zip(&wf).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Synthesizes `sum_j coef_j v_j` on the grid.
    pub fn synthesize(&self, coefs: &[f64]) -> Curve {
        let mut out = vec![0.0; self.grid.len()];
        for (j, &c) in coefs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.eigenfunctions.column(j).iter()) {
                *o += c * v;
            }
        }
        Curve::from_vec_unchecked(self.grid.clone(), out)
    }

    /// Reassembles the kernel `sum_j lambda_j v_j(t) v_j(s)`.
    pub fn to_cov(&self) -> CovOperator {
        let v = &self.eigenfunctions;
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * self.eigenvalues[j]);
        let kernel = &scaled * v.transpose();
        CovOperator::from_kernel_unchecked(self.grid.clone(), (&kernel + kernel.transpose()) * 0.5)
    }
}

/// `alpha_1 = l_1 - l_2`, `alpha_j = min(l_j - l_{j+1}, l_{j-1} - l_j)`; the
/// eigenvalue after the last retained one is taken as zero.
pub fn spectral_gaps(eigenvalues: &[f64]) -> Vec<f64> {
    let n = eigenvalues.len();
    let next = |j: usize| if j + 1 < n { eigenvalues[j + 1] } else { 0.0 };
    (0..n)
        .map(|j| {
            let below = eigenvalues[j] - next(j);
            if j == 0 {
                below
            } else {
                below.min(eigenvalues[j - 1] - eigenvalues[j])
            }
        })
        .collect()
}

/// Weighted eigendecomposition of a covariance operator.
///
/// Solves the symmetric problem for `W^{1/2} K W^{1/2}` and maps eigenvectors
/// back through `W^{-1/2}`, so eigenfunctions are orthonormal in the grid inner
/// product. Eigenvalues in `[-1e-10 * l_1, 0)` are clipped to zero; anything
/// more negative is rejected. Eigenvalues below `trim` are dropped.
pub fn eigensystem(cov: &CovOperator, trim: f64) -> Result<EigenSystem> {
    let grid = cov.grid.clone();
    let p = grid.len();
    let eig = SymmetricEigen::new(cov.symmetrized());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let bottom = eig.eigenvalues[order[p - 1]];
    let tol = 1e-10 * top;
    if bottom < -tol {
        return Err(Error::NotPsd { value: bottom, tol });
    }

    let inv_sqrt_w: Vec<f64> = grid.weights().iter().map(|w| 1.0 / w.sqrt()).collect();
    let mut values = Vec::new();
    let mut columns = Vec::new();
    for &k in &order {
        let lambda = eig.eigenvalues[k].max(0.0);
        if lambda <= 0.0 || lambda < trim {
            continue;
        }
        let mut v: Vec<f64> = eig
            .eigenvectors
            .column(k)
            .iter()
            .zip(&inv_sqrt_w)
            .map(|(u, s)| u * s)
            .collect();
        let nrm = weighted_dot(grid.weights(), &v, &v).sqrt();
        // sign convention: the entry of largest magnitude is positive
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let s = if pivot < 0.0 { -1.0 / nrm } else { 1.0 / nrm };
        v.iter_mut().for_each(|x| *x *= s);
        values.push(lambda);
        columns.push(v);
    }
    let j = values.len();
    let mat = DMatrix::from_fn(p, j, |i, c| columns[c][i]);
    let gaps = spectral_gaps(&values);
    Ok(EigenSystem {
        grid,
        eigenvalues: values,
        eigenfunctions: mat,
        gaps,
    })
}

/// Scores `(<f, v_1>, ..., <f, v_J>)`.
pub fn project(f: &Curve, eig: &EigenSystem, j: usize) -> Result<Vec<f64>> {
    check_grid(f.grid(), &eig.grid)?;
    if j > eig.j_max() {
        return Err(Error::TruncationOutOfRange {
            requested: j,
            available: eig.j_max(),
        });
    }
    Ok(eig.scores_raw(f.values(), j))
}

fn fmt_row(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!("{v}"));
    }
    s
}

/// Writes curves in the grid-header CSV layout: the first row holds the grid
/// points, each following row one curve.
pub fn write_curves_csv(path: impl AsRef<Path>, curves: &[Curve]) -> Result<()> {
    let path = path.as_ref();
    let first = curves.first().ok_or_else(|| Error::invalid("no curves to write"))?;
    for c in curves {
        check_grid(first.grid(), c.grid())?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |line: String| writeln!(out, "{line}").map_err(|e| Error::io(path, e));
    write(fmt_row(first.grid().points()))?;
    for c in curves {
        write(fmt_row(c.values()))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads the grid-header CSV layout. Weights are rebuilt from the points
/// with the requested quadrature rule.
pub fn read_curves_csv(path: impl AsRef<Path>, rule: Quadrature) -> Result<(Arc<Grid>, Vec<Curve>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("{cell:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let mut rows = rows.into_iter();
    let points = rows.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "missing grid row".into(),
    })?;
    let grid = Grid::from_points(points, rule)?;
    let curves = rows.map(|r| Curve::new(grid.clone(), r)).collect::<Result<Vec<_>>>()?;
    Ok((grid, curves))
}
