//! Penalized smoothing of the mean with covariance propagation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bspline::{basis_values, uniform_knots};
use super::{mean, mean_cov, FunctionalSample};
use crate::error::{Error, Result};
use crate::fnspace::{check_grid, CovOperator, Curve, Grid};

/// Degree used when none is given.
pub const DEFAULT_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    /// One function per grid point, `e_j = delta_j / sqrt(w_j)`.
    Raw,
    BSpline {
        degree: usize,
        n_basis: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Fixed,
    /// Pick the penalty from `penalties` by leave-one-out.
    Loocv {
        penalties: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSpec {
    pub basis: Basis,
    pub penalty: f64,
    pub selection: Selection,
}

impl SmoothSpec {
    pub fn new(basis: Basis, penalty: f64) -> Result<Self> {
        let s = SmoothSpec {
            basis,
            penalty,
            selection: Selection::Fixed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn raw(penalty: f64) -> Result<Self> {
        SmoothSpec::new(Basis::Raw, penalty)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::invalid(format!(
                "penalty must be finite and >= 0, got {}",
                self.penalty
            )));
        }
        if let Basis::BSpline { degree, n_basis } = self.basis {
            if n_basis < degree + 1 {
                return Err(Error::invalid(format!(
                    "n_basis = {n_basis} must be at least degree + 1 = {}",
                    degree + 1
                )));
            }
        }
        if let Selection::Loocv { penalties } = &self.selection {
            if penalties.is_empty() {
                return Err(Error::invalid("loocv selection needs at least one penalty"));
            }
            if penalties.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(Error::invalid("loocv penalties must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn with_penalty(&self, penalty: f64) -> SmoothSpec {
        SmoothSpec {
            basis: self.basis.clone(),
            penalty,
            selection: Selection::Fixed,
        }
    }
}

/// Basis values on the grid as a P x K matrix, columns of unit grid norm.
pub fn basis_matrix(grid: &Grid, basis: &Basis) -> Result<DMatrix<f64>> {
    let p = grid.len();
    let w = grid.weights();
    match *basis {
        Basis::Raw => Ok(DMatrix::from_fn(
            p,
            p,
            |i, j| if i == j { 1.0 / w[i].sqrt() } else { 0.0 },
        )),
        Basis::BSpline { degree, n_basis } => {
            if n_basis > p {
                return Err(Error::invalid(format!("n_basis = {n_basis} exceeds grid size {p}")));
            }
            let t = grid.points();
            let knots = uniform_knots(t[0], t[p - 1], degree, n_basis)?;
            let mut e = DMatrix::zeros(p, n_basis);
            for (i, &x) in t.iter().enumerate() {
                for (j, v) in basis_values(x, &knots, degree).into_iter().enumerate() {
                    e[(i, j)] = v;
                }
            }
            for j in 0..n_basis {
                let nrm = (0..p).map(|i| w[i] * e[(i, j)].powi(2)).sum::<f64>().sqrt();
                if nrm <= 0.0 {
                    return Err(Error::Singular(format!("basis function {j} vanishes on the grid")));
                }
                e.column_mut(j).scale_mut(1.0 / nrm);
            }
            Ok(e)
        }
    }
}

/// Three-point second differences at the interior grid points, (P-2) x P.
fn second_difference(grid: &Grid) -> DMatrix<f64> {
    let t = grid.points();
    let p = t.len();
    let mut d = DMatrix::zeros(p.saturating_sub(2), p);
    for i in 1..p.saturating_sub(1) {
        let h1 = t[i] - t[i - 1];
        let h2 = t[i + 1] - t[i];
        d[(i - 1, i - 1)] = 2.0 / (h1 * (h1 + h2));
        d[(i - 1, i)] = -2.0 / (h1 * h2);
        d[(i - 1, i + 1)] = 2.0 / (h2 * (h1 + h2));
    }
    d
}

/// Linear map `S` with `m_hat = S x_bar` on the grid values.
///
/// Equivalent to `E (B + lambda D)^{-1} E' W`, computed by QR of the stacked
/// least-squares design.
pub fn smoother_matrix(grid: &Grid, basis: &Basis, penalty: f64) -> Result<DMatrix<f64>> {
    let p = grid.len();
    if p < 3 {
        return Err(Error::InvalidGrid("smoothing needs at least 3 grid points".into()));
    }
    let e = basis_matrix(grid, basis)?;
    let k = e.ncols();
    let w = grid.weights();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let d2 = second_difference(grid) * &e;
    let rows = if penalty > 0.0 { 2 * p - 2 } else { p };
    let mut m = DMatrix::zeros(rows, k);
    for i in 0..p {
        for j in 0..k {
            m[(i, j)] = sw[i] * e[(i, j)];
        }
    }
    if penalty > 0.0 {
        let sl = penalty.sqrt();
        for r in 0..p - 2 {
            let s = sl * sw[r + 1];
            for j in 0..k {
                m[(p + r, j)] = s * d2[(r, j)];
            }
        }
    }
    if rows < k {
        return Err(Error::Singular("fewer equations than basis functions".into()));
    }
    let qr = m.qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if rmax == 0.0 || r.diagonal().iter().any(|v| v.abs() < 1e-10 * rmax) {
        return Err(Error::Singular("penalized design is rank deficient".into()));
    }
    let q = qr.q();
    // coefficients a = R^{-1} Q_top' W^{1/2} x
    let mut qt = q.rows(0, p).transpose();
    for (i, &wi) in sw.iter().enumerate().take(p) {
        qt.column_mut(i).scale_mut(wi);
    }
    let coef = r
        .solve_upper_triangular(&qt)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    Ok(e * coef)
}

fn resolve(sample: &FunctionalSample, spec: &SmoothSpec) -> Result<SmoothSpec> {
    spec.validate()?;
    match &spec.selection {
        Selection::Fixed => Ok(spec.clone()),
        Selection::Loocv { penalties } => {
            let cands: Vec<SmoothSpec> = penalties.iter().map(|&l| spec.with_penalty(l)).collect();
            loocv(sample, &cands)
        }
    }
}

/// Smoothed mean and the covariance of that estimator (`S (C / N) S'`).
pub fn smooth_penalized(sample: &FunctionalSample, spec: &SmoothSpec) -> Result<(Curve, CovOperator)> {
    let spec = resolve(sample, spec)?;
    let (m, c) = mean_cov(sample)?;
    let s = smoother_matrix(sample.grid(), &spec.basis, spec.penalty)?;
    let mhat = &s * DVector::from_column_slice(m.values());
    let k = &s * c.kernel() * s.transpose() / sample.n() as f64;
    let k = (&k + k.transpose()) * 0.5;
    Ok((
        Curve::from_vec_unchecked(sample.grid().clone(), mhat.as_slice().to_vec()),
        CovOperator::from_kernel_unchecked(sample.grid().clone(), k),
    ))
}

/// Least-squares projection of every curve onto a B-spline space.
pub fn smooth_bspline(sample: &FunctionalSample, n_basis: usize, degree: usize) -> Result<FunctionalSample> {
    let grid = sample.grid();
    let proj = smoother_matrix(grid, &Basis::BSpline { degree, n_basis }, 0.0)?;
    let curves = sample
        .curves()
        .iter()
        .map(|c| {
            let v = &proj * DVector::from_column_slice(c.values());
            Curve::from_vec_unchecked(grid.clone(), v.as_slice().to_vec())
        })
        .collect();
    FunctionalSample::new(curves)
}

fn grid_sq_norm(w: &[f64], a: &[f64], b: &DVector<f64>) -> f64 {
    w.iter()
        .zip(a)
        .zip(b.iter())
        .map(|((w, x), y)| w * (x - y).powi(2))
        .sum()
}

fn loocv_score(sample: &FunctionalSample, s: &DMatrix<f64>, total: &[f64]) -> f64 {
    let n = sample.n() as f64;
    let w = sample.grid().weights();
    sample
        .curves()
        .par_iter()
        .map(|c| {
            let xi = c.values();
            let rest = DVector::from_iterator(xi.len(), total.iter().zip(xi).map(|(t, x)| (t - x) / (n - 1.0)));
            grid_sq_norm(w, xi, &(s * rest))
        })
        .sum()
}

/// `sum_i ||X_i - m_hat_(-i)||^2` for each candidate.
pub fn loocv_scores(sample: &FunctionalSample, candidates: &[SmoothSpec]) -> Result<Vec<f64>> {
    if sample.n() < 3 {
        return Err(Error::invalid("leave-one-out needs at least three curves"));
    }
    let n = sample.n() as f64;
    let total: Vec<f64> = mean(sample).values().iter().map(|v| v * n).collect();
    candidates
        .iter()
        .map(|spec| {
            spec.validate()?;
            let s = smoother_matrix(sample.grid(), &spec.basis, spec.penalty)?;
            Ok(loocv_score(sample, &s, &total))
        })
        .collect()
}

fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

/// Candidate with the smallest leave-one-out score (first on ties).
pub fn loocv(sample: &FunctionalSample, candidates: &[SmoothSpec]) -> Result<SmoothSpec> {
    if candidates.is_empty() {
        return Err(Error::invalid("no smoothing candidates"));
    }
    let scores = loocv_scores(sample, candidates)?;
    let mut best = candidates[argmin(&scores)].clone();
    best.selection = Selection::Fixed;
    Ok(best)
}

fn halves(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let b = idx.split_off(n / 2);
    (idx, b)
}

fn mean_diff(s1: &FunctionalSample, i1: &[usize], s2: &FunctionalSample, i2: &[usize]) -> Result<DVector<f64>> {
    let a = mean(&s1.select(i1)?);
    let b = mean(&s2.select(i2)?);
    Ok(DVector::from_iterator(
        a.len(),
        a.values().iter().zip(b.values()).map(|(x, y)| x - y),
    ))
}

/// Two-fold cross-validation on the mean difference.
///
/// Each group is split in half with `seed`; the smoothed difference of one
/// half is scored against the raw difference of the other, both ways.
pub fn twofold_cv(
    s1: &FunctionalSample,
    s2: &FunctionalSample,
    candidates: &[SmoothSpec],
    seed: u64,
) -> Result<(SmoothSpec, Vec<f64>)> {
    check_grid(s1.grid(), s2.grid())?;
    if candidates.is_empty() {
        return Err(Error::invalid("no smoothing candidates"));
    }
    if s1.n() < 2 || s2.n() < 2 {
        return Err(Error::invalid("two-fold split needs at least two curves per group"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a1, b1) = halves(s1.n(), &mut rng);
    let (a2, b2) = halves(s2.n(), &mut rng);
    let da = mean_diff(s1, &a1, s2, &a2)?;
    let db = mean_diff(s1, &b1, s2, &b2)?;
    let w = s1.grid().weights();
    let scores = candidates
        .iter()
        .map(|spec| {
            spec.validate()?;
            let s = smoother_matrix(s1.grid(), &spec.basis, spec.penalty)?;
            Ok(grid_sq_norm(w, db.as_slice(), &(&s * &da)) + grid_sq_norm(w, da.as_slice(), &(&s * &db)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = candidates[argmin(&scores)].clone();
    best.selection = Selection::Fixed;
    Ok((best, scores))
}

/// Grid helper for callers that only hold an `Arc`.
pub fn smoother_for(grid: &Arc<Grid>, spec: &SmoothSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    smoother_matrix(grid, &spec.basis, spec.penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::{eigensystem, Quadrature};
    use rand_distr::{Distribution, StandardNormal};

    fn grid(p: usize) -> Arc<Grid> {
        Grid::uniform(p, 0.0, 1.0, Quadrature::Trapezoid).unwrap()
    }

    fn noisy(g: &Arc<Grid>, n: usize, sd: f64, seed: u64, f: impl Fn(f64) -> f64) -> FunctionalSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curves = (0..n)
            .map(|_| {
                let v = g
                    .points()
                    .iter()
                    .map(|&t| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        f(t) + sd * z
                    })
                    .collect();
                Curve::new(g.clone(), v).unwrap()
            })
            .collect();
        FunctionalSample::new(curves).unwrap()
    }

    #[test]
    fn zero_penalty_reproduces_mean() {
        let g = grid(25);
        let s = noisy(&g, 8, 0.3, 1, |t| t.sin());
        let (m, c) = mean_cov(&s).unwrap();
        let (mh, ch) = smooth_penalized(&s, &SmoothSpec::raw(0.0).unwrap()).unwrap();
        for (a, b) in m.values().iter().zip(mh.values()) {
            assert!((a - b).abs() < 1e-8);
        }
        let diff = ch.kernel() - c.kernel() / 8.0;
        assert!(diff.amax() < 1e-8);
    }

    #[test]
    fn huge_penalty_gives_linear_fit() {
        let g = Grid::from_points(
            (0..30).map(|i| (i as f64 / 29.0).powf(1.3)).collect(),
            Quadrature::Trapezoid,
        )
        .unwrap();
        let s = noisy(&g, 5, 0.5, 2, |t| (3.0 * t).cos());
        let m = mean(&s);
        let (mh, _) = smooth_penalized(&s, &SmoothSpec::raw(1e8).unwrap()).unwrap();
        let w = g.weights();
        let t = g.points();
        let x = DMatrix::from_fn(t.len(), 2, |i, j| w[i].sqrt() * if j == 0 { 1.0 } else { t[i] });
        let y = DVector::from_iterator(t.len(), (0..t.len()).map(|i| w[i].sqrt() * m.values()[i]));
        let beta = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            let fit = beta[0] + beta[1] * ti;
            assert!((mh.values()[i] - fit).abs() < 1e-3, "{} vs {}", mh.values()[i], fit);
        }
    }

    #[test]
    fn smoothing_contracts_trace_and_stays_psd() {
        let g = grid(20);
        let s = noisy(&g, 12, 1.0, 3, |t| t);
        let (_, c) = mean_cov(&s).unwrap();
        let raw = c.trace() / 12.0;
        for lam in [1e-6, 1e-3, 1.0] {
            for basis in [Basis::Raw, Basis::BSpline { degree: 3, n_basis: 10 }] {
                let (_, ch) = smooth_penalized(&s, &SmoothSpec::new(basis, lam).unwrap()).unwrap();
                assert!(ch.trace() <= raw * (1.0 + 1e-10));
                assert!(eigensystem(&ch, 1e-18).is_ok());
            }
        }
    }

    #[test]
    fn bspline_projection_is_idempotent() {
        let g = grid(60);
        let s = noisy(&g, 4, 0.2, 4, |t| t * t);
        let once = smooth_bspline(&s, 12, 3).unwrap();
        let twice = smooth_bspline(&once, 12, 3).unwrap();
        for (a, b) in once.curves().iter().zip(twice.curves()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
        assert!(smooth_bspline(&s, 61, 3).is_err());
    }

    #[test]
    fn quintic_is_nearly_in_rich_spline_space() {
        let g = grid(101);
        let f = Curve::from_fn(g.clone(), |t| 10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5));
        let s = FunctionalSample::new(vec![f.clone()]).unwrap();
        let p = smooth_bspline(&s, 15, 3).unwrap();
        let r = p.curves()[0].sub(&f).unwrap().norm();
        assert!(r * r < 1e-6, "{r}");
    }

    #[test]
    fn loocv_picks_interior_penalty() {
        let g = grid(40);
        let s = noisy(&g, 10, 1.0, 5, |t| 1.0 + 2.0 * t - 3.0 * t * t);
        let lams: Vec<f64> = (-10..=6).map(|k| 10f64.powi(k)).collect();
        let cands: Vec<SmoothSpec> = lams.iter().map(|&l| SmoothSpec::raw(l).unwrap()).collect();
        let scores = loocv_scores(&s, &cands).unwrap();
        let best = argmin(&scores);
        assert!(best > 0 && best < lams.len() - 1, "{scores:?}");
        assert_eq!(loocv(&s, &cands[..1]).unwrap(), cands[0]);
        assert_eq!(loocv(&s, &cands).unwrap(), loocv(&s, &cands).unwrap());
        assert!(loocv(&s, &[]).is_err());
    }

    #[test]
    fn loocv_selection_inside_spec() {
        let g = grid(30);
        let s = noisy(&g, 6, 1.0, 6, |t| t);
        let spec = SmoothSpec {
            basis: Basis::Raw,
            penalty: 0.0,
            selection: Selection::Loocv {
                penalties: vec![0.0, 1e-4, 1e-2],
            },
        };
        assert!(smooth_penalized(&s, &spec).is_ok());
        assert!(SmoothSpec::raw(-1.0).is_err());
        assert!(SmoothSpec::new(Basis::BSpline { degree: 3, n_basis: 3 }, 0.0).is_err());
    }

    #[test]
    fn twofold_is_seeded() {
        let g = grid(30);
        let s1 = noisy(&g, 8, 1.0, 7, |t| t);
        let s2 = noisy(&g, 9, 1.0, 8, |_| 0.0);
        let cands: Vec<SmoothSpec> = [0.0, 1e-4, 1e-2].iter().map(|&l| SmoothSpec::raw(l).unwrap()).collect();
        let a = twofold_cv(&s1, &s2, &cands, 11).unwrap();
        let b = twofold_cv(&s1, &s2, &cands, 11).unwrap();
        assert_eq!(a, b);
    }
}
