//! Hausdorff distances between empirical and population ellipsoids.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsoid::{make_ellipsoid, select_j, CRule, EllipsoidRegion};
use crate::error::{Error, Result};
use crate::estimators::mean_cov;
use crate::fnspace::{check_grid, eigensystem, Curve, EigenSystem, Grid, Quadrature, DEFAULT_TRIM};
use crate::harness::gp::GpSampler;
use crate::harness::kernels::{matern_cov, DEFAULT_SIGMA};
use crate::harness::report::ReportTable;
use crate::numeric::derive_seed;

/// Gap-dependent term `[sum_{j<=J} 8 xi c_1^2 delta^2 / (N alpha_j^2)]^{1/2}`.
/// A zero gap makes it infinite.
pub fn gap_term(gaps: &[f64], delta: f64, c1_sq: f64, xi: f64, n: usize, j: usize) -> Result<f64> {
    if j == 0 || j > gaps.len() {
        return Err(Error::TruncationOutOfRange {
            requested: j,
            available: gaps.len(),
        });
    }
    let mut s = 0.0;
    for &a in &gaps[..j] {
        if !(a > 0.0) {
            return Ok(f64::INFINITY);
        }
        s += 1.0 / (a * a);
    }
    Ok((8.0 * xi * c1_sq * delta * delta * s / n as f64).sqrt())
}

/// Right-hand sides of the two directed-distance bounds:
/// `rho(E_hat, E) <= b1` and `rho(E, E_hat) <= sqrt(c_J^2 xi / N) + b1`.
pub fn hausdorff_bounds(
    eig_true: &EigenSystem,
    eig_hat: &EigenSystem,
    c_sq: &[f64],
    xi: f64,
    n: usize,
    j: usize,
) -> Result<(f64, f64)> {
    if j == 0 || j > c_sq.len() {
        return Err(Error::TruncationOutOfRange {
            requested: j,
            available: c_sq.len(),
        });
    }
    if c_sq.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
        log::warn!("axis scales are not nonincreasing; bounds assume c_1 >= c_2 >= ...");
    }
    let delta = eig_hat.to_cov().op_norm_diff(&eig_true.to_cov())?;
    let b1 = gap_term(eig_true.gaps(), delta, c_sq[0], xi, n, j)?;
    let b2 = (c_sq[j - 1] * xi / n as f64).sqrt() + b1;
    Ok((b1, b2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HausdorffReport {
    /// Estimate of `rho(E_hat, E)`.
    pub rho_hat_to_true: f64,
    /// Estimate of `rho(E, E_hat)`.
    pub rho_true_to_hat: f64,
    pub d_h: f64,
    pub bound_rho_1: f64,
    pub bound_rho_2: f64,
    pub op_norm_delta: f64,
    pub hs_norm_delta: f64,
    /// `sup_{y in E} ||y - y_J||`, the part of `E` beyond the first `J` axes.
    pub tail_term: f64,
    pub n: usize,
}

/// Squared distance from `b` to `{z : sum z_j^2 / r_j^2 <= 1}` and the
/// nearest point.
fn project_to_ellipsoid(b: &[f64], r: &[f64]) -> (f64, Vec<f64>) {
    let q: f64 = b.iter().zip(r).map(|(b, r)| (b / r).powi(2)).sum();
    if q <= 1.0 {
        return (0.0, b.to_vec());
    }
    let h = |mu: f64| -> (f64, f64) {
        let mut v = -1.0;
        let mut d = 0.0;
        for (b, r) in b.iter().zip(r) {
            let s = r * r + mu;
            let t = r * b / s;
            v += t * t;
            d -= 2.0 * t * t / s;
        }
        (v, d)
    };
    // h is convex and decreasing, so Newton from the left is monotone
    let mut mu = 0.0;
    for _ in 0..500 {
        let (v, d) = h(mu);
        if v <= 0.0 || d == 0.0 {
            break;
        }
        let next = mu - v / d;
        if next - mu <= 1e-15 * next {
            mu = next;
            break;
        }
        mu = next;
    }
    let z: Vec<f64> = b.iter().zip(r).map(|(b, r)| r * r * b / (r * r + mu)).collect();
    let d2 = b.iter().zip(&z).map(|(b, z)| (b - z).powi(2)).sum();
    (d2, z)
}

/// Geometry of `sup_{x in A} dist(x, B)` for two ellipsoids sharing a center.
struct Directed {
    ra: Vec<f64>,
    rb: Vec<f64>,
    /// `<v_B_k, v_A_j>`.
    m: DMatrix<f64>,
    /// Gram matrix of the parts of the `A` axes outside the span of `B`.
    k: DMatrix<f64>,
}

impl Directed {
    fn new(a: &EllipsoidRegion, b: &EllipsoidRegion) -> Self {
        let va = a.eigensystem().eigenfunction_matrix().columns(0, a.j()).into_owned();
        let vb = b.eigensystem().eigenfunction_matrix().columns(0, b.j()).into_owned();
        let w = DVector::from_column_slice(a.center().grid().weights());
        let wva = DMatrix::from_fn(va.nrows(), va.ncols(), |i, j| w[i] * va[(i, j)]);
        let m = vb.transpose() * &wva;
        let resid = &va - &vb * &m;
        let wres = DMatrix::from_fn(resid.nrows(), resid.ncols(), |i, j| w[i] * resid[(i, j)]);
        let k = resid.transpose() * wres;
        Directed {
            ra: a.radii(),
            rb: b.radii(),
            m,
            k,
        }
    }

    /// Squared distance at boundary direction `u` and its ascent direction.
    fn eval(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let a = DVector::from_iterator(u.len(), u.iter().zip(&self.ra).map(|(u, r)| u * r));
        let b = &self.m * &a;
        let (d2, z) = project_to_ellipsoid(b.as_slice(), &self.rb);
        let ka = &self.k * &a;
        let rem = a.dot(&ka).max(0.0);
        let bz = b - DVector::from_vec(z);
        let g = ka + self.m.transpose() * bz;
        let grad = DVector::from_iterator(u.len(), g.iter().zip(&self.ra).map(|(g, r)| g * r));
        (rem + d2, grad)
    }

    /// Conditional-gradient ascent on the unit sphere from `u`.
    fn climb(&self, u: DVector<f64>) -> f64 {
        let (mut f, mut g) = self.eval(&u);
        for _ in 0..300 {
            let gn = g.norm();
            if !(gn > 0.0) {
                break;
            }
            let next = g / gn;
            let (f2, g2) = self.eval(&next);
            if f2 <= f * (1.0 + 1e-13) {
                f = f.max(f2);
                break;
            }
            f = f2;
            g = g2;
        }
        f
    }

    fn sup(&self, n_dirs: usize, rng: &mut ChaCha8Rng) -> f64 {
        let ja = self.ra.len();
        let mut best: f64 = 0.0;
        for j in 0..ja {
            let mut u = DVector::zeros(ja);
            u[j] = 1.0;
            best = best.max(self.climb(u));
        }
        for _ in 0..n_dirs {
            let u = DVector::from_fn(ja, |_, _| rng.sample::<f64, _>(StandardNormal));
            let nrm = u.norm();
            if nrm > 0.0 {
                best = best.max(self.climb(u / nrm));
            }
        }
        best.sqrt()
    }
}

/// Directed distance `rho(A, B) = sup_{x in A} inf_{y in B} ||x - y||`,
/// estimated from below by boundary search.
pub fn directed_distance(a: &EllipsoidRegion, b: &EllipsoidRegion, n_dirs: usize, seed: u64) -> Result<f64> {
    check_pair(a, b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(directed(a, b, n_dirs, &mut rng))
}

/// `A` inside `B` on shared axes, where the distance is exactly zero.
fn nested(a: &EllipsoidRegion, b: &EllipsoidRegion) -> bool {
    let (ea, eb) = (a.eigensystem(), b.eigensystem());
    (Arc::ptr_eq(ea, eb) || ea.eigenfunction_matrix() == eb.eigenfunction_matrix())
        && a.j() <= b.j()
        && a.radii().iter().zip(b.radii()).all(|(x, y)| *x <= y)
}

fn directed(a: &EllipsoidRegion, b: &EllipsoidRegion, n_dirs: usize, rng: &mut ChaCha8Rng) -> f64 {
    if nested(a, b) {
        return 0.0;
    }
    Directed::new(a, b).sup(n_dirs, rng)
}

fn check_pair(a: &EllipsoidRegion, b: &EllipsoidRegion) -> Result<()> {
    check_grid(a.center().grid(), b.center().grid())?;
    let d = a.center().sub(b.center())?.norm();
    if d > 1e-12 * (1.0 + a.center().norm()) {
        return Err(Error::invalid("regions must share the same center"));
    }
    Ok(())
}

/// Both directed distances between an empirical region and a population
/// region with the theorem bounds evaluated at the empirical scales.
pub fn hausdorff_estimate(
    e_hat: &EllipsoidRegion,
    e_true: &EllipsoidRegion,
    n_dirs: usize,
    seed: u64,
) -> Result<HausdorffReport> {
    check_pair(e_hat, e_true)?;
    let j = e_hat.j();
    let eig_true = e_true.eigensystem();
    if j > eig_true.j_max() {
        return Err(Error::TruncationOutOfRange {
            requested: j,
            available: eig_true.j_max(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho1 = directed(e_hat, e_true, n_dirs, &mut rng);
    let rho2 = directed(e_true, e_hat, n_dirs, &mut rng);
    let c_hat = e_hat.eigensystem().to_cov();
    let c_true = eig_true.to_cov();
    let op = c_hat.op_norm_diff(&c_true)?;
    let hs = c_hat.hs_norm_diff(&c_true)?;
    let b1 = gap_term(eig_true.gaps(), op, e_hat.c_sq()[0], e_hat.xi(), e_hat.n(), j)?;
    let b2 = (e_hat.c_sq()[j - 1] * e_hat.xi() / e_hat.n() as f64).sqrt() + b1;
    let tail_term = e_true.radii().iter().skip(j).fold(0.0f64, |m, r| m.max(*r));
    Ok(HausdorffReport {
        rho_hat_to_true: rho1,
        rho_true_to_hat: rho2,
        d_h: rho1.max(rho2),
        bound_rho_1: b1,
        bound_rho_2: b2,
        op_norm_delta: op,
        hs_norm_delta: hs,
        tail_term,
        n: e_hat.n(),
    })
}

/// How the empirical region picks its dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GhostJRule {
    /// `J = round(N^{1/(2 delta + 3 + 2 gamma)})` with `delta` and `gamma`
    /// fitted from the population spectrum and axis scales.
    Balanced,
    Fixed {
        j: usize,
    },
    VarianceFraction {
        fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhostRateConfig {
    pub n_values: Vec<usize>,
    pub nu: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    pub reps: usize,
    pub alpha: f64,
    pub rule: CRule,
    pub j_rule: GhostJRule,
    #[serde(default = "default_n_dirs")]
    pub n_dirs: usize,
    pub seed: u64,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

fn default_grid_size() -> usize {
    100
}

fn default_n_dirs() -> usize {
    32
}

impl Default for GhostRateConfig {
    fn default() -> Self {
        GhostRateConfig {
            n_values: vec![50, 100, 200, 400, 800],
            nu: 0.5,
            sigma: DEFAULT_SIGMA,
            grid_size: default_grid_size(),
            reps: 200,
            alpha: 0.05,
            rule: CRule::SqrtLambda,
            j_rule: GhostJRule::Balanced,
            n_dirs: default_n_dirs(),
            seed: 1,
        }
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Polynomial decay exponent of a positive sequence, `v_j ~ j^{-d}`, fitted
/// on indices `2..=last`.
pub fn decay_exponent(v: &[f64], last: usize) -> f64 {
    let last = last.min(v.len());
    let (x, y): (Vec<f64>, Vec<f64>) = (2..=last)
        .filter(|&j| v[j - 1] > 0.0)
        .map(|j| ((j as f64).ln(), v[j - 1].ln()))
        .unzip();
    if x.len() < 2 {
        return f64::NAN;
    }
    -ols_slope(&x, &y)
}

fn fit_window(eig: &EigenSystem) -> usize {
    let l = eig.eigenvalues();
    let floor = l[0] * 1e-4;
    l.iter().take_while(|v| **v > floor).count().clamp(3, 30)
}

struct RateSetup {
    delta: f64,
    gamma: f64,
}

fn balanced_j(setup: &RateSetup, n: usize) -> usize {
    let e = 1.0 / (2.0 * setup.delta + 3.0 + 2.0 * setup.gamma);
    ((n as f64).powf(e).round() as usize).max(1)
}

/// Mean `d_H^2` of empirical against population ellipsoids over a range of
/// sample sizes, with the fitted log-log slope in a footer row.
pub fn ghost_rate_experiment(config: &GhostRateConfig) -> Result<ReportTable> {
    if config.reps == 0 || config.n_values.is_empty() {
        return Err(Error::Config("ghost rate needs reps >= 1 and at least one N".into()));
    }
    if config.n_values.iter().any(|n| *n < 3) {
        return Err(Error::Config("every N must be at least 3".into()));
    }
    let start = Instant::now();
    let grid = Grid::uniform(config.grid_size, 0.0, 1.0, Quadrature::Trapezoid)?;
    let cov = matern_cov(&grid, config.nu, config.sigma, 1.0)?;
    let eig_true = Arc::new(eigensystem(&cov, DEFAULT_TRIM)?);
    let theta = Curve::zeros(grid.clone());
    let sampler = GpSampler::from_eigensystem(theta.clone(), eig_true.clone());
    let window = fit_window(&eig_true);
    let delta = decay_exponent(eig_true.eigenvalues(), window);
    let c_true = config.rule.c_sq(&eig_true, eig_true.j_max())?;
    let gamma = (decay_exponent(&c_true, window) / 2.0).max(0.0);
    let setup = RateSetup { delta, gamma };
    let j_true = eig_true.j_max();

    let mut table = ReportTable::new(
        ["N", "J", "mean_dH2", "N_times_dH2", "bound1", "bound2", "tail_term"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let mut log_n = Vec::new();
    let mut log_d = Vec::new();
    let n_max = *config.n_values.iter().max().unwrap();
    for (k, &n) in config.n_values.iter().enumerate() {
        let reps: Vec<Result<HausdorffReport>> = (0..config.reps)
            .into_par_iter()
            .map(|r| {
                // nested samples: the first N of a common draw per replication
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, r as u64));
                let x = sampler.draw_matrix(n_max, &mut rng);
                let sample =
                    crate::estimators::FunctionalSample::from_matrix(grid.clone(), &x.rows(0, n).into_owned())?;
                let (center, c_hat) = mean_cov(&sample)?;
                let eig_hat = Arc::new(eigensystem(&c_hat, DEFAULT_TRIM)?);
                let j = match config.j_rule {
                    GhostJRule::Balanced => balanced_j(&setup, n),
                    GhostJRule::Fixed { j } => j,
                    GhostJRule::VarianceFraction { fraction } => select_j(&eig_hat, fraction),
                }
                .min(eig_hat.j_max());
                let e_hat = make_ellipsoid(center.clone(), eig_hat, config.rule, config.alpha, n, j)?;
                let e_true = make_ellipsoid(center, eig_true.clone(), config.rule, config.alpha, n, j_true)?;
                hausdorff_estimate(
                    &e_hat,
                    &e_true,
                    config.n_dirs,
                    derive_seed(config.seed ^ 0x9e37, (k * config.reps + r) as u64),
                )
            })
            .collect();
        let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
        let m = reps.len() as f64;
        let mean = |f: &dyn Fn(&HausdorffReport) -> f64| reps.iter().map(f).sum::<f64>() / m;
        let d2 = mean(&|r| r.d_h * r.d_h);
        let j_used = match config.j_rule {
            GhostJRule::Balanced => balanced_j(&setup, n) as f64,
            GhostJRule::Fixed { j } => j as f64,
            GhostJRule::VarianceFraction { .. } => f64::NAN,
        };
        table.push(
            format!("N={n}"),
            vec![
                n as f64,
                j_used,
                d2,
                n as f64 * d2,
                mean(&|r| r.bound_rho_1),
                mean(&|r| r.bound_rho_2),
                mean(&|r| r.tail_term),
            ],
        )?;
        log_n.push((n as f64).ln());
        log_d.push(d2.ln());
    }
    let slope = ols_slope(&log_n, &log_d);
    let mut footer = vec![f64::NAN; table.columns.len()];
    footer[2] = slope;
    table.push("slope", footer)?;
    table.set_meta("experiment", "ghost_rate");
    table.set_meta("config", config);
    table.set_meta("seed", config.seed);
    table.set_meta("spectral_decay_fit", delta);
    table.set_meta("scale_decay_fit", gamma);
    table.set_meta("runtime_seconds", start.elapsed().as_secs_f64());
    Ok(table)
}
