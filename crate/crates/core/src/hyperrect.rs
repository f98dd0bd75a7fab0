//! Hyper-rectangular confidence regions
//! `{h : |<h - theta_hat, v_j>| <= z_j sqrt(lambda_j / N), j <= J}`.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ellipsoid::BOUNDARY_RTOL;
use crate::error::{Error, Result};
use crate::fnspace::{check_grid, Curve, EigenSystem};
use crate::numeric::bisect;
use crate::scalardist::{ln_phi_sym, phi_sym_inv_ln, phi_sym_upper, t_sym_inv_upper, t_sym_upper};

/// How the per-axis critical values are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RectKind {
    /// Closed form: `log Phi_sym(z_j)` proportional to `lambda_j^rho`.
    Z,
    /// Smallest farthest-point distance (Lagrange solution).
    Z1,
    /// `c_j^2 = lambda_j^{1/2}` with a common `xi`.
    C,
    /// `c_j^2 = (sum_{i >= j} lambda_i)^{1/2}` with a common `xi`.
    C1,
}

/// Student-t correction for small samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallSampleMode {
    /// `P(|T_j| <= t_j) = P(|Z_j| <= z_j)` on every axis.
    #[default]
    PerAxis,
    /// `t_j = c z_j` with one common factor `c`.
    CommonScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectVariant {
    pub kind: RectKind,
    /// Budget exponent for [`RectKind::Z`]; must be at least 1.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Apply the per-axis t correction with `N - 1` degrees of freedom.
    #[serde(default)]
    pub small_sample: bool,
}

fn default_rho() -> f64 {
    1.0
}

impl RectVariant {
    pub fn new(kind: RectKind) -> Self {
        RectVariant {
            kind,
            rho: 1.0,
            small_sample: false,
        }
    }

    pub fn small(kind: RectKind) -> Self {
        RectVariant {
            kind,
            rho: 1.0,
            small_sample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SmallSample {
    mode: SmallSampleMode,
    df: f64,
    t: Vec<f64>,
}

/// A hyper-rectangular confidence region.
#[derive(Debug, Clone)]
pub struct RectRegion {
    center: Curve,
    eig: Arc<EigenSystem>,
    /// Variance scale per axis; the leading `J` entries are the axes, all of
    /// them enter the `Z` budget.
    lambda: Vec<f64>,
    variant: RectVariant,
    alpha: f64,
    n: usize,
    z: Vec<f64>,
    small: Option<SmallSample>,
    /// Log Lagrange multiplier (Z1) or `sqrt(xi)` (C, C1); unused for Z.
    level: f64,
}

/// Builds a rectangle with the eigenvalues of `eig` as axis variances.
pub fn make_rect(
    center: Curve,
    eig: Arc<EigenSystem>,
    variant: RectVariant,
    alpha: f64,
    n: usize,
    j: usize,
) -> Result<RectRegion> {
    let lambda = eig.eigenvalues().to_vec();
    make_rect_with_lambda(center, eig, lambda, variant, alpha, n, j)
}

/// Builds a rectangle along the eigenfunctions of `eig` with explicit axis
/// variances `lambda` (e.g. `<C_hat v_j, v_j>` for known eigenfunctions).
/// `lambda` may be longer than `j`; the `Z` budget sums over all of it.
pub fn make_rect_with_lambda(
    center: Curve,
    eig: Arc<EigenSystem>,
    lambda: Vec<f64>,
    variant: RectVariant,
    alpha: f64,
    n: usize,
    j: usize,
) -> Result<RectRegion> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    if !(variant.rho >= 1.0) {
        return Err(Error::invalid(format!("rho must be >= 1, got {}", variant.rho)));
    }
    check_grid(center.grid(), eig.grid())?;
    if j == 0 || j > eig.j_max() || j > lambda.len() {
        return Err(Error::TruncationOutOfRange {
            requested: j,
            available: eig.j_max().min(lambda.len()),
        });
    }
    if lambda[..j].iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("axis variances must be positive within the retained J"));
    }
    let log_cov = (-alpha).ln_1p();
    let lam = &lambda[..j];
    let (z, level) = match variant.kind {
        RectKind::Z => {
            let total: f64 = lambda.iter().filter(|l| **l > 0.0).map(|l| l.powf(variant.rho)).sum();
            let z = lam
                .iter()
                .map(|l| phi_sym_inv_ln(l.powf(variant.rho) / total * log_cov))
                .collect::<Result<Vec<_>>>()?;
            (z, f64::NAN)
        }
        RectKind::Z1 => {
            let m = solve_z1_multiplier(lam, log_cov)?;
            (z1_scores(lam, m)?, m)
        }
        RectKind::C | RectKind::C1 => {
            let c = rect_c(variant.kind, &lambda, j);
            let s = solve_common_xi(lam, &c, log_cov)?;
            let z = lam.iter().zip(&c).map(|(l, c)| c * s / l.sqrt()).collect();
            (z, s)
        }
    };
    let rect = RectRegion {
        center,
        eig,
        lambda,
        variant,
        alpha,
        n,
        z,
        small: None,
        level,
    };
    if variant.small_sample {
        small_sample_adjust(&rect, n, SmallSampleMode::PerAxis)
    } else {
        Ok(rect)
    }
}

/// `c_j` (not squared) for the xi-search variants.
fn rect_c(kind: RectKind, lambda: &[f64], j: usize) -> Vec<f64> {
    if kind == RectKind::C1 {
        let mut tail: f64 = lambda.iter().sum();
        let mut out = Vec::with_capacity(j);
        for l in &lambda[..j] {
            out.push(tail.max(0.0).powf(0.25));
            tail -= l;
        }
        out
    } else {
        lambda[..j].iter().map(|l| l.powf(0.25)).collect()
    }
}

/// `sqrt(xi)` with `sum_j log Phi_sym(c_j sqrt(xi) / sqrt(lambda_j)) = log_cov`.
fn solve_common_xi(lam: &[f64], c: &[f64], log_cov: f64) -> Result<f64> {
    let ratio: Vec<f64> = lam.iter().zip(c).map(|(l, c)| c / l.sqrt()).collect();
    let g = |s: f64| ratio.iter().map(|r| ln_phi_sym(r * s)).sum::<f64>() - log_cov;
    let mut hi = 1.0 / ratio.iter().cloned().fold(f64::INFINITY, f64::min);
    while g(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Bracket {
                what: "rectangle xi",
                lo: 0.0,
                hi,
                f_lo: f64::NEG_INFINITY,
                f_hi: f64::NAN,
            });
        }
    }
    bisect(g, 0.0, hi, 1e-15, "rectangle xi")
}

/// `ln f(z)` with `f(z) = exp(z^2 / 2) z Phi_sym(z)`.
pub fn ln_f_z1(z: f64) -> f64 {
    if z <= 0.0 {
        return f64::NEG_INFINITY;
    }
    0.5 * z * z + z.ln() + ln_phi_sym(z)
}

/// Inverse of [`ln_f_z1`] on `z > 0`.
pub fn inv_ln_f_z1(target: f64) -> Result<f64> {
    if target == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let g = |z: f64| ln_f_z1(z) - target;
    let mut lo = 1.0;
    while g(lo) > 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Ok(0.0);
        }
    }
    let mut hi = 2.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Bracket {
                what: "inverse of f",
                lo,
                hi,
                f_lo: g(lo),
                f_hi: f64::NAN,
            });
        }
    }
    bisect(g, lo, hi, 1e-15, "inverse of f")
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

fn z1_scores(lam: &[f64], ln_m: f64) -> Result<Vec<f64>> {
    lam.iter().map(|l| inv_ln_f_z1(ln_m - LN_SQRT_2PI - l.ln())).collect()
}

/// `ln M` solving `sum_j log Phi_sym(z_j(M)) = log_cov`.
fn solve_z1_multiplier(lam: &[f64], log_cov: f64) -> Result<f64> {
    let p = lam.len() as f64;
    let z_lb = phi_sym_inv_ln(log_cov)?;
    let z_ub = phi_sym_inv_ln(log_cov / p)?;
    let lam1 = lam[0];
    let lo = LN_SQRT_2PI + lam1.ln() + ln_f_z1(z_lb);
    let hi = LN_SQRT_2PI + lam1.ln() + ln_f_z1(z_ub);
    let g = |ln_m: f64| -> f64 {
        lam.iter()
            .map(|l| ln_phi_sym(inv_ln_f_z1(ln_m - LN_SQRT_2PI - l.ln()).unwrap_or(f64::INFINITY)))
            .sum::<f64>()
            - log_cov
    };
    if p == 1.0 {
        return Ok(lo);
    }
    bisect(g, lo, hi, 1e-15, "rectangle multiplier")
}

/// Student-t corrected copy of `rect` for a sample of size `n`
/// (`n - 1` degrees of freedom).
pub fn small_sample_adjust(rect: &RectRegion, n: usize, mode: SmallSampleMode) -> Result<RectRegion> {
    if n < 2 {
        return Err(Error::invalid(format!("small-sample correction needs N >= 2, got {n}")));
    }
    let df = (n - 1) as f64;
    let t = match mode {
        SmallSampleMode::PerAxis => rect
            .z
            .iter()
            .map(|z| t_sym_inv_upper(df, phi_sym_upper(*z)))
            .collect::<Result<Vec<_>>>()?,
        SmallSampleMode::CommonScale => {
            let target: f64 = rect.z.iter().map(|z| ln_phi_sym(*z)).sum();
            let g = |c: f64| rect.z.iter().map(|z| (-t_sym_upper(df, c * z)).ln_1p()).sum::<f64>() - target;
            let mut hi = 2.0;
            while g(hi) < 0.0 {
                hi *= 2.0;
                if hi > 1e12 {
                    return Err(Error::Bracket {
                        what: "common t scale",
                        lo: 1.0,
                        hi,
                        f_lo: g(1.0),
                        f_hi: g(hi),
                    });
                }
            }
            let c = bisect(g, 1.0, hi, 1e-14, "common t scale")?;
            rect.z.iter().map(|z| c * z).collect()
        }
    };
    let mut out = rect.clone();
    out.small = Some(SmallSample { mode, df, t });
    Ok(out)
}

/// Marginal interval for `|<theta, v_j>|` (or the absolute z-score).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalInterval {
    pub j: usize,
    pub center_abs: f64,
    pub half_width: f64,
    pub excludes_zero: bool,
}

impl RectRegion {
    /// Copy with a new center; everything else is kept.
    pub fn recentered(&self, center: Curve) -> Result<Self> {
        check_grid(self.center.grid(), center.grid())?;
        Ok(Self { center, ..self.clone() })
    }

    pub fn center(&self) -> &Curve {
        &self.center
    }

    pub fn eigensystem(&self) -> &Arc<EigenSystem> {
        &self.eig
    }

    pub fn variant(&self) -> RectVariant {
        self.variant
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn j(&self) -> usize {
        self.z.len()
    }

    /// `ln M` for `Z1`, `sqrt(xi)` for `C` and `C1`, `None` for `Z`.
    pub fn level(&self) -> Option<f64> {
        self.level.is_finite().then_some(self.level)
    }

    /// Normal critical values `z_j`.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// t critical values when a small-sample correction is applied.
    pub fn t(&self) -> Option<&[f64]> {
        self.small.as_ref().map(|s| s.t.as_slice())
    }

    /// Per-axis variances in use (`lambda_j` or `lambda~_j`), first `J`.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda[..self.j()]
    }

    /// Critical values in effect: `t_j` if corrected, else `z_j`.
    pub fn critical(&self) -> &[f64] {
        match &self.small {
            Some(s) => &s.t,
            None => &self.z,
        }
    }

    /// Half-widths along each axis, `crit_j sqrt(lambda_j / N)`.
    pub fn half_widths(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.critical()
            .iter()
            .zip(self.lambda())
            .map(|(c, l)| c * (l / n).sqrt())
            .collect()
    }

    /// Scores of `h - center`.
    pub fn offsets(&self, h: &Curve) -> Result<Vec<f64>> {
        check_grid(self.center.grid(), h.grid())?;
        let d = h.sub(&self.center)?;
        Ok(self.eig.scores_raw(d.values(), self.j()))
    }

    pub fn contains(&self, h: &Curve) -> Result<bool> {
        let s = self.offsets(h)?;
        Ok(self.contains_scores(&s))
    }

    pub(crate) fn contains_scores(&self, s: &[f64]) -> bool {
        s.iter()
            .zip(self.half_widths())
            .all(|(s, w)| s.abs() <= w * (1.0 + BOUNDARY_RTOL))
    }

    /// `ln Phi_sym(z*_j)` for the observed standardized offsets.
    fn ln_phi_star(&self, s: &[f64]) -> Vec<f64> {
        let n = self.n as f64;
        s.iter()
            .zip(self.lambda())
            .map(|(s, l)| {
                let score = s.abs() * (n / l).sqrt();
                match &self.small {
                    Some(sm) => (-t_sym_upper(sm.df, score)).ln_1p(),
                    None => ln_phi_sym(score),
                }
            })
            .collect()
    }

    /// Smallest `alpha` whose region excludes `theta0`.
    pub fn pvalue(&self, theta0: &Curve) -> Result<f64> {
        let s = self.offsets(theta0)?;
        self.pvalue_scores(&s)
    }

    pub(crate) fn pvalue_scores(&self, s: &[f64]) -> Result<f64> {
        if let Some(SmallSample {
            mode: SmallSampleMode::CommonScale,
            ..
        }) = self.small
        {
            return self.pvalue_by_inversion(s);
        }
        let lp = self.ln_phi_star(s);
        if lp.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Ok(1.0);
        }
        let lam = self.lambda();
        let p = match self.variant.kind {
            RectKind::Z => {
                let rho = self.variant.rho;
                let total: f64 = self.lambda.iter().filter(|l| **l > 0.0).map(|l| l.powf(rho)).sum();
                lp.iter()
                    .zip(lam)
                    .map(|(v, l)| -((total / l.powf(rho)) * v).exp_m1())
                    .fold(1.0, f64::min)
            }
            RectKind::Z1 => {
                let zs = lp.iter().map(|v| z_from_ln_phi(*v)).collect::<Result<Vec<_>>>()?;
                let ln_m = zs
                    .iter()
                    .zip(lam)
                    .map(|(z, l)| LN_SQRT_2PI + l.ln() + ln_f_z1(*z))
                    .fold(f64::NEG_INFINITY, f64::max);
                let z_star = z1_scores(lam, ln_m)?;
                -z_star.iter().map(|z| ln_phi_sym(*z)).sum::<f64>().exp_m1()
            }
            RectKind::C | RectKind::C1 => {
                let c = rect_c(self.variant.kind, &self.lambda, self.j());
                let zs = lp.iter().map(|v| z_from_ln_phi(*v)).collect::<Result<Vec<_>>>()?;
                let s_star = zs
                    .iter()
                    .zip(lam)
                    .zip(&c)
                    .map(|((z, l), c)| z * l.sqrt() / c)
                    .fold(0.0, f64::max);
                -lam.iter()
                    .zip(&c)
                    .map(|(l, c)| ln_phi_sym(c * s_star / l.sqrt()))
                    .sum::<f64>()
                    .exp_m1()
            }
        };
        Ok(p.clamp(0.0, 1.0))
    }

    /// Rebuilds this region at another confidence deficit.
    fn at_alpha(&self, alpha: f64) -> Result<RectRegion> {
        let mut variant = self.variant;
        variant.small_sample = false;
        let base = make_rect_with_lambda(
            self.center.clone(),
            self.eig.clone(),
            self.lambda.clone(),
            variant,
            alpha,
            self.n,
            self.j(),
        )?;
        match &self.small {
            Some(sm) => small_sample_adjust(&base, sm.df as usize + 1, sm.mode),
            None => Ok(base),
        }
    }

    /// p-value as the smallest covering alpha, by bisection on membership.
    fn pvalue_by_inversion(&self, s: &[f64]) -> Result<f64> {
        let covers = |a: f64| -> Result<bool> { Ok(self.at_alpha(a)?.contains_scores(s)) };
        let mut lo = 1e-15;
        let mut hi = 1.0 - 1e-12;
        if !covers(lo)? {
            return Ok(0.0);
        }
        if covers(hi)? {
            return Ok(1.0);
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if covers(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(hi)
    }

    /// Intervals for `|<theta, v_j>|`, or for the absolute z-scores when
    /// `zscore` is set.
    pub fn marginal_intervals(&self, zscore: bool) -> Vec<MarginalInterval> {
        let n = self.n as f64;
        let coef = self.eig.scores_raw(self.center.values(), self.j());
        coef.iter()
            .zip(self.lambda())
            .zip(self.critical())
            .enumerate()
            .map(|(i, ((c, l), crit))| {
                let scale = (l / n).sqrt();
                let (center_abs, half_width) = if zscore {
                    (c.abs() / scale, *crit)
                } else {
                    (c.abs(), crit * scale)
                };
                MarginalInterval {
                    j: i + 1,
                    center_abs,
                    half_width,
                    excludes_zero: center_abs - half_width > 0.0,
                }
            })
            .collect()
    }

    /// Writes `j, center_abs, half_width, excludes_zero`.
    pub fn write_marginals_csv(&self, path: impl AsRef<Path>, zscore: bool) -> Result<()> {
        write_marginals_csv(path, &self.marginal_intervals(zscore))
    }
}

fn z_from_ln_phi(v: f64) -> Result<f64> {
    if v == f64::NEG_INFINITY {
        Ok(0.0)
    } else if v >= 0.0 {
        Ok(f64::INFINITY)
    } else {
        phi_sym_inv_ln(v)
    }
}

pub fn write_marginals_csv(path: impl AsRef<Path>, rows: &[MarginalInterval]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut text = String::from("j,center_abs,half_width,excludes_zero\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.j, r.center_abs, r.half_width, r.excludes_zero
        ));
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Squared farthest-point radius `sum_j lambda_j z_j^2` (times `1/N`).
pub fn z1_objective(lambda: &[f64], z: &[f64]) -> f64 {
    lambda.iter().zip(z).map(|(l, z)| l * z * z).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::Grid;
    use crate::scalardist::{phi_sym, phi_sym_inv};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn diag_system(lam: &[f64]) -> Arc<EigenSystem> {
        let p = lam.len().max(2);
        let points: Vec<f64> = (0..p).map(|i| i as f64).collect();
        let g = Grid::new(points, vec![1.0; p]).unwrap();
        let v = DMatrix::from_fn(p, lam.len(), |i, j| if i == j { 1.0 } else { 0.0 });
        Arc::new(EigenSystem::from_parts(g, lam.to_vec(), v).unwrap())
    }

    fn zero_center(eig: &Arc<EigenSystem>) -> Curve {
        Curve::zeros(eig.grid().clone())
    }

    #[test]
    fn z_variant_examples() {
        let eig = diag_system(&[1.0]);
        let r = make_rect(zero_center(&eig), eig, RectVariant::new(RectKind::Z), 0.05, 1, 1).unwrap();
        assert_abs_diff_eq!(r.z()[0], 1.959964, epsilon = 1e-5);

        let eig = diag_system(&[1.0, 1.0]);
        let r = make_rect(zero_center(&eig), eig, RectVariant::new(RectKind::Z), 0.05, 1, 2).unwrap();
        let expect = phi_sym_inv(0.95f64.sqrt()).unwrap();
        assert_abs_diff_eq!(expect, 2.2365, epsilon = 1e-3);
        assert_abs_diff_eq!(r.z()[0], expect, epsilon = 1e-10);
        assert_abs_diff_eq!(r.z()[1], expect, epsilon = 1e-10);
    }

    #[test]
    fn c_matches_z_on_flat_spectrum() {
        let eig = diag_system(&[1.0, 1.0]);
        let z = make_rect(
            zero_center(&eig),
            eig.clone(),
            RectVariant::new(RectKind::Z),
            0.05,
            1,
            2,
        )
        .unwrap();
        let c = make_rect(zero_center(&eig), eig, RectVariant::new(RectKind::C), 0.05, 1, 2).unwrap();
        for (a, b) in z.z().iter().zip(c.z()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn budget_identity_and_truncation() {
        let lam: Vec<f64> = (1..=12).map(|j| 1.0 / (j * j) as f64).collect();
        let eig = diag_system(&lam);
        let full = make_rect(
            zero_center(&eig),
            eig.clone(),
            RectVariant::new(RectKind::Z),
            0.05,
            1,
            12,
        )
        .unwrap();
        let prod: f64 = full.z().iter().map(|z| phi_sym(*z).unwrap()).product();
        assert_abs_diff_eq!(prod, 0.95, epsilon = 1e-10);
        let trunc = make_rect(zero_center(&eig), eig, RectVariant::new(RectKind::Z), 0.05, 1, 5).unwrap();
        let prod: f64 = trunc.z().iter().map(|z| phi_sym(*z).unwrap()).product();
        assert!(prod >= 0.95);
    }

    #[test]
    fn z1_and_c_hit_coverage() {
        let lam: Vec<f64> = (1..=8).map(|j| (0.6f64).powi(j)).collect();
        let eig = diag_system(&lam);
        for kind in [RectKind::Z1, RectKind::C, RectKind::C1] {
            let r = make_rect(zero_center(&eig), eig.clone(), RectVariant::new(kind), 0.1, 3, 8).unwrap();
            let lp: f64 = r.z().iter().map(|z| ln_phi_sym(*z)).sum();
            assert_abs_diff_eq!(lp, (0.9f64).ln(), epsilon = 1e-10);
        }
    }

    #[test]
    fn z1_stationarity() {
        let lam = [2.0, 0.7, 0.3, 0.05];
        let eig = diag_system(&lam);
        let r = make_rect(zero_center(&eig), eig, RectVariant::new(RectKind::Z1), 0.05, 1, 4).unwrap();
        let ms: Vec<f64> = r
            .z()
            .iter()
            .zip(&lam)
            .map(|(z, l)| LN_SQRT_2PI + l.ln() + ln_f_z1(*z))
            .collect();
        for m in &ms {
            assert_abs_diff_eq!(*m, ms[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn f_inverse_round_trip() {
        for z in [0.01, 0.5, 1.96, 4.0, 9.0] {
            assert_abs_diff_eq!(inv_ln_f_z1(ln_f_z1(z)).unwrap(), z, epsilon = 1e-10);
        }
    }

    #[test]
    fn small_sample_examples() {
        let eig = diag_system(&[1.0]);
        let r = make_rect(
            zero_center(&eig),
            eig.clone(),
            RectVariant::new(RectKind::Z),
            0.05,
            25,
            1,
        )
        .unwrap();
        let t = small_sample_adjust(&r, 25, SmallSampleMode::PerAxis).unwrap();
        assert_abs_diff_eq!(t.t().unwrap()[0], 2.0639, epsilon = 1e-3);
        let big = small_sample_adjust(&r, 1_000_000, SmallSampleMode::PerAxis).unwrap();
        assert_abs_diff_eq!(big.t().unwrap()[0], r.z()[0], epsilon = 1e-3);
        let cs = small_sample_adjust(&r, 25, SmallSampleMode::CommonScale).unwrap();
        assert_abs_diff_eq!(cs.t().unwrap()[0], t.t().unwrap()[0], epsilon = 1e-9);
        assert!(small_sample_adjust(&r, 1, SmallSampleMode::PerAxis).is_err());
    }

    #[test]
    fn pvalues_single_axis() {
        let eig = diag_system(&[0.5]);
        let n = 16;
        let theta0 = eig.eigenfunction(0).scale(1.959964 * (0.5f64 / n as f64).sqrt());
        for kind in [RectKind::Z, RectKind::Z1, RectKind::C, RectKind::C1] {
            let r = make_rect(zero_center(&eig), eig.clone(), RectVariant::new(kind), 0.05, n, 1).unwrap();
            assert_abs_diff_eq!(r.pvalue(&theta0).unwrap(), 0.05, epsilon = 1e-5);
            assert_eq!(r.pvalue(&zero_center(&eig)).unwrap(), 1.0);
        }
    }

    #[test]
    fn marginal_examples() {
        let eig = diag_system(&[1.0, 0.5, 0.1]);
        let r = make_rect(
            zero_center(&eig),
            eig.clone(),
            RectVariant::new(RectKind::Z),
            0.05,
            4,
            3,
        )
        .unwrap();
        assert!(r.marginal_intervals(false).iter().all(|m| !m.excludes_zero));
        let hw = r.half_widths();
        let shifted = eig.eigenfunction(0).scale(hw[0] * 1.5);
        let r = make_rect(shifted, eig, RectVariant::new(RectKind::Z), 0.05, 4, 3).unwrap();
        let m = r.marginal_intervals(false);
        assert!(m[0].excludes_zero && !m[1].excludes_zero && !m[2].excludes_zero);
        for (mi, (z, l)) in m.iter().zip(r.z().iter().zip(r.lambda())) {
            assert_eq!(mi.half_width, z * (l / 4.0).sqrt());
        }
    }

    #[test]
    fn rejects_zero_lambda() {
        let eig = diag_system(&[1.0, 0.5]);
        let err = make_rect_with_lambda(
            zero_center(&eig),
            eig,
            vec![1.0, 0.0],
            RectVariant::new(RectKind::Z),
            0.05,
            3,
            2,
        );
        assert!(err.is_err());
    }
}
