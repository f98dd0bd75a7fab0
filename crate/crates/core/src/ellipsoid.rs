//! Hyper-ellipsoid confidence regions
//! `{h : sum_j N <theta_hat - h, v_j>^2 / c_j^2 <= xi}` over the first `J`
//! eigendirections.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnspace::{check_grid, Curve, EigenSystem};
use crate::scalardist::{QuantileMethod, WeightedChiSq};

/// Relative slack applied to the boundary comparison `W <= xi`.
pub const BOUNDARY_RTOL: f64 = 1e-9;

/// Default variance fraction used to choose the truncation `J`.
pub const DEFAULT_VAR_FRACTION: f64 = 0.999;

/// Rule for the axis scales `c_j^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CRule {
    /// `c_j^2 = 1`: the norm ball.
    Norm,
    /// `c_j^2 = lambda_j` over the first `j` axes, closed off beyond.
    Pc { j: usize },
    /// `c_j^2 = lambda_j^{1/2}`.
    SqrtLambda,
    /// `c_j^2 = (sum_{i >= j} lambda_i)^{1/2}`.
    SqrtTailSum,
}

impl CRule {
    /// Axis scales for the first `j` eigenpairs.
    pub fn c_sq(&self, eig: &EigenSystem, j: usize) -> Result<Vec<f64>> {
        let lam = eig.eigenvalues();
        if j == 0 || j > lam.len() {
            return Err(Error::TruncationOutOfRange {
                requested: j,
                available: lam.len(),
            });
        }
        Ok(match *self {
            CRule::Norm => vec![1.0; j],
            CRule::Pc { j: pc } => {
                if pc == 0 || pc > j {
                    return Err(Error::invalid(format!(
                        "pc rule needs 1 <= pc_J <= J, got pc_J={pc}, J={j}"
                    )));
                }
                lam[..pc].to_vec()
            }
            CRule::SqrtLambda => lam[..j].iter().map(|l| l.sqrt()).collect(),
            CRule::SqrtTailSum => {
                let mut tail: f64 = lam.iter().sum();
                let mut out = Vec::with_capacity(j);
                for l in &lam[..j] {
                    out.push(tail.max(0.0).sqrt());
                    tail -= l;
                }
                out
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            CRule::Norm => "norm".into(),
            CRule::Pc { j } => format!("pc({j})"),
            CRule::SqrtLambda => "sqrt_lambda".into(),
            CRule::SqrtTailSum => "sqrt_tailsum".into(),
        }
    }
}

/// Smallest `J` whose leading eigenvalues explain at least `fraction` of the
/// total variance. Never exceeds `J_max`.
pub fn select_j(eig: &EigenSystem, fraction: f64) -> usize {
    let lam = eig.eigenvalues();
    let total: f64 = lam.iter().sum();
    if lam.is_empty() {
        return 0;
    }
    if fraction >= 1.0 {
        return lam.len();
    }
    let mut acc = 0.0;
    for (i, l) in lam.iter().enumerate() {
        acc += l;
        if acc / total >= fraction - 1e-12 {
            return i + 1;
        }
    }
    lam.len()
}

/// A hyper-ellipsoid confidence region.
#[derive(Debug, Clone)]
pub struct EllipsoidRegion {
    center: Curve,
    eig: Arc<EigenSystem>,
    rule: CRule,
    c_sq: Vec<f64>,
    xi: f64,
    n: usize,
    alpha: f64,
    dist: WeightedChiSq,
}

/// Builds the `(1 - alpha)` ellipsoid with `xi` from the Imhof quantile.
pub fn make_ellipsoid(
    center: Curve,
    eig: Arc<EigenSystem>,
    rule: CRule,
    alpha: f64,
    n: usize,
    j: usize,
) -> Result<EllipsoidRegion> {
    make_ellipsoid_with(center, eig, rule, alpha, n, j, QuantileMethod::Imhof)
}

/// As [`make_ellipsoid`] with an explicit quantile method for `xi`.
pub fn make_ellipsoid_with(
    center: Curve,
    eig: Arc<EigenSystem>,
    rule: CRule,
    alpha: f64,
    n: usize,
    j: usize,
    method: QuantileMethod,
) -> Result<EllipsoidRegion> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    check_grid(center.grid(), eig.grid())?;
    let c_sq = rule.c_sq(&eig, j)?;
    if c_sq.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::invalid("axis scales must be positive"));
    }
    let weights: Vec<f64> = match rule {
        CRule::Pc { .. } => vec![1.0; c_sq.len()],
        _ => eig.eigenvalues()[..c_sq.len()]
            .iter()
            .zip(&c_sq)
            .map(|(l, c)| l / c)
            .collect(),
    };
    let dist = WeightedChiSq::new(weights)?;
    let xi = dist.quantile(1.0 - alpha, method)?;
    Ok(EllipsoidRegion {
        center,
        eig,
        rule,
        c_sq,
        xi,
        n,
        alpha,
        dist,
    })
}

impl EllipsoidRegion {
    pub fn center(&self) -> &Curve {
        &self.center
    }

    pub fn eigensystem(&self) -> &Arc<EigenSystem> {
        &self.eig
    }

    pub fn rule(&self) -> CRule {
        self.rule
    }

    pub fn c_sq(&self) -> &[f64] {
        &self.c_sq
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of retained directions.
    pub fn j(&self) -> usize {
        self.c_sq.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Null distribution of the statistic.
    pub fn distribution(&self) -> &WeightedChiSq {
        &self.dist
    }

    /// The same scales and critical value laid on the axes of `eig`.
    pub fn with_axes(&self, eig: Arc<EigenSystem>) -> Result<EllipsoidRegion> {
        check_grid(self.center.grid(), eig.grid())?;
        if eig.j_max() < self.j() {
            return Err(Error::TruncationOutOfRange {
                requested: self.j(),
                available: eig.j_max(),
            });
        }
        Ok(EllipsoidRegion { eig, ..self.clone() })
    }

    /// The region closed off after the first `j` axes, keeping `xi`.
    pub fn truncated(&self, j: usize) -> Result<EllipsoidRegion> {
        if j == 0 || j > self.j() {
            return Err(Error::TruncationOutOfRange {
                requested: j,
                available: self.j(),
            });
        }
        let mut out = self.clone();
        out.c_sq.truncate(j);
        Ok(out)
    }

    /// Copy with a new center; everything else is kept.
    pub fn recentered(&self, center: Curve) -> Result<Self> {
        check_grid(self.center.grid(), center.grid())?;
        Ok(Self { center, ..self.clone() })
    }

    /// Semi-axis lengths `r_j = sqrt(xi c_j^2 / N)`.
    pub fn radii(&self) -> Vec<f64> {
        self.c_sq.iter().map(|c| (self.xi * c / self.n as f64).sqrt()).collect()
    }

    /// Scores of `h - center` along the retained axes.
    pub fn offsets(&self, h: &Curve) -> Result<Vec<f64>> {
        check_grid(self.center.grid(), h.grid())?;
        let d = h.sub(&self.center)?;
        Ok(self.eig.scores_raw(d.values(), self.j()))
    }

    /// `W = sum_j N <theta_hat - h, v_j>^2 / c_j^2`.
    pub fn statistic(&self, h: &Curve) -> Result<f64> {
        let s = self.offsets(h)?;
        Ok(self.statistic_from_scores(&s))
    }

    pub(crate) fn statistic_from_scores(&self, s: &[f64]) -> f64 {
        let n = self.n as f64;
        s.iter().zip(&self.c_sq).map(|(s, c)| n * s * s / c).sum()
    }

    /// Membership of `h` (boundary inclusive).
    pub fn contains(&self, h: &Curve) -> Result<bool> {
        Ok(self.statistic(h)? <= self.xi * (1.0 + BOUNDARY_RTOL))
    }

    /// Smallest `alpha` whose region excludes `theta0`.
    pub fn pvalue(&self, theta0: &Curve) -> Result<f64> {
        let w = self.statistic(theta0)?;
        Ok(self.pvalue_from_statistic(w))
    }

    pub(crate) fn pvalue_from_statistic(&self, w: f64) -> f64 {
        (1.0 - self.dist.cdf(w)).clamp(0.0, 1.0)
    }

    /// Norm of the part of `h - center` outside the retained span. Reported
    /// for diagnostics only; it never enters membership or p-values.
    pub fn residual_outside_span(&self, h: &Curve) -> Result<f64> {
        let d = h.sub(&self.center)?;
        let s = self.eig.scores_raw(d.values(), self.j());
        let inside: f64 = s.iter().map(|x| x * x).sum();
        Ok((d.norm().powi(2) - inside).max(0.0).sqrt())
    }

    /// Coefficients along the axes of the boundary point in direction `dir`.
    pub fn boundary_coefficients(&self, dir: &[f64]) -> Result<Vec<f64>> {
        if dir.len() != self.j() {
            return Err(Error::DimensionMismatch {
                expected: self.j(),
                got: dir.len(),
            });
        }
        let q = self.statistic_from_scores(dir);
        if !(q > 0.0) {
            return Err(Error::invalid("boundary direction must be nonzero"));
        }
        let s = (self.xi / q).sqrt();
        Ok(dir.iter().map(|d| d * s).collect())
    }

    /// The boundary point `center + sum_j a_j v_j` in coefficient direction `dir`.
    pub fn boundary_point(&self, dir: &[f64]) -> Result<Curve> {
        let a = self.boundary_coefficients(dir)?;
        self.center.add(&self.eig.synthesize(&a))
    }

    /// Writes a per-axis summary: a `#` header block with `xi`, `N` and
    /// `alpha`, then columns `j, lambda, c_sq, r`.
    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut text = format!(
            "# rule,{}\n# xi,{}\n# N,{}\n# alpha,{}\nj,lambda,c_sq,r\n",
            self.rule.label(),
            self.xi,
            self.n,
            self.alpha
        );
        for (i, (c, r)) in self.c_sq.iter().zip(self.radii()).enumerate() {
            text.push_str(&format!("{},{},{},{}\n", i + 1, self.eig.eigenvalues()[i], c, r));
        }
        out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}
