//! Monte Carlo designs: Type I error, power, band coverage and two-sample checks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{band_from_ellipsoid, band_naive_t, Band, SupCalibration};
use crate::ellipsoid::{make_ellipsoid, select_j, CRule, EllipsoidRegion, DEFAULT_VAR_FRACTION};
use crate::error::{Error, Result};
use crate::estimators::{mean_cov, two_sample, FunctionalSample, TwoSampleResult};
use crate::fnspace::{eigensystem, CovOperator, Curve, EigenSystem, Grid, Quadrature, DEFAULT_TRIM};
use crate::ghost::{ghost_rate_experiment, GhostJRule, GhostRateConfig};
use crate::harness::gp::GpSampler;
use crate::harness::kernels::{matern_cov, DEFAULT_SIGMA};
use crate::harness::report::ReportTable;
use crate::hyperrect::{make_rect, make_rect_with_lambda, RectKind, RectRegion, RectVariant};
use crate::numeric::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Type1,
    Power,
    BandCoverage,
    GhostRate,
    Twosample,
}

/// How the data-generating mean departs from the null mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `theta = theta0 + delta`.
    Shift,
    /// `theta = theta0 (1 + delta)`.
    Scale,
    /// `theta0 = max(0, 1 - 10|t - .5|)`, `theta = max(0, 1 + delta - 10|t - .5|)`.
    LocalShift,
}

impl Scenario {
    /// `(theta0, theta)` on `grid`.
    pub fn means(&self, grid: &Arc<Grid>, delta: f64) -> (Curve, Curve) {
        match self {
            Scenario::Shift => (
                Curve::from_fn(grid.clone(), poly_mean),
                Curve::from_fn(grid.clone(), |t| poly_mean(t) + delta),
            ),
            Scenario::Scale => (
                Curve::from_fn(grid.clone(), poly_mean),
                Curve::from_fn(grid.clone(), |t| poly_mean(t) * (1.0 + delta)),
            ),
            Scenario::LocalShift => (
                Curve::from_fn(grid.clone(), |t| tent(t, 0.0)),
                Curve::from_fn(grid.clone(), |t| tent(t, delta)),
            ),
        }
    }
}

/// `10t^3 - 15t^4 + 6t^5`.
pub fn poly_mean(t: f64) -> f64 {
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn tent(t: f64, delta: f64) -> f64 {
    (1.0 + delta - 10.0 * (t - 0.5).abs()).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMode {
    Known,
    Estimated,
}

/// Regions and bands a design can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    ENorm,
    EPc,
    EPc3,
    EC,
    EC1,
    RZ,
    RZ1,
    RZs,
    RZ1s,
    RC,
    RC1,
    BS,
    BEc,
}

pub const ALL_REGIONS: [RegionKind; 13] = [
    RegionKind::ENorm,
    RegionKind::EPc,
    RegionKind::EPc3,
    RegionKind::EC,
    RegionKind::EC1,
    RegionKind::RZ,
    RegionKind::RZ1,
    RegionKind::RZs,
    RegionKind::RZ1s,
    RegionKind::RC,
    RegionKind::RC1,
    RegionKind::BS,
    RegionKind::BEc,
];

pub const DEFAULT_REGIONS: [RegionKind; 8] = [
    RegionKind::ENorm,
    RegionKind::EPc,
    RegionKind::EPc3,
    RegionKind::BS,
    RegionKind::EC,
    RegionKind::RZ,
    RegionKind::RZs,
    RegionKind::BEc,
];

impl RegionKind {
    pub fn label(&self) -> &'static str {
        match self {
            RegionKind::ENorm => "e_norm",
            RegionKind::EPc => "e_pc",
            RegionKind::EPc3 => "e_pc3",
            RegionKind::EC => "e_c",
            RegionKind::EC1 => "e_c1",
            RegionKind::RZ => "r_z",
            RegionKind::RZ1 => "r_z1",
            RegionKind::RZs => "r_zs",
            RegionKind::RZ1s => "r_z1s",
            RegionKind::RC => "r_c",
            RegionKind::RC1 => "r_c1",
            RegionKind::BS => "b_s",
            RegionKind::BEc => "b_ec",
        }
    }

    fn needs_lambda_tilde(&self) -> bool {
        matches!(self, RegionKind::RZs | RegionKind::RZ1s)
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RegionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        ALL_REGIONS.iter().find(|r| r.label() == key).copied().ok_or_else(|| {
            let names: Vec<&str> = ALL_REGIONS.iter().map(|r| r.label()).collect();
            Error::Config(format!("unknown region '{s}', expected one of {}", names.join(", ")))
        })
    }
}

/// Truncation rule for the regions of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JRule {
    /// Every retained eigenpair.
    All,
    VarianceFraction {
        fraction: f64,
    },
    Fixed {
        j: usize,
    },
}

impl JRule {
    pub fn resolve(&self, eig: &EigenSystem) -> Result<usize> {
        let j = match *self {
            JRule::All => eig.j_max(),
            JRule::VarianceFraction { fraction } => select_j(eig, fraction),
            JRule::Fixed { j } => j,
        };
        if j == 0 || j > eig.j_max() {
            return Err(Error::TruncationOutOfRange {
                requested: j,
                available: eig.j_max(),
            });
        }
        Ok(j)
    }
}

/// A simulation design; JSON keys mirror the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_nu")]
    pub nu: f64,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_grid_size")]
    pub grid_size: usize,
    #[serde(default = "d_reps")]
    pub reps: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    /// Empty means the default grid for `n`.
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// `None` means the default set for `kind`.
    #[serde(default)]
    pub regions: Option<Vec<RegionKind>>,
    /// `None` means every eigenpair for known covariance and 99.9% of the
    /// variance for an estimated one.
    #[serde(default)]
    pub j_rule: Option<JRule>,
    #[serde(default = "d_pc_j")]
    pub pc_j: usize,
    #[serde(default = "d_cov_mode")]
    pub cov_mode: CovMode,
    #[serde(default = "d_nboot")]
    pub nboot: usize,
    #[serde(default = "d_warp")]
    pub warp_exponent: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "d_n_dirs")]
    pub n_dirs: usize,
    #[serde(default = "d_ghost_rule")]
    pub ghost_rule: CRule,
    #[serde(default = "d_ghost_j_rule")]
    pub ghost_j_rule: GhostJRule,
    /// Second group size for `twosample`; defaults to `n`.
    #[serde(default)]
    pub n2: Option<usize>,
    /// Height of the tent added to the second group's mean in `twosample`.
    #[serde(default = "d_shift")]
    pub shift: f64,
}

fn d_n() -> usize {
    100
}
fn d_nu() -> f64 {
    0.5
}
fn d_sigma() -> f64 {
    DEFAULT_SIGMA
}
fn d_grid_size() -> usize {
    100
}
fn d_reps() -> usize {
    1000
}
fn d_alpha() -> f64 {
    0.05
}
fn d_pc_j() -> usize {
    3
}
fn d_cov_mode() -> CovMode {
    CovMode::Estimated
}
fn d_nboot() -> usize {
    crate::bands::DEFAULT_NBOOT
}
fn d_warp() -> f64 {
    1.0
}
fn d_seed() -> u64 {
    1
}
fn d_n_values() -> Vec<usize> {
    vec![50, 100, 200, 400, 800]
}
fn d_n_dirs() -> usize {
    32
}
fn d_ghost_rule() -> CRule {
    CRule::SqrtLambda
}
fn d_ghost_j_rule() -> GhostJRule {
    GhostJRule::Balanced
}
fn d_shift() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            n: d_n(),
            nu: d_nu(),
            sigma: d_sigma(),
            grid_size: d_grid_size(),
            reps: d_reps(),
            alpha: d_alpha(),
            scenario: None,
            deltas: Vec::new(),
            regions: None,
            j_rule: None,
            pc_j: d_pc_j(),
            cov_mode: d_cov_mode(),
            nboot: d_nboot(),
            warp_exponent: d_warp(),
            seed: d_seed(),
            n_values: d_n_values(),
            n_dirs: d_n_dirs(),
            ghost_rule: d_ghost_rule(),
            ghost_j_rule: d_ghost_j_rule(),
            n2: None,
            shift: d_shift(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn effective_regions(&self) -> Vec<RegionKind> {
        match &self.regions {
            Some(r) => r.clone(),
            None if self.kind == ExperimentKind::Twosample => DEFAULT_REGIONS
                .iter()
                .copied()
                .filter(|r| *r != RegionKind::BEc && !r.needs_lambda_tilde())
                .collect(),
            None => DEFAULT_REGIONS.to_vec(),
        }
    }

    /// The configured grid, or `.01, .., .10` (`.02, .., .20` for `N <= 25`).
    pub fn effective_deltas(&self) -> Vec<f64> {
        if !self.deltas.is_empty() {
            return self.deltas.clone();
        }
        let denom = if self.n <= 25 { 50.0 } else { 100.0 };
        (1..=10).map(|k| k as f64 / denom).collect()
    }

    pub fn effective_j_rule(&self) -> JRule {
        self.j_rule.unwrap_or(match self.cov_mode {
            CovMode::Known => JRule::All,
            CovMode::Estimated => JRule::VarianceFraction {
                fraction: DEFAULT_VAR_FRACTION,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.nu > 0.0) || !(self.sigma > 0.0) {
            return bad("nu and sigma must be positive".into());
        }
        if !(self.warp_exponent >= 1.0) {
            return bad(format!("warp_exponent must be >= 1, got {}", self.warp_exponent));
        }
        if self.grid_size < 3 {
            return bad("grid_size must be at least 3".into());
        }
        if self.pc_j == 0 || self.nboot == 0 {
            return bad("pc_j and nboot must be positive".into());
        }
        if let Some(JRule::VarianceFraction { fraction }) = self.j_rule {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return bad(format!("variance fraction must lie in (0, 1], got {fraction}"));
            }
        }
        let min_n = if self.kind == ExperimentKind::GhostRate { 1 } else { 2 };
        if self.n < min_n || self.n2.is_some_and(|n| n < 2) {
            return bad("sample sizes must be at least 2".into());
        }
        let regions = self.effective_regions();
        match self.kind {
            ExperimentKind::Type1 | ExperimentKind::Power | ExperimentKind::Twosample if regions.is_empty() => {
                return bad("region set is empty".into());
            }
            ExperimentKind::Power if self.scenario.is_none() => {
                return bad("power needs a scenario".into());
            }
            ExperimentKind::Twosample if regions.contains(&RegionKind::BEc) => {
                return bad("b_ec has no p-value; drop it from a twosample design".into());
            }
            ExperimentKind::Twosample if regions.iter().any(|r| r.needs_lambda_tilde()) => {
                return bad("r_zs and r_z1s need a one-sample design".into());
            }
            ExperimentKind::GhostRate if self.n_values.is_empty() => {
                return bad("ghost_rate needs n_values".into());
            }
            _ => {}
        }
        if self.kind != ExperimentKind::Power && self.scenario.is_some() && !matches!(self.kind, ExperimentKind::Type1)
        {
            return bad(format!("scenario only applies to power, not {:?}", self.kind));
        }
        if self.deltas.iter().any(|d| !d.is_finite()) {
            return bad("deltas must be finite".into());
        }
        Ok(())
    }

    fn ghost_config(&self) -> GhostRateConfig {
        GhostRateConfig {
            n_values: self.n_values.clone(),
            nu: self.nu,
            sigma: self.sigma,
            grid_size: self.grid_size,
            reps: self.reps,
            alpha: self.alpha,
            rule: self.ghost_rule,
            j_rule: self.ghost_j_rule,
            n_dirs: self.n_dirs,
            seed: self.seed,
        }
    }
}

/// A constructed region ready for membership tests.
#[derive(Debug, Clone)]
pub enum BuiltRegion {
    Ellipsoid(EllipsoidRegion),
    Rect(RectRegion),
    Sup {
        cal: Arc<SupCalibration>,
        crit: f64,
        center: Curve,
        n: usize,
    },
    Band(Band),
}

impl BuiltRegion {
    pub fn rejects(&self, theta0: &Curve) -> Result<bool> {
        Ok(match self {
            BuiltRegion::Ellipsoid(r) => !r.contains(theta0)?,
            BuiltRegion::Rect(r) => !r.contains(theta0)?,
            BuiltRegion::Sup { cal, crit, center, n } => cal.statistic(center, theta0, *n)? > *crit,
            BuiltRegion::Band(b) => !b.contains(theta0)?,
        })
    }

    /// Region p-value; the bootstrap band reports its tail fraction, bands
    /// derived from ellipsoids have none.
    pub fn pvalue(&self, theta0: &Curve) -> Result<Option<f64>> {
        Ok(match self {
            BuiltRegion::Ellipsoid(r) => Some(r.pvalue(theta0)?),
            BuiltRegion::Rect(r) => Some(r.pvalue(theta0)?),
            BuiltRegion::Sup { cal, center, n, .. } => Some(cal.tail_fraction(cal.statistic(center, theta0, *n)?)),
            BuiltRegion::Band(_) => None,
        })
    }

    /// Rejection implied by a p-value under this region's convention.
    pub fn rejects_at(&self, p: f64, alpha: f64) -> bool {
        match self {
            BuiltRegion::Sup { .. } => p <= alpha,
            _ => p < alpha,
        }
    }

    pub fn recentered(&self, center: Curve) -> Result<BuiltRegion> {
        Ok(match self {
            BuiltRegion::Ellipsoid(r) => BuiltRegion::Ellipsoid(r.recentered(center)?),
            BuiltRegion::Rect(r) => BuiltRegion::Rect(r.recentered(center)?),
            BuiltRegion::Sup { cal, crit, n, .. } => BuiltRegion::Sup {
                cal: cal.clone(),
                crit: *crit,
                center,
                n: *n,
            },
            BuiltRegion::Band(b) => BuiltRegion::Band(Band::new(center, b.half_width().clone(), b.alpha(), b.kind())?),
        })
    }
}

/// Inputs shared by every region of one replication.
pub struct RegionInputs<'a> {
    pub center: Curve,
    pub eig: Arc<EigenSystem>,
    /// Pointwise variance of one observation, for the bootstrap band.
    pub variance: &'a [f64],
    /// Axis variances along known eigenfunctions, for `r_zs` and `r_z1s`.
    pub lambda_tilde: Option<&'a [f64]>,
    pub n: usize,
    pub j: usize,
    pub pc_j: usize,
    pub alpha: f64,
    pub nboot: usize,
    pub boot_seed: u64,
}

pub fn build_region(kind: RegionKind, x: &RegionInputs<'_>) -> Result<BuiltRegion> {
    let ell = |rule: CRule, j: usize| make_ellipsoid(x.center.clone(), x.eig.clone(), rule, x.alpha, x.n, j);
    let rect = |variant: RectVariant| -> Result<RectRegion> {
        match (variant.small_sample, x.lambda_tilde) {
            (true, Some(lt)) => {
                make_rect_with_lambda(x.center.clone(), x.eig.clone(), lt.to_vec(), variant, x.alpha, x.n, x.j)
            }
            _ => make_rect(x.center.clone(), x.eig.clone(), variant, x.alpha, x.n, x.j),
        }
    };
    Ok(match kind {
        RegionKind::ENorm => BuiltRegion::Ellipsoid(ell(CRule::Norm, x.j)?),
        RegionKind::EPc => BuiltRegion::Ellipsoid(ell(CRule::Pc { j: x.j }, x.j)?),
        RegionKind::EPc3 => BuiltRegion::Ellipsoid(ell(CRule::Pc { j: x.pc_j }, x.pc_j)?),
        RegionKind::EC => BuiltRegion::Ellipsoid(ell(CRule::SqrtLambda, x.j)?),
        RegionKind::EC1 => BuiltRegion::Ellipsoid(ell(CRule::SqrtTailSum, x.j)?),
        RegionKind::RZ => BuiltRegion::Rect(rect(RectVariant::new(RectKind::Z))?),
        RegionKind::RZ1 => BuiltRegion::Rect(rect(RectVariant::new(RectKind::Z1))?),
        RegionKind::RZs => BuiltRegion::Rect(rect(RectVariant::small(RectKind::Z))?),
        RegionKind::RZ1s => BuiltRegion::Rect(rect(RectVariant::small(RectKind::Z1))?),
        RegionKind::RC => BuiltRegion::Rect(rect(RectVariant::new(RectKind::C))?),
        RegionKind::RC1 => BuiltRegion::Rect(rect(RectVariant::new(RectKind::C1))?),
        RegionKind::BS => {
            let cal = SupCalibration::from_eigensystem(&x.eig, x.variance, x.nboot, x.boot_seed)?;
            let crit = cal.critical_value(x.alpha)?;
            BuiltRegion::Sup {
                cal: Arc::new(cal),
                crit,
                center: x.center.clone(),
                n: x.n,
            }
        }
        RegionKind::BEc => BuiltRegion::Band(band_from_ellipsoid(&ell(CRule::SqrtLambda, x.j)?)),
    })
}

/// Builds `kinds` in order; `e_c` and `b_ec` share one ellipsoid.
pub fn build_regions(kinds: &[RegionKind], x: &RegionInputs<'_>) -> Result<Vec<BuiltRegion>> {
    let mut e_c: Option<EllipsoidRegion> = None;
    kinds
        .iter()
        .map(|k| match k {
            RegionKind::EC | RegionKind::BEc => {
                if e_c.is_none() {
                    e_c = Some(make_ellipsoid(
                        x.center.clone(),
                        x.eig.clone(),
                        CRule::SqrtLambda,
                        x.alpha,
                        x.n,
                        x.j,
                    )?);
                }
                let e = e_c.as_ref().expect("just built");
                Ok(if *k == RegionKind::EC {
                    BuiltRegion::Ellipsoid(e.clone())
                } else {
                    BuiltRegion::Band(band_from_ellipsoid(e))
                })
            }
            _ => build_region(*k, x),
        })
        .collect()
}

/// The Matérn model behind a design.
pub struct Population {
    pub grid: Arc<Grid>,
    pub cov: CovOperator,
    pub eig: Arc<EigenSystem>,
}

impl Population {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let grid = Grid::uniform(cfg.grid_size, 0.0, 1.0, Quadrature::Trapezoid)?;
        let cov = matern_cov(&grid, cfg.nu, cfg.sigma, cfg.warp_exponent)?;
        let eig = Arc::new(eigensystem(&cov, DEFAULT_TRIM)?);
        Ok(Population { grid, cov, eig })
    }
}

/// One replication's view of the data: the centered mean `theta_hat - theta`
/// and whatever the regions need.
struct Draw {
    mean_err: Curve,
    eig: Arc<EigenSystem>,
    variance: Vec<f64>,
    lambda_tilde: Option<Vec<f64>>,
}

fn draw_known(pop: &Population, n: usize, rng: &mut ChaCha8Rng, want_lt: bool) -> Draw {
    let lam = pop.eig.eigenvalues();
    let jt = lam.len();
    let mut sums = vec![0.0; jt];
    let mut sq = vec![0.0; jt];
    for _ in 0..n {
        for j in 0..jt {
            let z: f64 = rng.sample(StandardNormal);
            let s = lam[j].sqrt() * z;
            sums[j] += s;
            sq[j] += s * s;
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let lambda_tilde = want_lt.then(|| {
        sq.iter()
            .zip(&mean)
            .map(|(q, m)| ((q - nf * m * m) / (nf - 1.0)).max(f64::MIN_POSITIVE))
            .collect()
    });
    Draw {
        mean_err: pop.eig.synthesize(&mean),
        eig: pop.eig.clone(),
        variance: pop.cov.diagonal(),
        lambda_tilde,
    }
}

fn mean_and_cov(grid: &Arc<Grid>, x: &DMatrix<f64>) -> (Curve, CovOperator) {
    let n = x.nrows();
    let p = x.ncols();
    let mean: Vec<f64> = (0..p).map(|j| x.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - mean[j]);
    let k = centered.tr_mul(&centered) / (n - 1) as f64;
    let k = (&k + k.transpose()) * 0.5;
    (
        Curve::from_vec_unchecked(grid.clone(), mean),
        CovOperator::from_kernel_unchecked(grid.clone(), k),
    )
}

fn draw_estimated(sampler: &GpSampler, grid: &Arc<Grid>, n: usize, rng: &mut ChaCha8Rng) -> Result<Draw> {
    let x = sampler.draw_matrix(n, rng);
    let (mean, cov) = mean_and_cov(grid, &x);
    let variance = cov.diagonal();
    let eig = Arc::new(eigensystem(&cov, DEFAULT_TRIM)?);
    Ok(Draw {
        mean_err: mean,
        eig,
        variance,
        lambda_tilde: None,
    })
}

/// Regions for one replication. Known-covariance regions other than the
/// small-sample rectangles are built once and recentered.
struct RegionFactory<'a> {
    cfg: &'a ExperimentConfig,
    regions: Vec<RegionKind>,
    templates: Vec<Option<BuiltRegion>>,
    known_j: Option<usize>,
}

impl<'a> RegionFactory<'a> {
    fn new(cfg: &'a ExperimentConfig, pop: &Population, regions: Vec<RegionKind>) -> Result<Self> {
        let mut templates = vec![None; regions.len()];
        let mut known_j = None;
        if cfg.cov_mode == CovMode::Known {
            let j = cfg.effective_j_rule().resolve(&pop.eig)?;
            known_j = Some(j);
            let variance = pop.cov.diagonal();
            let inputs = RegionInputs {
                center: Curve::zeros(pop.grid.clone()),
                eig: pop.eig.clone(),
                variance: &variance,
                lambda_tilde: None,
                n: cfg.n,
                j,
                pc_j: cfg.pc_j,
                alpha: cfg.alpha,
                nboot: cfg.nboot,
                boot_seed: derive_seed(cfg.seed, u64::MAX),
            };
            for (slot, kind) in templates.iter_mut().zip(&regions) {
                if !kind.needs_lambda_tilde() {
                    *slot = Some(build_region(*kind, &inputs)?);
                }
            }
        }
        Ok(RegionFactory {
            cfg,
            regions,
            templates,
            known_j,
        })
    }

    fn build(&self, d: &Draw, rep_seed: u64) -> Result<(Vec<BuiltRegion>, usize)> {
        let j = match self.known_j {
            Some(j) => j,
            None => self.cfg.effective_j_rule().resolve(&d.eig)?,
        };
        let inputs = RegionInputs {
            center: d.mean_err.clone(),
            eig: d.eig.clone(),
            variance: &d.variance,
            lambda_tilde: d.lambda_tilde.as_deref(),
            n: self.cfg.n,
            j,
            pc_j: self.cfg.pc_j,
            alpha: self.cfg.alpha,
            nboot: self.cfg.nboot,
            boot_seed: derive_seed(rep_seed, 1),
        };
        if self.known_j.is_none() {
            return Ok((build_regions(&self.regions, &inputs)?, j));
        }
        let built = self
            .regions
            .iter()
            .zip(&self.templates)
            .map(|(kind, t)| match t {
                Some(t) => t.recentered(d.mean_err.clone()),
                None => build_region(*kind, &inputs),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((built, j))
    }
}

fn rep_rng(seed: u64, rep: usize) -> (ChaCha8Rng, u64) {
    let s = derive_seed(seed, rep as u64);
    (ChaCha8Rng::seed_from_u64(s), s)
}

/// Rejection counts for the test points `h_k = theta0_k - theta_k`, with
/// regions centered at `theta_hat - theta_k`.
fn rejection_counts(
    cfg: &ExperimentConfig,
    pop: &Population,
    tests: &[Curve],
) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let regions = cfg.effective_regions();
    let factory = RegionFactory::new(cfg, pop, regions.clone())?;
    let want_lt = regions.iter().any(|r| r.needs_lambda_tilde());
    let sampler = GpSampler::from_eigensystem(Curve::zeros(pop.grid.clone()), pop.eig.clone());
    let per_rep: Vec<(Vec<Vec<bool>>, usize)> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let (mut rng, s) = rep_rng(cfg.seed, rep);
            let d = match cfg.cov_mode {
                CovMode::Known => draw_known(pop, cfg.n, &mut rng, want_lt),
                CovMode::Estimated => draw_estimated(&sampler, &pop.grid, cfg.n, &mut rng)?,
            };
            let (built, j) = factory.build(&d, s)?;
            let rej = built
                .iter()
                .map(|b| tests.iter().map(|h| b.rejects(h)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            Ok((rej, j))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![vec![0usize; tests.len()]; regions.len()];
    let mut js = Vec::with_capacity(per_rep.len());
    for (rej, j) in per_rep {
        for (c, r) in counts.iter_mut().zip(rej) {
            for (ck, rk) in c.iter_mut().zip(r) {
                *ck += rk as usize;
            }
        }
        js.push(j);
    }
    Ok((counts, js))
}

fn median(v: &mut [usize]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] + v[m]) as f64 / 2.0
    }
}

fn region_columns(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.effective_regions().iter().map(|r| r.label().to_string()).collect()
}

fn run_type1(cfg: &ExperimentConfig, pop: &Population) -> Result<ReportTable> {
    let zero = Curve::zeros(pop.grid.clone());
    let (counts, mut js) = rejection_counts(cfg, pop, &[zero])?;
    let mut t = ReportTable::new(region_columns(cfg));
    let reps = cfg.reps as f64;
    t.push("type1", counts.iter().map(|c| c[0] as f64 / reps).collect())?;
    t.set_meta("j_median", median(&mut js));
    Ok(t)
}

fn run_power(cfg: &ExperimentConfig, pop: &Population) -> Result<ReportTable> {
    let scenario = cfg
        .scenario
        .ok_or_else(|| Error::Config("power needs a scenario".into()))?;
    let deltas = cfg.effective_deltas();
    let tests = deltas
        .iter()
        .map(|d| {
            let (theta0, theta) = scenario.means(&pop.grid, *d);
            theta0.sub(&theta)
        })
        .collect::<Result<Vec<_>>>()?;
    let (counts, mut js) = rejection_counts(cfg, pop, &tests)?;
    let mut t = ReportTable::new(region_columns(cfg));
    let reps = cfg.reps as f64;
    for (k, d) in deltas.iter().enumerate() {
        t.push(format!("{d}"), counts.iter().map(|c| c[k] as f64 / reps).collect())?;
    }
    let avg = counts
        .iter()
        .map(|c| c.iter().sum::<usize>() as f64 / (reps * deltas.len() as f64))
        .collect();
    t.push("average", avg)?;
    t.set_meta("scenario", scenario);
    t.set_meta("deltas", &deltas);
    t.set_meta("j_median", median(&mut js));
    Ok(t)
}

pub const BAND_COLUMNS: [&str; 6] = [
    "cover_b_ec",
    "cover_b_s",
    "cover_naive_t",
    "width_b_ec",
    "width_b_s",
    "width_naive_t",
];

fn run_band_coverage(cfg: &ExperimentConfig, pop: &Population) -> Result<ReportTable> {
    let p = pop.grid.len();
    let true_sd: Vec<f64> = pop.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    let factory = RegionFactory::new(cfg, pop, vec![RegionKind::BEc, RegionKind::BS])?;
    let sampler = GpSampler::from_eigensystem(Curve::zeros(pop.grid.clone()), pop.eig.clone());
    let zero = Curve::zeros(pop.grid.clone());
    let per_rep: Vec<Vec<Band>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let (mut rng, s) = rep_rng(cfg.seed, rep);
            let x = sampler.draw_matrix(cfg.n, &mut rng);
            let (mean, cov) = mean_and_cov(&pop.grid, &x);
            let sd = Curve::from_vec_unchecked(
                pop.grid.clone(),
                cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
            );
            let naive = band_naive_t(&mean, &sd, cfg.n, cfg.alpha)?;
            let d = match cfg.cov_mode {
                CovMode::Known => Draw {
                    mean_err: mean.clone(),
                    eig: pop.eig.clone(),
                    variance: pop.cov.diagonal(),
                    lambda_tilde: None,
                },
                CovMode::Estimated => Draw {
                    mean_err: mean.clone(),
                    eig: Arc::new(eigensystem(&cov, DEFAULT_TRIM)?),
                    variance: cov.diagonal(),
                    lambda_tilde: None,
                },
            };
            let (built, _) = factory.build(&d, s)?;
            let mut bands = Vec::with_capacity(3);
            for b in built {
                bands.push(match b {
                    BuiltRegion::Band(b) => b,
                    BuiltRegion::Sup { cal, center, n, .. } => cal.band(center, n, cfg.alpha)?,
                    _ => unreachable!("band design builds bands only"),
                });
            }
            bands.push(naive);
            Ok(bands)
        })
        .collect::<Result<Vec<_>>>()?;
    let reps = cfg.reps as f64;
    let mut cover = vec![vec![0usize; p]; 3];
    let mut width = vec![vec![0.0; p]; 3];
    let mut simultaneous = [0usize; 3];
    for bands in &per_rep {
        for (k, b) in bands.iter().enumerate() {
            let mut all = true;
            for i in 0..p {
                let r = b.half_width().values()[i];
                let inside = (zero.values()[i] - b.center().values()[i]).abs() <= r;
                cover[k][i] += inside as usize;
                all &= inside;
                width[k][i] += r / true_sd[i];
            }
            simultaneous[k] += all as usize;
        }
    }
    let mut t = ReportTable::new(BAND_COLUMNS.iter().map(|s| s.to_string()).collect());
    for (i, tp) in pop.grid.points().iter().enumerate() {
        let mut row: Vec<f64> = (0..3).map(|k| cover[k][i] as f64 / reps).collect();
        row.extend((0..3).map(|k| width[k][i] / reps));
        t.push(format!("{tp}"), row)?;
    }
    let mut row: Vec<f64> = simultaneous.iter().map(|c| *c as f64 / reps).collect();
    row.extend((0..3).map(|k| width[k].iter().sum::<f64>() / (reps * p as f64)));
    t.push("simultaneous", row)?;
    t.set_meta(
        "width_unit",
        "half-width divided by the true pointwise standard deviation",
    );
    Ok(t)
}

/// One region from a sample's mean and covariance, with the truncation used.
pub fn one_sample_region(
    sample: &FunctionalSample,
    kind: RegionKind,
    j_rule: JRule,
    pc_j: usize,
    alpha: f64,
    nboot: usize,
    seed: u64,
) -> Result<(BuiltRegion, usize)> {
    let (center, cov) = mean_cov(sample)?;
    let eig = Arc::new(eigensystem(&cov, DEFAULT_TRIM)?);
    let j = j_rule.resolve(&eig)?;
    let variance = cov.diagonal();
    let inputs = RegionInputs {
        center,
        eig,
        variance: &variance,
        lambda_tilde: None,
        n: sample.n(),
        j,
        pc_j,
        alpha,
        nboot,
        boot_seed: seed,
    };
    Ok((build_region(kind, &inputs)?, j))
}

/// Regions of a two-sample comparison, built on the combined covariance with
/// `N = 1`.
pub fn two_sample_regions(
    ts: &TwoSampleResult,
    regions: &[RegionKind],
    j_rule: JRule,
    pc_j: usize,
    alpha: f64,
    nboot: usize,
    seed: u64,
) -> Result<Vec<BuiltRegion>> {
    let eig = Arc::new(eigensystem(&ts.combined_cov, DEFAULT_TRIM)?);
    let j = j_rule.resolve(&eig)?;
    let variance = ts.combined_cov.diagonal();
    let inputs = RegionInputs {
        center: ts.diff_mean.clone(),
        eig,
        variance: &variance,
        lambda_tilde: None,
        n: TwoSampleResult::EFFECTIVE_N,
        j,
        pc_j,
        alpha,
        nboot,
        boot_seed: seed,
    };
    build_regions(regions, &inputs)
}

pub const TWOSAMPLE_ROWS: [&str; 4] = ["agreement", "rejection", "mean_pvalue", "swap_max_abs_diff"];

fn run_twosample(cfg: &ExperimentConfig, pop: &Population) -> Result<ReportTable> {
    let regions = cfg.effective_regions();
    let n2 = cfg.n2.unwrap_or(cfg.n);
    let theta = Curve::from_fn(pop.grid.clone(), poly_mean);
    let theta2 = Curve::from_fn(pop.grid.clone(), |t| poly_mean(t) + cfg.shift * tent(t, 0.0));
    let s1 = GpSampler::from_eigensystem(theta, pop.eig.clone());
    let s2 = GpSampler::from_eigensystem(theta2, pop.eig.clone());
    let j_rule = cfg.j_rule.unwrap_or(JRule::VarianceFraction {
        fraction: DEFAULT_VAR_FRACTION,
    });
    let zero = Curve::zeros(pop.grid.clone());
    let per_rep: Vec<Vec<(bool, bool, f64, f64)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let (mut rng, s) = rep_rng(cfg.seed, rep);
            let g1 = s1.draw(cfg.n, &mut rng)?;
            let g2 = s2.draw(n2, &mut rng)?;
            let fwd = two_sample(&g1, &g2)?;
            let bwd = two_sample(&g2, &g1)?;
            let boot = derive_seed(s, 1);
            let rf = two_sample_regions(&fwd, &regions, j_rule, cfg.pc_j, cfg.alpha, cfg.nboot, boot)?;
            let rb = two_sample_regions(&bwd, &regions, j_rule, cfg.pc_j, cfg.alpha, cfg.nboot, boot)?;
            rf.iter()
                .zip(&rb)
                .map(|(a, b)| {
                    let pa = a.pvalue(&zero)?.expect("p-value regions only");
                    let pb = b.pvalue(&zero)?.expect("p-value regions only");
                    let member_rejects = a.rejects(&zero)?;
                    let p_rejects = a.rejects_at(pa, cfg.alpha);
                    Ok((p_rejects == member_rejects, member_rejects, pa, (pa - pb).abs()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let reps = cfg.reps as f64;
    let mut t = ReportTable::new(region_columns(cfg));
    let k = regions.len();
    let mut agree = vec![0usize; k];
    let mut reject = vec![0usize; k];
    let mut psum = vec![0.0; k];
    let mut swap = vec![0.0f64; k];
    for rep in &per_rep {
        for (r, (ag, rj, p, sw)) in rep.iter().enumerate() {
            agree[r] += *ag as usize;
            reject[r] += *rj as usize;
            psum[r] += p;
            swap[r] = swap[r].max(*sw);
        }
    }
    t.push(TWOSAMPLE_ROWS[0], agree.iter().map(|a| *a as f64 / reps).collect())?;
    t.push(TWOSAMPLE_ROWS[1], reject.iter().map(|a| *a as f64 / reps).collect())?;
    t.push(TWOSAMPLE_ROWS[2], psum.iter().map(|a| a / reps).collect())?;
    t.push(TWOSAMPLE_ROWS[3], swap)?;
    t.set_meta("n2", n2);
    t.set_meta(
        "effective_scaling",
        "combined covariance is C1/N1 + C2/N2; regions use N = 1",
    );
    Ok(t)
}

/// Runs a design and returns its table with the config, seed and runtime in
/// the metadata.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportTable> {
    cfg.validate()?;
    let start = Instant::now();
    let mut table = match cfg.kind {
        ExperimentKind::GhostRate => ghost_rate_experiment(&cfg.ghost_config())?,
        kind => {
            let pop = Population::new(cfg)?;
            match kind {
                ExperimentKind::Type1 => run_type1(cfg, &pop)?,
                ExperimentKind::Power => run_power(cfg, &pop)?,
                ExperimentKind::BandCoverage => run_band_coverage(cfg, &pop)?,
                ExperimentKind::Twosample => run_twosample(cfg, &pop)?,
                ExperimentKind::GhostRate => unreachable!(),
            }
        }
    };
    table.set_meta("config", cfg);
    table.set_meta("seed", cfg.seed);
    table.set_meta("runtime_seconds", start.elapsed().as_secs_f64());
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind);
        c.grid_size = 30;
        c.n = 20;
        c.reps = 40;
        c.nboot = 200;
        c
    }

    #[test]
    fn poly_mean_endpoints() {
        assert_eq!(poly_mean(0.0), 0.0);
        assert!((poly_mean(1.0) - 1.0).abs() < 1e-15);
        assert!((poly_mean(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn local_shift_differs_only_near_the_middle() {
        let g = Grid::uniform(101, 0.0, 1.0, Quadrature::Trapezoid).unwrap();
        let (a, b) = Scenario::LocalShift.means(&g, 0.1);
        for (t, (x, y)) in g.points().iter().zip(a.values().iter().zip(b.values())) {
            if (t - 0.5).abs() > 0.11 + 1e-12 {
                assert_eq!(x, y);
            }
            if (t - 0.5).abs() < 0.1 - 1e-12 {
                assert!((y - x - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn region_names_round_trip() {
        for r in ALL_REGIONS {
            assert_eq!(r.label().parse::<RegionKind>().unwrap(), r);
            let js = serde_json::to_string(&r).unwrap();
            assert_eq!(js, format!("\"{}\"", r.label()));
        }
        assert!("e_foo".parse::<RegionKind>().is_err());
    }

    #[test]
    fn json_config_defaults_and_rejections() {
        let c = ExperimentConfig::from_json_str(r#"{"kind":"power","scenario":"local_shift","n":25}"#).unwrap();
        assert_eq!(c.effective_deltas().len(), 10);
        assert_eq!(c.effective_deltas()[9], 0.2);
        assert!(ExperimentConfig::from_json_str(r#"{"kind":"power"}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"kind":"type1","reps":0}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"kind":"type1","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"kind":"twosample","regions":["b_ec"]}"#).is_err());
        let back = ExperimentConfig::from_json_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut c = small(ExperimentKind::Type1);
        c.regions = Some(ALL_REGIONS.to_vec());
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        for v in &a.rows[0].values {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn zero_delta_power_equals_type1() {
        for mode in [CovMode::Known, CovMode::Estimated] {
            let mut p = small(ExperimentKind::Power);
            p.cov_mode = mode;
            p.scenario = Some(Scenario::Shift);
            p.deltas = vec![0.0];
            let mut t = p.clone();
            t.kind = ExperimentKind::Type1;
            t.scenario = None;
            let pw = run_experiment(&p).unwrap();
            let t1 = run_experiment(&t).unwrap();
            assert_eq!(pw.rows[0].values, t1.rows[0].values);
        }
    }

    #[test]
    fn power_grows_with_delta() {
        let mut c = small(ExperimentKind::Power);
        c.scenario = Some(Scenario::Shift);
        c.cov_mode = CovMode::Known;
        c.deltas = vec![0.0, 0.5];
        let t = run_experiment(&c).unwrap();
        for col in region_columns(&c) {
            assert!(t.get("0.5", &col).unwrap() >= t.get("0", &col).unwrap());
            assert!(t.get("0.5", &col).unwrap() > 0.9, "{col}");
        }
        assert!(t.row("average").is_some());
    }

    #[test]
    fn band_coverage_table_shape() {
        let c = small(ExperimentKind::BandCoverage);
        let t = run_experiment(&c).unwrap();
        assert_eq!(t.rows.len(), 31);
        let sim = t.row("simultaneous").unwrap();
        assert!(sim.values[0] >= sim.values[2]);
    }

    #[test]
    fn twosample_agreement_and_swap() {
        let mut c = small(ExperimentKind::Twosample);
        c.reps = 20;
        c.n2 = Some(15);
        let t = run_experiment(&c).unwrap();
        for col in region_columns(&c) {
            assert_eq!(t.get("agreement", &col), Some(1.0), "{col}");
            assert_eq!(t.get("swap_max_abs_diff", &col), Some(0.0), "{col}");
        }
    }
}
