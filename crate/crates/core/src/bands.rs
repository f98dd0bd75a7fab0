//! Simultaneous confidence bands `|h(t) - theta_hat(t)| <= r(t)`.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsoid::EllipsoidRegion;
use crate::error::{Error, Result};
use crate::fnspace::{check_grid, eigensystem, CovOperator, Curve, EigenSystem, DEFAULT_TRIM};
use crate::numeric::derive_seed;
use crate::scalardist::t_sym_inv;

/// Default number of bootstrap draws.
pub const DEFAULT_NBOOT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    Scheffe,
    Bootstrap,
    NaiveT,
}

/// Center curve with a nonnegative half-width.
#[derive(Debug, Clone)]
pub struct Band {
    center: Curve,
    half_width: Curve,
    alpha: f64,
    kind: BandKind,
}

impl Band {
    pub fn new(center: Curve, half_width: Curve, alpha: f64, kind: BandKind) -> Result<Self> {
        check_grid(center.grid(), half_width.grid())?;
        if half_width.values().iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::invalid("band half-width must be nonnegative"));
        }
        Ok(Band {
            center,
            half_width,
            alpha,
            kind,
        })
    }

    pub fn center(&self) -> &Curve {
        &self.center
    }

    pub fn half_width(&self) -> &Curve {
        &self.half_width
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> BandKind {
        self.kind
    }

    pub fn lower(&self) -> Curve {
        self.center.axpy(-1.0, &self.half_width).expect("same grid")
    }

    pub fn upper(&self) -> Curve {
        self.center.add(&self.half_width).expect("same grid")
    }

    /// Whether `h` stays inside the band at every grid point (inclusive).
    pub fn contains(&self, h: &Curve) -> Result<bool> {
        band_contains(self, h)
    }

    /// Writes `t, center, lower, upper` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut text = String::from("t,center,lower,upper\n");
        let t = self.center.grid().points();
        let c = self.center.values();
        let r = self.half_width.values();
        for i in 0..t.len() {
            text.push_str(&format!("{},{},{},{}\n", t[i], c[i], c[i] - r[i], c[i] + r[i]));
        }
        out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Grid-point exceedance test with a few ulps of slack.
pub fn band_contains(band: &Band, h: &Curve) -> Result<bool> {
    check_grid(band.center.grid(), h.grid())?;
    Ok(h.values()
        .iter()
        .zip(band.center.values())
        .zip(band.half_width.values())
        .all(|((h, c), r)| {
            let tol = 1e-9 * r + 4.0 * f64::EPSILON * c.abs().max(h.abs());
            (h - c).abs() <= r + tol
        }))
}

/// `r(x) = sqrt(xi / N sum_j c_j^2 v_j(x)^2)`, which contains the ellipsoid.
pub fn band_from_ellipsoid(region: &EllipsoidRegion) -> Band {
    let eig = region.eigensystem();
    let v = eig.eigenfunction_matrix();
    let scale = region.xi() / region.n() as f64;
    let r: Vec<f64> = (0..v.nrows())
        .map(|i| {
            let s: f64 = region
                .c_sq()
                .iter()
                .enumerate()
                .map(|(j, c)| c * v[(i, j)] * v[(i, j)])
                .sum();
            (scale * s).sqrt()
        })
        .collect();
    let center = region.center().clone();
    let half_width = Curve::from_vec_unchecked(center.grid().clone(), r);
    Band {
        center,
        half_width,
        alpha: region.alpha(),
        kind: BandKind::Scheffe,
    }
}

/// Bootstrap distribution of `sup_t |G(t)| / sigma(t)` for `G ~ N(0, C)`.
#[derive(Debug, Clone)]
pub struct SupCalibration {
    sups: Vec<f64>,
    sd: Vec<f64>,
    active: Vec<bool>,
}

impl SupCalibration {
    /// Draws `nboot` Gaussian processes by KL synthesis; draw `b` uses the
    /// stream `derive_seed(seed, b)`.
    pub fn new(cov: &CovOperator, nboot: usize, seed: u64) -> Result<Self> {
        let eig = eigensystem(cov, DEFAULT_TRIM)?;
        Self::from_eigensystem(&eig, &cov.diagonal(), nboot, seed)
    }

    pub fn from_eigensystem(eig: &EigenSystem, variance: &[f64], nboot: usize, seed: u64) -> Result<Self> {
        if nboot == 0 {
            return Err(Error::invalid("bootstrap needs at least one draw"));
        }
        let sd: Vec<f64> = variance.iter().map(|v| v.max(0.0).sqrt()).collect();
        let sd_max = sd.iter().cloned().fold(0.0, f64::max);
        let active: Vec<bool> = sd.iter().map(|s| *s > 1e-12 * sd_max && *s > 0.0).collect();
        let excluded = active.iter().filter(|a| !**a).count();
        if excluded > 0 {
            log::warn!("{excluded} grid points with zero standard deviation excluded from the bootstrap sup");
        }
        let root: Vec<f64> = eig.eigenvalues().iter().map(|l| l.sqrt()).collect();
        let v = eig.eigenfunction_matrix();
        let sups: Vec<f64> = (0..nboot as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b));
                let coef: Vec<f64> = root
                    .iter()
                    .map(|r| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        r * z
                    })
                    .collect();
                let mut sup: f64 = 0.0;
                for i in 0..v.nrows() {
                    if !active[i] {
                        continue;
                    }
                    let g: f64 = coef.iter().enumerate().map(|(j, c)| c * v[(i, j)]).sum();
                    sup = sup.max(g.abs() / sd[i]);
                }
                sup
            })
            .collect();
        let mut sups = sups;
        sups.sort_by(f64::total_cmp);
        Ok(SupCalibration { sups, sd, active })
    }

    /// The `ceil((1 - alpha) B)`-th smallest sup.
    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let b = self.sups.len();
        let k = (((1.0 - alpha) * b as f64).ceil() as usize).clamp(1, b);
        Ok(self.sups[k - 1])
    }

    /// Fraction of bootstrap sups at least as large as `stat`.
    pub fn tail_fraction(&self, stat: f64) -> f64 {
        let below = self.sups.partition_point(|s| *s < stat);
        (self.sups.len() - below) as f64 / self.sups.len() as f64
    }

    /// `sup_t sqrt(N) |h(t) - center(t)| / sigma(t)` over active points.
    pub fn statistic(&self, center: &Curve, h: &Curve, n: usize) -> Result<f64> {
        check_grid(center.grid(), h.grid())?;
        let rn = (n as f64).sqrt();
        Ok(h.values()
            .iter()
            .zip(center.values())
            .enumerate()
            .filter(|(i, _)| self.active[*i])
            .map(|(i, (h, c))| rn * (h - c).abs() / self.sd[i])
            .fold(0.0, f64::max))
    }

    /// Band `c_alpha sigma(t) / sqrt(N)`; inactive points get zero width.
    pub fn band(&self, center: Curve, n: usize, alpha: f64) -> Result<Band> {
        let c = self.critical_value(alpha)?;
        let rn = (n as f64).sqrt();
        let r = self
            .sd
            .iter()
            .zip(&self.active)
            .map(|(s, a)| if *a { c * s / rn } else { 0.0 })
            .collect();
        let half_width = Curve::new(center.grid().clone(), r)?;
        Band::new(center, half_width, alpha, BandKind::Bootstrap)
    }

    pub fn sups(&self) -> &[f64] {
        &self.sups
    }
}

/// Parametric-bootstrap band `c_alpha sigma(t) / sqrt(N)`.
pub fn band_bootstrap(
    theta_hat: &Curve,
    cov: &CovOperator,
    n: usize,
    alpha: f64,
    nboot: usize,
    seed: u64,
) -> Result<Band> {
    check_grid(theta_hat.grid(), cov.grid())?;
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let cal = SupCalibration::new(cov, nboot, seed)?;
    cal.band(theta_hat.clone(), n, alpha)
}

/// Pointwise t intervals `t_{N-1} sd(t) / sqrt(N)`.
pub fn band_naive_t(mean: &Curve, sd: &Curve, n: usize, alpha: f64) -> Result<Band> {
    if n < 2 {
        return Err(Error::invalid(format!("naive-t band needs N >= 2, got {n}")));
    }
    check_grid(mean.grid(), sd.grid())?;
    let t = t_sym_inv((n - 1) as f64, 1.0 - alpha)?;
    let rn = (n as f64).sqrt();
    Band::new(mean.clone(), sd.map(|s| t * s / rn), alpha, BandKind::NaiveT)
}

/// Average squared width `sum_j (lambda_j / c_j^2) * sum_j c_j^2`.
pub fn asw(c_sq: &[f64], eigenvalues: &[f64]) -> Result<f64> {
    if c_sq.len() != eigenvalues.len() {
        return Err(Error::DimensionMismatch {
            expected: eigenvalues.len(),
            got: c_sq.len(),
        });
    }
    if c_sq.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::invalid("c_j^2 must be positive"));
    }
    let a: f64 = eigenvalues.iter().zip(c_sq).map(|(l, c)| l / c).sum();
    let b: f64 = c_sq.iter().sum();
    Ok(a * b)
}
