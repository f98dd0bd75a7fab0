//! Scalar distributions: the folded normal `Phi_sym`, weighted sums of
//! chi-square variables, and the folded Student t.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use libm::{erf, erfc};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::{erf_inv, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::numeric::{bisect, illinois, integrate};

/// Probabilities at or above `1 - MAX_TAIL_GAP` are rejected by quantile routines.
pub const MAX_TAIL_GAP: f64 = 1e-12;

/// `P(|Z| <= z) = 2 Phi(z) - 1` for standard normal `Z`.
pub fn phi_sym(z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(Error::invalid(format!("phi_sym needs z >= 0, got {z}")));
    }
    Ok(erf(z * FRAC_1_SQRT_2))
}

/// Upper tail `P(|Z| > z)`, accurate far into the tail.
pub fn phi_sym_upper(z: f64) -> f64 {
    erfc(z.max(0.0) * FRAC_1_SQRT_2)
}

/// `ln Phi_sym(z)`; `-inf` at `z = 0`.
pub fn ln_phi_sym(z: f64) -> f64 {
    if z <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let q = phi_sym_upper(z);
    if q < 0.5 {
        (-q).ln_1p()
    } else {
        erf(z * FRAC_1_SQRT_2).ln()
    }
}

/// Density of `|Z|` at `z`.
pub(crate) fn phi_sym_density(z: f64) -> f64 {
    (2.0 / PI).sqrt() * (-0.5 * z * z).exp()
}

/// Inverse of [`phi_sym`] for `0 <= p < 1`.
pub fn phi_sym_inv(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("phi_sym_inv needs 0 <= p < 1, got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return phi_sym_inv_upper(1.0 - p);
    }
    let mut z = SQRT_2 * erf_inv(p);
    for _ in 0..2 {
        let d = phi_sym_density(z);
        if d > 0.0 {
            z -= (erf(z * FRAC_1_SQRT_2) - p) / d;
        }
    }
    Ok(z.max(0.0))
}

/// The `z` with `P(|Z| > z) = q`, for `0 < q <= 1`.
pub fn phi_sym_inv_upper(q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!(
            "upper tail probability must lie in (0, 1], got {q}"
        )));
    }
    let mut z = SQRT_2 * erfc_inv(q);
    for _ in 0..2 {
        let d = phi_sym_density(z);
        if d > 0.0 {
            z += (phi_sym_upper(z) - q) / d;
        }
    }
    Ok(z.max(0.0))
}

/// The `z` with `ln Phi_sym(z) = log_p`, for `log_p < 0`.
pub fn phi_sym_inv_ln(log_p: f64) -> Result<f64> {
    if !(log_p < 0.0) {
        return Err(Error::invalid(format!("log probability must be negative, got {log_p}")));
    }
    phi_sym_inv_upper(-log_p.exp_m1())
}

/// Quantile method for weighted chi-square sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Numerical inversion of the characteristic function.
    #[default]
    Imhof,
    /// Gamma law with matched mean and variance.
    Gamma,
}

/// Distribution of `sum_j w_j Z_j^2` with independent standard normal `Z_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedChiSq {
    weights: Vec<f64>,
}

impl WeightedChiSq {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("weighted chi-square needs at least one weight"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
        Ok(WeightedChiSq { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// `P(W <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        wchisq_cdf_unchecked(&self.weights, x)
    }

    /// `P(W > x)`.
    pub fn sf(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    pub fn quantile(&self, p: f64, method: QuantileMethod) -> Result<f64> {
        wchisq_quantile(self, p, method)
    }

    /// Gamma moment-matching parameters `(shape, scale)`.
    pub fn gamma_params(&self) -> (f64, f64) {
        let s1 = self.mean();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        (s1 * s1 / (2.0 * s2), 2.0 * s2 / s1)
    }
}

/// `P(sum w_j Z_j^2 <= x)` by numerical characteristic-function inversion.
pub fn wchisq_cdf(w: &WeightedChiSq, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("weighted chi-square cdf needs x >= 0, got {x}")));
    }
    Ok(w.cdf(x))
}

fn wchisq_cdf_unchecked(weights: &[f64], x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let total: f64 = weights.iter().sum();
    let lam: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let x = x / total;
    let v = 0.5 - imhof_integral(&lam, x) / PI;
    v.clamp(0.0, 1.0)
}

struct Phase<'a> {
    lam: &'a [f64],
    x: f64,
}

impl Phase<'_> {
    fn theta(&self, u: f64) -> f64 {
        0.5 * self.lam.iter().map(|l| (l * u).atan()).sum::<f64>() - 0.5 * self.x * u
    }

    fn slope(&self, u: f64) -> f64 {
        0.5 * self.lam.iter().map(|l| l / (1.0 + l * l * u * u)).sum::<f64>() - 0.5 * self.x
    }

    fn ln_rho(&self, u: f64) -> f64 {
        0.25 * self.lam.iter().map(|l| (l * l * u * u).ln_1p()).sum::<f64>()
    }

    fn envelope(&self, u: f64) -> f64 {
        (-u.ln() - self.ln_rho(u)).exp()
    }

    fn integrand(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.slope(0.0);
        }
        self.theta(u).sin() * self.envelope(u)
    }

    /// Smallest `u > from` with `theta(u) = target`, on the decreasing branch.
    fn crossing(&self, target: f64, from: f64, step: f64) -> f64 {
        let g = |u: f64| self.theta(u) - target;
        let mut hi = from + step;
        let mut guard = 0;
        while g(hi) > 0.0 && guard < 200 {
            hi = from + (hi - from) * 2.0;
            guard += 1;
        }
        illinois(g, from, hi, 1e-15, "phase crossing").unwrap_or(hi)
    }
}

/// `int_0^inf sin(theta(u)) / (u rho(u)) du` for normalized weights.
fn imhof_integral(lam: &[f64], x: f64) -> f64 {
    let ph = Phase { lam, x };
    // theta is concave: increasing up to u_star, then decreasing for good
    let u_star = if ph.slope(0.0) > 0.0 {
        let mut hi = 1.0;
        while ph.slope(hi) > 0.0 {
            hi *= 2.0;
        }
        bisect(|u| ph.slope(u), 0.0, hi, 1e-14, "phase maximum").unwrap_or(hi)
    } else {
        0.0
    };
    let top = ph.theta(u_star);
    let mut m = (top / PI).ceil() - 1.0;
    let step = (2.0 * PI / x.max(1e-300)).clamp(1e-6, 1e6);
    let mut u = ph.crossing(m * PI, u_star, step);
    let head = integrate(|t| ph.integrand(t), 0.0, u, 1e-14, 1e-13, 2000);

    let mut partial = Vec::with_capacity(64);
    let mut sum = head;
    partial.push(sum);
    let mut last_est = f64::NAN;
    let mut settled = 0;
    for _ in 0..20_000 {
        m -= 1.0;
        let next = ph.crossing(m * PI, u, step);
        let term = integrate(|t| ph.integrand(t), u, next, 1e-15, 1e-13, 50);
        sum += term;
        u = next;
        if ph.envelope(u) * (2.0 * PI / x.max(1e-300)) < 1e-13 {
            return sum;
        }
        partial.push(sum);
        if partial.len() > 60 {
            partial.remove(0);
        }
        if partial.len() >= 5 {
            let est = wynn_epsilon(&partial);
            if (est - last_est).abs() < 1e-13 {
                settled += 1;
                if settled >= 2 {
                    return est;
                }
            } else {
                settled = 0;
            }
            last_est = est;
        }
    }
    if last_est.is_finite() {
        last_est
    } else {
        sum
    }
}

/// Wynn's epsilon extrapolation of a sequence of partial sums.
fn wynn_epsilon(s: &[f64]) -> f64 {
    let mut prev: Vec<f64> = vec![0.0; s.len() + 1];
    let mut cur: Vec<f64> = s.to_vec();
    let mut best = *s.last().expect("nonempty");
    let mut col = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let d = cur[i + 1] - cur[i];
            if d == 0.0 || !d.is_finite() {
                return best;
            }
            next.push(prev[i + 1] + 1.0 / d);
        }
        col += 1;
        if col % 2 == 0 {
            let v = *next.last().expect("nonempty");
            if !v.is_finite() {
                return best;
            }
            best = v;
        }
        prev = cur;
        cur = next;
    }
    best
}

/// Quantile of a weighted chi-square sum at probability `p`.
pub fn wchisq_quantile(w: &WeightedChiSq, p: f64, method: QuantileMethod) -> Result<f64> {
    if !(p > 0.0 && p < 1.0 - MAX_TAIL_GAP) {
        return Err(Error::invalid(format!(
            "quantile probability must lie in (0, 1 - {MAX_TAIL_GAP:e}), got {p}"
        )));
    }
    let mean = w.mean();
    let hi0 = mean + 20.0 * w.variance().sqrt();
    match method {
        QuantileMethod::Imhof => {
            let f = |x: f64| w.cdf(x) - p;
            // the gamma fit is close, so try a narrow bracket around it first
            if let Ok(g) = wchisq_quantile(w, p, QuantileMethod::Gamma) {
                let (lo, hi) = (0.9 * g, 1.1 * g);
                if f(lo) < 0.0 && f(hi) > 0.0 {
                    return illinois(f, lo, hi, 1e-12, "weighted chi-square quantile");
                }
            }
            let hi = crate::numeric::expand_upper(f, 0.0, hi0, "weighted chi-square quantile")?;
            illinois(f, 0.0, hi, 1e-12, "weighted chi-square quantile")
        }
        QuantileMethod::Gamma => {
            let (shape, scale) = w.gamma_params();
            let f = |x: f64| {
                if x <= 0.0 {
                    -p
                } else if p > 0.5 {
                    (1.0 - p) - gamma_ur(shape, x / scale)
                } else {
                    gamma_lr(shape, x / scale) - p
                }
            };
            let hi = crate::numeric::expand_upper(f, 0.0, hi0, "gamma quantile")?;
            illinois(f, 0.0, hi, 1e-13, "gamma quantile")
        }
    }
}

/// `P(|T| <= t)` for Student t with `df` degrees of freedom.
pub fn t_sym_cdf(df: f64, t: f64) -> Result<f64> {
    check_df(df)?;
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("t_sym_cdf needs t >= 0, got {t}")));
    }
    Ok(1.0 - t_sym_upper(df, t))
}

/// `P(|T| > t)`.
pub fn t_sym_upper(df: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    let t2 = t * t;
    if t2 < df {
        1.0 - beta_reg(0.5, 0.5 * df, t2 / (df + t2))
    } else {
        beta_reg(0.5 * df, 0.5, df / (df + t2))
    }
}

/// The `t` with `P(|T| <= t) = p`, for `0 <= p < 1`.
pub fn t_sym_inv(df: f64, p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("t_sym_inv needs 0 <= p < 1, got {p}")));
    }
    t_sym_inv_upper(df, 1.0 - p)
}

/// The `t` with `P(|T| > t) = q`, for `0 < q <= 1`.
pub fn t_sym_inv_upper(df: f64, q: f64) -> Result<f64> {
    check_df(df)?;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!(
            "upper tail probability must lie in (0, 1], got {q}"
        )));
    }
    if q == 1.0 {
        return Ok(0.0);
    }
    // the t quantile always exceeds the normal one
    let z = phi_sym_inv_upper(q)?;
    let lq = q.ln();
    let f = |t: f64| lq - t_sym_upper(df, t).ln();
    let mut hi = (2.0 * z).max(1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Bracket {
                what: "folded t quantile",
                lo: z,
                hi,
                f_lo: f(z),
                f_hi: f64::NAN,
            });
        }
    }
    bisect(f, 0.0, hi, 1e-14, "folded t quantile")
}

/// Direction selector for [`t_sym`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TDirection {
    Cdf,
    Inv,
}

/// Folded t cdf (`x = t`) or inverse (`x = p`).
pub fn t_sym(df: usize, x: f64, direction: TDirection) -> Result<f64> {
    let df = df as f64;
    match direction {
        TDirection::Cdf => t_sym_cdf(df, x),
        TDirection::Inv => t_sym_inv(df, x),
    }
}

fn check_df(df: f64) -> Result<()> {
    if !(df >= 1.0) {
        return Err(Error::invalid(format!("degrees of freedom must be >= 1, got {df}")));
    }
    Ok(())
}
