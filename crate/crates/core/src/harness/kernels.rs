//! Matérn covariance kernels, optionally on a warped domain.

use std::sync::Arc;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fnspace::{CovOperator, Grid};
use crate::numeric::integrate;

/// Standard deviation used by the simulation designs.
pub const DEFAULT_SIGMA: f64 = 0.25;

/// Modified Bessel function of the second kind, from
/// `K_nu(x) = int_0^inf exp(-x cosh u) cosh(nu u) du`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid(format!("bessel_k needs x > 0, got {x}")));
    }
    let nu = nu.abs();
    let mut upper = 1.0_f64;
    while x * (upper.cosh() - 1.0) - nu * upper < 50.0 {
        upper *= 1.5;
    }
    // subtract the peak exponent so the integrand stays O(1) for small x
    let log_scale = -x;
    let v = integrate(
        |u| (-x * (u.cosh() - 1.0)).exp() * (nu * u).cosh(),
        0.0,
        upper,
        0.0,
        1e-14,
        4000,
    );
    Ok(v * log_scale.exp())
}

fn check(nu: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("nu must be positive, got {nu}")));
    }
    Ok(())
}

/// Matérn kernel at distance `d` through the Bessel representation.
pub fn matern_bessel(d: f64, nu: f64, sigma: f64) -> Result<f64> {
    check(nu, sigma)?;
    let d = d.abs();
    if d == 0.0 {
        return Ok(sigma * sigma);
    }
    let x = (2.0 * nu).sqrt() * d;
    let k = bessel_k(nu, x)?;
    Ok(sigma * sigma / (gamma(nu) * 2f64.powf(nu - 1.0)) * x.powf(nu) * k)
}

/// Matérn kernel at distance `d`; closed forms for `nu` in {1/2, 3/2, 5/2}.
pub fn matern(d: f64, nu: f64, sigma: f64) -> Result<f64> {
    check(nu, sigma)?;
    let d = d.abs();
    let s2 = sigma * sigma;
    let v = if nu == 0.5 {
        s2 * (-d).exp()
    } else if nu == 1.5 {
        let a = 3f64.sqrt() * d;
        s2 * (1.0 + a) * (-a).exp()
    } else if nu == 2.5 {
        let a = 5f64.sqrt() * d;
        s2 * (1.0 + a + a * a / 3.0) * (-a).exp()
    } else {
        return matern_bessel(d, nu, sigma);
    };
    Ok(v)
}

/// Matérn covariance on `grid` with distance `|t^w - s^w|`
/// (`warp_exponent = 1` is the plain kernel).
pub fn matern_cov(grid: &Arc<Grid>, nu: f64, sigma: f64, warp_exponent: f64) -> Result<CovOperator> {
    check(nu, sigma)?;
    if !(warp_exponent >= 1.0) {
        return Err(Error::invalid(format!(
            "warp exponent must be >= 1, got {warp_exponent}"
        )));
    }
    if grid.points().iter().any(|t| *t < 0.0) && warp_exponent != 1.0 {
        return Err(Error::invalid("warping needs a nonnegative domain"));
    }
    let t: Vec<f64> = grid.points().iter().map(|t| t.powf(warp_exponent)).collect();
    let p = t.len();
    let mut k = nalgebra::DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v = matern(t[i] - t[j], nu, sigma)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    CovOperator::new(grid.clone(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::Quadrature;

    #[test]
    fn bessel_half_integer_identities() {
        for &x in &[0.01, 0.3, 1.0, 4.0, 20.0] {
            let k12 = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
            assert!((bessel_k(0.5, x).unwrap() / k12 - 1.0).abs() < 1e-11);
            let k32 = k12 * (1.0 + 1.0 / x);
            assert!((bessel_k(1.5, x).unwrap() / k32 - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn closed_forms_match_bessel_route() {
        for &nu in &[0.5, 1.5, 2.5] {
            for &d in &[1e-4, 0.01, 0.2, 0.7, 1.0] {
                let a = matern(d, nu, 0.25).unwrap();
                let b = matern_bessel(d, nu, 0.25).unwrap();
                assert!((a - b).abs() < 1e-10, "nu {nu} d {d}: {a} {b}");
            }
        }
        assert!((matern(0.3, 0.5, 1.0).unwrap() - (-0.3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn diagonal_is_variance() {
        let g = Grid::uniform(20, 0.0, 1.0, Quadrature::Trapezoid).unwrap();
        for nu in [0.5, 1.5, 1.0] {
            let c = matern_cov(&g, nu, DEFAULT_SIGMA, 1.0).unwrap();
            assert!(c.diagonal().iter().all(|v| (v - 0.0625).abs() < 1e-15));
        }
        let w = matern_cov(&g, 0.5, DEFAULT_SIGMA, 10.0).unwrap();
        assert!(w.diagonal().iter().all(|v| (v - 0.0625).abs() < 1e-15));
        assert!(matern_cov(&g, 0.5, 0.0, 1.0).is_err());
        assert!(matern_cov(&g, 0.5, 1.0, 0.5).is_err());
    }

    #[test]
    fn warping_flattens_the_left_end() {
        let g = Grid::uniform(101, 0.0, 1.0, Quadrature::Trapezoid).unwrap();
        let c = matern_cov(&g, 0.5, 1.0, 10.0).unwrap();
        let k = c.kernel();
        assert!(k[(20, 21)] > k[(94, 95)]);
    }
}
