//! B-spline basis evaluation on open uniform knot vectors.

use crate::error::{Error, Result};

/// Clamped knot vector with equally spaced interior knots on `[a, b]`.
pub fn uniform_knots(a: f64, b: f64, degree: usize, n_basis: usize) -> Result<Vec<f64>> {
    if n_basis < degree + 1 {
        return Err(Error::invalid(format!(
            "need at least degree + 1 = {} basis functions, got {n_basis}",
            degree + 1
        )));
    }
    let segments = n_basis - degree;
    let mut knots = vec![a; degree + 1];
    for k in 1..segments {
        knots.push(a + (b - a) * k as f64 / segments as f64);
    }
    knots.extend(std::iter::repeat_n(b, degree + 1));
    Ok(knots)
}

/// Values of all `n_basis` B-splines of `degree` at `x` (Cox-de Boor).
pub fn basis_values(x: f64, knots: &[f64], degree: usize) -> Vec<f64> {
    let m = knots.len() - 1;
    let n_basis = knots.len() - degree - 1;
    let last = knots[m];
    let mut n = vec![0.0; m];
    // the right end point belongs to the last nonempty span
    let span = if x >= last {
        (0..m).rev().find(|&i| knots[i] < knots[i + 1]).unwrap_or(0)
    } else {
        (0..m).find(|&i| knots[i] <= x && x < knots[i + 1]).unwrap_or(0)
    };
    n[span] = 1.0;
    for p in 1..=degree {
        for i in 0..m - p {
            let mut v = 0.0;
            let d1 = knots[i + p] - knots[i];
            if d1 > 0.0 {
                v += (x - knots[i]) / d1 * n[i];
            }
            let d2 = knots[i + p + 1] - knots[i + 1];
            if d2 > 0.0 {
                v += (knots[i + p + 1] - x) / d2 * n[i + 1];
            }
            n[i] = v;
        }
    }
    n.truncate(n_basis);
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        let knots = uniform_knots(0.0, 1.0, 3, 9).unwrap();
        assert_eq!(knots.len(), 13);
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            let v = basis_values(x, &knots, 3);
            assert_eq!(v.len(), 9);
            let s: f64 = v.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "{x}: {s}");
            assert!(v.iter().all(|b| *b >= -1e-15));
        }
    }

    #[test]
    fn linear_splines_are_hats() {
        let knots = uniform_knots(0.0, 1.0, 1, 3).unwrap();
        let v = basis_values(0.25, &knots, 1);
        assert_eq!(v, vec![0.5, 0.5, 0.0]);
        assert_eq!(basis_values(1.0, &knots, 1), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn too_few_basis_functions() {
        assert!(uniform_knots(0.0, 1.0, 3, 3).is_err());
    }
}
