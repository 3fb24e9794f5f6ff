//! The dyadic model over `L^∞[0, 1]`: one scalar fiber per interval
//! `(2^{-k}, 2^{-(k-1)}]`, `k = 1..K`, and the arrow-shaped operator whose
//! first row and column carry `f_k = b_k·a_k`.

use crate::algebra::{Grid, ParameterGrid};
use crate::diag::ModuleOperator;
use crate::error::{Error, Result};
use crate::linalg::{c, CMat};
use crate::module::ModuleVector;

/// Grid with points at the interval midpoints and weights `2^{-k}`. The last
/// point also absorbs `(0, 2^{-K}]`, so its weight is `2^{-(K-1)}`.
pub fn dyadic_grid(intervals: usize) -> Result<Grid> {
    if intervals == 0 {
        return Err(Error::param("need at least one interval"));
    }
    let labels = (1..=intervals).map(|k| 1.5 * 0.5f64.powi(k as i32)).collect();
    let mut weights: Vec<f64> = (1..=intervals).map(|k| 0.5f64.powi(k as i32)).collect();
    weights[intervals - 1] *= 2.0;
    ParameterGrid::new(labels, weights, vec![1; intervals])
}

/// `b_k = 2^{-k}`.
pub fn dyadic_coefficients(intervals: usize) -> Vec<f64> {
    (1..=intervals).map(|k| 0.5f64.powi(k as i32)).collect()
}

/// The operator with `K_{1k} = K_{k1} = f_k` and zeros elsewhere, truncated
/// to `N = K`. On interval `k > 1` its fiber has eigenvalues `±b_k` and zeros.
pub fn dyadic_operator(grid: &Grid, b: &[f64]) -> Result<ModuleOperator> {
    let kk = grid.len();
    if b.len() != kk {
        return Err(Error::ShapeMismatch(format!("{} coefficients for {kk} intervals", b.len())));
    }
    let fibers = (0..kk)
        .map(|k| {
            let mut f = CMat::zeros(kk, kk);
            if k == 0 {
                f[(0, 0)] = c(b[0]);
            } else {
                f[(0, k)] = c(b[k]);
                f[(k, 0)] = c(b[k]);
            }
            f
        })
        .collect();
    ModuleOperator::new(grid, kk, fibers)
}

/// The eigenvector of the top eigenvalue written down by hand:
/// `x_1 = a_1 + (√2/2) Σ_{k>1} a_k` and `x_n = (√2/2) a_n` for `n > 1`.
pub fn dyadic_eigenvector(grid: &Grid) -> ModuleVector {
    let kk = grid.len();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let frames = (0..kk)
        .map(|k| {
            let mut f = CMat::zeros(kk, 1);
            if k == 0 {
                f[(0, 0)] = c(1.0);
            } else {
                f[(0, 0)] = c(s);
                f[(k, 0)] = c(s);
            }
            f
        })
        .collect();
    ModuleVector::from_parts(grid.clone(), kk, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::{compactness_profile, diagonalize, sign_split, DiagonalizeOptions};
    use crate::module::{inner, tail_profile};

    #[test]
    fn weights_cover_unit_interval() {
        let g = dyadic_grid(12).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_eigenvector_has_unit_inner_square() {
        let g = dyadic_grid(12).unwrap();
        let x = dyadic_eigenvector(&g);
        let ip = inner(&x, &x).unwrap();
        assert!(ip.distance(&crate::algebra::AlgebraField::identity(&g)).unwrap() < 1e-15);
        let t = tail_profile(&x);
        for m in 1..12 {
            assert!((t.sup_tails[m] - 0.5).abs() < 1e-15);
        }
        // τ-tails are geometric: Σ_{k>m} w_k / 2.
        let w = g.weights();
        for m in 1..12 {
            let want: f64 = w[m..].iter().sum::<f64>() * 0.5;
            assert!((t.trace_tails[m] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonalizer_recovers_top_eigenpair() {
        let g = dyadic_grid(8).unwrap();
        let b = dyadic_coefficients(8);
        let k = dyadic_operator(&g, &b).unwrap();
        let split = sign_split(&k);
        for (i, r) in split.ranks().into_iter().enumerate() {
            if i == 0 {
                assert_eq!(r, (1, 7, 0));
            } else {
                assert_eq!(r, (1, 6, 1));
            }
        }
        let dec = diagonalize(&k, &DiagonalizeOptions::default()).unwrap();
        assert!(dec.certificates.passed(), "{:?}", dec.certificates);
        let top = &dec.terms[0];
        let hand = dyadic_eigenvector(&g);
        for i in 0..8 {
            assert!((top.eigenvalue.fiber(i)[(0, 0)].re - b[i]).abs() < 1e-14);
            let f = top.vector.frame(i);
            let h = hand.frame(i);
            let phase = (h.adjoint() * f)[(0, 0)];
            assert!((phase.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compactness_tracks_coefficients() {
        let g = dyadic_grid(6).unwrap();
        let b = dyadic_coefficients(6);
        let prof = compactness_profile(&dyadic_operator(&g, &b).unwrap());
        for m in 1..6 {
            assert!((prof[m] - b[m]).abs() < 1e-14);
        }
        assert_eq!(prof[6], 0.0);
    }
}
