//! Sample generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use modspec::algebra::{AlgebraField, Grid, ParameterGrid, Projection};
use modspec::diag::ModuleOperator;
use modspec::linalg::{self, c, CMat};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Eigenvalues of a Hermitian matrix, ascending, from the real symmetric
/// embedding `[[A, −B], [B, A]]`, whose spectrum is that of `A + iB` doubled.
pub fn oracle_eigenvalues(m: &CMat) -> Vec<f64> {
    let n = m.nrows();
    let big = DMatrix::<f64>::from_fn(2 * n, 2 * n, |r, s| {
        let z = m[(r % n, s % n)];
        match (r < n, s < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut v: Vec<f64> = big.symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().step_by(2).collect()
}

/// Grid with random positive weights and fiber dimensions in `1..=max_dim`.
pub fn random_grid(rng: &mut ChaCha8Rng, points: usize, max_dim: usize) -> Grid {
    let weights: Vec<f64> = (0..points).map(|_| rng.random_range(0.2..1.0)).collect();
    let dims = (0..points).map(|_| rng.random_range(1..=max_dim)).collect();
    ParameterGrid::normalized((0..points).map(|i| i as f64).collect(), weights, dims).unwrap()
}

/// Operator whose fiber at `γ` has the spectrum `spectrum(rng, size, n(γ))`
/// in a random unitary basis.
pub fn operator_with_spectra(
    rng: &mut ChaCha8Rng,
    grid: &Grid,
    len: usize,
    mut spectrum: impl FnMut(&mut ChaCha8Rng, usize, usize) -> Vec<f64>,
) -> ModuleOperator {
    let fibers = (0..grid.len())
        .map(|i| {
            let size = len * grid.dim(i);
            let s = spectrum(rng, size, grid.dim(i));
            let u = linalg::random_unitary(rng, size);
            linalg::hermitian_part(&(&u * linalg::real_diag(&s) * u.adjoint()))
        })
        .collect();
    ModuleOperator::new(grid, len, fibers).unwrap()
}

/// Positive definite operator, fiber spectra uniform in `[0.05, 1.05)`.
pub fn positive_operator(rng: &mut ChaCha8Rng, grid: &Grid, len: usize) -> ModuleOperator {
    operator_with_spectra(rng, grid, len, |r, size, _| (0..size).map(|_| r.random_range(0.05..1.05)).collect())
}

/// Positive spectrum made of degenerate clusters with multiplicities up to
/// three, consecutive cluster levels at least `0.2` apart.
pub fn clustered_spectrum(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size);
    let mut level = rng.random_range(0.5..1.0);
    while out.len() < size {
        let mult = rng.random_range(1..=3).min(size - out.len());
        out.extend(std::iter::repeat_n(level, mult));
        level += rng.random_range(0.2..1.0);
    }
    out
}

/// Positive spectrum with its top `n` values in `[2, 3)` and the rest in
/// `[0.1, 1)`.
pub fn top_gapped_spectrum(rng: &mut ChaCha8Rng, size: usize, n: usize) -> Vec<f64> {
    (0..size)
        .map(|i| if i < n { rng.random_range(2.0..3.0) } else { rng.random_range(0.1..1.0) })
        .collect()
}

/// Random orthonormal `dim × rank` frame.
pub fn random_frame(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> CMat {
    linalg::random_unitary(rng, dim).columns(0, rank).into_owned()
}

/// Projection with random fiber ranks in `0..=n(γ)`.
pub fn random_projection(rng: &mut ChaCha8Rng, grid: &Grid) -> Projection {
    let frames: Vec<CMat> = (0..grid.len())
        .map(|i| {
            let n = grid.dim(i);
            let r = rng.random_range(0..=n);
            random_frame(rng, n, r)
        })
        .collect();
    Projection::from_frames(grid, &frames).unwrap()
}

/// Pair of projections that share a random common subspace on each fiber,
/// so that meets are not generically zero.
pub fn overlapping_projections(rng: &mut ChaCha8Rng, grid: &Grid) -> (Projection, Projection) {
    let mut pf = Vec::new();
    let mut qf = Vec::new();
    for i in 0..grid.len() {
        let n = grid.dim(i);
        let u = linalg::random_unitary(rng, n);
        let common = rng.random_range(0..=n);
        let extra_p = rng.random_range(0..=n - common);
        let extra_q = rng.random_range(0..=n - common);
        let p = u.columns(0, common + extra_p).into_owned();
        // q shares the first `common` columns and tilts into the rest.
        let mut q = CMat::zeros(n, common + extra_q);
        q.columns_mut(0, common).copy_from(&u.columns(0, common));
        if extra_q > 0 {
            let rest = u.columns(common, n - common).into_owned();
            let mix = linalg::random_unitary(rng, n - common).columns(0, extra_q).into_owned();
            q.columns_mut(common, extra_q).copy_from(&(rest * mix));
        }
        pf.push(p);
        qf.push(q);
    }
    (Projection::from_frames(grid, &pf).unwrap(), Projection::from_frames(grid, &qf).unwrap())
}

/// Positive contraction with `τ(a) > 1 − ε/2`, by rejection.
pub fn contraction_near_identity(rng: &mut ChaCha8Rng, grid: &Grid, epsilon: f64) -> AlgebraField {
    loop {
        let fibers: Vec<CMat> = (0..grid.len())
            .map(|i| {
                let n = grid.dim(i);
                let s: Vec<f64> = (0..n)
                    .map(|_| {
                        let u: f64 = rng.random();
                        (1.0 - u.powi(4)).clamp(0.0, 1.0)
                    })
                    .collect();
                let u = linalg::random_unitary(rng, n);
                linalg::hermitian_part(&(&u * linalg::real_diag(&s) * u.adjoint()))
            })
            .collect();
        let a = AlgebraField::new(grid.clone(), fibers).unwrap();
        if a.trace_tau().re > 1.0 - epsilon / 2.0 && a.norm() <= 1.0 {
            return a;
        }
    }
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn scalar(v: f64) -> modspec::linalg::C64 {
    c(v)
}
