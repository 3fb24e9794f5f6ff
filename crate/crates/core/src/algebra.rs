//! The model algebra `A = ⊕_γ M_{n(γ)}(ℂ)` over a weighted parameter grid.
//!
//! Every element is a field of square matrices, one fiber per grid point. The
//! normalized trace is `τ(a) = Σ_γ μ(γ)·tr(a(γ))/n(γ)` and the center-valued
//! trace replaces each fiber by its normalized trace times the identity.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, c, eigh, CMat, C64};
use crate::tol;

/// Sampled parameter space: labels, strictly positive weights summing to one,
/// and the matrix size of each fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGrid {
    labels: Vec<f64>,
    weights: Vec<f64>,
    dims: Vec<usize>,
}

pub type Grid = Arc<ParameterGrid>;

impl ParameterGrid {
    pub fn new(labels: Vec<f64>, weights: Vec<f64>, dims: Vec<usize>) -> Result<Grid> {
        if weights.is_empty() {
            return Err(Error::InvalidGrid("grid has no points".into()));
        }
        if labels.len() != weights.len() || dims.len() != weights.len() {
            return Err(Error::InvalidGrid(format!(
                "labels/weights/dims lengths differ ({}, {}, {})",
                labels.len(),
                weights.len(),
                dims.len()
            )));
        }
        if let Some(i) = weights.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidGrid(format!("weight at point {i} is not strictly positive")));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidGrid(format!("fiber dimension at point {i} is zero")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tol::WEIGHT_SUM {
            return Err(Error::InvalidGrid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Arc::new(ParameterGrid { labels, weights, dims }))
    }

    /// Weights are rescaled to sum to one before validation.
    pub fn normalized(labels: Vec<f64>, weights: Vec<f64>, dims: Vec<usize>) -> Result<Grid> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidGrid("weights must have a positive sum".into()));
        }
        let w = weights.into_iter().map(|w| w / total).collect();
        Self::new(labels, w, dims)
    }

    pub fn uniform(points: usize, dim: usize) -> Result<Grid> {
        let labels = (0..points).map(|i| i as f64).collect();
        let w = vec![1.0 / points as f64; points];
        Self::normalized(labels, w, vec![dim; points])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, point: usize) -> usize {
        self.dims[point]
    }

    pub fn weight(&self, point: usize) -> f64 {
        self.weights[point]
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> bool {
    Arc::ptr_eq(a, b) || (a.weights == b.weights && a.dims == b.dims)
}

pub(crate) fn check_grid(a: &Grid, b: &Grid) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{} points with dims {:?} vs {} points with dims {:?}",
            a.len(),
            a.dims,
            b.len(),
            b.dims
        )))
    }
}

/// An element of `A`: one `n(γ) × n(γ)` complex matrix per grid point.
#[derive(Clone, Debug)]
pub struct AlgebraField {
    grid: Grid,
    fibers: Vec<CMat>,
}

impl AlgebraField {
    pub fn new(grid: Grid, fibers: Vec<CMat>) -> Result<Self> {
        if fibers.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} fibers for a grid of {} points",
                fibers.len(),
                grid.len()
            )));
        }
        for (i, f) in fibers.iter().enumerate() {
            let n = grid.dim(i);
            if f.nrows() != n || f.ncols() != n {
                return Err(Error::ShapeMismatch(format!(
                    "fiber {i} is {}x{}, expected {n}x{n}",
                    f.nrows(),
                    f.ncols()
                )));
            }
        }
        Ok(AlgebraField { grid, fibers })
    }

    pub(crate) fn from_parts(grid: Grid, fibers: Vec<CMat>) -> Self {
        debug_assert_eq!(grid.len(), fibers.len());
        AlgebraField { grid, fibers }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(usize, usize) -> CMat) -> Result<Self> {
        let fibers = (0..grid.len()).map(|i| f(i, grid.dim(i))).collect();
        Self::new(grid.clone(), fibers)
    }

    pub fn identity(grid: &Grid) -> Self {
        let fibers = grid.dims().iter().map(|&n| CMat::identity(n, n)).collect();
        Self::from_parts(grid.clone(), fibers)
    }

    pub fn zero(grid: &Grid) -> Self {
        let fibers = grid.dims().iter().map(|&n| CMat::zeros(n, n)).collect();
        Self::from_parts(grid.clone(), fibers)
    }

    /// Central element `s(γ)·1`.
    pub fn scalar(grid: &Grid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scalar values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        let fibers = grid
            .dims()
            .iter()
            .zip(values)
            .map(|(&n, &v)| CMat::identity(n, n) * c(v))
            .collect();
        Ok(Self::from_parts(grid.clone(), fibers))
    }

    /// Diagonal fibers from real entries.
    pub fn diagonal(grid: &Grid, entries: &[Vec<f64>]) -> Result<Self> {
        let fibers = entries.iter().map(|d| linalg::real_diag(d)).collect();
        Self::new(grid.clone(), fibers)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn fibers(&self) -> &[CMat] {
        &self.fibers
    }

    pub fn fiber(&self, point: usize) -> &CMat {
        &self.fibers[point]
    }

    pub fn into_fibers(self) -> Vec<CMat> {
        self.fibers
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&CMat, &CMat) -> CMat) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        let fibers = self.fibers.iter().zip(&other.fibers).map(|(a, b)| f(a, b)).collect();
        Ok(Self::from_parts(self.grid.clone(), fibers))
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> Self {
        Self::from_parts(self.grid.clone(), self.fibers.iter().map(f).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|a| a * s)
    }

    pub fn adjoint(&self) -> Self {
        self.map(|a| a.adjoint())
    }

    /// C*-norm: the largest fiber operator norm.
    pub fn norm(&self) -> f64 {
        self.fibers.iter().map(linalg::spectral_norm).fold(0.0, f64::max)
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.fibers.iter().map(linalg::hermitian_defect).fold(0.0, f64::max)
    }

    pub fn check_hermitian(&self, tolerance: f64) -> Result<()> {
        for (i, f) in self.fibers.iter().enumerate() {
            let d = linalg::hermitian_defect(f);
            if d > tolerance {
                return Err(Error::NotHermitian { point: i, defect: d });
            }
        }
        Ok(())
    }

    /// Per-fiber ascending spectra (Hermitian part).
    pub fn spectra(&self) -> Vec<Vec<f64>> {
        self.fibers.par_iter().map(|f| eigh(f).values).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.spectra()
            .iter()
            .filter_map(|s| s.first().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.spectra()
            .iter()
            .filter_map(|s| s.last().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_positive(&self, tolerance: f64) -> Result<()> {
        for (i, s) in self.spectra().iter().enumerate() {
            if let Some(&m) = s.first() {
                if m < -tolerance {
                    return Err(Error::NotPositive { point: i, min_eig: m });
                }
            }
        }
        Ok(())
    }

    /// Normalized trace `τ`. Reduction runs in grid order.
    pub fn trace_tau(&self) -> C64 {
        let mut acc = c(0.0);
        for (i, f) in self.fibers.iter().enumerate() {
            acc += f.trace() * c(self.grid.weight(i) / self.grid.dim(i) as f64);
        }
        acc
    }

    /// Center-valued trace `T`.
    pub fn center_trace(&self) -> Self {
        self.map(|f| {
            let n = f.nrows();
            CMat::identity(n, n) * (f.trace() / c(n as f64))
        })
    }

    /// Per-fiber `U diag(f(s)) U*` for a Hermitian element.
    pub fn functional_calculus(&self, f: impl Fn(f64) -> f64 + Sync) -> Result<Self> {
        self.check_hermitian(tol::HERMITIAN_INPUT)?;
        let fibers = self.fibers.par_iter().map(|m| eigh(m).apply(&f)).collect();
        Ok(Self::from_parts(self.grid.clone(), fibers))
    }

    /// Largest entrywise distance between two fields.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        check_grid(&self.grid, &other.grid)?;
        Ok(self
            .fibers
            .iter()
            .zip(&other.fibers)
            .map(|(a, b)| linalg::max_abs(&(a - b)))
            .fold(0.0, f64::max))
    }

    /// Operator-norm distance `‖a − b‖`.
    pub fn norm_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }
}

/// `τ(a)`; free-function form.
pub fn trace_tau(a: &AlgebraField) -> C64 {
    a.trace_tau()
}

/// A self-adjoint idempotent field, certified on construction.
#[derive(Clone, Debug)]
pub struct Projection(AlgebraField);

impl Projection {
    /// Certifies `‖p² − p‖ ≤ 1e-10`, `‖p − p*‖ ≤ 1e-12` and fiber eigenvalues
    /// within `1e-8` of {0, 1}.
    pub fn certify(p: AlgebraField) -> Result<Self> {
        for (i, f) in p.fibers.iter().enumerate() {
            let herm = linalg::hermitian_defect(f);
            if herm > tol::PROJECTION_HERMITIAN {
                return Err(Error::NotProjection { point: i, defect: herm });
            }
            let idem = linalg::spectral_norm(&(f * f - f));
            if idem > tol::PROJECTION_IDEMPOTENT {
                return Err(Error::NotProjection { point: i, defect: idem });
            }
            let off = eigh(f)
                .values
                .iter()
                .map(|&s| s.abs().min((s - 1.0).abs()))
                .fold(0.0, f64::max);
            if off > tol::PROJECTION_ROUNDING {
                return Err(Error::NotProjection { point: i, defect: off });
            }
        }
        Ok(Projection(p))
    }

    /// Projection onto the column spans of orthonormal frames, one per fiber.
    pub fn from_frames(grid: &Grid, frames: &[CMat]) -> Result<Self> {
        let fibers = frames.iter().map(|f| linalg::hermitian_part(&(f * f.adjoint()))).collect();
        Self::certify(AlgebraField::new(grid.clone(), fibers)?)
    }

    pub fn identity(grid: &Grid) -> Self {
        Projection(AlgebraField::identity(grid))
    }

    pub fn zero(grid: &Grid) -> Self {
        Projection(AlgebraField::zero(grid))
    }

    pub fn field(&self) -> &AlgebraField {
        &self.0
    }

    pub fn into_field(self) -> AlgebraField {
        self.0
    }

    pub fn grid(&self) -> &Grid {
        self.0.grid()
    }

    pub fn fiber(&self, point: usize) -> &CMat {
        self.0.fiber(point)
    }

    pub fn rank(&self, point: usize) -> usize {
        self.0.fiber(point).trace().re.round().max(0.0) as usize
    }

    pub fn ranks(&self) -> Vec<usize> {
        (0..self.grid().len()).map(|i| self.rank(i)).collect()
    }

    pub fn trace_tau(&self) -> f64 {
        self.0.trace_tau().re
    }

    /// `1 − p`.
    pub fn complement(&self) -> Self {
        Projection(AlgebraField::identity(self.grid()).sub(&self.0).expect("same grid"))
    }

    /// Orthonormal basis of the range of each fiber.
    pub fn frames(&self) -> Vec<CMat> {
        self.0.fibers.iter().map(Self::frames_of).collect()
    }

    /// Orthonormal basis of the range of one projection matrix.
    pub fn frames_of(p: &CMat) -> CMat {
        let e = eigh(p);
        let keep: Vec<usize> = (0..e.dim()).filter(|&i| e.values[i] > 0.5).collect();
        e.columns(&keep)
    }

    /// `self ≤ other`, i.e. `other·self = self`, within `tolerance`.
    pub fn is_below(&self, other: &Projection, tolerance: f64) -> Result<bool> {
        let prod = other.0.mul(&self.0)?;
        Ok(prod.distance(&self.0)? <= tolerance)
    }
}

/// Output of the spectral cutoff construction.
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub projection: Projection,
    pub lambda0: f64,
    /// `τ(p)`.
    pub trace: f64,
    /// Smallest eigenvalue of `p a p` on the range of `p` (∞ when `p = 0`).
    pub min_on_range: f64,
}

/// Spectral cutoff for a positive contraction `a` with `τ(a) > 1 − ε/2`:
/// returns `p = χ_(λ0,1](a)` with `τ(p) > 1 − ε` and `p a p ≥ λ0` on `Im p`.
///
/// The hypothesis is checked; violations are errors.
pub fn lemma22_cutoff(a: &AlgebraField, epsilon: f64) -> Result<Cutoff> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    a.check_hermitian(tol::HERMITIAN_INPUT)?;
    a.check_positive(tol::POSITIVE)?;
    let norm = a.norm();
    if norm > 1.0 + 1e-12 {
        return Err(Error::param(format!("cutoff needs ‖a‖ ≤ 1, got {norm}")));
    }
    let trace = a.trace_tau().re;
    let bound = 1.0 - epsilon / 2.0;
    if !(trace > bound) {
        return Err(Error::CutoffHypothesis { trace, bound });
    }
    spectral_cutoff(a, epsilon)
}

/// The scan behind [`lemma22_cutoff`] without the trace hypothesis.
///
/// `λ0 = 1/2` is tried first (it always works under the hypothesis); otherwise
/// the midpoints between consecutive distinct fiber eigenvalues in (0, 1) are
/// scanned from the top, and the first level with `τ(p) > 1 − ε` wins.
pub fn spectral_cutoff(a: &AlgebraField, epsilon: f64) -> Result<Cutoff> {
    let grid = a.grid().clone();
    let decomps: Vec<_> = a.fibers().par_iter().map(eigh).collect();

    let trace_above = |level: f64| -> f64 {
        decomps
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let count = e.values.iter().filter(|&&s| s > level).count();
                grid.weight(i) * count as f64 / grid.dim(i) as f64
            })
            .sum()
    };

    let mut pooled: Vec<f64> = decomps.iter().flat_map(|e| e.values.iter().copied()).collect();
    pooled.push(0.0);
    pooled.sort_by(f64::total_cmp);
    pooled.dedup_by(|x, y| (*x - *y).abs() <= tol::SPECTRAL_MERGE);
    let mut candidates = vec![0.5];
    candidates.extend(
        pooled
            .windows(2)
            .rev()
            .map(|w| 0.5 * (w[0] + w[1]))
            .filter(|&m| m > 0.0 && m < 1.0),
    );

    let target = 1.0 - epsilon;
    let lambda0 = match candidates.iter().copied().find(|&l| trace_above(l) > target) {
        Some(l) => l,
        None => {
            let best = candidates.iter().map(|&l| trace_above(l)).fold(0.0, f64::max);
            return Err(Error::CutoffHypothesis { trace: best, bound: target });
        }
    };

    let fibers: Vec<CMat> = decomps
        .iter()
        .map(|e| e.apply(|s| if s > lambda0 { 1.0 } else { 0.0 }))
        .collect();
    let min_on_range = decomps
        .iter()
        .flat_map(|e| e.values.iter().copied().filter(|&s| s > lambda0))
        .fold(f64::INFINITY, f64::min);
    let projection = Projection::certify(AlgebraField::from_parts(grid, fibers))?;
    let trace = projection.trace_tau();
    Ok(Cutoff { projection, lambda0, trace, min_on_range })
}

/// `(p ∨ q, p ∧ q)` fiberwise, from orthonormal range bases with singular
/// values below `1e-10` discarded.
pub fn lattice_join_meet(p: &Projection, q: &Projection) -> Result<(Projection, Projection)> {
    check_grid(p.grid(), q.grid())?;
    let grid = p.grid().clone();
    let join_fiber = |a: &CMat, b: &CMat| -> CMat {
        let n = a.nrows();
        let mut stacked = CMat::zeros(n, 2 * n);
        stacked.columns_mut(0, n).copy_from(a);
        stacked.columns_mut(n, n).copy_from(b);
        let basis = linalg::range_basis(&stacked, tol::LATTICE_SVD);
        linalg::hermitian_part(&linalg::frame_projection(&basis))
    };
    let mut joins = Vec::with_capacity(grid.len());
    let mut meets = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let (a, b) = (p.fiber(i), q.fiber(i));
        let n = a.nrows();
        let id = CMat::identity(n, n);
        joins.push(join_fiber(a, b));
        // p ∧ q = 1 − ((1 − p) ∨ (1 − q))
        let co = join_fiber(&(&id - a), &(&id - b));
        meets.push(linalg::hermitian_part(&(id - co)));
    }
    Ok((
        Projection::certify(AlgebraField::from_parts(grid.clone(), joins))?,
        Projection::certify(AlgebraField::from_parts(grid, meets))?,
    ))
}

/// Moves `q` under `p`: returns `q′ ≤ p` with the same fiber ranks and a
/// unitary `u` with `q·u = u·q′` (equivalently `q′ = u* q u`).
pub fn splice_subprojection(q: &Projection, p: &Projection) -> Result<(Projection, AlgebraField)> {
    check_grid(q.grid(), p.grid())?;
    let grid = q.grid().clone();
    let q_frames = q.frames();
    let p_frames = p.frames();
    let mut primes = Vec::with_capacity(grid.len());
    let mut unitaries = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let n = grid.dim(i);
        let vq = &q_frames[i];
        let wp = &p_frames[i];
        let r = vq.ncols();
        if r > wp.ncols() {
            return Err(Error::RankCondition {
                point: i,
                detail: format!("rank(q) = {r} exceeds rank(p) = {}", wp.ncols()),
            });
        }
        if r == 0 {
            primes.push(CMat::zeros(n, n));
            unitaries.push(CMat::identity(n, n));
            continue;
        }
        // Frame of q′ inside Im p, aligned with q through the polar factor of
        // the overlap. When q ≤ p this reproduces the frame of q exactly.
        let overlap = wp.adjoint() * vq;
        let v_prime = wp * linalg::polar_unitary(&overlap);
        let cq = linalg::complement_of(vq, n);
        let cp = linalg::complement_of(&v_prime, n);
        let cp_aligned = if cp.ncols() > 0 {
            &cp * linalg::polar_unitary(&(cp.adjoint() * &cq))
        } else {
            cp
        };
        let u = vq * v_prime.adjoint() + &cq * cp_aligned.adjoint();
        primes.push(linalg::hermitian_part(&linalg::frame_projection(&v_prime)));
        unitaries.push(u);
    }
    let q_prime = Projection::certify(AlgebraField::from_parts(grid.clone(), primes))?;
    Ok((q_prime, AlgebraField::from_parts(grid, unitaries)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn scalar_grid(points: usize) -> Grid {
        ParameterGrid::uniform(points, 1).unwrap()
    }

    #[test]
    fn grid_rejects_bad_weights() {
        assert!(ParameterGrid::new(vec![0.0, 1.0], vec![0.5, 0.6], vec![1, 1]).is_err());
        assert!(ParameterGrid::new(vec![0.0, 1.0], vec![1.0, 0.0], vec![1, 1]).is_err());
        assert!(ParameterGrid::new(vec![0.0], vec![1.0], vec![0]).is_err());
    }

    #[test]
    fn trace_of_identity_and_zero() {
        let g = ParameterGrid::normalized(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 5.0], vec![1, 2, 3]).unwrap();
        assert!(close(AlgebraField::identity(&g).trace_tau().re, 1.0, 1e-15));
        assert_eq!(AlgebraField::zero(&g).trace_tau().norm(), 0.0);
    }

    #[test]
    fn trace_of_scalar_diag() {
        let g = scalar_grid(3);
        let a = AlgebraField::scalar(&g, &[0.6, 1.0, 1.0]).unwrap();
        assert!(close(a.trace_tau().re, 2.6 / 3.0, 1e-15));
    }

    #[test]
    fn trace_rejects_foreign_grid() {
        let a = AlgebraField::identity(&scalar_grid(3));
        let b = AlgebraField::identity(&scalar_grid(4));
        assert!(matches!(a.mul(&b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn center_trace_examples() {
        let g = scalar_grid(4);
        let a = AlgebraField::scalar(&g, &[0.1, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(a.center_trace().distance(&a).unwrap(), 0.0);

        let g2 = ParameterGrid::uniform(1, 2).unwrap();
        let d = AlgebraField::diagonal(&g2, &[vec![4.0, 0.0]]).unwrap();
        let t = d.center_trace();
        assert!(t.distance(&AlgebraField::scalar(&g2, &[2.0]).unwrap()).unwrap() < 1e-15);
        assert!(t.center_trace().distance(&t).unwrap() < 1e-15);

        let id = AlgebraField::identity(&g2);
        assert!(id.center_trace().distance(&id).unwrap() < 1e-15);
    }

    #[test]
    fn functional_calculus_examples() {
        let g = ParameterGrid::uniform(1, 2).unwrap();
        let a = AlgebraField::diagonal(&g, &[vec![0.6, 0.2]]).unwrap();
        assert!(a.functional_calculus(|s| s).unwrap().distance(&a).unwrap() < 1e-14);
        let ind = a.functional_calculus(|s| if s > 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!(ind.distance(&AlgebraField::diagonal(&g, &[vec![1.0, 0.0]]).unwrap()).unwrap() < 1e-14);

        let b = AlgebraField::diagonal(&g, &[vec![4.0, 0.25]]).unwrap();
        let r = b.functional_calculus(|s| s.powf(-0.5)).unwrap();
        assert!(r.distance(&AlgebraField::diagonal(&g, &[vec![0.5, 2.0]]).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn functional_calculus_rejects_non_hermitian() {
        let g = ParameterGrid::uniform(1, 2).unwrap();
        let mut m = CMat::zeros(2, 2);
        m[(0, 1)] = c(1.0);
        let a = AlgebraField::new(g, vec![m]).unwrap();
        assert!(matches!(a.functional_calculus(|s| s), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn cutoff_identity() {
        let g = scalar_grid(5);
        let cut = lemma22_cutoff(&AlgebraField::identity(&g), 0.1).unwrap();
        assert!(close(cut.trace, 1.0, 1e-15));
        assert!(cut.lambda0 > 0.0 && cut.lambda0 < 1.0);
    }

    #[test]
    fn cutoff_three_point() {
        let g = scalar_grid(3);
        let a = AlgebraField::scalar(&g, &[0.6, 1.0, 1.0]).unwrap();
        let cut = lemma22_cutoff(&a, 0.3).unwrap();
        assert_eq!(cut.lambda0, 0.5);
        assert!(close(cut.trace, 1.0, 1e-15));
        assert!(close(cut.min_on_range, 0.6, 1e-14));
    }

    #[test]
    fn cutoff_reports_hypothesis_violation() {
        // τ(a) = 0.67 does not exceed 1 − 0.4/2.
        let g = scalar_grid(3);
        let a = AlgebraField::scalar(&g, &[1.0, 1.0, 0.01]).unwrap();
        assert!(matches!(lemma22_cutoff(&a, 0.4), Err(Error::CutoffHypothesis { .. })));
        // The unchecked scan still finds the cutoff excluding the 0.01 fiber.
        let cut = spectral_cutoff(&a, 0.4).unwrap();
        assert!(close(cut.trace, 2.0 / 3.0, 1e-15));
        assert!(cut.lambda0 >= 0.01);
        assert_eq!(cut.projection.ranks(), vec![1, 1, 0]);
    }

    #[test]
    fn join_meet_examples() {
        let g = ParameterGrid::uniform(1, 2).unwrap();
        let p = Projection::certify(AlgebraField::diagonal(&g, &[vec![1.0, 0.0]]).unwrap()).unwrap();
        let (j, m) = lattice_join_meet(&p, &p).unwrap();
        assert!(j.field().distance(p.field()).unwrap() < 1e-12);
        assert!(m.field().distance(p.field()).unwrap() < 1e-12);

        let q = p.complement();
        let (j, m) = lattice_join_meet(&p, &q).unwrap();
        assert!(j.field().distance(&AlgebraField::identity(&g)).unwrap() < 1e-12);
        assert!(m.field().distance(&AlgebraField::zero(&g)).unwrap() < 1e-12);
    }

    #[test]
    fn join_meet_three_dim() {
        let g = ParameterGrid::uniform(1, 3).unwrap();
        let p = Projection::certify(AlgebraField::diagonal(&g, &[vec![1.0, 0.0, 0.0]]).unwrap()).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = CMat::from_column_slice(3, 1, &[c(s), c(s), c(0.0)]);
        let q = Projection::from_frames(&g, &[v]).unwrap();
        let (j, m) = lattice_join_meet(&p, &q).unwrap();
        assert_eq!(j.rank(0), 2);
        assert_eq!(m.rank(0), 0);
        let lhs = p.trace_tau() + q.trace_tau();
        let rhs = j.trace_tau() + m.trace_tau();
        assert!(close(lhs, 2.0 / 3.0, 1e-12));
        assert!(close(lhs, rhs, 1e-9));
    }

    #[test]
    fn splice_examples() {
        let g = ParameterGrid::uniform(1, 2).unwrap();
        let q = Projection::certify(AlgebraField::diagonal(&g, &[vec![1.0, 0.0]]).unwrap()).unwrap();
        let p = q.complement();

        let (qp, u) = splice_subprojection(&q, &q).unwrap();
        assert!(qp.field().distance(q.field()).unwrap() < 1e-12);
        assert!(u.distance(&AlgebraField::identity(&g)).unwrap() < 1e-12);

        let (qp, u) = splice_subprojection(&q, &p).unwrap();
        assert!(qp.field().distance(p.field()).unwrap() < 1e-12);
        // The swap unitary, up to unimodular phases on its entries.
        let f = u.fiber(0);
        assert!(f[(0, 0)].norm() < 1e-12 && f[(1, 1)].norm() < 1e-12);
        assert!(close(f[(0, 1)].norm(), 1.0, 1e-12) && close(f[(1, 0)].norm(), 1.0, 1e-12));
        let lhs = q.field().mul(&u).unwrap();
        let rhs = u.mul(qp.field()).unwrap();
        assert!(lhs.distance(&rhs).unwrap() < 1e-9);

        let zero = Projection::zero(&g);
        let (qp, u) = splice_subprojection(&zero, &p).unwrap();
        assert_eq!(qp.rank(0), 0);
        assert!(u.distance(&AlgebraField::identity(&g)).unwrap() < 1e-12);
    }

    #[test]
    fn splice_rejects_rank_violation() {
        let g = ParameterGrid::uniform(1, 2).unwrap();
        let q = Projection::identity(&g);
        let p = Projection::certify(AlgebraField::diagonal(&g, &[vec![1.0, 0.0]]).unwrap()).unwrap();
        assert!(matches!(splice_subprojection(&q, &p), Err(Error::RankCondition { .. })));
    }

    #[test]
    fn certify_rejects_non_projection() {
        let g = scalar_grid(2);
        let a = AlgebraField::scalar(&g, &[1.0, 0.5]).unwrap();
        assert!(matches!(Projection::certify(a), Err(Error::NotProjection { .. })));
    }
}
