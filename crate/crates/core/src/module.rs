//! Truncated Hilbert A-modules `A^N`.
//!
//! A vector `x = (x_1, …, x_N)` is stored fiberwise as the stacked column
//! block `X(γ) = [x_1(γ); …; x_N(γ)]` of shape `(N·n(γ)) × n(γ)`. In that
//! picture `⟨x, y⟩(γ) = X(γ)* Y(γ)`, the right action is `X(γ)·a(γ)`, and an
//! adjointable operator is an `(N·n) × (N·n)` matrix acting from the left.

use rayon::prelude::*;

use crate::algebra::{self, check_grid, AlgebraField, Grid, Projection};
use crate::error::{Error, Result};
use crate::linalg::{self, c, eigh, CMat, C64};
use crate::tol;

#[derive(Clone, Debug)]
pub struct ModuleVector {
    grid: Grid,
    len: usize,
    frames: Vec<CMat>,
}

impl ModuleVector {
    /// Builds a vector from stacked per-fiber frames.
    pub fn from_frames(grid: &Grid, len: usize, frames: Vec<CMat>) -> Result<Self> {
        if frames.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} frames for {} grid points",
                frames.len(),
                grid.len()
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            let n = grid.dim(i);
            if f.nrows() != len * n || f.ncols() != n {
                return Err(Error::ShapeMismatch(format!(
                    "frame {i} is {}x{}, expected {}x{n}",
                    f.nrows(),
                    f.ncols(),
                    len * n
                )));
            }
        }
        Ok(ModuleVector { grid: grid.clone(), len, frames })
    }

    pub(crate) fn from_parts(grid: Grid, len: usize, frames: Vec<CMat>) -> Self {
        ModuleVector { grid, len, frames }
    }

    /// Builds a vector from its `N` coordinates.
    pub fn from_coords(coords: &[AlgebraField]) -> Result<Self> {
        let first = coords
            .first()
            .ok_or_else(|| Error::ShapeMismatch("a module vector needs at least one coordinate".into()))?;
        let grid = first.grid().clone();
        for a in coords {
            check_grid(&grid, a.grid())?;
        }
        let len = coords.len();
        let frames = (0..grid.len())
            .map(|i| {
                let n = grid.dim(i);
                let mut f = CMat::zeros(len * n, n);
                for (m, a) in coords.iter().enumerate() {
                    f.view_mut((m * n, 0), (n, n)).copy_from(a.fiber(i));
                }
                f
            })
            .collect();
        Ok(ModuleVector { grid, len, frames })
    }

    pub fn zero(grid: &Grid, len: usize) -> Self {
        let frames = grid.dims().iter().map(|&n| CMat::zeros(len * n, n)).collect();
        ModuleVector { grid: grid.clone(), len, frames }
    }

    /// Standard basis vector `e_m` (0-based `m`).
    pub fn basis(grid: &Grid, len: usize, m: usize) -> Result<Self> {
        if m >= len {
            return Err(Error::ShapeMismatch(format!("basis index {m} outside truncation {len}")));
        }
        let mut v = Self::zero(grid, len);
        for (i, f) in v.frames.iter_mut().enumerate() {
            let n = grid.dim(i);
            f.view_mut((m * n, 0), (n, n)).fill_with_identity();
        }
        Ok(v)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Truncation length `N`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn frames(&self) -> &[CMat] {
        &self.frames
    }

    pub fn frame(&self, point: usize) -> &CMat {
        &self.frames[point]
    }

    /// Coordinate `x_m` (0-based) as an algebra element.
    pub fn coord(&self, m: usize) -> AlgebraField {
        let fibers = (0..self.grid.len())
            .map(|i| {
                let n = self.grid.dim(i);
                self.frames[i].view((m * n, 0), (n, n)).into_owned()
            })
            .collect();
        AlgebraField::from_parts(self.grid.clone(), fibers)
    }

    pub fn coords(&self) -> Vec<AlgebraField> {
        (0..self.len).map(|m| self.coord(m)).collect()
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        check_grid(&self.grid, &other.grid)?;
        if self.len != other.len {
            return Err(Error::ShapeMismatch(format!(
                "truncation lengths differ ({} vs {})",
                self.len, other.len
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&CMat, &CMat) -> CMat) -> Result<Self> {
        self.check_same(other)?;
        let frames = self.frames.iter().zip(&other.frames).map(|(a, b)| f(a, b)).collect();
        Ok(Self::from_parts(self.grid.clone(), self.len, frames))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: C64) -> Self {
        let frames = self.frames.iter().map(|f| f * s).collect();
        Self::from_parts(self.grid.clone(), self.len, frames)
    }

    /// Right action `x·a`.
    pub fn right_mul(&self, a: &AlgebraField) -> Result<Self> {
        check_grid(&self.grid, a.grid())?;
        let frames = self.frames.iter().zip(a.fibers()).map(|(f, m)| f * m).collect();
        Ok(Self::from_parts(self.grid.clone(), self.len, frames))
    }

    /// `‖x‖ = ‖⟨x,x⟩‖^{1/2}`.
    pub fn norm(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| linalg::spectral_norm(&(f.adjoint() * f)).sqrt())
            .fold(0.0, f64::max)
    }

    /// `‖x‖_τ = τ(⟨x,x⟩)^{1/2}`.
    pub fn trace_norm(&self) -> f64 {
        inner(self, self).expect("same vector").trace_tau().re.max(0.0).sqrt()
    }

    /// Largest entrywise distance to another vector.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| linalg::max_abs(&(a - b)))
            .fold(0.0, f64::max))
    }
}

/// `⟨x, y⟩ = Σ_m x_m* y_m`.
pub fn inner(x: &ModuleVector, y: &ModuleVector) -> Result<AlgebraField> {
    x.check_same(y)?;
    let fibers = x.frames.iter().zip(&y.frames).map(|(a, b)| a.adjoint() * b).collect();
    Ok(AlgebraField::from_parts(x.grid.clone(), fibers))
}

/// Result of normalizing a vector over `A`.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub vector: ModuleVector,
    /// `⟨x′, x′⟩`.
    pub projection: Projection,
    pub lambda0: f64,
}

/// Cuts `⟨x,x⟩/‖⟨x,x⟩‖` spectrally at a level where the retained projection has
/// trace above `1 − ε`, then returns `x′ = x·b` with
/// `b = (p⟨x,x⟩p)^{-1/2}` on `Im p`, so that `⟨x′,x′⟩ = p`.
pub fn normalize_over_a(x: &ModuleVector, epsilon: f64) -> Result<Normalized> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let gram = inner(x, x)?;
    let scale = gram.norm();
    if !(scale > 0.0) {
        return Err(Error::param("cannot normalize the zero vector"));
    }
    let rescaled = gram.scale(c(1.0 / scale));
    let cut = algebra::spectral_cutoff(&rescaled, epsilon)?;
    let level = cut.lambda0 * scale;
    let b_fibers: Vec<CMat> = gram
        .fibers()
        .par_iter()
        .map(|g| eigh(g).apply(|s| if s > level { s.powf(-0.5) } else { 0.0 }))
        .collect();
    let b = AlgebraField::from_parts(x.grid.clone(), b_fibers);
    let vector = x.right_mul(&b)?;
    Ok(Normalized { vector, projection: cut.projection, lambda0: cut.lambda0 })
}

/// Checks `⟨g_i, g_j⟩ = δ_ij p_i` with projections `p_i`; returns the `p_i`.
pub fn check_orthonormalized(generators: &[ModuleVector]) -> Result<Vec<Projection>> {
    let mut projections = Vec::with_capacity(generators.len());
    for (i, gi) in generators.iter().enumerate() {
        for (j, gj) in generators.iter().enumerate().skip(i) {
            let ip = inner(gi, gj)?;
            if i == j {
                let p = Projection::certify(ip).map_err(|e| match e {
                    Error::NotProjection { defect, .. } => Error::NotOrthonormal { defect },
                    other => other,
                })?;
                projections.push(p);
            } else {
                let defect = ip.norm();
                if defect > tol::GENERATORS {
                    return Err(Error::NotOrthonormal { defect });
                }
            }
        }
    }
    Ok(projections)
}

/// `Σ_i g_i ⟨g_i, x⟩` for orthonormalized generators.
pub fn project_onto_span(x: &ModuleVector, generators: &[ModuleVector]) -> Result<ModuleVector> {
    check_orthonormalized(generators)?;
    let mut acc = ModuleVector::zero(&x.grid, x.len);
    for g in generators {
        let coeff = inner(g, x)?;
        acc = acc.add(&g.right_mul(&coeff)?)?;
    }
    Ok(acc)
}

/// Orthonormal basis (per fiber) of the complement of the generators' ranges
/// inside `C^{N·n(γ)}`, built by Gram–Schmidt over the standard basis columns
/// in order: the finite form of `e′_m = e_m − Σ g_i⟨g_i, e_m⟩` followed by
/// renormalization.
pub(crate) fn standard_complement(grid: &Grid, len: usize, generators: &[ModuleVector]) -> Vec<CMat> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let dim = len * grid.dim(i);
            let mut taken: Vec<nalgebra::DVector<C64>> = Vec::new();
            for g in generators {
                let f = g.frame(i);
                for col in linalg::range_basis(f, tol::LATTICE_SVD).column_iter() {
                    taken.push(col.into_owned());
                }
            }
            let fixed = taken.len();
            for k in 0..dim {
                let mut v = nalgebra::DVector::<C64>::zeros(dim);
                v[k] = c(1.0);
                // Two passes of modified Gram–Schmidt.
                for _ in 0..2 {
                    for t in &taken {
                        let proj = t.dotc(&v);
                        v -= t * proj;
                    }
                }
                let nrm = v.norm();
                if nrm > 1e-8 {
                    taken.push(v / c(nrm));
                }
            }
            let cols: Vec<_> = taken.drain(fixed..).collect();
            if cols.is_empty() {
                CMat::zeros(dim, 0)
            } else {
                CMat::from_columns(&cols)
            }
        })
        .collect()
}

/// Default ε schedule `ε_k = 1/k`.
pub fn default_epsilon_schedule(count: usize) -> Vec<f64> {
    (1..=count).map(|k| 1.0 / k as f64).collect()
}

/// Mutually orthogonal vectors `h_1, …, h_count` orthogonal to the
/// generators, each with a projection inner square of trace above 1/2.
///
/// Per fiber, `h_k` takes the next `n(γ)` columns of the Gram–Schmidt
/// complement; once a fiber runs out, the remaining columns are zero and the
/// inner square is a proper subprojection. The certificate
/// `dist_τ(e_k, Span(M, h_1..h_k)) < ε_k` is checked for every `k`.
pub fn complement_basis(
    generators: &[ModuleVector],
    count: usize,
    grid: &Grid,
    len: usize,
    epsilon_schedule: &[f64],
) -> Result<Vec<ModuleVector>> {
    check_orthonormalized(generators)?;
    for g in generators {
        check_grid(grid, g.grid())?;
        if g.len() != len {
            return Err(Error::ShapeMismatch("generator truncation length differs".into()));
        }
    }
    if epsilon_schedule.len() < count {
        return Err(Error::param(format!(
            "epsilon schedule has {} entries, need {count}",
            epsilon_schedule.len()
        )));
    }
    let comp = standard_complement(grid, len, generators);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let frames: Vec<CMat> = (0..grid.len())
            .map(|i| {
                let n = grid.dim(i);
                let basis = &comp[i];
                let start = (k * n).min(basis.ncols());
                let take = (basis.ncols() - start).min(n);
                let mut f = CMat::zeros(len * n, n);
                if take > 0 {
                    f.columns_mut(0, take).copy_from(&basis.columns(start, take));
                }
                f
            })
            .collect();
        let h = ModuleVector::from_parts(grid.clone(), len, frames);
        let trace = inner(&h, &h)?.trace_tau().re;
        if !(trace > 0.5) {
            return Err(Error::InsufficientRank(format!(
                "complement vector {} has inner-square trace {trace:.6}, not above 1/2",
                k + 1
            )));
        }
        out.push(h);
    }
    // dist_τ(e_k, ball of the span) certificate.
    let mut span: Vec<ModuleVector> = generators.to_vec();
    for (k, h) in out.iter().enumerate() {
        span.push(h.clone());
        if k < len {
            let e = ModuleVector::basis(grid, len, k)?;
            let mut proj = ModuleVector::zero(grid, len);
            for g in &span {
                proj = proj.add(&g.right_mul(&inner(g, &e)?)?)?;
            }
            let dist = e.sub(&proj)?.trace_norm();
            if !(dist < epsilon_schedule[k]) && dist > tol::ORTHOGONAL {
                return Err(Error::InsufficientRank(format!(
                    "dist_τ(e_{}, span) = {dist:.3e} not below ε = {}",
                    k + 1,
                    epsilon_schedule[k]
                )));
            }
        }
    }
    Ok(out)
}

/// Membership verdict from coefficient tails.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Membership {
    /// Sup-norm tails drop below threshold inside the truncation.
    HLike,
    /// Tails never drop below threshold: the H*-only signature.
    DualOnly,
}

impl std::fmt::Display for Membership {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Membership::HLike => f.write_str("H_A-like"),
            Membership::DualOnly => f.write_str("H*-only at this truncation"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TailProfile {
    /// `t_m = sup_γ ‖Σ_{j>m} x_j(γ)* x_j(γ)‖`, `m = 0..N`.
    pub sup_tails: Vec<f64>,
    /// `τ(Σ_{j>m} x_j* x_j)`, `m = 0..N`.
    pub trace_tails: Vec<f64>,
    pub verdict: Membership,
}

pub fn tail_profile(x: &ModuleVector) -> TailProfile {
    let grid = &x.grid;
    let len = x.len;
    let mut sup_tails = vec![0.0; len];
    let mut trace_tails = vec![0.0; len];
    for (i, f) in x.frames.iter().enumerate() {
        let n = grid.dim(i);
        // Suffix sums of x_j* x_j.
        let mut acc = CMat::zeros(n, n);
        for m in (0..len).rev() {
            let block = f.view((m * n, 0), (n, n));
            acc += block.adjoint() * block;
            sup_tails[m] = f64::max(sup_tails[m], linalg::spectral_norm(&acc));
            trace_tails[m] += grid.weight(i) * acc.trace().re / n as f64;
        }
    }
    let verdict = if sup_tails.iter().any(|&t| t < tol::TAIL) {
        Membership::HLike
    } else {
        Membership::DualOnly
    };
    TailProfile { sup_tails, trace_tails, verdict }
}
