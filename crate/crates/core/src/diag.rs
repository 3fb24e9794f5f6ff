//! Operator-valued diagonalization of self-adjoint module operators.
//!
//! Each step carves one module rank of spectrum: the cut level `λ(γ)` is the
//! smallest level at which the rank-normalized eigenvalue count above it
//! drops to the target, the projection `P` sits between the strict and
//! non-strict spectral indicators at that level, and `Im P ≅ A` yields an
//! eigenvector `x` with operator eigenvalue `λ = ⟨x, Kx⟩`. The operator is then
//! compressed to `Ker P` and the step repeats.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebra::{check_grid, AlgebraField, Grid, Projection};
use crate::error::{Error, Result};
use crate::linalg::{self, c, eigh, CMat};
use crate::module::ModuleVector;
use crate::tol;

/// Self-adjoint operator on the truncated module `A^N`, stored per fiber as a
/// Hermitian `(N·n) × (N·n)` matrix acting on stacked frames from the left.
#[derive(Clone, Debug)]
pub struct ModuleOperator {
    grid: Grid,
    len: usize,
    fibers: Vec<CMat>,
}

impl ModuleOperator {
    /// Checks shapes and Hermiticity (relative to the fiber scale) and stores
    /// the Hermitian part.
    pub fn new(grid: &Grid, len: usize, fibers: Vec<CMat>) -> Result<Self> {
        Self::with_tolerance(grid, len, fibers, tol::HERMITIAN)
    }

    pub fn with_tolerance(grid: &Grid, len: usize, fibers: Vec<CMat>, tolerance: f64) -> Result<Self> {
        check_shapes(grid, len, &fibers)?;
        for (i, f) in fibers.iter().enumerate() {
            let defect = linalg::hermitian_defect(f);
            if defect > tolerance * linalg::max_abs(f).max(1.0) {
                return Err(Error::NotHermitian { point: i, defect });
            }
        }
        let fibers = fibers.iter().map(linalg::hermitian_part).collect();
        Ok(ModuleOperator { grid: grid.clone(), len, fibers })
    }

    pub(crate) fn from_parts(grid: Grid, len: usize, fibers: Vec<CMat>) -> Self {
        ModuleOperator { grid, len, fibers }
    }

    /// Assembles the operator from an `N × N` array of algebra elements
    /// `k_ij`, so that `(Kx)_i = Σ_j k_ij x_j`.
    pub fn from_blocks(blocks: &[Vec<AlgebraField>]) -> Result<Self> {
        let len = blocks.len();
        let grid = blocks
            .first()
            .and_then(|row| row.first())
            .map(|a| a.grid().clone())
            .ok_or_else(|| Error::ShapeMismatch("empty block array".into()))?;
        for row in blocks {
            if row.len() != len {
                return Err(Error::ShapeMismatch("block array must be square".into()));
            }
            for a in row {
                check_grid(&grid, a.grid())?;
            }
        }
        let fibers = (0..grid.len())
            .map(|p| {
                let n = grid.dim(p);
                let mut f = CMat::zeros(len * n, len * n);
                for (i, row) in blocks.iter().enumerate() {
                    for (j, a) in row.iter().enumerate() {
                        f.view_mut((i * n, j * n), (n, n)).copy_from(a.fiber(p));
                    }
                }
                f
            })
            .collect();
        Self::new(&grid, len, fibers)
    }

    /// `diag(c_1, …, c_N)` acting by scalars.
    pub fn scalar_diagonal(grid: &Grid, values: &[f64]) -> Self {
        let len = values.len();
        let fibers = grid
            .dims()
            .iter()
            .map(|&n| {
                let d: Vec<f64> = values.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                linalg::real_diag(&d)
            })
            .collect();
        Self::from_parts(grid.clone(), len, fibers)
    }

    pub fn identity(grid: &Grid, len: usize) -> Self {
        Self::scalar_diagonal(grid, &vec![1.0; len])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fibers(&self) -> &[CMat] {
        &self.fibers
    }

    pub fn fiber(&self, point: usize) -> &CMat {
        &self.fibers[point]
    }

    pub fn apply(&self, x: &ModuleVector) -> Result<ModuleVector> {
        check_grid(&self.grid, x.grid())?;
        if x.len() != self.len {
            return Err(Error::ShapeMismatch(format!(
                "operator on length {} applied to vector of length {}",
                self.len,
                x.len()
            )));
        }
        let frames = self.fibers.iter().zip(x.frames()).map(|(k, f)| k * f).collect();
        Ok(ModuleVector::from_parts(self.grid.clone(), self.len, frames))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        if self.len != other.len {
            return Err(Error::ShapeMismatch("operator lengths differ".into()));
        }
        let fibers = self.fibers.iter().zip(&other.fibers).map(|(a, b)| a + b).collect();
        Ok(Self::from_parts(self.grid.clone(), self.len, fibers))
    }

    pub fn scale(&self, s: f64) -> Self {
        let fibers = self.fibers.iter().map(|f| f * c(s)).collect();
        Self::from_parts(self.grid.clone(), self.len, fibers)
    }

    pub fn norm(&self) -> f64 {
        self.fibers.iter().map(linalg::spectral_norm).fold(0.0, f64::max)
    }

    /// Ascending eigenvalues of every fiber.
    pub fn fiber_spectra(&self) -> Vec<Vec<f64>> {
        self.fibers.par_iter().map(|f| eigh(f).values).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.fiber_spectra()
            .iter()
            .filter_map(|s| s.first().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// `‖[K, P]‖` over all fibers.
    pub fn commutator_norm(&self, p: &[CMat]) -> f64 {
        self.fibers
            .iter()
            .zip(p)
            .map(|(k, q)| linalg::spectral_norm(&(k * q - q * k)))
            .fold(0.0, f64::max)
    }
}

fn check_shapes(grid: &Grid, len: usize, fibers: &[CMat]) -> Result<()> {
    if fibers.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} operator fibers for {} grid points",
            fibers.len(),
            grid.len()
        )));
    }
    for (i, f) in fibers.iter().enumerate() {
        let d = len * grid.dim(i);
        if f.nrows() != d || f.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "operator fiber {i} is {}x{}, expected {d}x{d}",
                f.nrows(),
                f.ncols()
            )));
        }
    }
    Ok(())
}

/// `(1/n(γ)) · #{eigenvalues of K(γ) > level}`.
pub fn counting_function(k: &ModuleOperator, point: usize, level: f64) -> Result<f64> {
    if level.is_nan() {
        return Err(Error::param("level is NaN"));
    }
    if point >= k.grid.len() {
        return Err(Error::param(format!("grid point {point} out of range")));
    }
    let values = eigh(&k.fibers[point]).values;
    let slack = tol::SPECTRAL_MERGE * level.abs().max(1.0);
    let count = values.iter().filter(|&&s| s > level + slack).count();
    Ok(count as f64 / k.grid.dim(point) as f64)
}

/// Order in which boundary eigenvectors at the cut level are added to `P`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FillOrder {
    /// Ascending index in the fiber eigendecomposition.
    #[default]
    Ascending,
    Descending,
}

/// Gauge applied to eigenvector frames after extraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Gauge {
    /// Eigensolver output as is.
    Raw,
    /// Each fiber rotated by the polar factor of its overlap with the previous
    /// fiber, when that overlap is well conditioned.
    #[default]
    Align,
    /// Independent random unitary per fiber and term, seeded.
    Random(u64),
}

/// Per-fiber rank target that could not be met exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct RankRounding {
    pub point: usize,
    pub requested: f64,
    pub used: usize,
}

/// Rank `target·n(γ)` per fiber, rounded where it is not an integer.
fn rank_targets(grid: &Grid, target: f64) -> Result<(Vec<usize>, Vec<RankRounding>)> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::param(format!("target must be positive, got {target}")));
    }
    let mut ranks = Vec::with_capacity(grid.len());
    let mut rounded = Vec::new();
    for (point, &n) in grid.dims().iter().enumerate() {
        let requested = target * n as f64;
        let used = requested.round().max(0.0) as usize;
        if (requested - used as f64).abs() > 1e-9 {
            rounded.push(RankRounding { point, requested, used });
        }
        ranks.push(used);
    }
    Ok((ranks, rounded))
}

/// Cut of one ascending spectrum at rank `r`.
#[derive(Clone, Debug)]
struct FiberCut {
    level: f64,
    /// Indices strictly above the level (the support of `P1`).
    above: Vec<usize>,
    /// Indices at the level (`P2 − P1`).
    boundary: Vec<usize>,
    /// Indices spanning `P`, in descending eigenvalue order.
    chosen: Vec<usize>,
}

fn cut_spectrum(values: &[f64], r: usize, fill: FillOrder) -> FiberCut {
    let d = values.len();
    if d == 0 {
        return FiberCut { level: 0.0, above: vec![], boundary: vec![], chosen: vec![] };
    }
    let level = if r >= d { values[0] } else { values[d - 1 - r] };
    let scale = values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let window = tol::DEGENERATE * scale;
    let above: Vec<usize> = (0..d).filter(|&i| values[i] > level + window).collect();
    let boundary: Vec<usize> = (0..d).filter(|&i| (values[i] - level).abs() <= window).collect();
    let need = r.min(d).saturating_sub(above.len());
    let mut fill_from = boundary.clone();
    if fill == FillOrder::Descending {
        fill_from.reverse();
    }
    let mut chosen: Vec<usize> = above.iter().copied().chain(fill_from.into_iter().take(need)).collect();
    chosen.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    FiberCut { level, above, boundary, chosen }
}

/// Cut level `λ(γ) = inf{λ : φ(γ; λ) ≤ target}` as a central field.
pub fn lambda_cut(k: &ModuleOperator, target: f64) -> Result<AlgebraField> {
    let (ranks, _) = rank_targets(&k.grid, target)?;
    let levels: Vec<f64> = k
        .fibers
        .par_iter()
        .zip(ranks.par_iter())
        .map(|(f, &r)| cut_spectrum(&eigh(f).values, r, FillOrder::Ascending).level)
        .collect();
    AlgebraField::scalar(&k.grid, &levels)
}

/// `P1 = χ_(λ,∞)(K)`, `P2 = χ_[λ,∞)(K)` and a projection `P1 ≤ P ≤ P2` of
/// rank `target·n(γ)` per fiber.
#[derive(Clone, Debug)]
pub struct Sandwich {
    pub p1: Projection,
    pub p2: Projection,
    pub p: Projection,
    /// Fibers where the rank target was not an integer.
    pub rounded: Vec<RankRounding>,
    /// `max ‖[K, ·]‖` over the three projections.
    pub commutator: f64,
}

pub fn sandwich_projections(
    k: &ModuleOperator,
    lambda_field: &AlgebraField,
    target: f64,
    fill: FillOrder,
) -> Result<Sandwich> {
    check_grid(&k.grid, lambda_field.grid())?;
    let (ranks, rounded) = rank_targets(&k.grid, target)?;
    let parts: Vec<(CMat, CMat, CMat)> = k
        .fibers
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let e = eigh(f);
            let mut cut = cut_spectrum(&e.values, ranks[i], fill);
            let given = lambda_field.fiber(i)[(0, 0)].re;
            if (given - cut.level).abs() > tol::DEGENERATE * cut.level.abs().max(1.0) {
                // A level other than the computed cut: rebuild around it.
                let scale = e.values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
                let window = tol::DEGENERATE * scale;
                cut.above = (0..e.dim()).filter(|&j| e.values[j] > given + window).collect();
                cut.boundary = (0..e.dim()).filter(|&j| (e.values[j] - given).abs() <= window).collect();
                let need = ranks[i].saturating_sub(cut.above.len());
                let mut fill_from = cut.boundary.clone();
                if fill == FillOrder::Descending {
                    fill_from.reverse();
                }
                cut.chosen = cut.above.iter().copied().chain(fill_from.into_iter().take(need)).collect();
            }
            let p1 = linalg::frame_projection(&e.columns(&cut.above));
            let mut upto: Vec<usize> = cut.above.clone();
            upto.extend(&cut.boundary);
            let p2 = linalg::frame_projection(&e.columns(&upto));
            let p = linalg::frame_projection(&e.columns(&cut.chosen));
            (p1, p2, p)
        })
        .collect();
    let mut p1s = Vec::new();
    let mut p2s = Vec::new();
    let mut ps = Vec::new();
    for (a, b, q) in parts {
        p1s.push(linalg::hermitian_part(&a));
        p2s.push(linalg::hermitian_part(&b));
        ps.push(linalg::hermitian_part(&q));
    }
    let commutator = k
        .commutator_norm(&p1s)
        .max(k.commutator_norm(&p2s))
        .max(k.commutator_norm(&ps));
    let grid = k.grid.clone();
    let unit = crate::algebra::ParameterGrid::new(
        grid.labels().to_vec(),
        grid.weights().to_vec(),
        grid.dims().iter().map(|&n| n * k.len).collect(),
    )?;
    Ok(Sandwich {
        p1: Projection::certify(AlgebraField::new(unit.clone(), p1s)?)?,
        p2: Projection::certify(AlgebraField::new(unit.clone(), p2s)?)?,
        p: Projection::certify(AlgebraField::new(unit, ps)?)?,
        rounded,
        commutator,
    })
}

/// Eigenvector generating `Im P` together with its operator eigenvalue.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub vector: ModuleVector,
    pub eigenvalue: AlgebraField,
    /// `⟨x, x⟩`; the identity exactly when `P` has rank `n(γ)` everywhere.
    pub projection: Projection,
    pub residual: f64,
}

/// Reshapes `Im P` into a generator `x` with `⟨x, x⟩ = 1` (or a projection
/// when `P` has rank below `n(γ)` somewhere) and returns `λ = ⟨x, Kx⟩`.
///
/// `p` holds one `(N·n) × (N·n)` projection matrix per fiber.
pub fn extract_eigenpair(k: &ModuleOperator, p: &[CMat]) -> Result<Eigenpair> {
    if p.len() != k.grid.len() {
        return Err(Error::ShapeMismatch("one projection fiber per grid point expected".into()));
    }
    let comm = k.commutator_norm(p);
    let scale = k.norm().max(1.0);
    if comm > tol::COMMUTATOR * scale {
        return Err(Error::Hypothesis(format!("‖[K, P]‖ = {comm:.3e} exceeds {:.0e}", tol::COMMUTATOR)));
    }
    let mut frames = Vec::with_capacity(p.len());
    for (i, q) in p.iter().enumerate() {
        let n = k.grid.dim(i);
        let e = eigh(q);
        let keep: Vec<usize> = (0..e.dim()).rev().filter(|&j| e.values[j] > 0.5).collect();
        if keep.len() > n {
            return Err(Error::RankCondition {
                point: i,
                detail: format!("projection rank {} exceeds fiber dimension {n}", keep.len()),
            });
        }
        frames.push(pad_frame(&e.columns(&keep), n));
    }
    let x = ModuleVector::from_parts(k.grid.clone(), k.len, frames);
    eigenpair_from_vector(k, x)
}

fn pad_frame(frame: &CMat, n: usize) -> CMat {
    let mut f = CMat::zeros(frame.nrows(), n);
    f.columns_mut(0, frame.ncols()).copy_from(frame);
    f
}

fn eigenpair_from_vector(k: &ModuleOperator, x: ModuleVector) -> Result<Eigenpair> {
    let mut lam = Vec::with_capacity(k.grid.len());
    let mut gram = Vec::with_capacity(k.grid.len());
    let mut residual: f64 = 0.0;
    for (h, f) in k.fibers.iter().zip(x.frames()) {
        let hf = h * f;
        let l = linalg::hermitian_part(&(f.adjoint() * &hf));
        let r = hf - f * &l;
        residual = residual.max(linalg::spectral_norm(&linalg::hermitian_part(&(r.adjoint() * r))).sqrt());
        lam.push(l);
        gram.push(linalg::hermitian_part(&(f.adjoint() * f)));
    }
    Ok(Eigenpair {
        eigenvalue: AlgebraField::new(k.grid.clone(), lam)?,
        projection: Projection::certify(AlgebraField::new(k.grid.clone(), gram)?)?,
        vector: x,
        residual,
    })
}

/// Spectral projections onto the positive, zero (`|s| ≤ 1e-10`) and negative
/// parts of `K`, as module-operator fibers.
#[derive(Clone, Debug)]
pub struct SignSplit {
    pub plus: Vec<CMat>,
    pub zero: Vec<CMat>,
    pub minus: Vec<CMat>,
}

impl SignSplit {
    pub fn ranks(&self) -> Vec<(usize, usize, usize)> {
        let r = |m: &CMat| m.trace().re.round() as usize;
        (0..self.plus.len()).map(|i| (r(&self.plus[i]), r(&self.zero[i]), r(&self.minus[i]))).collect()
    }
}

struct SignFrames {
    plus: Vec<CMat>,
    zero: Vec<CMat>,
    minus: Vec<CMat>,
}

fn sign_frames(k: &ModuleOperator) -> SignFrames {
    let parts: Vec<(CMat, CMat, CMat)> = k
        .fibers
        .par_iter()
        .map(|f| {
            let e = eigh(f);
            let pick = |pred: &dyn Fn(f64) -> bool| {
                let idx: Vec<usize> = (0..e.dim()).filter(|&j| pred(e.values[j])).collect();
                e.columns(&idx)
            };
            (
                pick(&|s| s > tol::KERNEL),
                pick(&|s| s.abs() <= tol::KERNEL),
                pick(&|s| s < -tol::KERNEL),
            )
        })
        .collect();
    let mut out = SignFrames { plus: vec![], zero: vec![], minus: vec![] };
    for (a, b, m) in parts {
        out.plus.push(a);
        out.zero.push(b);
        out.minus.push(m);
    }
    out
}

pub fn sign_split(k: &ModuleOperator) -> SignSplit {
    let f = sign_frames(k);
    let proj = |v: Vec<CMat>| v.iter().map(|m| linalg::hermitian_part(&linalg::frame_projection(m))).collect();
    SignSplit { plus: proj(f.plus), zero: proj(f.zero), minus: proj(f.minus) }
}

/// Options for [`diagonalize`].
#[derive(Clone, Copy, Debug)]
pub struct DiagonalizeOptions {
    /// Rank-normalized trace carved per step; `1` means rank `n(γ)`.
    pub target: f64,
    /// Stop after this many terms; the full rank budget when `None`.
    pub max_terms: Option<usize>,
    pub fill: FillOrder,
    pub gauge: Gauge,
}

impl Default for DiagonalizeOptions {
    fn default() -> Self {
        DiagonalizeOptions { target: 1.0, max_terms: None, fill: FillOrder::Ascending, gauge: Gauge::Align }
    }
}

/// One term `(x_i, λ_i, p_i)` of a decomposition.
#[derive(Clone, Debug)]
pub struct Term {
    pub vector: ModuleVector,
    pub eigenvalue: AlgebraField,
    pub projection: Projection,
    /// Cut level `d_i(γ)` of the step that produced this term.
    pub separation: Vec<f64>,
    /// Eigenvalues of `K(γ)` captured by `p_i(γ)`, descending for positive
    /// terms and ascending for negative ones.
    pub captured: Vec<Vec<f64>>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct Certificates {
    /// `max |⟨x_i, x_j⟩ − δ_ij p_i|`.
    pub orthonormality: f64,
    pub max_residual: f64,
    /// Largest violation of `λ_i ≥ λ_{i+1}` as operators.
    pub operator_ordering: f64,
    /// Largest violation of `min Sp λ_i(γ) ≥ d_i(γ) ≥ max Sp λ_{i+1}(γ)`.
    pub separation: f64,
    /// `‖λ_i‖` of the positive terms.
    pub norms: Vec<f64>,
    pub norms_nonincreasing: bool,
    pub rounded: Vec<RankRounding>,
}

impl Certificates {
    pub fn passed(&self) -> bool {
        self.orthonormality <= tol::CERTIFICATE
            && self.max_residual <= tol::RESIDUAL
            && self.operator_ordering <= tol::CERTIFICATE
            && self.separation <= tol::CERTIFICATE
            && self.norms_nonincreasing
    }
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    grid: Grid,
    len: usize,
    /// Terms from the positive part, in descending order.
    pub terms: Vec<Term>,
    /// Terms from the negative part, in order of decreasing magnitude.
    pub negative: Vec<Term>,
    /// Kernel projection fibers, present when `K` was not positive definite.
    pub kernel: Option<Vec<CMat>>,
    pub certificates: Certificates,
}

impl SpectralDecomposition {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty() && self.negative.is_empty()
    }

    /// Union of captured eigenvalues over all terms plus kernel zeros,
    /// ascending.
    pub fn fiber_spectrum(&self, point: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .terms
            .iter()
            .chain(&self.negative)
            .flat_map(|t| t.captured[point].iter().copied())
            .collect();
        if let Some(k) = &self.kernel {
            let r = k[point].trace().re.round().max(0.0) as usize;
            out.extend(std::iter::repeat_n(0.0, r));
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// Whether consecutive positive terms are spectrally separated:
    /// `min Sp λ_i(γ) ≥ max Sp λ_{i+1}(γ) − 1e-8` on the captured ranges.
    pub fn spectrally_separated(&self) -> bool {
        separation_violation(&self.terms, 1.0) <= tol::CERTIFICATE
            && separation_violation(&self.negative, -1.0) <= tol::CERTIFICATE
    }
}

fn separation_violation(terms: &[Term], sign: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for w in terms.windows(2) {
        for (a, b) in w[0].captured.iter().zip(&w[1].captured) {
            let lo = a.iter().map(|v| sign * v).fold(f64::INFINITY, f64::min);
            let hi = b.iter().map(|v| sign * v).fold(f64::NEG_INFINITY, f64::max);
            if lo.is_finite() && hi.is_finite() {
                worst = worst.max(hi - lo);
            }
        }
    }
    worst
}

/// One deflation step on one fiber.
struct FiberStep {
    level: f64,
    frame: CMat,
}

/// Runs the cut-extract-deflate loop on one fiber. `basis` spans the part of
/// `C^{N·n}` being diagonalized and `hc = basis* H basis` (already negated
/// for the negative part).
fn run_fiber(mut basis: CMat, mut hc: CMat, r: usize, steps: usize, fill: FillOrder) -> Vec<FiberStep> {
    let d = basis.nrows();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let m = hc.nrows();
        if m == 0 {
            out.push(FiberStep { level: 0.0, frame: CMat::zeros(d, 0) });
            continue;
        }
        match diagonal_order(&hc) {
            Some(order) => {
                // The compression is diagonal: eigenvectors are coordinate
                // vectors and deflation is a selection.
                let values: Vec<f64> = order.iter().map(|&i| hc[(i, i)].re).collect();
                let cut = cut_spectrum(&values, r, fill);
                let chosen: Vec<usize> = cut.chosen.iter().map(|&j| order[j]).collect();
                let rest: Vec<usize> = (0..m).rev().filter(|j| !cut.chosen.contains(j)).map(|j| order[j]).collect();
                let frame = linalg::select_columns(&basis, &chosen);
                basis = linalg::select_columns(&basis, &rest);
                hc = CMat::from_fn(rest.len(), rest.len(), |a, b| hc[(rest[a], rest[b])]);
                out.push(FiberStep { level: cut.level, frame });
            }
            None => {
                let e = eigh(&hc);
                let cut = cut_spectrum(&e.values, r, fill);
                let frame = &basis * e.columns(&cut.chosen);
                let rest: Vec<usize> = (0..m).rev().filter(|j| !cut.chosen.contains(j)).collect();
                let cc = e.columns(&rest);
                basis = &basis * &cc;
                hc = linalg::hermitian_part(&(cc.adjoint() * &hc * &cc));
                out.push(FiberStep { level: cut.level, frame });
            }
        }
    }
    out
}

/// Ascending order of the diagonal when `hc` is diagonal up to rounding.
/// After the first step the compression is taken in an eigenbasis, so this
/// holds from then on.
fn diagonal_order(hc: &CMat) -> Option<Vec<usize>> {
    let m = hc.nrows();
    let scale = linalg::max_abs(hc).max(1.0);
    for j in 0..m {
        for i in 0..m {
            if i != j && hc[(i, j)].norm() > 1e-13 * scale {
                return None;
            }
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| hc[(a, a)].re.total_cmp(&hc[(b, b)].re).then(a.cmp(&b)));
    Some(order)
}

/// Operator-valued diagonalization.
///
/// Positive definite operators are diagonalized directly. Otherwise the sign
/// split is taken first: the positive part yields `terms`, the negative part
/// `negative`, and the kernel projection is recorded.
pub fn diagonalize(k: &ModuleOperator, options: &DiagonalizeOptions) -> Result<SpectralDecomposition> {
    for (i, f) in k.fibers.iter().enumerate() {
        let defect = linalg::hermitian_defect(f);
        if defect > tol::HERMITIAN_INPUT * linalg::max_abs(f).max(1.0) {
            return Err(Error::NotHermitian { point: i, defect });
        }
    }
    if options.target > 1.0 + 1e-12 {
        return Err(Error::param(format!(
            "target {} exceeds 1: one generator cannot carry more than rank n(γ)",
            options.target
        )));
    }
    let (ranks, rounded) = rank_targets(&k.grid, options.target)?;
    if ranks.contains(&0) {
        return Err(Error::param("target rounds to rank 0 on some fiber"));
    }
    let grid = &k.grid;
    let full_budget = (0..grid.len())
        .map(|i| (k.len * grid.dim(i)).div_ceil(ranks[i]))
        .max()
        .unwrap_or(0);
    if let Some(m) = options.max_terms {
        if m > full_budget {
            return Err(Error::param(format!(
                "max_terms = {m} exceeds the rank budget of {full_budget} terms"
            )));
        }
    }

    // One eigendecomposition per fiber serves the definiteness test, the
    // sign split and the first cut; later steps work on the compression.
    let eigs: Vec<linalg::Eigh> = k.fibers.par_iter().map(eigh).collect();
    let positive_definite = eigs
        .iter()
        .all(|e| e.values.first().is_none_or(|&s| s > tol::KERNEL));
    let select = |pred: &dyn Fn(f64) -> bool| -> Vec<(CMat, Vec<f64>)> {
        eigs.iter()
            .map(|e| {
                let idx: Vec<usize> = (0..e.dim()).filter(|&j| pred(e.values[j])).collect();
                (e.columns(&idx), idx.iter().map(|&j| e.values[j]).collect())
            })
            .collect()
    };
    let (plus_part, minus_part, kernel) = if positive_definite {
        (select(&|_| true), None, None)
    } else {
        let zero = select(&|s| s.abs() <= tol::KERNEL);
        let kernel = zero.iter().map(|(m, _)| linalg::hermitian_part(&linalg::frame_projection(m))).collect();
        (select(&|s| s > tol::KERNEL), Some(select(&|s| s < -tol::KERNEL)), Some(kernel))
    };

    let plus = run_part(k, plus_part, &ranks, options, 1.0, options.max_terms)?;
    let negative = match minus_part {
        Some(b) => run_part(k, b, &ranks, options, -1.0, None)?,
        None => Vec::new(),
    };
    let certificates = certify(k, &plus, &negative, rounded);
    Ok(SpectralDecomposition { grid: grid.clone(), len: k.len, terms: plus, negative, kernel, certificates })
}

/// `parts[γ]` holds an eigenbasis of the part being diagonalized together
/// with its eigenvalues.
fn run_part(
    k: &ModuleOperator,
    parts: Vec<(CMat, Vec<f64>)>,
    ranks: &[usize],
    options: &DiagonalizeOptions,
    sign: f64,
    max_terms: Option<usize>,
) -> Result<Vec<Term>> {
    let grid = &k.grid;
    let budget = (0..grid.len()).map(|i| parts[i].0.ncols().div_ceil(ranks[i])).max().unwrap_or(0);
    let steps = max_terms.map_or(budget, |m| m.min(budget));
    let per_fiber: Vec<Vec<FiberStep>> = parts
        .into_par_iter()
        .zip(ranks.par_iter())
        .map(|((b, values), &r)| {
            let scaled: Vec<f64> = values.iter().map(|v| sign * v).collect();
            run_fiber(b, linalg::real_diag(&scaled), r, steps, options.fill)
        })
        .collect();
    let mut rng = match options.gauge {
        Gauge::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut terms = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut frames: Vec<CMat> = (0..grid.len())
            .map(|i| pad_frame(&per_fiber[i][s].frame, grid.dim(i)))
            .collect();
        match options.gauge {
            Gauge::Raw => {}
            Gauge::Align => align_gauge(&mut frames),
            Gauge::Random(_) => {
                let rng = rng.as_mut().expect("seeded");
                for f in frames.iter_mut() {
                    let u = linalg::random_unitary(rng, f.ncols());
                    *f = &*f * u;
                }
            }
        }
        let x = ModuleVector::from_parts(grid.clone(), k.len, frames);
        let pair = eigenpair_from_vector(k, x)?;
        // Spectrum of λ_i(γ) on the range of p_i(γ).
        let captured: Vec<Vec<f64>> = (0..grid.len())
            .map(|i| {
                let range = Projection::frames_of(pair.projection.fiber(i));
                let mut v = eigh(&(range.adjoint() * pair.eigenvalue.fiber(i) * &range)).values;
                if sign > 0.0 {
                    v.reverse();
                }
                v
            })
            .collect();
        terms.push(Term {
            vector: pair.vector,
            eigenvalue: pair.eigenvalue,
            projection: pair.projection,
            separation: (0..grid.len()).map(|i| sign * per_fiber[i][s].level).collect(),
            captured,
            residual: pair.residual,
        });
    }
    Ok(terms)
}

/// Rotates each frame towards its predecessor by the polar factor of the
/// overlap; skipped where shapes differ or the overlap is near singular.
fn align_gauge(frames: &mut [CMat]) {
    for i in 1..frames.len() {
        let (prev, cur) = frames.split_at_mut(i);
        let a = &prev[i - 1];
        let b = &mut cur[0];
        if a.shape() != b.shape() || b.ncols() == 0 {
            continue;
        }
        let overlap = b.adjoint() * a;
        let smin = linalg::singular_values(&overlap).into_iter().fold(f64::INFINITY, f64::min);
        if smin < 0.1 {
            continue;
        }
        let u = linalg::polar_unitary(&overlap);
        *b = &*b * u;
    }
}

fn certify(k: &ModuleOperator, plus: &[Term], negative: &[Term], rounded: Vec<RankRounding>) -> Certificates {
    let all: Vec<&Term> = plus.iter().chain(negative).collect();
    let grid = &k.grid;
    let orthonormality = (0..grid.len())
        .into_par_iter()
        .map(|g| {
            let mut worst: f64 = 0.0;
            for (i, a) in all.iter().enumerate() {
                for (j, b) in all.iter().enumerate().skip(i) {
                    let ip = a.vector.frame(g).adjoint() * b.vector.frame(g);
                    let defect = if i == j {
                        linalg::max_abs(&(ip - a.projection.fiber(g)))
                    } else {
                        linalg::max_abs(&ip)
                    };
                    worst = worst.max(defect);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    let max_residual = all.iter().map(|t| t.residual).fold(0.0, f64::max);

    let mut operator_ordering: f64 = 0.0;
    for (terms, sign) in [(plus, 1.0), (negative, -1.0)] {
        for w in terms.windows(2) {
            for g in 0..grid.len() {
                // Compared as operators only where both terms have full rank.
                let n = grid.dim(g);
                if w[0].captured[g].len() == n && w[1].captured[g].len() == n {
                    let diff = (w[0].eigenvalue.fiber(g) - w[1].eigenvalue.fiber(g)) * c(sign);
                    let lo = eigh(&diff).values.first().copied().unwrap_or(0.0);
                    operator_ordering = operator_ordering.max(-lo);
                }
            }
        }
    }

    let mut separation: f64 = 0.0;
    for (terms, sign) in [(plus, 1.0), (negative, -1.0)] {
        for (i, t) in terms.iter().enumerate() {
            for g in 0..grid.len() {
                let d = sign * t.separation[g];
                if let Some(lo) = t.captured[g].iter().map(|v| sign * v).reduce(f64::min) {
                    separation = separation.max(d - lo);
                }
                if let Some(next) = terms.get(i + 1) {
                    if let Some(hi) = next.captured[g].iter().map(|v| sign * v).reduce(f64::max) {
                        separation = separation.max(hi - d);
                    }
                }
            }
        }
    }

    let norms: Vec<f64> = plus.iter().map(|t| t.eigenvalue.norm()).collect();
    let norms_nonincreasing = norms.windows(2).all(|w| w[1] <= w[0] + tol::CERTIFICATE);
    Certificates { orthonormality, max_residual, operator_ordering, separation, norms, norms_nonincreasing, rounded }
}

/// Outcome of comparing two ordered decompositions.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub passed: bool,
    pub max_deviation: f64,
    /// `(term index, grid point)` of the largest deviation.
    pub worst: Option<(usize, usize)>,
}

/// Compares `λ_i(γ)` and `μ_i(γ)` up to unitary equivalence, i.e. by sorted
/// spectra. Both inputs must be spectrally separated.
pub fn compare_ordered(a: &SpectralDecomposition, b: &SpectralDecomposition) -> Result<Comparison> {
    check_grid(&a.grid, &b.grid)?;
    if !a.spectrally_separated() || !b.spectrally_separated() {
        return Err(Error::Hypothesis(
            "ordering uniqueness needs spectrally separated eigenvalues in both decompositions".into(),
        ));
    }
    let mut max_deviation: f64 = 0.0;
    let mut worst = None;
    for (ta, tb) in [(&a.terms, &b.terms), (&a.negative, &b.negative)] {
        let count = ta.len().max(tb.len());
        for i in 0..count {
            for g in 0..a.grid.len() {
                let sa = ta.get(i).map(|t| eigh(t.eigenvalue.fiber(g)).values);
                let sb = tb.get(i).map(|t| eigh(t.eigenvalue.fiber(g)).values);
                let dev = match (sa, sb) {
                    (Some(x), Some(y)) => x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max),
                    _ => f64::INFINITY,
                };
                if dev > max_deviation {
                    max_deviation = dev;
                    worst = Some((i, g));
                }
            }
        }
    }
    Ok(Comparison { passed: max_deviation <= tol::COMPARE, max_deviation, worst })
}

/// `c_m = sup_γ ‖K(γ)(1 − P_m)‖` for `m = 0..=N`, where `P_m` projects onto
/// the first `m` coordinates: the norm of `K` restricted to the tail.
pub fn compactness_profile(k: &ModuleOperator) -> Vec<f64> {
    compactness_of_fibers(&k.grid, k.len, &k.fibers)
}

/// [`compactness_profile`] for arbitrary (not necessarily Hermitian) fibers.
pub fn compactness_of_fibers(grid: &Grid, len: usize, fibers: &[CMat]) -> Vec<f64> {
    (0..=len)
        .map(|m| {
            fibers
                .par_iter()
                .enumerate()
                .map(|(i, f)| {
                    let n = grid.dim(i);
                    let start = m * n;
                    let cols = f.ncols() - start;
                    linalg::singular_values(&f.columns(start, cols).into_owned())
                        .into_iter()
                        .fold(0.0, f64::max)
                })
                .reduce(|| 0.0, f64::max)
        })
        .collect()
}
