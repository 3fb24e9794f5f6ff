//! The magnetic Schrödinger operator `D = Δ + W` in the oscillator basis,
//! at rational flux `θ = p/q`.
//!
//! The `t` variable is expanded in Hermite functions of width
//! `σ = (θ/2π)^{1/2}`, truncated to `M` levels, with `Δ = diag((2i − 1)θ)`.
//! The `s` variable lives on a `p`-point cyclic lattice carrying two Bloch
//! phases, which is the smallest space representing
//! `C_kl = T_s^{-k} e^{2πils/θ}` at `1/θ = q/p`. Each Bloch point is a fiber
//! of dimension `p`, and a module vector of length `M` holds one `p × p`
//! block per oscillator level.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::algebra::{AlgebraField, Grid, ParameterGrid};
use crate::diag::{diagonalize, DiagonalizeOptions, ModuleOperator};
use crate::error::{Error, Result};
use crate::linalg::{self, c, eigh, CMat, C64};
use crate::module::inner;

/// Default largest continued-fraction denominator.
pub const Q_MAX: u64 = 64;
/// `|θ − p/q|` accepted for the rational stand-in.
pub const APPROX_TOL: f64 = 1e-9;
/// Gauss–Legendre nodes per panel.
const PANEL_NODES: usize = 16;

/// Last continued-fraction convergent `p/q` of `θ ∈ (0, 1)` with `q ≤ q_max`.
pub fn best_convergent(theta: f64, q_max: u64) -> Option<(u64, u64)> {
    if !(theta > 0.0 && theta < 1.0) {
        return None;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut x = theta;
    let mut best = None;
    for _ in 0..64 {
        let a = x.floor();
        if a > u64::MAX as f64 / 2.0 {
            break;
        }
        let a = a as u64;
        let (p2, q2) = (a * p1 + p0, a * q1 + q0);
        if q2 > q_max {
            break;
        }
        if p2 > 0 {
            best = Some((p2, q2));
        }
        if (theta - p2 as f64 / q2 as f64).abs() <= f64::EPSILON * theta {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = x - a as f64;
        if frac < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    best
}

/// [`best_convergent`], failing when it is further than `tol` from `θ`.
pub fn rational_approximation(theta: f64, q_max: u64, tol: f64) -> Result<(u64, u64)> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param(format!("theta must lie in (0, 1), got {theta}")));
    }
    match best_convergent(theta, q_max) {
        Some((p, q)) if (theta - p as f64 / q as f64).abs() <= tol => Ok((p, q)),
        _ => Err(Error::DenominatorOverflow { theta, q_max }),
    }
}

/// Fourier coefficients `w_kl` of a real periodic potential.
#[derive(Clone, Debug, Default)]
pub struct Coefficients {
    entries: Vec<(i32, i32, C64)>,
}

impl Coefficients {
    /// Checks `w_{-k,-l} = conj(w_kl)` for every stored pair.
    pub fn new(entries: Vec<(i32, i32, C64)>) -> Result<Self> {
        let find = |k: i32, l: i32| entries.iter().find(|e| e.0 == k && e.1 == l).map(|e| e.2);
        for &(k, l, w) in &entries {
            if entries.iter().filter(|e| e.0 == k && e.1 == l).count() > 1 {
                return Err(Error::param(format!("coefficient ({k},{l}) given twice")));
            }
            let partner = find(-k, -l).unwrap_or(C64::new(0.0, 0.0));
            if (partner - w.conj()).norm() > 1e-12 * w.norm().max(1.0) {
                return Err(Error::Hypothesis(format!(
                    "w({},{}) = {partner} is not the conjugate of w({k},{l}) = {w}",
                    -k, -l
                )));
            }
        }
        Ok(Coefficients { entries })
    }

    pub fn zero() -> Self {
        Coefficients::default()
    }

    pub fn entries(&self) -> &[(i32, i32, C64)] {
        &self.entries
    }

    /// `Σ |w_kl|`.
    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.2.norm()).sum()
    }

    /// Pairs with `k > 0`, or `k = 0` and `l ≥ 0`: one from each `±(k, l)`.
    fn canonical(&self) -> impl Iterator<Item = &(i32, i32, C64)> {
        self.entries.iter().filter(|e| e.0 > 0 || (e.0 == 0 && e.1 >= 0))
    }
}

/// Uniform `n1 × n2` grid of Bloch phase pairs on `[0, 2π)²`.
pub fn bloch_grid(n1: usize, n2: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n1 * n2);
    for a in 0..n1 {
        for b in 0..n2 {
            out.push((2.0 * PI * a as f64 / n1 as f64, 2.0 * PI * b as f64 / n2 as f64));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct MagneticModel {
    /// Requested flux.
    pub theta: f64,
    pub p: u64,
    pub q: u64,
    pub osc_dim: usize,
    pub coefficients: Coefficients,
    pub bloch: Vec<(f64, f64)>,
}

impl MagneticModel {
    pub fn new(theta: f64, osc_dim: usize, coefficients: Coefficients, bloch: Vec<(f64, f64)>, q_max: u64) -> Result<Self> {
        if osc_dim == 0 {
            return Err(Error::param("oscillator truncation must be at least 1"));
        }
        if bloch.is_empty() {
            return Err(Error::param("Bloch grid is empty"));
        }
        let (p, q) = rational_approximation(theta, q_max, APPROX_TOL)?;
        Ok(MagneticModel { theta, p, q, osc_dim, coefficients, bloch })
    }

    /// Same potential and grids at another flux.
    pub fn with_theta(&self, theta: f64, q_max: u64) -> Result<Self> {
        Self::new(theta, self.osc_dim, self.coefficients.clone(), self.bloch.clone(), q_max)
    }

    /// `p/q`, the flux every matrix is built with.
    pub fn flux(&self) -> f64 {
        self.p as f64 / self.q as f64
    }

    /// Oscillator width `σ = (θ/2π)^{1/2}`.
    pub fn sigma(&self) -> f64 {
        (self.flux() / (2.0 * PI)).sqrt()
    }

    /// Eigenvalues at or above `M·θ` are not trusted.
    pub fn trust_ceiling(&self) -> f64 {
        self.osc_dim as f64 * self.flux()
    }

    pub fn fiber_dim(&self) -> usize {
        self.p as usize
    }

    /// Bloch points as a uniformly weighted grid with fibers `M_p`.
    pub fn grid(&self) -> Grid {
        let n = self.bloch.len();
        ParameterGrid::new((0..n).map(|i| i as f64).collect(), vec![1.0 / n as f64; n], vec![self.fiber_dim(); n])
            .expect("valid Bloch grid")
    }
}

/// Hermite functions `φ_1 … φ_M` of width `σ` at `t`, orthonormal in `L²(R)`.
pub fn hermite_functions(osc_dim: usize, sigma: f64, t: f64) -> Vec<f64> {
    let u = t / sigma;
    let mut out = vec![0.0; osc_dim];
    if osc_dim == 0 {
        return out;
    }
    out[0] = PI.powf(-0.25) * sigma.powf(-0.5) * (-0.5 * u * u).exp();
    if osc_dim > 1 {
        out[1] = 2f64.sqrt() * u * out[0];
    }
    for m in 1..osc_dim.saturating_sub(1) {
        let mf = m as f64;
        out[m + 1] = (2.0 / (mf + 1.0)).sqrt() * u * out[m] - (mf / (mf + 1.0)).sqrt() * out[m - 1];
    }
    out
}

/// Composite Gauss–Legendre nodes and weights for the overlap integrals of a
/// given `(k, l)`.
fn quadrature(theta: f64, osc_dim: usize, k: i32, l: i32) -> (Vec<f64>, Vec<f64>) {
    let sigma = (theta / (2.0 * PI)).sqrt();
    let m = osc_dim as f64;
    let half = k.unsigned_abs() as f64 + 8.0 * sigma * m.sqrt();
    let kmax = 2.0 * (2.0 * m + 1.0).sqrt() / sigma + 2.0 * PI * l.unsigned_abs() as f64 / theta;
    let by_frequency = (2.0 * half * kmax / 8.0).ceil() as usize;
    let by_count = (4 * osc_dim).div_ceil(PANEL_NODES);
    let panels = by_frequency.max(by_count).max(1);
    let h = 2.0 * half / panels as f64;
    let rule = GaussLegendre::new(NonZeroUsize::new(PANEL_NODES).expect("nonzero"));
    let mut nodes = Vec::with_capacity(panels * PANEL_NODES);
    let mut weights = Vec::with_capacity(panels * PANEL_NODES);
    for p in 0..panels {
        let mid = -half + (p as f64 + 0.5) * h;
        for &(x, w) in rule.as_node_weight_pairs() {
            nodes.push(mid + 0.5 * h * x);
            weights.push(0.5 * h * w);
        }
    }
    (nodes, weights)
}

fn hermite_table(osc_dim: usize, sigma: f64, nodes: &[f64], shift: f64) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = nodes.par_iter().map(|&t| hermite_functions(osc_dim, sigma, t + shift)).collect();
    DMatrix::from_fn(osc_dim, nodes.len(), |i, j| cols[j][i])
}

/// Coefficients `α_ij` of `T_t^k e^{2πilt/θ} φ_i = Σ_j α_ij φ_j` in the
/// truncated oscillator basis.
#[derive(Clone, Debug)]
pub struct TranslationMatrix {
    pub k: i32,
    pub l: i32,
    pub alpha: CMat,
    /// `max |Σ_j conj(α_ij) α_nj − δ_in|` over `i, n < M/2`.
    pub defect: f64,
}

impl TranslationMatrix {
    /// Matrix of the operator acting on coefficient columns: `U[j, i] = α_ij`.
    pub fn operator(&self) -> CMat {
        self.alpha.transpose()
    }

    pub fn require_unitary(&self, tolerance: f64) -> Result<()> {
        if self.defect > tolerance {
            return Err(Error::Hypothesis(format!(
                "translation ({}, {}) has inner-half unitarity defect {:.3e}",
                self.k, self.l, self.defect
            )));
        }
        Ok(())
    }
}

pub fn translation_matrix(model: &MagneticModel, k: i32, l: i32) -> TranslationMatrix {
    translation_matrix_at(model.flux(), model.osc_dim, k, l)
}

/// [`translation_matrix`] for a bare flux and truncation.
pub fn translation_matrix_at(theta: f64, osc_dim: usize, k: i32, l: i32) -> TranslationMatrix {
    let sigma = (theta / (2.0 * PI)).sqrt();
    let (nodes, weights) = quadrature(theta, osc_dim, k, l);
    let phi = hermite_table(osc_dim, sigma, &nodes, 0.0);
    let phi_k = hermite_table(osc_dim, sigma, &nodes, k as f64);
    let freq = 2.0 * PI * l as f64 / theta;
    let mut wc = phi.clone();
    let mut ws = phi.clone();
    for (q, (&t, &w)) in nodes.iter().zip(&weights).enumerate() {
        let (s, co) = (freq * t).sin_cos();
        wc.column_mut(q).scale_mut(w * co);
        ws.column_mut(q).scale_mut(w * s);
    }
    let re = &wc * phi_k.transpose();
    let im = &ws * phi_k.transpose();
    // U[j, i] = ∫ φ_j(t) e^{2πilt/θ} φ_i(t + k) dt.
    let u = CMat::from_fn(osc_dim, osc_dim, |j, i| C64::new(re[(j, i)], im[(j, i)]));
    let alpha = u.transpose();
    let gram = u.adjoint() * &u;
    let h = (osc_dim / 2).max(1);
    let mut defect: f64 = 0.0;
    for i in 0..h {
        for n in 0..h {
            let target = if i == n { 1.0 } else { 0.0 };
            defect = defect.max((gram[(i, n)] - c(target)).norm());
        }
    }
    TranslationMatrix { k, l, alpha, defect }
}

/// `C_kl = M^l S^k` on the `p`-point lattice, where `S` is the cyclic shift
/// `(Sψ)_j = ψ_{j−1}` with `(Sψ)_0 = e^{iβ_1} ψ_{p−1}` and
/// `M = e^{iβ_2} diag(e^{2πi j q/p})`.
pub fn lattice_operator(p: u64, q: u64, bloch: (f64, f64), k: i32, l: i32) -> CMat {
    let p = p as usize;
    let mut s = CMat::zeros(p, p);
    for j in 1..p {
        s[(j, j - 1)] = c(1.0);
    }
    s[(0, p - 1)] += C64::from_polar(1.0, bloch.0);
    let m = CMat::from_diagonal(&nalgebra::DVector::from_fn(p, |j, _| {
        C64::from_polar(1.0, bloch.1 + 2.0 * PI * (j as u64 * q % p as u64) as f64 / p as f64)
    }));
    let pow = |a: &CMat, e: i32| {
        let base = if e < 0 { a.adjoint() } else { a.clone() };
        let mut r = CMat::identity(p, p);
        for _ in 0..e.unsigned_abs() {
            r = &r * &base;
        }
        r
    };
    pow(&m, l) * pow(&s, k)
}

/// `Δ = diag((2i − 1)θ) ⊗ 1_p`.
pub fn build_delta(model: &MagneticModel) -> ModuleOperator {
    let theta = model.flux();
    let levels: Vec<f64> = (1..=model.osc_dim).map(|i| (2 * i - 1) as f64 * theta).collect();
    ModuleOperator::scalar_diagonal(&model.grid(), &levels)
}

/// Translation matrices for all `|k|, |l| ≤ k_max` at one flux and
/// truncation, for reuse across potentials.
#[derive(Clone, Debug)]
pub struct TranslationTable {
    flux: f64,
    osc_dim: usize,
    entries: HashMap<(i32, i32), TranslationMatrix>,
}

impl TranslationTable {
    pub fn new(model: &MagneticModel, k_max: i32) -> Self {
        let pairs: Vec<(i32, i32)> = (-k_max..=k_max)
            .flat_map(|k| (-k_max..=k_max).map(move |l| (k, l)))
            .filter(|&(k, l)| k > 0 || (k == 0 && l >= 0))
            .collect();
        let entries = pairs
            .par_iter()
            .map(|&(k, l)| ((k, l), translation_matrix(model, k, l)))
            .collect();
        TranslationTable { flux: model.flux(), osc_dim: model.osc_dim, entries }
    }

    fn get(&self, model: &MagneticModel, k: i32, l: i32) -> Option<&TranslationMatrix> {
        if self.flux == model.flux() && self.osc_dim == model.osc_dim {
            self.entries.get(&(k, l))
        } else {
            None
        }
    }
}

/// Translation matrices for every canonical pair of the model's potential.
fn translation_set(model: &MagneticModel, table: Option<&TranslationTable>) -> Vec<(C64, TranslationMatrix)> {
    let pairs: Vec<(i32, i32, C64)> = model.coefficients.canonical().copied().collect();
    pairs
        .par_iter()
        .map(|&(k, l, w)| match table.and_then(|t| t.get(model, k, l)) {
            Some(tm) => (w, tm.clone()),
            None => (w, translation_matrix(model, k, l)),
        })
        .collect()
}

fn assemble_w(model: &MagneticModel, set: &[(C64, TranslationMatrix)]) -> Vec<CMat> {
    let p = model.fiber_dim();
    let dim = model.osc_dim * p;
    model
        .bloch
        .par_iter()
        .map(|&beta| {
            let mut w = CMat::zeros(dim, dim);
            for (coef, tm) in set {
                let term = tm.operator().kronecker(&lattice_operator(model.p, model.q, beta, tm.k, tm.l)) * *coef;
                if tm.k == 0 && tm.l == 0 {
                    w += linalg::hermitian_part(&term);
                } else {
                    // B_{-k,-l} = B_kl*, so the partner term is the adjoint.
                    w += &term + term.adjoint();
                }
            }
            w
        })
        .collect()
}

/// `W = Σ w_kl (T_t^k e^{2πilt/θ}) ⊗ C_kl` per Bloch point.
pub fn build_perturbation(model: &MagneticModel) -> ModuleOperator {
    build_perturbation_with(model, None)
}

/// [`build_perturbation`] drawing translation matrices from a table.
pub fn build_perturbation_with(model: &MagneticModel, table: Option<&TranslationTable>) -> ModuleOperator {
    let set = translation_set(model, table);
    let fibers = assemble_w(model, &set);
    crate::diag::ModuleOperator::new(&model.grid(), model.osc_dim, fibers).expect("Hermitian by construction")
}

/// `D = Δ + W`.
pub fn build_operator(model: &MagneticModel) -> ModuleOperator {
    build_delta(model).add(&build_perturbation(model)).expect("same shapes")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub bloch1: f64,
    pub bloch2: f64,
    pub eigenvalue: f64,
    pub trusted: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// One line per skipped flux value.
    pub notices: Vec<String>,
}

/// Eigenvalues of `D` at every Bloch point of the model, for each flux.
pub fn spectrum_sweep(model: &MagneticModel, thetas: &[f64], q_max: u64) -> Sweep {
    let mut sweep = Sweep::default();
    for &theta in thetas {
        let m = match model.with_theta(theta, q_max) {
            Ok(m) => m,
            Err(e) => {
                sweep.notices.push(format!("skipped theta = {theta}: {e}"));
                continue;
            }
        };
        let d = build_operator(&m);
        let ceiling = m.trust_ceiling();
        for (spec, &(b1, b2)) in d.fiber_spectra().into_iter().zip(&m.bloch) {
            for e in spec {
                sweep.rows.push(SweepRow { theta, bloch1: b1, bloch2: b2, eigenvalue: e, trusted: e < ceiling });
            }
        }
    }
    sweep
}

/// Outcome of the gap check `‖W‖ < θ ⇒ Sp D ⊂ ∪_i (2θ(i−1), 2θi)`.
#[derive(Clone, Debug)]
pub struct GapReport {
    pub theta: f64,
    pub p: u64,
    pub q: u64,
    /// `max_β ‖W(β)‖`.
    pub w_norm: f64,
    /// `Σ |w_kl|`.
    pub coefficient_sum: f64,
    /// `‖W‖ < θ`.
    pub applicable: bool,
    pub trusted: usize,
    /// Trusted eigenvalues outside every open interval `(2θ(i−1), 2θi)`.
    pub violations: usize,
    /// Largest distance of a trusted eigenvalue from its level `(2i−1)θ`.
    pub max_shift: f64,
}

impl GapReport {
    pub fn passed(&self) -> bool {
        self.applicable && self.violations == 0 && self.w_norm <= self.coefficient_sum + 1e-8
    }

    pub fn summary(&self) -> String {
        let verdict = if !self.applicable {
            "NOT-APPLICABLE"
        } else if self.passed() {
            "PASS"
        } else {
            "FAIL"
        };
        format!(
            "theta={} (p/q={}/{}) |W|={:.6e} sum|w|={:.6e} trusted={} violations={} max_shift={:.6e} {verdict}",
            self.theta, self.p, self.q, self.w_norm, self.coefficient_sum, self.trusted, self.violations, self.max_shift
        )
    }
}

pub fn gap_report(model: &MagneticModel) -> GapReport {
    gap_report_with(model, None)
}

pub fn gap_report_with(model: &MagneticModel, table: Option<&TranslationTable>) -> GapReport {
    let theta = model.flux();
    let delta = build_delta(model);
    let w = build_perturbation_with(model, table);
    let w_norm = w.norm();
    let d = delta.add(&w).expect("same shapes");
    let ceiling = model.trust_ceiling();
    let mut trusted = 0;
    let mut violations = 0;
    let mut max_shift: f64 = 0.0;
    for spec in d.fiber_spectra() {
        for e in spec.into_iter().filter(|&e| e < ceiling) {
            trusted += 1;
            let i = (e / (2.0 * theta)).floor();
            let inside = e > 2.0 * theta * i && e < 2.0 * theta * (i + 1.0) && i >= 0.0;
            if !inside {
                violations += 1;
            }
            let level = (2.0 * i.max(0.0) + 1.0) * theta;
            max_shift = max_shift.max((e - level).abs());
        }
    }
    GapReport {
        theta: model.theta,
        p: model.p,
        q: model.q,
        w_norm,
        coefficient_sum: model.coefficients.l1_norm(),
        applicable: w_norm < theta,
        trusted,
        violations,
        max_shift,
    }
}

/// Operator eigenvalue of one band over the Bloch torus.
#[derive(Clone, Debug)]
pub struct Band {
    pub index: usize,
    /// `λ_i = ⟨x_i, D x_i⟩`, one `p × p` fiber per Bloch point.
    pub eigenvalue: AlgebraField,
    /// `‖D x_i − x_i λ_i‖`.
    pub residual: f64,
    /// `‖λ_i − μ_i^{-1}‖` for the eigenvalue `μ_i` of `D^{-1}`.
    pub inverse_defect: f64,
    /// Fiber spectra of `λ_i`, ascending.
    pub spectra: Vec<Vec<f64>>,
}

impl Band {
    /// `(min, max)` over all fiber spectra.
    pub fn envelope(&self) -> (f64, f64) {
        self.spectra
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Band `i` (1-based) of `D`: the positive compact operator `D^{-1}` is
/// diagonalized with one module rank per step, and its `i`-th eigenvector
/// carries band `i` of `D`.
pub fn band_eigenvalues(model: &MagneticModel, band: usize) -> Result<Band> {
    band_eigenvalues_with(model, band, None)
}

pub fn band_eigenvalues_with(model: &MagneticModel, band: usize, table: Option<&TranslationTable>) -> Result<Band> {
    if band == 0 || band > model.osc_dim {
        return Err(Error::param(format!("band index {band} outside 1..={}", model.osc_dim)));
    }
    let theta = model.flux();
    let delta = build_delta(model);
    let w = build_perturbation_with(model, table);
    let w_norm = w.norm();
    if !(w_norm < theta) {
        return Err(Error::Hypothesis(format!(
            "gap hypothesis fails: |W| = {w_norm:.6e} is not below theta = {theta}"
        )));
    }
    let d = delta.add(&w)?;
    let inv: Vec<CMat> = d.fibers().par_iter().map(|f| eigh(f).apply(|s| 1.0 / s)).collect();
    let r = ModuleOperator::new(&model.grid(), model.osc_dim, inv)?;
    let dec = diagonalize(&r, &DiagonalizeOptions { max_terms: Some(band), ..Default::default() })?;
    let term = &dec.terms[band - 1];
    let x = &term.vector;
    let dx = d.apply(x)?;
    let lam = inner(x, &dx)?;
    let lam = lam.map(linalg::hermitian_part);
    let residual = dx.sub(&x.right_mul(&lam)?)?.norm();
    let mu_inv = term.eigenvalue.functional_calculus(|s| 1.0 / s)?;
    let inverse_defect = lam.norm_distance(&mu_inv)?;
    let spectra = lam.spectra();
    Ok(Band { index: band, eigenvalue: lam, residual, inverse_defect, spectra })
}
