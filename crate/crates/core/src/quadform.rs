//! The quadratic form `Q(x) = τ(⟨Dx, x⟩)` on the unit ball of the truncated
//! module, its maximization and the associated invariance checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebra::{check_grid, AlgebraField};
use crate::diag::{diagonalize, DiagonalizeOptions, ModuleOperator};
use crate::error::{Error, Result};
use crate::linalg::{self, c, eigh, CMat};
use crate::module::{inner, ModuleVector};
use crate::tol;

#[derive(Clone, Debug)]
pub struct QuadraticForm {
    d: ModuleOperator,
}

impl QuadraticForm {
    pub fn new(d: ModuleOperator) -> Self {
        QuadraticForm { d }
    }

    pub fn operator(&self) -> &ModuleOperator {
        &self.d
    }

    fn check(&self, x: &ModuleVector) -> Result<()> {
        check_grid(self.d.grid(), x.grid())?;
        if x.len() != self.d.len() {
            return Err(Error::ShapeMismatch(format!(
                "form on length {} evaluated at a vector of length {}",
                self.d.len(),
                x.len()
            )));
        }
        Ok(())
    }

    /// `Q(x) = τ(⟨x, Dx⟩)`.
    pub fn evaluate(&self, x: &ModuleVector) -> Result<f64> {
        self.check(x)?;
        let dx = self.d.apply(x)?;
        Ok(inner(x, &dx)?.trace_tau().re)
    }

    /// `dQ(x)[y] = 2 Re τ(⟨Dx, y⟩)`.
    pub fn directional_derivative(&self, x: &ModuleVector, y: &ModuleVector) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        let dx = self.d.apply(x)?;
        Ok(2.0 * inner(&dx, y)?.trace_tau().re)
    }

    /// Gradient `2Dx` with respect to the real inner product `Re τ(⟨·,·⟩)`.
    pub fn gradient(&self, x: &ModuleVector) -> Result<ModuleVector> {
        self.check(x)?;
        Ok(self.d.apply(x)?.scale(c(2.0)))
    }

    /// `‖Dx − x⟨x, Dx⟩‖`, zero exactly when `x` spans a `D`-invariant submodule
    /// on which it is orthonormal.
    pub fn stationarity_residual(&self, x: &ModuleVector) -> Result<f64> {
        self.check(x)?;
        let dx = self.d.apply(x)?;
        let lam = inner(x, &dx)?;
        Ok(dx.sub(&x.right_mul(&lam)?)?.norm())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaximizeOptions {
    pub iters: usize,
    /// Stationarity residual at which the iterate is certified.
    pub tol: f64,
    pub seed: u64,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        MaximizeOptions { iters: 20_000, tol: 1e-9, seed: 0x5eed }
    }
}

#[derive(Clone, Debug)]
pub struct Maximizer {
    pub vector: ModuleVector,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Residual below `tol`, or `Q` stationary to rounding.
    pub certified: bool,
    /// Largest distance of a fiber eigenvalue of `⟨x, x⟩` from {0, 1}.
    pub projection_defect: f64,
    /// `‖⟨x, x⟩ − 1‖`.
    pub unit_defect: f64,
    /// `Q` after every iteration.
    pub history: Vec<f64>,
}

impl Maximizer {
    /// `Q` never dropped by more than rounding along the iteration.
    pub fn monotone(&self) -> bool {
        self.history
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0))
    }
}

/// `x ← x·f(⟨x,x⟩)` with `f(t) = min(1, t^{-1/2})`: pulls every fiber of the
/// inner square into the unit ball.
fn clip_to_ball(frame: &CMat) -> CMat {
    let g = eigh(&(frame.adjoint() * frame));
    frame * g.apply(|t| if t > 1.0 { t.powf(-0.5) } else { 1.0 })
}

/// Projected ascent on `B_1`: `x ← (1 + D/‖D‖)x` followed by clipping of
/// `⟨x, x⟩` at 1. Starting from a random vector with `⟨x, x⟩ = 1`, each step
/// keeps the inner square at 1 and does not decrease `Q`.
pub fn maximize_on_ball(form: &QuadraticForm, options: &MaximizeOptions) -> Result<Maximizer> {
    let d = &form.d;
    let grid = d.grid().clone();
    for (i, spec) in d.fiber_spectra().iter().enumerate() {
        if let Some(&lo) = spec.first() {
            if lo <= tol::KERNEL {
                return Err(Error::NotPositive { point: i, min_eig: lo });
            }
        }
    }
    let scale = d.norm();
    let steps: Vec<CMat> = d
        .fibers()
        .iter()
        .map(|f| CMat::identity(f.nrows(), f.ncols()) + f * c(1.0 / scale))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut frames: Vec<CMat> = (0..grid.len())
        .map(|i| {
            let n = grid.dim(i);
            let x = linalg::random_complex(&mut rng, d.len() * n, n);
            let g = eigh(&(x.adjoint() * &x));
            &x * g.apply(|t| t.powf(-0.5))
        })
        .collect();

    let len = d.len();
    let mk = |frames: &Vec<CMat>| ModuleVector::from_parts(grid.clone(), len, frames.clone());
    let mut x = mk(&frames);
    let mut value = form.evaluate(&x)?;
    let mut history = vec![value];
    let mut residual = form.stationarity_residual(&x)?;
    let mut certified = residual <= options.tol;
    let mut stalled = 0usize;
    let mut iterations = 0usize;
    while !certified && iterations < options.iters {
        frames = frames
            .par_iter()
            .zip(steps.par_iter())
            .map(|(f, m)| clip_to_ball(&(m * f)))
            .collect();
        iterations += 1;
        x = mk(&frames);
        let next = form.evaluate(&x)?;
        history.push(next);
        if (next - value).abs() <= 1e-15 * next.abs().max(1.0) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        value = next;
        if iterations % 8 == 0 || stalled > 0 {
            residual = form.stationarity_residual(&x)?;
            certified = residual <= options.tol || stalled >= 50;
        }
    }
    residual = form.stationarity_residual(&x)?;
    let gram = inner(&x, &x)?;
    let projection_defect = gram
        .spectra()
        .iter()
        .flatten()
        .map(|&s| s.abs().min((s - 1.0).abs()))
        .fold(0.0, f64::max);
    let unit_defect = gram.sub(&AlgebraField::identity(&grid))?.norm();
    Ok(Maximizer { vector: x, value, residual, iterations, certified, projection_defect, unit_defect, history })
}

#[derive(Clone, Debug)]
pub struct InvariantReport {
    /// `‖(1 − P_L) D P_L‖`.
    pub off_block: f64,
    /// `‖P_L D (1 − P_L)‖`.
    pub symmetric_block: f64,
    pub passed: bool,
}

/// Off-diagonal blocks of `D` with respect to the submodule `L` generated by `x`.
pub fn invariant_defect(form: &QuadraticForm, x: &ModuleVector) -> Result<InvariantReport> {
    form.check(x)?;
    let mut off: f64 = 0.0;
    let mut sym: f64 = 0.0;
    for (f, dfib) in x.frames().iter().zip(form.d.fibers()) {
        let basis = linalg::range_basis(f, tol::LATTICE_SVD);
        let p = linalg::frame_projection(&basis);
        let q = CMat::identity(p.nrows(), p.ncols()) - &p;
        off = off.max(linalg::spectral_norm(&(&q * dfib * &p)));
        sym = sym.max(linalg::spectral_norm(&(&p * dfib * &q)));
    }
    Ok(InvariantReport { off_block: off, symmetric_block: sym, passed: off <= 1e-6 && sym <= 1e-6 })
}

/// [`invariant_defect`] at a certified maximizer.
pub fn verify_invariant_subspace(form: &QuadraticForm, maximizer: &Maximizer) -> Result<InvariantReport> {
    if !maximizer.certified {
        return Err(Error::Uncertified(format!(
            "maximizer residual {:.3e} after {} iterations",
            maximizer.residual, maximizer.iterations
        )));
    }
    invariant_defect(form, &maximizer.vector)
}

#[derive(Clone, Debug)]
pub struct KyFan {
    /// `τ(λ_1)`.
    pub value: f64,
    /// `min Sp λ_i ≥ max Sp λ_{i+1}` held; otherwise the value carries no
    /// guarantee of being the supremum.
    pub separated: bool,
}

/// `τ(λ_1)` from the first terms of the diagonalization of `D`.
pub fn kyfan_value(form: &QuadraticForm) -> Result<KyFan> {
    let d = &form.d;
    let terms = if d.len() >= 2 { 2 } else { 1 };
    let opts = DiagonalizeOptions { max_terms: Some(terms), ..Default::default() };
    let dec = diagonalize(d, &opts)?;
    let first = dec
        .terms
        .first()
        .ok_or_else(|| Error::Hypothesis("operator has no positive part".into()))?;
    Ok(KyFan { value: first.eigenvalue.trace_tau().re, separated: dec.spectrally_separated() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ParameterGrid;

    fn scalar_form(values: &[f64]) -> QuadraticForm {
        let g = ParameterGrid::uniform(1, 1).unwrap();
        QuadraticForm::new(ModuleOperator::scalar_diagonal(&g, values))
    }

    fn m2_form(spectrum: [f64; 4]) -> QuadraticForm {
        let g = ParameterGrid::uniform(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = linalg::random_unitary(&mut rng, 4);
        let h = &u * linalg::real_diag(&spectrum) * u.adjoint();
        QuadraticForm::new(ModuleOperator::new(&g, 2, vec![linalg::hermitian_part(&h)]).unwrap())
    }

    #[test]
    fn evaluate_examples() {
        let g = ParameterGrid::uniform(3, 2).unwrap();
        let id = QuadraticForm::new(ModuleOperator::identity(&g, 2));
        let e = ModuleVector::basis(&g, 2, 1).unwrap();
        assert!((id.evaluate(&e).unwrap() - 1.0).abs() < 1e-15);

        let f = scalar_form(&[3.0, 1.0]);
        let e1 = ModuleVector::basis(f.operator().grid(), 2, 0).unwrap();
        assert!((f.evaluate(&e1).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn maximizer_examples() {
        let r = maximize_on_ball(&scalar_form(&[3.0, 1.0]), &MaximizeOptions::default()).unwrap();
        assert!(r.certified && (r.value - 3.0).abs() < 1e-9);
        assert!((r.vector.frame(0)[(0, 0)].norm() - 1.0).abs() < 1e-6);

        let r = maximize_on_ball(&scalar_form(&[3.0, 3.0, 1.0]), &MaximizeOptions::default()).unwrap();
        assert!(r.certified && (r.value - 3.0).abs() < 1e-9);
        assert!(r.unit_defect < 1e-9);

        let f = m2_form([4.0, 3.0, 2.0, 1.0]);
        let r = maximize_on_ball(&f, &MaximizeOptions::default()).unwrap();
        assert!(r.certified && (r.value - 3.5).abs() < 1e-9, "{}", r.value);
        assert!(r.monotone());
        let k = kyfan_value(&f).unwrap();
        assert!(k.separated && (k.value - 3.5).abs() < 1e-12);
        assert!(verify_invariant_subspace(&f, &r).unwrap().passed);
    }

    #[test]
    fn maximizer_rejects_nonpositive() {
        let r = maximize_on_ball(&scalar_form(&[1.0, 0.0]), &MaximizeOptions::default());
        assert!(matches!(r, Err(Error::NotPositive { .. })));
    }

    #[test]
    fn uncertified_maximizer_refused() {
        let f = m2_form([4.0, 3.0, 2.0, 1.0]);
        let r = maximize_on_ball(&f, &MaximizeOptions { iters: 1, ..Default::default() }).unwrap();
        assert!(!r.certified);
        assert!(matches!(verify_invariant_subspace(&f, &r), Err(Error::Uncertified(_))));
    }

    #[test]
    fn invariance_examples() {
        let f = scalar_form(&[3.0, 2.0, 1.0]);
        let g = f.operator().grid().clone();
        let e1 = ModuleVector::basis(&g, 3, 0).unwrap();
        let rep = invariant_defect(&f, &e1).unwrap();
        assert_eq!((rep.off_block, rep.symmetric_block), (0.0, 0.0));
        let mixed = e1.add(&ModuleVector::basis(&g, 3, 1).unwrap().scale(c(0.1))).unwrap();
        assert!(!invariant_defect(&f, &mixed).unwrap().passed);
    }

    #[test]
    fn kyfan_examples() {
        let g = ParameterGrid::normalized(vec![0.0, 1.0], vec![1.0, 3.0], vec![1, 1]).unwrap();
        let fibers = vec![linalg::real_diag(&[5.0, 1.0]), linalg::real_diag(&[2.0, 1.0])];
        let f = QuadraticForm::new(ModuleOperator::new(&g, 2, fibers).unwrap());
        assert!((kyfan_value(&f).unwrap().value - (0.25 * 5.0 + 0.75 * 2.0)).abs() < 1e-14);

        let g = ParameterGrid::uniform(2, 3).unwrap();
        let f = QuadraticForm::new(ModuleOperator::identity(&g, 2).scale(2.5));
        assert!((kyfan_value(&f).unwrap().value - 2.5).abs() < 1e-14);
    }
}
