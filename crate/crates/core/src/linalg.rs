//! Dense complex matrix helpers shared by every fiber computation.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

#[inline]
pub fn c(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues in ascending order.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Columns are eigenvectors, in the same order as `values`.
    pub vectors: CMat,
}

impl Eigh {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Reassembles `U diag(f(s)) U*`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for (j, &s) in self.values.iter().enumerate() {
            let fs = f(s);
            for i in 0..n {
                scaled[(i, j)] *= fs;
            }
        }
        &scaled * self.vectors.adjoint()
    }

    /// Columns of `vectors` selected by index.
    pub fn columns(&self, idx: &[usize]) -> CMat {
        select_columns(&self.vectors, idx)
    }
}

/// Hermitian eigensolver. The input is symmetrized first so that round-off
/// asymmetry never leaks into the spectrum.
pub fn eigh(m: &CMat) -> Eigh {
    assert!(m.is_square(), "eigh needs a square matrix");
    let n = m.nrows();
    if n == 0 {
        return Eigh { values: Vec::new(), vectors: CMat::zeros(0, 0) };
    }
    let sym = hermitian_part(m);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = select_columns(&eig.eigenvectors, &order);
    Eigh { values, vectors }
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

/// Largest entrywise modulus of `m - m*`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Operator 2-norm.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.is_square() && hermitian_defect(m) <= 1e-13 * (1.0 + max_abs(m)) {
        let e = eigh(m);
        return e.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    }
    m.clone().singular_values().iter().fold(0.0_f64, |a, &v| a.max(v))
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |a, z| a.max(z.norm()))
}

pub fn select_columns(m: &CMat, idx: &[usize]) -> CMat {
    let mut out = CMat::zeros(m.nrows(), idx.len());
    for (k, &j) in idx.iter().enumerate() {
        out.set_column(k, &m.column(j));
    }
    out
}

pub fn real_diag(values: &[f64]) -> CMat {
    CMat::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|&v| c(v))))
}

/// Orthonormal basis of the column space of `m`, singular values below
/// `tol * max(1, largest)` dropped.
pub fn range_basis(m: &CMat, tol: f64) -> CMat {
    if m.ncols() == 0 || m.nrows() == 0 {
        return CMat::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("svd u");
    let top = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    let cut = tol * top.max(1.0);
    let mut keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut)
        .collect();
    keep.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    select_columns(&u, &keep)
}

/// Orthonormal basis of the orthogonal complement of the columns of `frame`
/// inside `C^dim`. `frame` must have orthonormal columns.
pub fn complement_of(frame: &CMat, dim: usize) -> CMat {
    let proj = frame * frame.adjoint();
    let comp = CMat::identity(dim, dim) - proj;
    let e = eigh(&comp);
    let keep: Vec<usize> = (0..e.dim()).rev().filter(|&i| e.values[i] > 0.5).collect();
    e.columns(&keep)
}

/// Unitary polar factor `A B*` of `m = A S B*` (thin SVD). For a square
/// input this is the unitary closest to `m`.
pub fn polar_unitary(m: &CMat) -> CMat {
    if m.nrows() == 0 || m.ncols() == 0 {
        return CMat::zeros(m.nrows(), m.ncols());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    u * v_t
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.clone().singular_values().iter().copied().collect()
}

/// Orthogonal projection onto the column space of an orthonormal frame.
pub fn frame_projection(frame: &CMat) -> CMat {
    frame * frame.adjoint()
}

/// `n × n` unitary drawn from the Haar-like QR of a Gaussian matrix.
pub fn random_unitary<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let g = random_complex(rng, n, n);
    polar_unitary(&g)
}

pub fn random_complex<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        Complex::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
    })
}

pub fn random_hermitian<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    hermitian_part(&random_complex(rng, n, n))
}
