//! Numerical thresholds used across the crate.

/// Weights of a grid must sum to one within this.
pub const WEIGHT_SUM: f64 = 1e-12;
/// Weight sum tolerance when reading files.
pub const WEIGHT_SUM_FILE: f64 = 1e-9;
/// Hermiticity of stored or computed Hermitian fields.
pub const HERMITIAN: f64 = 1e-12;
/// Hermiticity accepted for inputs to spectral routines.
pub const HERMITIAN_INPUT: f64 = 1e-10;
/// Positivity slack on minimum fiber eigenvalues.
pub const POSITIVE: f64 = 1e-10;
/// `‖p − p*‖` for a certified projection.
pub const PROJECTION_HERMITIAN: f64 = 1e-12;
/// `‖p² − p‖` for a certified projection.
pub const PROJECTION_IDEMPOTENT: f64 = 1e-10;
/// Fiber eigenvalues of a projection must round to {0, 1} within this.
pub const PROJECTION_ROUNDING: f64 = 1e-8;
/// Singular-value cut for range bases in lattice operations.
pub const LATTICE_SVD: f64 = 1e-10;
/// Eigenvalues closer than this are treated as one spectral value.
pub const SPECTRAL_MERGE: f64 = 1e-12;
/// Module orthogonality.
pub const ORTHOGONAL: f64 = 1e-9;
/// Generators must be orthonormalized to this before projecting.
pub const GENERATORS: f64 = 1e-8;
/// `|eigenvalue| ≤` this counts as kernel.
pub const KERNEL: f64 = 1e-10;
/// Degeneracy window when deciding membership in the cut eigenspace.
pub const DEGENERATE: f64 = 1e-9;
/// Eigen-residual certificate.
pub const RESIDUAL: f64 = 1e-7;
/// Orthonormality and operator-ordering certificates.
pub const CERTIFICATE: f64 = 1e-8;
/// Spectral comparison for ordering uniqueness.
pub const COMPARE: f64 = 1e-7;
/// Commutation `‖[K, P]‖`.
pub const COMMUTATOR: f64 = 1e-9;
/// Sup-norm tail threshold for the H_A membership verdict.
pub const TAIL: f64 = 1e-6;
