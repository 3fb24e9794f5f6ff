pub mod algebra;
pub mod cli;
pub mod diag;
pub mod dyadic;
pub mod error;
pub mod io;
pub mod linalg;
pub mod magnetic;
pub mod module;
pub mod quadform;
pub mod tol;
