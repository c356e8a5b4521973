//! Approximate logic over finite rational metric models.

pub mod formula;
pub mod rational;
pub mod sexp;
pub mod signature;
pub mod approx;
pub mod model;
pub mod uniform;
pub mod ultra;
pub mod cli;
