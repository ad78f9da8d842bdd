pub mod certificate;
pub mod cli;
pub mod cpgd;
pub mod error;
pub mod fidelity;
pub mod grid;
pub mod kernels;
pub mod measures;
pub mod metrics;
pub mod quadrature;
pub mod sfw;

pub use error::{Error, Result};
