//! Langevin dynamics on the torus in the overdamped scaling, the
//! perturbed-test-function calculus for its limit, and Monte Carlo
//! diagnostics of the convergence. The guide in `book/` walks through each
//! module.

pub mod config;
pub mod corrector;
pub mod diagnostics;
pub mod error;
pub mod fourier;
pub mod harness;
pub mod integrators;
pub mod potentials;
pub mod rng;
pub mod stats;
pub mod torus;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fourier.md")]
    mod fourier {}
    #[doc = include_str!("../../../book/src/integrators.md")]
    mod integrators {}
    #[doc = include_str!("../../../book/src/corrector.md")]
    mod corrector {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
