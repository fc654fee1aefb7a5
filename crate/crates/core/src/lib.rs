//! Second-order linear ODE models for short sampled curves.
//!
//! Beats are fitted with `x'' + w1 x' + w0 x = 0` by iterated principal
//! differential analysis. The fitted coefficients give stability and
//! transient responses, and they serve as classifier features.
//!
//! ```
//! use odeclass::dynamics::stability;
//!
//! let report = stability(-6.97, 4535.9);
//! assert!(!report.stable);
//! ```
//!
//! The guide in `book/` walks through each module; its listings run as
//! doc-tests of this crate.

// `!(x > 0.0)` also rejects NaN, which is the point
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod classify;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod io;
pub mod pda;
pub mod pipeline;
pub mod signal;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/basis.md")]
    mod basis {}
    #[doc = include_str!("../../../book/src/pda.md")]
    mod pda {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/signal.md")]
    mod signal {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/classify.md")]
    mod classify {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
