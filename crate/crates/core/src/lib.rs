//! Adaptive discriminative regularization (ADR) for classification losses.
//!
//! The crate provides the ADR penalty with an exact analytic backward pass,
//! the baseline losses it is compared against (cross-entropy, label
//! smoothing, entropy regularization), a small explicit-backprop MLP, and the
//! experiment plumbing used to audit gradients and compare losses on
//! synthetic data.
//!
//! ```
//! use adr::losses::{adr_forward, adr_backward_exact};
//! use adr::simplex::{PhiKind, ProbVector};
//!
//! let p = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
//! let (value, cache) = adr_forward(&p, 2, PhiKind::Entropy).unwrap();
//! let grad = adr_backward_exact(&cache);
//! assert!(value > 0.0);
//! assert_eq!(grad.len(), 3);
//! ```

pub mod audit;
pub mod config;
pub mod curves;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod simplex;
pub mod trainer;

pub use error::{Error, Result};

// The guide under `book/` is compiled as doc-tests so its snippets cannot
// drift from the API.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/simplex.md")]
    pub mod simplex {}
    #[doc = include_str!("../../../book/src/adr.md")]
    pub mod adr {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    pub mod gradients {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/curves.md")]
    pub mod curves {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
