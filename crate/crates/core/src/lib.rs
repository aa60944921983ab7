//! Electricity-load peak forecasting.
//!
//! The crate covers the whole pipeline: hourly series handling and synthetic
//! data ([`series`]), ground-truth peak labeling ([`peaks`]), soft supervision
//! masks ([`mask`]), event-level evaluation ([`eval`]), a small reverse-mode
//! autodiff engine ([`tensor`]), the forecasting network ([`model`]) and its
//! training loop ([`train`]).

pub mod config;
pub mod error;
pub mod eval;
pub mod mask;
pub mod model;
pub mod peaks;
pub mod score;
pub mod series;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// The guide's code blocks, compiled and run as doctests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/series.md")]
    pub mod series {}
    #[doc = include_str!("../../../book/src/peaks.md")]
    pub mod peaks {}
    #[doc = include_str!("../../../book/src/masks.md")]
    pub mod masks {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/tensor.md")]
    pub mod tensor {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
