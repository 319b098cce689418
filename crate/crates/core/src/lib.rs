//! Diffusion-based refinement of 3D multi-region tumor segmentations.
//!
//! A baseline U-Net ([`segmenter`]) predicts whole tumor, tumor core and
//! enhancing tumor. A conditional diffusion model ([`diffusion`]) then either
//! generates the masks directly or generates the baseline's errors, which
//! [`discrepancy`] flips back onto the baseline. [`metrics`] scores the
//! results and [`harness`] runs the cross-validated comparison.
//!
//! The guide in `book/` walks through the pipeline; its listings run as
//! doctests.

pub mod checkpoint;
pub mod dataset;
pub mod diffusion;
pub mod discrepancy;
pub mod error;
pub mod harness;
pub mod io;
pub mod labels;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod preprocess;
pub mod segmenter;
pub mod unet;
pub mod volume;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/phantoms.md")]
    mod phantoms {}
    #[doc = include_str!("../../../book/src/baseline.md")]
    mod baseline {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/discrepancy.md")]
    mod discrepancy {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
