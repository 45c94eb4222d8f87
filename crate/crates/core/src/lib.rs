//! Bitemporal burnt-area mapping.
//!
//! The crate covers the full method ladder for burn-scar change detection on
//! Sentinel-2 patch pairs: spectral indices with a globally searched
//! threshold, pixel-sampled Random Forest / MLP classifiers, and a Siamese
//! residual encoder-decoder network trained with a small reverse-mode
//! autodiff engine. Everything is evaluated through the same confusion-count
//! metrics so the three families are directly comparable.

pub mod autodiff;
pub mod bamcd;
pub mod classical;
pub mod container;
pub mod error;
pub mod features;
pub mod metrics;
pub mod raster;
pub mod seed;
pub mod spectral;
pub mod threshold;

pub use error::{Error, Result};
