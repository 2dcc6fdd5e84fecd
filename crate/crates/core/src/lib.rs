//! Exact simulation of reaction-diffusion particle systems on finite graphs
//! and empirical checks of their scaling limit
//!
//! ```text
//! dζ_t(x) = [Δ_{V,p} ζ_t(x) − β ζ_t(x)^k] dt + √(α ζ_t(x)^ℓ) dB_t^x
//! ```

pub mod cli;
pub mod coupling;
pub mod diagnostics;
pub mod ctmc;
pub mod ensemble;
pub mod error;
pub mod graph_kernel;
pub mod rate_synthesis;
pub mod presets;
pub mod rng;
pub mod scaling;
pub mod sde;

pub use error::{Error, Result};
