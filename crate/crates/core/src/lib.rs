//! Training-free visual token pruning.
//!
//! Tokens are scored by how strongly the multimodal projector responds to
//! small random perturbations of them (a zeroth-order, forward-only
//! estimate of the mean Jacobian response), and a budget of tokens is then
//! picked greedily by a score that multiplies normalized sensitivity with
//! cosine diversity against the tokens already kept.
//!
//! ```no_run
//! use sensprune::{io, selection, sensitivity};
//! # fn main() -> sensprune::Result<()> {
//! let projector = io::load_projector("projector.safetensors".as_ref())?;
//! let tokens = io::load_tokens("tokens.safetensors".as_ref())?;
//! let report = sensitivity::estimate_sensitivity(&projector, &tokens, &Default::default())?;
//! let features = projector.forward(&tokens)?;
//! let cfg = selection::SelectionConfig::new(64);
//! let kept = selection::select(&features, &report, &cfg)?;
//! println!("{:?}", kept.indices);
//! # Ok(())
//! # }
//! ```

pub mod analysis;
pub mod cli;
mod error;
pub mod io;
pub mod numerics;
pub mod pipeline;
pub mod projector;
pub mod selection;
pub mod sensitivity;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
