//! Diagnostics and boundary prediction for post-conclusion continuation in
//! answer-correct chain-of-thought traces.
//!
//! - [`corpus`]: trace data model, manifest + sidecar format, editor labels.
//! - [`uncertainty`] and [`geometry`]: per-sentence diagnostics.
//! - [`stats`]: paired bootstrap tables, ECDFs, self-consistency rates.
//! - [`hcc`]: the learned boundary proxy (encoder, latent, heads, training).
//! - [`cutter`]: applying boundaries and exporting SFT data.
//! - [`synth`]: synthetic corpora with planted boundaries.

pub mod corpus;
pub mod cutter;
pub mod error;
pub mod geometry;
pub mod hcc;
pub mod kv;
pub mod report;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
