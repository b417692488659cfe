//! Automatic skin-tone metrics for face-image datasets.
//!
//! Three per-face metrics over manifest-described skin regions:
//!
//! - **ITA** — individual typology angle from CIE-Lab `L`/`b`, smoothed and
//!   aggregated per region by histogram mode.
//! - **RSR** — relative skin reflectance: projection of per-face mean skin
//!   color onto the first principal component of a dataset's skin-color
//!   distribution.
//! - **SREDS** — skin reflectance estimate based on dichromatic separation:
//!   rank-2 NNMF splits each patch into diffuse and specular color bases,
//!   then kernel PCA over the diffuse features learns a continuous tone
//!   gradient that transfers across datasets.
//!
//! The crate also ships a dichromatic synthetic-patch generator
//! ([`synth`]) used as ground truth for validation, dataset analysis tools
//! ([`analysis`]) for intra-subject variability / cross-dataset matrices /
//! binning, and a batch scoring layer ([`pipeline`]).

pub mod analysis;
pub mod colorspace;
pub mod error;
pub mod ingestion;
pub mod ita;
pub mod pipeline;
pub mod rsr;
pub mod sreds;
pub mod synth;

mod json17;

pub use error::{Error, Result};
