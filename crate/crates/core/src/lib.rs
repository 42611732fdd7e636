//! Eye-tracking saliency for styled text.
//!
//! The pipeline runs from stimulus segmentation through fixation cleaning,
//! per-interest-area reading measures, saliency aggregation, and finally the
//! comparison of eye-based saliency with human annotation and model scores.
//!
//! ```text
//! stimulus ──► ingest ──► metrics ──► saliency ──► compare ──► report
//!                                        │
//!                                      stats (LMM, VIF, Pearson, CIs)
//! ```

pub mod compare;
pub mod config;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod report;
pub mod saliency;
pub mod stats;
pub mod stimulus;

pub use error::{Error, Result};
