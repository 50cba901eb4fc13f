//! Anthropomorphic model observer for small-lesion detection in synthetic
//! tomosynthesis-like stacks.
//!
//! The observer measures three brightness cues at the known lesion location,
//! estimates background complexity from consecutive-slice similarity, adds
//! cue noise that grows with the estimated complexity, and fuses the three
//! per-cue rankings by taking their minimum. Everything is scored with the
//! Wilcoxon AUC and d′.

pub mod complexity;
pub mod decision;
pub mod error;
pub mod features;
pub mod filter;
pub mod hvs;
pub mod io;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod roc;
pub mod special;
pub mod stackgen;
pub mod study;

pub use error::{Error, Result};
