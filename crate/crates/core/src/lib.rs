//! Mining error-handling specifications from low-level programs.

pub mod cli;
pub mod embedding;
pub mod format;
pub mod handlers;
pub mod ir;
pub mod lpds;
pub mod mining;
pub mod synonyms;
pub mod synth;
pub mod walker;
