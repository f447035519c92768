//! Command-line pipeline: index references, retrieve candidates, refine
//! them with a language model, and score both rankings.

pub mod config;
pub mod stages;
pub mod synth;

pub use config::{RefinerKind, RunConfig};
pub use stages::{cmd_eval, cmd_index, cmd_refine, cmd_retrieve, cmd_run};
