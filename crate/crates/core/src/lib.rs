//! Spontaneous-style conversational speech synthesis: spontaneous-behavior
//! labels, automatic label detectors, and a label-conditioned acoustic model.

pub mod acoustic;
pub mod config;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod features;
pub mod labels;
pub mod nn;
pub mod pipeline;
pub mod util;

pub use error::{Error, Result};
