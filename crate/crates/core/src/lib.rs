//! Piano transcription from silent overhead video.
//!
//! The pipeline locates the keyboard on a hands-free frame, gates each
//! later frame to the columns a hand covers, cuts fixed-size per-key
//! difference-image features and classifies them with small CNNs: one for
//! pressed/released, one for a 5-level intensity from a 5-frame stack.

pub mod dataset;
pub mod error;
pub mod features;
pub mod flow;
pub mod geometry;
pub mod hand;
pub mod imaging;
pub mod models;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
