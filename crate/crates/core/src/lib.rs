//! Emotion verification for chat messages.
//!
//! A message's text and the sender's face snapshot are classified
//! independently into one of four emotions; the message is `Honest` when
//! both channels agree and `Liar` when they contradict.

pub mod cnn;
mod codec;
pub mod corpus;
mod error;
pub mod features;
mod label;
pub mod synth;
pub mod textclf;
pub mod textprep;
pub mod verifier;
pub mod vision;

pub use error::{Error, Result};
pub use label::{EmotionLabel, NUM_LABELS};
