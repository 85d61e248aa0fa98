//! Perfectly secure steganography over autoregressive channels.
//!
//! A message is one-time-padded into a uniform ciphertext ([`cipher`]), then
//! hidden in a token sequence drawn from a covertext channel ([`channels`])
//! by iteratively coupling per-block ciphertext posteriors with the channel's
//! next-token distributions ([`codec`], built on [`mec`]). Because every
//! token is drawn from a coupling whose marginal is the channel conditional,
//! the stegotext has exactly the covertext distribution. [`harness`] measures
//! how close to exact that is in floating point, plus throughput and errors.

pub mod channels;
pub mod cipher;
pub mod codec;
pub mod error;
pub mod harness;
pub mod mec;
pub mod prob;

pub use error::{Error, Result};
