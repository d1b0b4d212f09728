//! In-image machine translation at desk scale.
//!
//! The pipeline separates a subtitle image into background and text-image,
//! translates the text-image through a discrete code sequence with a pivot
//! text decoder, and fuses the translated text-image back onto the
//! background. Synthetic data generation, training, and self-contained
//! evaluation oracles are all included.

pub mod book;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod imagegen;
pub mod img;
pub mod neural;
pub mod pipeline;
pub mod separation;
pub mod textcorpus;
pub mod translator;
pub mod vqcodec;

pub use error::{Error, Result};
pub use img::Image;
