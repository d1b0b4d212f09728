//! Evaluation: exact OCR oracle, corpus BLEU / WER, Fréchet-distance
//! surrogate over the frozen feature net, PSNR, font consistency.

pub mod bleu;
pub mod frechet;
pub mod ocr;

pub use bleu::{corpus_bleu, corpus_wer};
pub use frechet::{embed_images, frechet_distance, FeatureGaussian};
pub use ocr::{font_consistency, ocr_oracle, OcrResult, BINARIZE_THRESHOLD, MATCH_THRESHOLD};

use crate::error::Result;
use crate::img::Image;

/// PSNR cap reported when MSE is exactly zero.
pub const PSNR_CAP: f64 = 99.0;

/// 10 * log10(1 / MSE) for images in [0, 1]; zero MSE reports the cap.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Median of a slice (mean of the middle two for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
