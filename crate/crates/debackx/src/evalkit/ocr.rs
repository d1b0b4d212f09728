//! Exact template-matching OCR oracle. Valid for this repo's
//! deterministic glyph rendering; stands in for an external OCR system.

use crate::error::Result;
use crate::imagegen::render::RenderSpec;
use crate::img::Image;
use crate::textcorpus::{GlyphAtlas, ALPHABET};

/// Pixels above this intensity count as text. Backgrounds are capped at
/// 0.70 by construction, so white glyphs stay separable even under
/// moderate noise or imperfect reconstruction.
pub const BINARIZE_THRESHOLD: f64 = 0.85;

/// Minimum template correlation for a cell to count as a glyph match.
/// Rendered glyphs correlate exactly (1.0); model reconstructions keep a
/// comfortable margin above this while noise cells fall below it.
pub const MATCH_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMatch {
    pub ch: char,
    pub font_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct OcrResult {
    pub text: String,
    /// Best match per cell; `None` for blank cells.
    pub cells: Vec<Option<CellMatch>>,
}

impl OcrResult {
    /// Match scores of non-blank cells, left to right.
    pub fn confidences(&self) -> Vec<f64> {
        self.cells.iter().flatten().map(|m| m.score).collect()
    }
}

fn binarize_cell(img: &Image, r0: usize, c0: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let gray = (img.get(r0 + r, c0 + c, 0)
                + img.get(r0 + r, c0 + c, 1)
                + img.get(r0 + r, c0 + c, 2))
                / 3.0;
            out.push(if gray > BINARIZE_THRESHOLD { 1.0 } else { 0.0 });
        }
    }
    out
}

/// Pearson correlation; 0 when either side has zero variance.
fn normalized_correlation(x: &[f64], t: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let st: f64 = t.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let stt: f64 = t.iter().map(|v| v * v).sum();
    let sxt: f64 = x.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
    let vx = n * sxx - sx * sx;
    let vt = n * stt - st * st;
    if vx <= 0.0 || vt <= 0.0 {
        return 0.0;
    }
    ((n * sxt - sx * st) / (vx.sqrt() * vt.sqrt())).clamp(0.0, 1.0)
}

/// Read a strip by sliding the render cell grid: per cell, the best
/// (font, char) template by normalized correlation, kept if its score
/// reaches `threshold`. Interior blanks become spaces; trailing blanks
/// are trimmed.
pub fn ocr_oracle(
    img: &Image,
    spec: &RenderSpec,
    atlas: &GlyphAtlas,
    threshold: f64,
) -> Result<OcrResult> {
    let (ch, cw) = (atlas.cell_h(), atlas.cell_w());
    let n_cells = spec.max_text_len(atlas);
    let mut cells = Vec::with_capacity(n_cells);
    for i in 0..n_cells {
        let (r0, c0) = (spec.margin, spec.margin + i * cw);
        if r0 + ch > img.height() || c0 + cw > img.width() {
            cells.push(None);
            continue;
        }
        let cell = binarize_cell(img, r0, c0, ch, cw);
        if cell.iter().all(|&v| v == 0.0) {
            cells.push(None);
            continue;
        }
        let mut best: Option<CellMatch> = None;
        for &font_id in atlas.fonts() {
            for glyph in ALPHABET.chars() {
                let bitmap = atlas.glyph_bitmap(glyph, font_id)?;
                let t: Vec<f64> = bitmap.iter().map(|&b| b as f64).collect();
                let score = normalized_correlation(&cell, &t);
                let better = match best {
                    None => score > 0.0,
                    Some(b) => score > b.score,
                };
                if better {
                    best = Some(CellMatch {
                        ch: glyph,
                        font_id,
                        score,
                    });
                }
            }
        }
        cells.push(best.filter(|m| m.score >= threshold));
    }

    let mut text: String = cells
        .iter()
        .map(|c| c.map(|m| m.ch).unwrap_or(' '))
        .collect();
    while text.ends_with(' ') {
        text.pop();
    }
    Ok(OcrResult { text, cells })
}

/// Fraction of cells readable in both images whose best font matches.
/// Returns 1.0 when no comparable cells exist.
pub fn font_consistency(
    src: &Image,
    out: &Image,
    spec: &RenderSpec,
    atlas: &GlyphAtlas,
    threshold: f64,
) -> Result<f64> {
    let a = ocr_oracle(src, spec, atlas, threshold)?;
    let b = ocr_oracle(out, spec, atlas, threshold)?;
    let mut total = 0usize;
    let mut same = 0usize;
    for (sa, sb) in a.cells.iter().zip(b.cells.iter()) {
        if let (Some(ma), Some(mb)) = (sa, sb) {
            total += 1;
            if ma.font_id == mb.font_id {
                same += 1;
            }
        }
    }
    Ok(if total == 0 {
        1.0
    } else {
        same as f64 / total as f64
    })
}
