//! Glyph rendering and opaque composition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::textcorpus::GlyphAtlas;

/// Geometry and style of rendered subtitle strips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub strip_h: usize,
    pub strip_w: usize,
    pub base_h: usize,
    pub base_w: usize,
    pub font_id: usize,
    pub text_color: [f64; 3],
    pub margin: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            strip_h: 48,
            strip_w: 512,
            base_h: 512,
            base_w: 512,
            font_id: 0,
            text_color: [1.0, 1.0, 1.0],
            margin: 4,
        }
    }
}

impl RenderSpec {
    /// Longest text that fits on the strip.
    pub fn max_text_len(&self, atlas: &GlyphAtlas) -> usize {
        (self.strip_w.saturating_sub(2 * self.margin)) / atlas.cell_w()
    }

    pub fn validate(&self, patch_size: usize) -> Result<()> {
        if self.strip_h > self.base_h || self.strip_w > self.base_w {
            return Err(Error::Config("strip larger than base image".into()));
        }
        if self.strip_h % patch_size != 0 || self.strip_w % patch_size != 0 {
            return Err(Error::Config(format!(
                "strip dims {}x{} not divisible by patch size {patch_size}",
                self.strip_h, self.strip_w
            )));
        }
        Ok(())
    }
}

/// Render `text` onto a black strip: glyph pixels take `spec.text_color`,
/// cells are laid out left-to-right starting at `(margin, margin)`.
pub fn render_text_image(text: &str, spec: &RenderSpec, atlas: &GlyphAtlas) -> Result<Image> {
    let max_len = spec.max_text_len(atlas);
    let len = text.chars().count();
    if len > max_len {
        return Err(Error::Input(format!(
            "text of {len} characters does not fit the strip (max {max_len})"
        )));
    }
    if spec.margin + atlas.cell_h() > spec.strip_h {
        return Err(Error::Config("glyph cell taller than the strip".into()));
    }
    let mut img = Image::zeros(spec.strip_h, spec.strip_w);
    for (i, c) in text.chars().enumerate() {
        let bitmap = atlas.glyph_bitmap(c, spec.font_id)?;
        let (r0, c0) = (spec.margin, spec.margin + i * atlas.cell_w());
        for r in 0..atlas.cell_h() {
            for cc in 0..atlas.cell_w() {
                if bitmap[(r, cc)] == 1 {
                    for ch in 0..3 {
                        img.set(r0 + r, c0 + cc, ch, spec.text_color[ch]);
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Opaque overlay: wherever any channel of `text_image` is nonzero, the
/// output takes the text pixel; elsewhere it takes the background.
pub fn compose(background: &Image, text_image: &Image) -> Result<Image> {
    if background.dims() != text_image.dims() {
        return Err(Error::Input(format!(
            "compose shape mismatch: {:?} vs {:?}",
            background.dims(),
            text_image.dims()
        )));
    }
    let (h, w) = background.dims();
    let mut out = background.clone();
    for r in 0..h {
        for c in 0..w {
            let lit = (0..3).any(|ch| text_image.get(r, c, ch) > 0.0);
            if lit {
                for ch in 0..3 {
                    out.set(r, c, ch, text_image.get(r, c, ch));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagegen::make_background;

    fn atlas() -> GlyphAtlas {
        GlyphAtlas::default_atlas()
    }

    #[test]
    fn empty_text_renders_all_zero() {
        let img = render_text_image("", &RenderSpec::default(), &atlas()).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_glyph_lands_at_margin_offset() {
        let spec = RenderSpec::default();
        let atlas = atlas();
        let img = render_text_image("A", &spec, &atlas).unwrap();
        let bitmap = atlas.glyph_bitmap('A', 0).unwrap();
        for r in 0..spec.strip_h {
            for c in 0..spec.strip_w {
                let in_cell = r >= spec.margin
                    && r < spec.margin + atlas.cell_h()
                    && c >= spec.margin
                    && c < spec.margin + atlas.cell_w();
                let expected = if in_cell && bitmap[(r - spec.margin, c - spec.margin)] == 1 {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(img.get(r, c, 0), expected, "pixel ({r},{c})");
            }
        }
    }

    #[test]
    fn overlong_text_reports_max_length() {
        // 65 chars * 8px + 8px margin = 528 > 512.
        let text = "A".repeat(65);
        let err = render_text_image(&text, &RenderSpec::default(), &atlas()).unwrap_err();
        assert!(err.to_string().contains("max 63"), "{err}");
    }

    #[test]
    fn compose_empty_overlay_is_background() {
        let bg = make_background(5, 48, 64);
        let out = compose(&bg, &Image::zeros(48, 64)).unwrap();
        assert_eq!(out, bg);
    }

    #[test]
    fn compose_onto_black_is_text_image() {
        let spec = RenderSpec {
            strip_w: 64,
            ..RenderSpec::default()
        };
        let t = render_text_image("HI", &spec, &atlas()).unwrap();
        let out = compose(&Image::zeros(48, 64), &t).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn compose_glyph_over_gradient_matches_the_rule() {
        let spec = RenderSpec {
            strip_w: 64,
            ..RenderSpec::default()
        };
        let bg = make_background(9, 48, 64);
        let t = render_text_image("Q", &spec, &atlas()).unwrap();
        let out = compose(&bg, &t).unwrap();
        for r in 0..48 {
            for c in 0..64 {
                let lit = (0..3).any(|ch| t.get(r, c, ch) > 0.0);
                for ch in 0..3 {
                    let expected = if lit { t.get(r, c, ch) } else { bg.get(r, c, ch) };
                    assert_eq!(out.get(r, c, ch), expected);
                }
            }
        }
    }

    #[test]
    fn compose_shape_mismatch_is_input_error() {
        let bg = Image::zeros(48, 64);
        let t = Image::zeros(48, 65);
        assert!(compose(&bg, &t).is_err());
    }
}
