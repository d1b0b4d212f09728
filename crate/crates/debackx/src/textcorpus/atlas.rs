//! Procedural bitmap fonts. Three fonts are derived from one base 7x5
//! glyph set placed in a 12x8 cell: font 0 adds serif ticks, font 1
//! dilates strokes horizontally, font 2 shears the upper half by 1px.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::textcorpus::ALPHABET;

pub const CELL_H: usize = 12;
pub const CELL_W: usize = 8;

/// Bitmap glyphs for every (font, character) combination.
#[derive(Debug, Clone)]
pub struct GlyphAtlas {
    fonts: Vec<usize>,
    bitmaps: HashMap<(usize, char), Array2<u8>>,
    blank: Array2<u8>,
}

impl GlyphAtlas {
    /// Build the atlas for the given font ids (each in 0..3).
    pub fn procedural(font_ids: &[usize]) -> Result<GlyphAtlas> {
        if font_ids.is_empty() {
            return Err(Error::Config("atlas needs at least one font".into()));
        }
        let mut bitmaps = HashMap::new();
        for &f in font_ids {
            if f > 2 {
                return Err(Error::Config(format!("unknown procedural font id {f}")));
            }
            for c in ALPHABET.chars() {
                let base = base_glyph(c);
                let styled = match f {
                    0 => add_serifs(&base),
                    1 => dilate_right(&base),
                    _ => shear_top(&base),
                };
                bitmaps.insert((f, c), styled);
            }
        }
        Ok(GlyphAtlas {
            fonts: font_ids.to_vec(),
            bitmaps,
            blank: Array2::zeros((CELL_H, CELL_W)),
        })
    }

    /// All three fonts.
    pub fn default_atlas() -> GlyphAtlas {
        GlyphAtlas::procedural(&[0, 1, 2]).expect("builtin fonts")
    }

    pub fn fonts(&self) -> &[usize] {
        &self.fonts
    }

    pub fn cell_h(&self) -> usize {
        CELL_H
    }

    pub fn cell_w(&self) -> usize {
        CELL_W
    }

    /// Bitmap lookup. Space maps to the all-zero cell in every font.
    pub fn glyph_bitmap(&self, c: char, font_id: usize) -> Result<&Array2<u8>> {
        if c == ' ' {
            if self.fonts.contains(&font_id) {
                return Ok(&self.blank);
            }
            return Err(Error::Input(format!("unknown font id {font_id}")));
        }
        self.bitmaps.get(&(font_id, c)).ok_or_else(|| {
            if self.fonts.contains(&font_id) {
                Error::Input(format!("character {c:?} not in the glyph alphabet"))
            } else {
                Error::Input(format!("unknown font id {font_id}"))
            }
        })
    }
}

fn base_glyph(c: char) -> Array2<u8> {
    let rows = base_rows(c);
    let mut cell = Array2::zeros((CELL_H, CELL_W));
    for (i, row) in rows.iter().enumerate() {
        for (j, ch) in row.chars().enumerate() {
            if ch == '1' {
                cell[(2 + i, 1 + j)] = 1;
            }
        }
    }
    cell
}

/// Serif feet: under the bottom-most pixel of each column, mark the
/// neighbors on the row below.
fn add_serifs(g: &Array2<u8>) -> Array2<u8> {
    let mut out = g.clone();
    for c in 0..CELL_W {
        let bottom = (0..CELL_H).rev().find(|&r| g[(r, c)] == 1);
        if let Some(r) = bottom {
            if r + 1 < CELL_H {
                if c > 0 {
                    out[(r + 1, c - 1)] = 1;
                }
                if c + 1 < CELL_W {
                    out[(r + 1, c + 1)] = 1;
                }
            }
        }
    }
    out
}

/// Horizontal stroke dilation by one pixel.
fn dilate_right(g: &Array2<u8>) -> Array2<u8> {
    let mut out = g.clone();
    for r in 0..CELL_H {
        for c in 0..CELL_W - 1 {
            if g[(r, c)] == 1 {
                out[(r, c + 1)] = 1;
            }
        }
    }
    out
}

/// Shear: the upper half of the cell shifts right by one pixel.
fn shear_top(g: &Array2<u8>) -> Array2<u8> {
    let mut out = Array2::zeros((CELL_H, CELL_W));
    for r in 0..CELL_H {
        for c in 0..CELL_W {
            if g[(r, c)] == 1 {
                let nc = if r < CELL_H / 2 { c + 1 } else { c };
                if nc < CELL_W {
                    out[(r, nc)] = 1;
                }
            }
        }
    }
    out
}

fn base_rows(c: char) -> [&'static str; 7] {
    match c {
        'A' => ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
        'B' => ["11110", "10001", "11110", "10001", "10001", "10001", "11110"],
        'C' => ["01110", "10001", "10000", "10000", "10000", "10001", "01110"],
        'D' => ["11110", "10001", "10001", "10001", "10001", "10001", "11110"],
        'E' => ["11111", "10000", "11110", "10000", "10000", "10000", "11111"],
        'F' => ["11111", "10000", "11110", "10000", "10000", "10000", "10000"],
        'G' => ["01110", "10001", "10000", "10111", "10001", "10001", "01111"],
        'H' => ["10001", "10001", "11111", "10001", "10001", "10001", "10001"],
        'I' => ["01110", "00100", "00100", "00100", "00100", "00100", "01110"],
        'J' => ["00111", "00010", "00010", "00010", "00010", "10010", "01100"],
        'K' => ["10001", "10010", "10100", "11000", "10100", "10010", "10001"],
        'L' => ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
        'M' => ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
        'N' => ["10001", "11001", "10101", "10011", "10001", "10001", "10001"],
        'O' => ["01110", "10001", "10001", "10001", "10001", "10001", "01110"],
        'P' => ["11110", "10001", "10001", "11110", "10000", "10000", "10000"],
        'Q' => ["01110", "10001", "10001", "10001", "10101", "10010", "01101"],
        'R' => ["11110", "10001", "10001", "11110", "10100", "10010", "10001"],
        'S' => ["01111", "10000", "10000", "01110", "00001", "00001", "11110"],
        'T' => ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
        'U' => ["10001", "10001", "10001", "10001", "10001", "10001", "01110"],
        'V' => ["10001", "10001", "10001", "10001", "10001", "01010", "00100"],
        'W' => ["10001", "10001", "10001", "10101", "10101", "11011", "10001"],
        'X' => ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
        'Y' => ["10001", "10001", "01010", "00100", "00100", "00100", "00100"],
        'Z' => ["11111", "00001", "00010", "00100", "01000", "10000", "11111"],
        '0' => ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
        '1' => ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
        '2' => ["01110", "10001", "00001", "00110", "01000", "10000", "11111"],
        '3' => ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
        '4' => ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
        '5' => ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
        '6' => ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
        '7' => ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
        '8' => ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
        '9' => ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
        '.' => ["00000", "00000", "00000", "00000", "00000", "01100", "01100"],
        ',' => ["00000", "00000", "00000", "00000", "01100", "00100", "01000"],
        '-' => ["00000", "00000", "00000", "11111", "00000", "00000", "00000"],
        _ => unreachable!("base_rows called outside the alphabet"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_font_covers_the_alphabet() {
        let atlas = GlyphAtlas::default_atlas();
        for &f in atlas.fonts() {
            for c in ALPHABET.chars() {
                let b = atlas.glyph_bitmap(c, f).unwrap();
                assert_eq!(b.dim(), (CELL_H, CELL_W));
                assert!(b.iter().any(|&v| v == 1), "glyph {c:?} font {f} is blank");
            }
        }
    }

    #[test]
    fn space_is_blank_in_every_font() {
        let atlas = GlyphAtlas::default_atlas();
        for &f in atlas.fonts() {
            assert!(atlas.glyph_bitmap(' ', f).unwrap().iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn within_font_bitmaps_pairwise_distinct() {
        let atlas = GlyphAtlas::default_atlas();
        let chars: Vec<char> = ALPHABET.chars().collect();
        for &f in atlas.fonts() {
            for i in 0..chars.len() {
                for j in i + 1..chars.len() {
                    let a = atlas.glyph_bitmap(chars[i], f).unwrap();
                    let b = atlas.glyph_bitmap(chars[j], f).unwrap();
                    assert_ne!(a, b, "font {f}: {:?} == {:?}", chars[i], chars[j]);
                }
            }
        }
    }

    #[test]
    fn across_fonts_same_char_differs_in_at_least_one_percent_of_pixels() {
        let atlas = GlyphAtlas::default_atlas();
        let min_diff = (CELL_H * CELL_W).div_ceil(100);
        for c in ALPHABET.chars() {
            for fa in 0..3usize {
                for fb in fa + 1..3 {
                    let a = atlas.glyph_bitmap(c, fa).unwrap();
                    let b = atlas.glyph_bitmap(c, fb).unwrap();
                    let diff = a.iter().zip(b.iter()).filter(|(x, y)| x != y).count();
                    assert!(
                        diff >= min_diff,
                        "char {c:?} fonts {fa}/{fb} differ in {diff} px"
                    );
                }
            }
        }
    }

    #[test]
    fn unknown_char_and_font_are_input_errors() {
        let atlas = GlyphAtlas::default_atlas();
        let e = atlas.glyph_bitmap('a', 0).unwrap_err();
        assert!(e.to_string().contains("'a'"));
        let e = atlas.glyph_bitmap('A', 9).unwrap_err();
        assert!(e.to_string().contains('9'));
    }
}
