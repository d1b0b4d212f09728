//! Plain-text assets: parallel corpus, BPE tokenization, and the
//! procedural glyph atlas used for rendering and the OCR oracle.

mod atlas;
mod bpe;
mod corpus;
mod pseudo;

pub use atlas::GlyphAtlas;
pub use bpe::{train_bpe, BpeModel};
pub use corpus::{embedded_corpus, load_corpus, save_corpus, ParallelPair};
pub use pseudo::{generate_pseudo_corpus, invert_pseudo_translation};

/// The 39-symbol glyph alphabet. Space is not a glyph; it renders blank.
pub const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,-";

/// Characters allowed in corpus texts: the alphabet plus space.
pub fn charset_contains(c: char) -> bool {
    c == ' ' || ALPHABET.contains(c)
}
