//! Deterministic pseudo-parallel corpus: target = word-by-word dictionary
//! image of the source, with adjacent word pairs swapped. Translation is
//! learnable by a model and exactly invertible by tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::textcorpus::ParallelPair;

const SRC_WORDS: [&str; 48] = [
    "THE", "DOG", "CAT", "BIRD", "FISH", "MAN", "WOMAN", "CHILD", "HOUSE", "GARDEN", "STREET",
    "CITY", "WATER", "BREAD", "MILK", "BOOK", "SONG", "GAME", "RED", "BLUE", "GREEN", "OLD",
    "YOUNG", "BIG", "SMALL", "FAST", "SLOW", "RUNS", "SLEEPS", "EATS", "DRINKS", "SEES", "READS",
    "SINGS", "PLAYS", "WORKS", "TODAY", "NOW", "HERE", "MORNING", "EVENING", "HAPPY", "TIRED",
    "QUIET", "LOUD", "TWO", "THREE", "FOUR",
];

const TGT_WORDS: [&str; 48] = [
    "DAS", "HUND", "KATZE", "VOGEL", "FISCH", "MANN", "FRAU", "KIND", "HAUS", "GARTEN", "STRASSE",
    "STADT", "WASSER", "BROT", "MILCH", "BUCH", "LIED", "SPIEL", "ROT", "BLAU", "GRUEN", "ALT",
    "JUNG", "GROSS", "KLEIN", "SCHNELL", "LANGSAM", "LAEUFT", "SCHLAEFT", "ISST", "TRINKT",
    "SIEHT", "LIEST", "SINGT", "SPIELT", "ARBEITET", "HEUTE", "JETZT", "HIER", "MORGEN", "ABEND",
    "FROH", "MUEDE", "LEISE", "LAUT", "ZWEI", "DREI", "VIER",
];

fn map_word(w: &str) -> Option<&'static str> {
    SRC_WORDS
        .iter()
        .position(|&s| s == w)
        .map(|i| TGT_WORDS[i])
}

fn unmap_word(w: &str) -> Option<&'static str> {
    TGT_WORDS
        .iter()
        .position(|&t| t == w)
        .map(|i| SRC_WORDS[i])
}

/// Swap adjacent word pairs; an odd trailing word stays put. Involutive.
fn swap_adjacent(words: &mut [&str]) {
    for chunk in words.chunks_mut(2) {
        if chunk.len() == 2 {
            chunk.swap(0, 1);
        }
    }
}

/// Generate `count` pseudo-parallel pairs, deterministic in `seed`.
pub fn generate_pseudo_corpus(seed: u64, count: usize, max_words: usize) -> Result<Vec<ParallelPair>> {
    if count == 0 || max_words == 0 {
        return Err(Error::Config(
            "pseudo corpus needs count >= 1 and max_words >= 1".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    for pair_id in 0..count as u64 {
        let len = rng.gen_range(1..=max_words);
        let src: Vec<&str> = (0..len)
            .map(|_| SRC_WORDS[rng.gen_range(0..SRC_WORDS.len())])
            .collect();
        let mut tgt: Vec<&str> = src.iter().map(|w| map_word(w).unwrap()).collect();
        swap_adjacent(&mut tgt);
        pairs.push(ParallelPair {
            src_text: src.join(" "),
            tgt_text: tgt.join(" "),
            pair_id,
        });
    }
    Ok(pairs)
}

/// Recover the source text from a generated target text (test oracle).
pub fn invert_pseudo_translation(tgt_text: &str) -> Result<String> {
    let mut words: Vec<&str> = tgt_text.split(' ').collect();
    swap_adjacent(&mut words);
    let src: Option<Vec<&str>> = words.iter().map(|w| unmap_word(w)).collect();
    src.map(|v| v.join(" "))
        .ok_or_else(|| Error::Input(format!("word outside the pseudo dictionary in {tgt_text:?}")))
}
