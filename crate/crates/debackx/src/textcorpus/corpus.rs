//! Parallel pairs and the tab-separated corpus file format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::textcorpus::charset_contains;

/// One sentence pair of the parallel corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub src_text: String,
    pub tgt_text: String,
    pub pair_id: u64,
}

impl ParallelPair {
    pub fn new(src_text: &str, tgt_text: &str, pair_id: u64) -> Result<ParallelPair> {
        if src_text.is_empty() || tgt_text.is_empty() {
            return Err(Error::Input(format!("pair {pair_id}: empty text")));
        }
        for text in [src_text, tgt_text] {
            for c in text.chars() {
                if !charset_contains(c) {
                    return Err(Error::Input(format!(
                        "pair {pair_id}: character {c:?} outside the alphabet"
                    )));
                }
            }
        }
        Ok(ParallelPair {
            src_text: src_text.to_string(),
            tgt_text: tgt_text.to_string(),
            pair_id,
        })
    }
}

/// Load a corpus file: one pair per line, `source<TAB>target`.
pub fn load_corpus(path: &Path) -> Result<Vec<ParallelPair>> {
    let body = std::fs::read_to_string(path)?;
    parse_corpus(&body)
}

pub fn save_corpus(pairs: &[ParallelPair], path: &Path) -> Result<()> {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&p.src_text);
        s.push('\t');
        s.push_str(&p.tgt_text);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn parse_corpus(body: &str) -> Result<Vec<ParallelPair>> {
    let mut pairs = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| Error::Input(format!("corpus line {}: missing tab", i + 1)))?;
        pairs.push(ParallelPair::new(src, tgt, pairs.len() as u64)?);
    }
    if pairs.is_empty() {
        return Err(Error::Config("corpus file contains no pairs".into()));
    }
    Ok(pairs)
}

/// The 200-pair corpus shipped with the crate.
pub fn embedded_corpus() -> Vec<ParallelPair> {
    parse_corpus(include_str!("../../assets/corpus.tsv")).expect("embedded corpus is well-formed")
}
