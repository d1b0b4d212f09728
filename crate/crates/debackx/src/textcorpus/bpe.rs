//! Byte-pair encoding over the glyph alphabet plus space.
//!
//! Merges are learned per text (pairs never span two corpus entries),
//! ties in pair frequency break lexicographically, so training is
//! deterministic for a given corpus order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textcorpus::{charset_contains, ParallelPair, ALPHABET};

pub const PAD_TOKEN: &str = "<PAD>";
pub const BOS_TOKEN: &str = "<BOS>";
pub const EOS_TOKEN: &str = "<EOS>";

/// A trained BPE model with a joint source/target vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    vocab: BTreeMap<String, u32>,
    inv_vocab: Vec<String>,
    merge_rank: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn pad_id(&self) -> u32 {
        self.vocab[PAD_TOKEN]
    }

    pub fn bos_id(&self) -> u32 {
        self.vocab[BOS_TOKEN]
    }

    pub fn eos_id(&self) -> u32 {
        self.vocab[EOS_TOKEN]
    }

    pub fn vocab_size(&self) -> usize {
        self.inv_vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Encode a string into token ids (no BOS/EOS added).
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        for c in text.chars() {
            if !charset_contains(c) {
                return Err(Error::Input(format!("character {c:?} outside the alphabet")));
            }
        }
        let mut symbols: Vec<String> = text.chars().map(|c| c.to_string()).collect();
        loop {
            // Merge the lowest-ranked pair present anywhere in the sequence.
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..symbols.len().saturating_sub(1) {
                let key = (symbols[i].clone(), symbols[i + 1].clone());
                if let Some(&rank) = self.merge_rank.get(&key) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (l, r) = self.merges[rank].clone();
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    out.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    out.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = out;
        }
        symbols
            .iter()
            .map(|s| {
                self.vocab
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Input(format!("token {s:?} missing from vocabulary")))
            })
            .collect()
    }

    /// Decode token ids back into a string. Special tokens decode to nothing.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self
                .inv_vocab
                .get(id as usize)
                .ok_or_else(|| Error::Input(format!("token id {id} out of range")))?;
            if tok != PAD_TOKEN && tok != BOS_TOKEN && tok != EOS_TOKEN {
                out.push_str(tok);
            }
        }
        Ok(out)
    }

    /// Persist: a merge-count header, one merge per line, then `token<TAB>id`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "merges\t{}", self.merges.len()).unwrap();
        for (l, r) in &self.merges {
            writeln!(s, "{l}\t{r}").unwrap();
        }
        for (tok, id) in &self.vocab {
            writeln!(s, "{tok}\t{id}").unwrap();
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BpeModel> {
        let body = std::fs::read_to_string(path)?;
        let mut lines = body.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Input("empty BPE model file".into()))?;
        let n: usize = header
            .strip_prefix("merges\t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Input("bad BPE model header".into()))?;
        let mut merges = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Input("truncated BPE merge list".into()))?;
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| Error::Input("bad merge line".into()))?;
            merges.push((l.to_string(), r.to_string()));
        }
        let mut vocab = BTreeMap::new();
        for line in lines {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Input("bad vocab line".into()))?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Input("bad vocab id".into()))?;
            vocab.insert(tok.to_string(), id);
        }
        BpeModel::assemble(merges, vocab)
    }

    fn assemble(merges: Vec<(String, String)>, vocab: BTreeMap<String, u32>) -> Result<BpeModel> {
        let mut inv_vocab = vec![String::new(); vocab.len()];
        for (tok, &id) in &vocab {
            let slot = inv_vocab
                .get_mut(id as usize)
                .ok_or_else(|| Error::Input(format!("vocab id {id} out of range")))?;
            *slot = tok.clone();
        }
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, (l, r))| ((l.clone(), r.clone()), i))
            .collect();
        Ok(BpeModel {
            merges,
            vocab,
            inv_vocab,
            merge_rank,
        })
    }
}

/// Train a joint BPE model on all source and target texts.
pub fn train_bpe(corpus: &[ParallelPair], merge_count: usize) -> Result<BpeModel> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot train BPE on an empty corpus".into()));
    }
    let mut texts: Vec<Vec<String>> = Vec::with_capacity(corpus.len() * 2);
    for pair in corpus {
        for text in [&pair.src_text, &pair.tgt_text] {
            for c in text.chars() {
                if !charset_contains(c) {
                    return Err(Error::Input(format!(
                        "pair {}: character {c:?} outside the alphabet",
                        pair.pair_id
                    )));
                }
            }
            texts.push(text.chars().map(|c| c.to_string()).collect());
        }
    }

    let mut merges = Vec::with_capacity(merge_count);
    for _ in 0..merge_count {
        let mut freqs: BTreeMap<(String, String), usize> = BTreeMap::new();
        for t in &texts {
            for w in t.windows(2) {
                *freqs.entry((w[0].clone(), w[1].clone())).or_insert(0) += 1;
            }
        }
        // BTreeMap iterates pairs lexicographically, so a strict > keeps
        // the lexicographically smallest pair among frequency ties.
        let mut best: Option<((String, String), usize)> = None;
        for kv in freqs {
            if best.as_ref().map_or(true, |(_, n)| kv.1 > *n) {
                best = Some(kv);
            }
        }
        let Some(((l, r), _)) = best else { break };
        let joined = format!("{l}{r}");
        for t in texts.iter_mut() {
            let mut out = Vec::with_capacity(t.len());
            let mut i = 0;
            while i < t.len() {
                if i + 1 < t.len() && t[i] == l && t[i + 1] == r {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(t[i].clone());
                    i += 1;
                }
            }
            *t = out;
        }
        merges.push((l, r));
    }

    let mut vocab = BTreeMap::new();
    let mut next_id = 0u32;
    for tok in [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN] {
        vocab.insert(tok.to_string(), next_id);
        next_id += 1;
    }
    vocab.insert(" ".to_string(), next_id);
    next_id += 1;
    for c in ALPHABET.chars() {
        vocab.insert(c.to_string(), next_id);
        next_id += 1;
    }
    for (l, r) in &merges {
        let joined = format!("{l}{r}");
        if !vocab.contains_key(&joined) {
            vocab.insert(joined, next_id);
            next_id += 1;
        }
    }
    BpeModel::assemble(merges, vocab)
}
