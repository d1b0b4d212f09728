//! Corpus BLEU: 4-gram, uniform weights, brevity penalty
//! exp(min(0, 1 - r/c)), whitespace tokenization, reported x100.
//! Zero n-gram counts are smoothed with eps = 1e-9.

use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_N: usize = 4;
const EPS: f64 = 1e-9;

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn ngram_counts<'a>(toks: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    m
}

pub fn corpus_bleu(hypotheses: &[String], references: &[String]) -> Result<f64> {
    if hypotheses.len() != references.len() || hypotheses.is_empty() {
        return Err(Error::Input(format!(
            "corpus_bleu needs equal nonempty lists, got {} vs {}",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; MAX_N];
    let mut total = [0usize; MAX_N];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hypotheses.iter().zip(references.iter()) {
        let ht = tokens(h);
        let rt = tokens(r);
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=MAX_N {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            for (gram, &count) in &hc {
                total[n - 1] += count;
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
        }
    }
    let mut log_precision_sum = 0.0;
    for n in 0..MAX_N {
        let p = if total[n] == 0 {
            EPS
        } else if matched[n] == 0 {
            EPS / total[n] as f64
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_precision_sum += p.ln() / MAX_N as f64;
    }
    let bp = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp()
    };
    Ok(100.0 * bp * log_precision_sum.exp())
}

/// Word error rate: Levenshtein distance over whitespace tokens divided
/// by reference length, averaged over the corpus as total/total.
pub fn corpus_wer(hypotheses: &[String], references: &[String]) -> Result<f64> {
    if hypotheses.len() != references.len() || hypotheses.is_empty() {
        return Err(Error::Input("corpus_wer needs equal nonempty lists".into()));
    }
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hypotheses.iter().zip(references.iter()) {
        let ht = tokens(h);
        let rt = tokens(r);
        edits += levenshtein(&ht, &rt);
        ref_len += rt.len();
    }
    Ok(edits as f64 / ref_len.max(1) as f64)
}

fn levenshtein(a: &[&str], b: &[&str]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, wa) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, wb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(wa != wb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
