//! Stage-2 image translation: Code Encoder, Pivot Decoder with the TIT
//! auxiliary text task, Linear Adapter, Code Decoder; two-phase greedy
//! autoregressive inference (text first, then codes).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::checkpoint::{load_checkpoint, save_checkpoint};
use crate::neural::graph::{Graph, NodeId};
use crate::neural::optim::{adamw_step, AdamState, AdamWConfig};
use crate::neural::params::{Init, ParamStore};
use crate::neural::transformer::{Decoder, Encoder, Linear, TransformerConfig};

pub const LABEL_SMOOTHING: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslatorConfig {
    /// Codebook size V; the BOS code id is V itself.
    pub codebook_size: usize,
    /// Code sequence length N (fixed by the patch grid).
    pub code_len: usize,
    /// BPE vocabulary size (includes PAD/BOS/EOS).
    pub text_vocab: usize,
    pub max_text_len: usize,
    /// Code Encoder + Pivot Decoder width (the "small" side).
    pub small: TransformerConfig,
    /// Code Decoder width (the "large" side).
    pub large: TransformerConfig,
    /// Ablation: without the pivot, the code decoder attends directly to
    /// the adapted encoder states and no text stream exists.
    pub use_pivot: bool,
}

impl TranslatorConfig {
    fn bos_code(&self) -> usize {
        self.codebook_size
    }

    pub fn validate(&self) -> Result<()> {
        self.small.validate()?;
        self.large.validate()?;
        if self.small.max_positions < self.code_len.max(self.max_text_len + 1) {
            return Err(Error::Config(
                "small max_positions below code/text lengths".into(),
            ));
        }
        if self.large.max_positions < self.code_len {
            return Err(Error::Config("large max_positions below code length".into()));
        }
        Ok(())
    }
}

/// One teacher-forcing example.
#[derive(Debug, Clone)]
pub struct TranslationBatch {
    pub src_codes: Vec<u32>,
    pub tgt_codes: Vec<u32>,
    /// BOS-prefixed decoder input; label is this shifted left + EOS.
    /// PAD-padded to a common length by the caller if batching.
    pub tgt_text: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub tgt_codes: Vec<u32>,
    pub pivot_text: Vec<u32>,
    /// Phase 1 hit max_text_len without producing EOS.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TranslationLoss {
    pub tit: f64,
    pub code: f64,
    pub total: f64,
}

pub struct Translator {
    pub config: TranslatorConfig,
    pub store: ParamStore,
    code_embedding: usize,
    text_embedding: usize,
    enc_in: Linear,
    dec_in: Linear,
    code_encoder: Encoder,
    pivot_decoder: Decoder,
    text_head: Linear,
    adapter: Linear,
    code_decoder: Decoder,
    code_head: Linear,
}

impl Translator {
    pub fn new(config: TranslatorConfig, seed: u64) -> Result<Translator> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let d_s = config.small.d_model;
        let d_l = config.large.d_model;
        // One shared code table (V+1 rows: image codes plus BOS), bridged
        // to each side's width by a linear projection.
        let code_embedding = store.add(
            "code_embedding",
            init.embedding(config.codebook_size + 1, d_s),
        );
        let text_embedding = store.add("text_embedding", init.embedding(config.text_vocab, d_s));
        let enc_in = Linear::new(&mut store, &mut init, "enc_in", d_s, d_s);
        let dec_in = Linear::new(&mut store, &mut init, "dec_in", d_s, d_l);
        let code_encoder = Encoder::new(&mut store, &mut init, "code_encoder", config.small);
        let pivot_decoder = Decoder::new(&mut store, &mut init, "pivot_decoder", config.small);
        let text_head = Linear::new(&mut store, &mut init, "text_head", d_s, config.text_vocab);
        let adapter = Linear::new(&mut store, &mut init, "adapter", d_s, d_l);
        let code_decoder = Decoder::new(&mut store, &mut init, "code_decoder", config.large);
        let code_head = Linear::new(&mut store, &mut init, "code_head", d_l, config.codebook_size);
        Ok(Translator {
            config,
            store,
            code_embedding,
            text_embedding,
            enc_in,
            dec_in,
            code_encoder,
            pivot_decoder,
            text_head,
            adapter,
            code_decoder,
            code_head,
        })
    }

    fn check_codes(&self, codes: &[u32], what: &str) -> Result<()> {
        if codes.len() != self.config.code_len {
            return Err(Error::Input(format!(
                "{what} length {} does not match N = {}",
                codes.len(),
                self.config.code_len
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| (c as usize) >= self.config.codebook_size) {
            return Err(Error::Input(format!("{what} contains out-of-range code {bad}")));
        }
        Ok(())
    }

    fn embed_codes(&self, g: &mut Graph, codes: &[usize]) -> NodeId {
        let table = g.param(self.code_embedding);
        g.gather(table, codes)
    }

    /// H^E_code = CodeEncoder(embed(src_codes)).
    fn encode_src(
        &self,
        g: &mut Graph,
        src_codes: &[u32],
        rng: &mut Option<&mut rand_chacha::ChaCha20Rng>,
    ) -> Result<NodeId> {
        let ids: Vec<usize> = src_codes.iter().map(|&c| c as usize).collect();
        let emb = self.embed_codes(g, &ids);
        let emb = self.enc_in.apply(g, emb);
        self.code_encoder.encode(g, emb, rng.as_deref_mut())
    }

    /// Pivot states for a text prefix (BOS-prefixed token ids).
    fn pivot_states(
        &self,
        g: &mut Graph,
        text_in: &[u32],
        memory: NodeId,
        rng: &mut Option<&mut rand_chacha::ChaCha20Rng>,
    ) -> Result<NodeId> {
        let table = g.param(self.text_embedding);
        let ids: Vec<usize> = text_in.iter().map(|&t| t as usize).collect();
        let emb = g.gather(table, &ids);
        self.pivot_decoder.decode(g, emb, memory, rng.as_deref_mut())
    }

    /// Code-decoder logits given the (adapted) conditioning memory and a
    /// BOS-prefixed code prefix.
    fn code_logits(
        &self,
        g: &mut Graph,
        code_in: &[usize],
        memory: NodeId,
        rng: &mut Option<&mut rand_chacha::ChaCha20Rng>,
    ) -> Result<NodeId> {
        let emb = self.embed_codes(g, code_in);
        let emb = self.dec_in.apply(g, emb);
        let h = self.code_decoder.decode(g, emb, memory, rng.as_deref_mut())?;
        Ok(self.code_head.apply(g, h))
    }

    /// Teacher-forced forward pass. Returns (text_logits, code_logits)
    /// node ids; text_logits is `None` when `use_pivot` is off.
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &TranslationBatch,
        mut rng: Option<&mut rand_chacha::ChaCha20Rng>,
    ) -> Result<(Option<NodeId>, NodeId)> {
        self.check_codes(&batch.src_codes, "src_codes")?;
        self.check_codes(&batch.tgt_codes, "tgt_codes")?;
        if self.config.use_pivot && batch.tgt_text.len() > self.config.max_text_len + 1 {
            return Err(Error::Input(format!(
                "text length {} exceeds max_text_len {}",
                batch.tgt_text.len(),
                self.config.max_text_len
            )));
        }
        let h_code = self.encode_src(g, &batch.src_codes, &mut rng)?;

        // Code-decoder input: BOS code then tgt_codes[..N-1].
        let mut code_in = vec![self.config.bos_code()];
        code_in.extend(batch.tgt_codes[..batch.tgt_codes.len() - 1].iter().map(|&c| c as usize));

        if self.config.use_pivot {
            let h_pivot = self.pivot_states(g, &batch.tgt_text, h_code, &mut rng)?;
            let text_logits = self.text_head.apply(g, h_pivot);
            let h_adapted = self.adapter.apply(g, h_pivot);
            let code_logits = self.code_logits(g, &code_in, h_adapted, &mut rng)?;
            Ok((Some(text_logits), code_logits))
        } else {
            let h_adapted = self.adapter.apply(g, h_code);
            let code_logits = self.code_logits(g, &code_in, h_adapted, &mut rng)?;
            Ok((None, code_logits))
        }
    }

    /// L_trans = L_code + L_TIT, both mean label-smoothed cross-entropy
    /// over non-PAD positions. Returns the loss node plus components.
    pub fn loss(
        &self,
        g: &mut Graph,
        text_logits: Option<NodeId>,
        code_logits: NodeId,
        batch: &TranslationBatch,
        text_labels: &[u32],
        pad_id: u32,
        eps: f64,
    ) -> Result<(NodeId, TranslationLoss)> {
        let l_code = g.ce_loss(code_logits, &batch.tgt_codes, None, eps);
        let (node, tit) = match text_logits {
            Some(tl) => {
                if text_labels.len() != g.value(tl).dim().0 {
                    return Err(Error::Input("text label/logit length mismatch".into()));
                }
                let l_tit = g.ce_loss(tl, text_labels, Some(pad_id), eps);
                (g.add(l_code, l_tit), g.scalar(l_tit))
            }
            None => (l_code, 0.0),
        };
        let report = TranslationLoss {
            tit,
            code: g.scalar(l_code),
            total: g.scalar(node),
        };
        Ok((node, report))
    }

    /// Loss and parameter gradients on one teacher-forcing example,
    /// without touching the parameters.
    pub fn loss_grads(
        &self,
        batch: &TranslationBatch,
        pad_id: u32,
        eos_id: u32,
        mut rng: Option<&mut rand_chacha::ChaCha20Rng>,
    ) -> Result<(TranslationLoss, Vec<ndarray::Array2<f64>>)> {
        if self.config.small.dropout_rate == 0.0 {
            rng = None;
        }
        // Labels: the BOS-prefixed input shifted left, EOS-terminated.
        let mut labels: Vec<u32> = batch.tgt_text[1..].to_vec();
        labels.push(eos_id);
        let mut g = Graph::new(&self.store);
        let (tl, cl) = self.forward(&mut g, batch, rng)?;
        let (node, report) = self.loss(&mut g, tl, cl, batch, &labels, pad_id, LABEL_SMOOTHING)?;
        let v = g.scalar(node);
        if !v.is_finite() {
            return Err(Error::Numerical(format!("translation loss {v}")));
        }
        Ok((report, g.backward(node).into_param_grads(&self.store)))
    }

    /// One AdamW step on a single example.
    pub fn train_step(
        &mut self,
        batch: &TranslationBatch,
        pad_id: u32,
        eos_id: u32,
        opt: &mut AdamState,
        opt_cfg: &AdamWConfig,
        lr: f64,
        rng: &mut rand_chacha::ChaCha20Rng,
    ) -> Result<TranslationLoss> {
        let (report, grads) = self.loss_grads(batch, pad_id, eos_id, Some(rng))?;
        adamw_step(&mut self.store, &grads, opt, lr, opt_cfg)?;
        Ok(report)
    }

    /// Two-phase greedy inference: decode the pivot text to completion,
    /// then decode exactly N target codes conditioned on the adapted
    /// pivot states (which include the position that produced EOS).
    pub fn translate_codes(&self, src_codes: &[u32], bos_id: u32, eos_id: u32) -> Result<DecodeResult> {
        self.check_codes(src_codes, "src_codes")?;
        let mut rng_none: Option<&mut rand_chacha::ChaCha20Rng> = None;

        // Phase 1: greedy text decode (skipped without the pivot).
        let mut text: Vec<u32> = vec![bos_id];
        let mut truncated = false;
        if self.config.use_pivot {
            loop {
                let mut g = Graph::new(&self.store);
                let h_code = self.encode_src(&mut g, src_codes, &mut rng_none)?;
                let h = self.pivot_states(&mut g, &text, h_code, &mut rng_none)?;
                let logits = self.text_head.apply(&mut g, h);
                let row = g.value(logits).row(text.len() - 1).to_owned();
                let next = argmax(row.as_slice().unwrap());
                text.push(next as u32);
                if next as u32 == eos_id {
                    break;
                }
                if text.len() - 1 >= self.config.max_text_len {
                    truncated = true;
                    break;
                }
            }
        }

        // Phase 2: greedy code decode, exactly N steps. The pivot states
        // are recomputed once over the finished text.
        let mut codes: Vec<u32> = Vec::with_capacity(self.config.code_len);
        for _step in 0..self.config.code_len {
            let mut g = Graph::new(&self.store);
            let h_code = self.encode_src(&mut g, src_codes, &mut rng_none)?;
            let memory = if self.config.use_pivot {
                let h_pivot = self.pivot_states(&mut g, &text, h_code, &mut rng_none)?;
                self.adapter.apply(&mut g, h_pivot)
            } else {
                self.adapter.apply(&mut g, h_code)
            };
            let mut code_in = vec![self.config.bos_code()];
            code_in.extend(codes.iter().map(|&c| c as usize));
            let logits = self.code_logits(&mut g, &code_in, memory, &mut rng_none)?;
            let row = g.value(logits).row(code_in.len() - 1).to_owned();
            codes.push(argmax(row.as_slice().unwrap()) as u32);
        }

        let pivot_text = if self.config.use_pivot { text } else { Vec::new() };
        Ok(DecodeResult {
            tgt_codes: codes,
            pivot_text,
            truncated,
        })
    }

    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        let cfg = serde_json::to_value(&self.config)?;
        save_checkpoint(dir, "translator", &self.store, &cfg, step)
    }

    pub fn load(dir: &Path) -> Result<(Translator, u64)> {
        let (store, meta) = load_checkpoint(dir)?;
        if meta.component != "translator" {
            return Err(Error::Dependency(format!(
                "expected a translator checkpoint, found {:?}",
                meta.component
            )));
        }
        let config: TranslatorConfig = serde_json::from_value(meta.config)?;
        let mut model = Translator::new(config, 0)?;
        model.store.copy_from(&store)?;
        Ok((model, meta.step))
    }
}

/// First index of the maximum (deterministic tie-break).
fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_config(use_pivot: bool) -> TranslatorConfig {
        TranslatorConfig {
            codebook_size: 8,
            code_len: 6,
            text_vocab: 12,
            max_text_len: 8,
            small: TransformerConfig {
                d_model: 16,
                layer_count: 1,
                head_count: 2,
                d_ff: 24,
                dropout_rate: 0.0,
                max_positions: 16,
            },
            large: TransformerConfig {
                d_model: 24,
                layer_count: 1,
                head_count: 2,
                d_ff: 32,
                dropout_rate: 0.0,
                max_positions: 16,
            },
            use_pivot,
        }
    }

    fn toy_batch() -> TranslationBatch {
        TranslationBatch {
            src_codes: vec![1, 2, 3, 4, 5, 6],
            tgt_codes: vec![6, 5, 4, 3, 2, 1],
            tgt_text: vec![1, 4, 5, 6], // BOS, then 3 tokens
        }
    }

    #[test]
    fn forward_shapes() {
        let t = Translator::new(toy_config(true), 1).unwrap();
        let mut g = Graph::new(&t.store);
        let (tl, cl) = t.forward(&mut g, &toy_batch(), None).unwrap();
        assert_eq!(g.value(tl.unwrap()).dim(), (4, 12));
        assert_eq!(g.value(cl).dim(), (6, 8));
    }

    #[test]
    fn code_causality_under_teacher_forcing() {
        let t = Translator::new(toy_config(true), 2).unwrap();
        let batch = toy_batch();
        let mut edited = batch.clone();
        edited.tgt_codes[4] = 7;
        let logits = |b: &TranslationBatch| {
            let mut g = Graph::new(&t.store);
            let (_, cl) = t.forward(&mut g, b, None).unwrap();
            g.value(cl).clone()
        };
        let a = logits(&batch);
        let b = logits(&edited);
        // Positions 0..=4 see inputs BOS..tgt_codes[3], unchanged by the
        // edit at input slot 5 (= tgt_codes[4]).
        for r in 0..5 {
            assert_eq!(a.row(r), b.row(r), "row {r} changed");
        }
        assert_ne!(a.row(5), b.row(5));
    }

    #[test]
    fn text_edit_changes_code_logits() {
        let t = Translator::new(toy_config(true), 3).unwrap();
        let batch = toy_batch();
        let mut edited = batch.clone();
        edited.tgt_text[2] = 9;
        let logits = |b: &TranslationBatch| {
            let mut g = Graph::new(&t.store);
            let (_, cl) = t.forward(&mut g, b, None).unwrap();
            g.value(cl).clone()
        };
        let diff: f64 = (&logits(&batch) - &logits(&edited))
            .iter()
            .map(|v| v.abs())
            .sum();
        assert!(diff > 1e-9, "codes do not condition on the pivot text");
    }

    #[test]
    fn loss_is_additive_and_matches_plain_ce_at_eps_zero() {
        let t = Translator::new(toy_config(true), 4).unwrap();
        let batch = toy_batch();
        let labels = vec![4u32, 5, 6, 2];
        let mut g = Graph::new(&t.store);
        let (tl, cl) = t.forward(&mut g, &batch, None).unwrap();
        let (_, rep) = t.loss(&mut g, tl, cl, &batch, &labels, 0, 0.1).unwrap();
        assert!((rep.total - (rep.tit + rep.code)).abs() < 1e-9);

        // eps = 0 equals plain cross-entropy computed independently.
        let (_, rep0) = t.loss(&mut g, tl, cl, &batch, &labels, 0, 0.0).unwrap();
        let logits = g.value(cl).clone();
        let mut manual = 0.0;
        for (r, &y) in batch.tgt_codes.iter().enumerate() {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logz = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            manual -= row[y as usize] - logz;
        }
        manual /= batch.tgt_codes.len() as f64;
        assert!((rep0.code - manual).abs() < 1e-9);
    }

    #[test]
    fn greedy_decode_is_deterministic_and_fixed_length() {
        for use_pivot in [true, false] {
            let t = Translator::new(toy_config(use_pivot), 5).unwrap();
            let src = vec![0u32, 1, 2, 3, 4, 5];
            let a = t.translate_codes(&src, 1, 2).unwrap();
            let b = t.translate_codes(&src, 1, 2).unwrap();
            assert_eq!(a.tgt_codes, b.tgt_codes);
            assert_eq!(a.pivot_text, b.pivot_text);
            assert_eq!(a.tgt_codes.len(), 6);
            if !use_pivot {
                assert!(a.pivot_text.is_empty());
            }
        }
    }

    #[test]
    fn overfit_one_pair_reproduces_codes_exactly() {
        let mut t = Translator::new(toy_config(true), 6).unwrap();
        let batch = toy_batch();
        let mut opt = AdamState::new(&t.store);
        let opt_cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for step in 1..=300 {
            let lr = crate::neural::optim::lr_at(step, 40, 16).unwrap() * 4.0;
            t.train_step(&batch, 0, 2, &mut opt, &opt_cfg, lr, &mut rng).unwrap();
        }
        let out = t.translate_codes(&batch.src_codes, 1, 2).unwrap();
        assert_eq!(out.tgt_codes, batch.tgt_codes, "codes not memorized");
        // Pivot text reproduces the training text (BOS ... EOS).
        let mut expected = batch.tgt_text.clone();
        expected.push(2);
        assert_eq!(out.pivot_text, expected, "pivot text not memorized");
        assert!(!out.truncated);
    }

    #[test]
    fn bad_lengths_are_input_errors() {
        let t = Translator::new(toy_config(true), 7).unwrap();
        let mut batch = toy_batch();
        batch.src_codes.pop();
        let mut g = Graph::new(&t.store);
        assert!(matches!(
            t.forward(&mut g, &batch, None),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            t.translate_codes(&[0, 1], 1, 2),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            t.translate_codes(&[99, 1, 2, 3, 4, 5], 1, 2),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = Translator::new(toy_config(true), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("tr");
        t.save(&ck, 5).unwrap();
        let (loaded, step) = Translator::load(&ck).unwrap();
        assert_eq!(step, 5);
        let src = vec![0u32, 1, 2, 3, 4, 5];
        assert_eq!(
            t.translate_codes(&src, 1, 2).unwrap().tgt_codes,
            loaded.translate_codes(&src, 1, 2).unwrap().tgt_codes
        );
    }
}
