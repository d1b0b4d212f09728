//! Pre-norm transformer encoder and decoder stacks. The decoder follows
//! the Decoder(Q, K, V) convention: the target sequence is Q, the memory
//! supplies K and V in cross-attention.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::graph::{Graph, NodeId};
use crate::neural::params::{Init, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub layer_count: usize,
    pub head_count: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub max_positions: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % self.head_count != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by head_count {}",
                self.d_model, self.head_count
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// A linear layer's parameter ids.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear {
            w: store.add(&format!("{name}.w"), init.linear(d_in, d_out)),
            b: store.add(&format!("{name}.b"), Init::zeros(1, d_out)),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gamma: store.add(&format!("{name}.gamma"), Init::ones(1, d)),
            beta: store.add(&format!("{name}.beta"), Init::zeros(1, d)),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone)]
struct SelfAttn {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln: LayerNorm,
}

impl SelfAttn {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize) -> SelfAttn {
        SelfAttn {
            wq: Linear::new(store, init, &format!("{name}.wq"), d, d),
            wk: Linear::new(store, init, &format!("{name}.wk"), d, d),
            wv: Linear::new(store, init, &format!("{name}.wv"), d, d),
            wo: Linear::new(store, init, &format!("{name}.wo"), d, d),
            ln: LayerNorm::new(store, &format!("{name}.ln"), d),
        }
    }

    /// Pre-norm residual attention. For self-attention `kv == x`; for
    /// cross-attention `kv` is the (un-normed) memory.
    fn apply(
        &self,
        g: &mut Graph,
        x: NodeId,
        kv: NodeId,
        heads: usize,
        causal: bool,
        dropout: f64,
        rng: &mut Option<&mut ChaCha20Rng>,
    ) -> NodeId {
        let xn = self.ln.apply(g, x);
        let q = self.wq.apply(g, xn);
        let k = self.wk.apply(g, kv);
        let v = self.wv.apply(g, kv);
        let a = g.attention(q, k, v, heads, causal);
        let o = self.wo.apply(g, a);
        let o = g.dropout(o, dropout, rng.as_deref_mut());
        g.add(x, o)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    ff1: Linear,
    ff2: Linear,
    ln: LayerNorm,
}

impl FeedForward {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward {
            ff1: Linear::new(store, init, &format!("{name}.ff1"), d, d_ff),
            ff2: Linear::new(store, init, &format!("{name}.ff2"), d_ff, d),
            ln: LayerNorm::new(store, &format!("{name}.ln"), d),
        }
    }

    fn apply(
        &self,
        g: &mut Graph,
        x: NodeId,
        dropout: f64,
        rng: &mut Option<&mut ChaCha20Rng>,
    ) -> NodeId {
        let xn = self.ln.apply(g, x);
        let h = self.ff1.apply(g, xn);
        let h = g.gelu(h);
        let h = self.ff2.apply(g, h);
        let h = g.dropout(h, dropout, rng.as_deref_mut());
        g.add(x, h)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: SelfAttn,
    ff: FeedForward,
}

/// Encoder stack over already-embedded `T x d_model` inputs. Adds
/// learnable position vectors, then `layer_count` pre-norm blocks, then a
/// final layer norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: TransformerConfig,
    pos: usize,
    layers: Vec<EncoderLayer>,
    ln_f: LayerNorm,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: TransformerConfig) -> Encoder {
        let pos = store.add(
            &format!("{name}.pos"),
            init.embedding(cfg.max_positions, cfg.d_model),
        );
        let layers = (0..cfg.layer_count)
            .map(|i| EncoderLayer {
                attn: SelfAttn::new(store, init, &format!("{name}.layer{i}.attn"), cfg.d_model),
                ff: FeedForward::new(store, init, &format!("{name}.layer{i}.ff"), cfg.d_model, cfg.d_ff),
            })
            .collect();
        let ln_f = LayerNorm::new(store, &format!("{name}.ln_f"), cfg.d_model);
        Encoder {
            cfg,
            pos,
            layers,
            ln_f,
        }
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        x: NodeId,
        mut rng: Option<&mut ChaCha20Rng>,
    ) -> Result<NodeId> {
        let t = g.value(x).dim().0;
        if t > self.cfg.max_positions {
            return Err(Error::Input(format!(
                "sequence length {t} exceeds max_positions {}",
                self.cfg.max_positions
            )));
        }
        let pos_table = g.param(self.pos);
        let ids: Vec<usize> = (0..t).collect();
        let pos = g.gather(pos_table, &ids);
        let mut h = g.add(x, pos);
        h = g.dropout(h, self.cfg.dropout_rate, rng.as_deref_mut());
        for layer in &self.layers {
            h = layer.attn.apply(
                g,
                h,
                h,
                self.cfg.head_count,
                false,
                self.cfg.dropout_rate,
                &mut rng,
            );
            h = layer.ff.apply(g, h, self.cfg.dropout_rate, &mut rng);
        }
        Ok(self.ln_f.apply(g, h))
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: SelfAttn,
    cross_attn: SelfAttn,
    ff: FeedForward,
}

/// Decoder stack: causal self-attention over the target, cross-attention
/// with the memory as K/V, feed-forward; all pre-norm with a final norm.
#[derive(Debug, Clone)]
pub struct Decoder {
    cfg: TransformerConfig,
    pos: usize,
    layers: Vec<DecoderLayer>,
    ln_f: LayerNorm,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: TransformerConfig) -> Decoder {
        let pos = store.add(
            &format!("{name}.pos"),
            init.embedding(cfg.max_positions, cfg.d_model),
        );
        let layers = (0..cfg.layer_count)
            .map(|i| DecoderLayer {
                self_attn: SelfAttn::new(store, init, &format!("{name}.layer{i}.self"), cfg.d_model),
                cross_attn: SelfAttn::new(store, init, &format!("{name}.layer{i}.cross"), cfg.d_model),
                ff: FeedForward::new(store, init, &format!("{name}.layer{i}.ff"), cfg.d_model, cfg.d_ff),
            })
            .collect();
        let ln_f = LayerNorm::new(store, &format!("{name}.ln_f"), cfg.d_model);
        Decoder {
            cfg,
            pos,
            layers,
            ln_f,
        }
    }

    pub fn decode(
        &self,
        g: &mut Graph,
        tgt: NodeId,
        memory: NodeId,
        mut rng: Option<&mut ChaCha20Rng>,
    ) -> Result<NodeId> {
        let t = g.value(tgt).dim().0;
        if t > self.cfg.max_positions {
            return Err(Error::Input(format!(
                "target length {t} exceeds max_positions {}",
                self.cfg.max_positions
            )));
        }
        if g.value(memory).dim().0 == 0 {
            return Err(Error::Input("cross-attention memory is empty".into()));
        }
        let pos_table = g.param(self.pos);
        let ids: Vec<usize> = (0..t).collect();
        let pos = g.gather(pos_table, &ids);
        let mut h = g.add(tgt, pos);
        h = g.dropout(h, self.cfg.dropout_rate, rng.as_deref_mut());
        for layer in &self.layers {
            h = layer.self_attn.apply(
                g,
                h,
                h,
                self.cfg.head_count,
                true,
                self.cfg.dropout_rate,
                &mut rng,
            );
            h = layer.cross_attn.apply(
                g,
                h,
                memory,
                self.cfg.head_count,
                false,
                self.cfg.dropout_rate,
                &mut rng,
            );
            h = layer.ff.apply(g, h, self.cfg.dropout_rate, &mut rng);
        }
        Ok(self.ln_f.apply(g, h))
    }
}
