//! Stage-1 image tokenizer: ViT encoder, factorized codebook with EMA
//! updates, ViT decoder. Turns text-images into code sequences and back.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::neural::checkpoint::{load_checkpoint, save_checkpoint};
use crate::neural::frozen::FrozenFeatureNet;
use crate::neural::graph::Graph;
use crate::neural::loss::image_loss_graph;
use crate::neural::optim::{adamw_step, AdamState, AdamWConfig};
use crate::neural::params::{Init, ParamStore};
use crate::neural::patch::{image_to_matrix, PatchGrid};
use crate::neural::transformer::{Linear, TransformerConfig};
use crate::neural::vit::{VitDecoder, VitEncoder};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VqConfig {
    pub strip_h: usize,
    pub strip_w: usize,
    pub patch_size: usize,
    pub transformer: TransformerConfig,
    /// Codebook size V.
    pub codebook_size: usize,
    /// Factorized code dimension (paper: 32).
    pub d_code: usize,
    pub gamma: f64,
    pub lambda_p: f64,
    /// Reseed codes unused for 2,000 steps to a random batch feature.
    pub reseed_dead_codes: bool,
}

/// Codebook vectors plus their EMA statistics. Updated only by
/// [`ema_update`], never by the optimizer.
#[derive(Debug, Clone)]
pub struct CodebookState {
    pub vectors: Array2<f64>,
    pub ema_counts: Vec<f64>,
    pub ema_sums: Array2<f64>,
    pub gamma: f64,
    pub eps: f64,
    /// Steps since each code was last assigned (for optional reseeding).
    unused_steps: Vec<u64>,
}

impl CodebookState {
    /// Seeded uniform init in [-1/V, 1/V]^d_code.
    pub fn new(v: usize, d_code: usize, gamma: f64, seed: u64) -> CodebookState {
        let mut init = Init::new(seed ^ 0x636f_6465_626f_6f6b); // "codebook"
        let lim = 1.0 / v as f64;
        let vectors = init.uniform(v, d_code, -lim, lim);
        CodebookState {
            ema_sums: vectors.clone(),
            ema_counts: vec![1.0; v],
            vectors,
            gamma,
            eps: 1e-5,
            unused_steps: vec![0; v],
        }
    }

    pub fn v(&self) -> usize {
        self.vectors.dim().0
    }

    pub fn d_code(&self) -> usize {
        self.vectors.dim().1
    }
}

/// Nearest-vector quantization; ties break to the lowest index.
pub fn quantize(features: &Array2<f64>, book: &CodebookState) -> Result<(Vec<u32>, Array2<f64>)> {
    if !features.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite features in quantize".into()));
    }
    if features.dim().1 != book.d_code() {
        return Err(Error::Input(format!(
            "feature dim {} does not match codebook dim {}",
            features.dim().1,
            book.d_code()
        )));
    }
    let n = features.dim().0;
    let mut codes = Vec::with_capacity(n);
    let mut quantized = Array2::zeros(features.raw_dim());
    for i in 0..n {
        let f = features.row(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for k in 0..book.v() {
            let d: f64 = book
                .vectors
                .row(k)
                .iter()
                .zip(f.iter())
                .map(|(e, x)| (e - x) * (e - x))
                .sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        codes.push(best as u32);
        quantized.row_mut(i).assign(&book.vectors.row(best));
    }
    Ok((codes, quantized))
}

/// EMA codebook update:
/// counts_k <- g*counts_k + (1-g)*n_k; sums_k likewise with feature sums;
/// e_k <- sums_k / max(counts_k, eps).
pub fn ema_update(book: &mut CodebookState, features: &Array2<f64>, codes: &[u32]) {
    let (v, d) = book.vectors.dim();
    let mut n = vec![0.0f64; v];
    let mut s = Array2::zeros((v, d));
    for (i, &k) in codes.iter().enumerate() {
        n[k as usize] += 1.0;
        let mut row = s.row_mut(k as usize);
        row += &features.row(i);
    }
    let g = book.gamma;
    for k in 0..v {
        book.ema_counts[k] = g * book.ema_counts[k] + (1.0 - g) * n[k];
        for c in 0..d {
            book.ema_sums[(k, c)] = g * book.ema_sums[(k, c)] + (1.0 - g) * s[(k, c)];
        }
        let denom = book.ema_counts[k].max(book.eps);
        for c in 0..d {
            book.vectors[(k, c)] = book.ema_sums[(k, c)] / denom;
        }
        book.unused_steps[k] = if n[k] > 0.0 {
            0
        } else {
            book.unused_steps[k] + 1
        };
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VqLossReport {
    pub recon: f64,
    pub perceptual: f64,
    pub commitment: f64,
    pub total: f64,
}

pub struct VqCodec {
    pub config: VqConfig,
    pub grid: PatchGrid,
    pub store: ParamStore,
    pub book: CodebookState,
    encoder: VitEncoder,
    pre_proj: Linear,
    post_proj: Linear,
    decoder: VitDecoder,
}

impl VqCodec {
    pub fn new(config: VqConfig, seed: u64) -> Result<VqCodec> {
        config.transformer.validate()?;
        let grid = PatchGrid::new(config.strip_h, config.strip_w, config.patch_size)?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let cfg = config.transformer;
        let encoder = VitEncoder::new(&mut store, &mut init, "encoder", grid, cfg);
        let pre_proj = Linear::new(&mut store, &mut init, "pre_proj", cfg.d_model, config.d_code);
        let post_proj = Linear::new(&mut store, &mut init, "post_proj", config.d_code, cfg.d_model);
        let decoder = VitDecoder::new(&mut store, &mut init, "decoder", grid, cfg);
        let book = CodebookState::new(config.codebook_size, config.d_code, config.gamma, seed);
        Ok(VqCodec {
            config,
            grid,
            store,
            book,
            encoder,
            pre_proj,
            post_proj,
            decoder,
        })
    }

    /// Evaluation-mode encoder features E(x): `N x d_code`.
    pub fn encode_features(&self, img: &Image) -> Result<Array2<f64>> {
        self.grid.check_image(img)?;
        let mut g = Graph::new(&self.store);
        let x = g.constant(image_to_matrix(img));
        let h = self.encoder.encode(&mut g, x, None)?;
        let f = self.pre_proj.apply(&mut g, h);
        Ok(g.value(f).clone())
    }

    /// patchify -> encoder -> pre-projection -> quantize.
    pub fn encode_image_to_codes(&self, img: &Image) -> Result<Vec<u32>> {
        let features = self.encode_features(img)?;
        let (codes, _) = quantize(&features, &self.book)?;
        Ok(codes)
    }

    /// lookup -> post-projection -> decoder -> unpatchify.
    pub fn decode_codes_to_image(&self, codes: &[u32]) -> Result<Image> {
        if codes.len() != self.grid.n() {
            return Err(Error::Input(format!(
                "code sequence length {} does not match grid N {}",
                codes.len(),
                self.grid.n()
            )));
        }
        let v = self.book.v();
        for (i, &k) in codes.iter().enumerate() {
            if k as usize >= v {
                return Err(Error::Input(format!(
                    "code index {k} at position {i} out of range (V={v})"
                )));
            }
        }
        let mut looked_up = Array2::zeros((codes.len(), self.book.d_code()));
        for (i, &k) in codes.iter().enumerate() {
            looked_up.row_mut(i).assign(&self.book.vectors.row(k as usize));
        }
        let mut g = Graph::new(&self.store);
        let zq = g.constant(looked_up);
        let h = self.post_proj.apply(&mut g, zq);
        let out = self.decoder.decode(&mut g, h, None)?;
        Ok(self.decoder.to_image(&g, out))
    }

    /// Loss and parameter gradients on L_VQ = L_img + ||sg[z_q] - E(x)||^2
    /// for one image, without touching the parameters or the codebook.
    /// Also returns the encoder features and their code assignments so the
    /// caller can apply the EMA codebook update.
    pub fn loss_grads(
        &self,
        img: &Image,
        net: &FrozenFeatureNet,
        mut rng: Option<&mut rand_chacha::ChaCha20Rng>,
    ) -> Result<(VqLossReport, Vec<Array2<f64>>, Array2<f64>, Vec<u32>)> {
        self.grid.check_image(img)?;
        if self.config.transformer.dropout_rate == 0.0 {
            rng = None;
        }
        let mut g = Graph::new(&self.store);
        let x = g.constant(image_to_matrix(img));
        let h = self.encoder.encode(&mut g, x, rng.as_deref_mut())?;
        let f = self.pre_proj.apply(&mut g, h);
        let features = g.value(f).clone();
        let (codes, zq) = quantize(&features, &self.book)?;
        let st = g.ste(f, zq.clone());
        let hq = self.post_proj.apply(&mut g, st);
        let pred = self.decoder.decode(&mut g, hq, rng.as_deref_mut())?;

        let recon = g.mse_loss(pred, &image_to_matrix(img));
        let img_total = image_loss_graph(&mut g, pred, img, self.config.lambda_p, net)?;
        let commit = g.sumsq_loss(f, &zq);
        let total = g.add(img_total, commit);

        let total_v = g.scalar(total);
        if !total_v.is_finite() {
            return Err(Error::Numerical(format!("VQ loss {total_v}")));
        }
        let recon_v = g.scalar(recon);
        let commit_v = g.scalar(commit);
        let report = VqLossReport {
            recon: recon_v,
            perceptual: total_v - recon_v - commit_v,
            commitment: commit_v,
            total: total_v,
        };
        // `recon` duplicates the MSE term inside `img_total` but is not
        // connected to `total`, so it contributes no gradient.
        let grads = g.backward(total).into_param_grads(&self.store);
        Ok((report, grads, features, codes))
    }

    /// One training step on L_VQ = L_img + ||sg[z_q] - E(x)||^2. The
    /// encoder receives decoder gradients via the straight-through
    /// estimator; the codebook moves only through the EMA update.
    pub fn train_step(
        &mut self,
        img: &Image,
        net: &FrozenFeatureNet,
        opt: &mut AdamState,
        opt_cfg: &AdamWConfig,
        lr: f64,
        rng: &mut rand_chacha::ChaCha20Rng,
    ) -> Result<VqLossReport> {
        let (report, grads, features, codes) = self.loss_grads(img, net, Some(rng))?;
        adamw_step(&mut self.store, &grads, opt, lr, opt_cfg)?;
        ema_update(&mut self.book, &features, &codes);
        if self.config.reseed_dead_codes {
            self.reseed_dead(&features, rng);
        }
        Ok(report)
    }

    /// Reassign codes unused for 2,000 consecutive steps to a random
    /// feature from the current batch.
    pub fn reseed_dead(&mut self, features: &Array2<f64>, rng: &mut rand_chacha::ChaCha20Rng) {
        use rand::Rng;
        let n = features.dim().0;
        for k in 0..self.book.v() {
            if self.book.unused_steps[k] >= 2000 {
                let i = rng.gen_range(0..n);
                self.book.vectors.row_mut(k).assign(&features.row(i));
                self.book.ema_sums.row_mut(k).assign(&features.row(i));
                self.book.ema_counts[k] = 1.0;
                self.book.unused_steps[k] = 0;
            }
        }
    }

    /// Checkpoint includes the EMA accumulators so training can resume.
    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        let mut full = self.store.clone();
        full.add("codebook.vectors", self.book.vectors.clone());
        full.add(
            "codebook.ema_counts",
            Array2::from_shape_vec((1, self.book.v()), self.book.ema_counts.clone()).unwrap(),
        );
        full.add("codebook.ema_sums", self.book.ema_sums.clone());
        let cfg = serde_json::to_value(self.config)?;
        save_checkpoint(dir, "vqcodec", &full, &cfg, step)
    }

    pub fn load(dir: &Path) -> Result<(VqCodec, u64)> {
        let (full, meta) = load_checkpoint(dir)?;
        if meta.component != "vqcodec" {
            return Err(Error::Dependency(format!(
                "expected a vqcodec checkpoint, found {:?}",
                meta.component
            )));
        }
        let config: VqConfig = serde_json::from_value(meta.config)?;
        let mut codec = VqCodec::new(config, 0)?;
        let missing = |name: &str| Error::Input(format!("checkpoint missing {name}"));
        codec.book.vectors = full
            .id_of("codebook.vectors")
            .map(|id| full.value(id).clone())
            .ok_or_else(|| missing("codebook.vectors"))?;
        codec.book.ema_counts = full
            .id_of("codebook.ema_counts")
            .map(|id| full.value(id).iter().copied().collect())
            .ok_or_else(|| missing("codebook.ema_counts"))?;
        codec.book.ema_sums = full
            .id_of("codebook.ema_sums")
            .map(|id| full.value(id).clone())
            .ok_or_else(|| missing("codebook.ema_sums"))?;
        for pid in 0..codec.store.len() {
            let name = codec.store.name(pid).to_string();
            let src = full
                .id_of(&name)
                .ok_or_else(|| missing(&name))?;
            *codec.store.value_mut(pid) = full.value(src).clone();
        }
        Ok((codec, meta.step))
    }
}
