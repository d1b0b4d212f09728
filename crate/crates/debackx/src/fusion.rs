//! Background / text-image fusion: G_fuse(E_back(i_b) + E_text(i_t)).

use std::path::Path;

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
use crate::neural::transformer::TransformerConfig;
use crate::neural::vit::{VitDecoder, VitEncoder};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FusionConfig {
    pub strip_h: usize,
    pub strip_w: usize,
    pub patch_size: usize,
    pub transformer: TransformerConfig,
    pub lambda_p: f64,
}

pub struct FusionModel {
    pub config: FusionConfig,
    pub grid: PatchGrid,
    pub store: ParamStore,
    e_back: VitEncoder,
    e_text: VitEncoder,
    g_fuse: VitDecoder,
}

impl FusionModel {
    pub fn new(config: FusionConfig, seed: u64) -> Result<FusionModel> {
        config.transformer.validate()?;
        let grid = PatchGrid::new(config.strip_h, config.strip_w, config.patch_size)?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let cfg = config.transformer;
        let e_back = VitEncoder::new(&mut store, &mut init, "e_back", grid, cfg);
        let e_text = VitEncoder::new(&mut store, &mut init, "e_text", grid, cfg);
        let g_fuse = VitDecoder::new(&mut store, &mut init, "g_fuse", grid, cfg);
        Ok(FusionModel {
            config,
            grid,
            store,
            e_back,
            e_text,
            g_fuse,
        })
    }

    /// Evaluation-mode fusion: encode both inputs, sum features, decode.
    pub fn fuse(&self, background: &Image, text_image: &Image) -> Result<Image> {
        self.grid.check_image(background)?;
        self.grid.check_image(text_image)?;
        let mut g = Graph::new(&self.store);
        let b = g.constant(image_to_matrix(background));
        let t = g.constant(image_to_matrix(text_image));
        let hb = self.e_back.encode(&mut g, b, None)?;
        let ht = self.e_text.encode(&mut g, t, None)?;
        let sum = g.add(hb, ht);
        let out = self.g_fuse.decode(&mut g, sum, None)?;
        Ok(self.g_fuse.to_image(&g, out))
    }

    /// Loss and parameter gradients toward `target` (Eq. 3 loss),
    /// without touching the parameters.
    pub fn loss_grads(
        &self,
        background: &Image,
        text_image: &Image,
        target: &Image,
        net: &FrozenFeatureNet,
        mut rng: Option<&mut rand_chacha::ChaCha20Rng>,
    ) -> Result<(f64, Vec<ndarray::Array2<f64>>)> {
        self.grid.check_image(background)?;
        self.grid.check_image(text_image)?;
        self.grid.check_image(target)?;
        if self.config.transformer.dropout_rate == 0.0 {
            rng = None;
        }
        let mut g = Graph::new(&self.store);
        let b = g.constant(image_to_matrix(background));
        let t = g.constant(image_to_matrix(text_image));
        let hb = self.e_back.encode(&mut g, b, rng.as_deref_mut())?;
        let ht = self.e_text.encode(&mut g, t, rng.as_deref_mut())?;
        let sum = g.add(hb, ht);
        let out = self.g_fuse.decode(&mut g, sum, rng.as_deref_mut())?;
        let node = image_loss_graph(&mut g, out, target, self.config.lambda_p, net)?;
        let loss = g.scalar(node);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("fusion loss {loss}")));
        }
        Ok((loss, g.backward(node).into_param_grads(&self.store)))
    }

    /// One AdamW step toward `target` (Eq. 3 loss); returns the loss.
    pub fn train_step(
        &mut self,
        background: &Image,
        text_image: &Image,
        target: &Image,
        net: &FrozenFeatureNet,
        opt: &mut AdamState,
        opt_cfg: &AdamWConfig,
        lr: f64,
        rng: &mut rand_chacha::ChaCha20Rng,
    ) -> Result<f64> {
        let (loss, grads) = self.loss_grads(background, text_image, target, net, Some(rng))?;
        adamw_step(&mut self.store, &grads, opt, lr, opt_cfg)?;
        Ok(loss)
    }

    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        let cfg = serde_json::to_value(self.config)?;
        save_checkpoint(dir, "fusion", &self.store, &cfg, step)
    }

    pub fn load(dir: &Path) -> Result<(FusionModel, u64)> {
        let (store, meta) = load_checkpoint(dir)?;
        if meta.component != "fusion" {
            return Err(Error::Dependency(format!(
                "expected a fusion checkpoint, found {:?}",
                meta.component
            )));
        }
        let config: FusionConfig = serde_json::from_value(meta.config)?;
        let mut model = FusionModel::new(config, 0)?;
        model.store.copy_from(&store)?;
        Ok((model, meta.step))
    }
}
