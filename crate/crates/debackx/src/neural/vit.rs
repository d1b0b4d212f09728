//! ViT-style image encoder/decoder pairs built from the transformer
//! stacks: patch embedding in, sigmoid-bounded pixel head out.

use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::img::Image;
use crate::neural::graph::{Graph, NodeId};
use crate::neural::params::{Init, ParamStore};
use crate::neural::patch::{image_to_matrix, matrix_to_image, PatchGrid};
use crate::neural::transformer::{Encoder, Linear, TransformerConfig};

/// Patch-embeds an image and runs the encoder stack. Output is
/// `N x d_model` features.
#[derive(Debug, Clone)]
pub struct VitEncoder {
    grid: PatchGrid,
    embed: Linear,
    enc: Encoder,
}

impl VitEncoder {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        grid: PatchGrid,
        cfg: TransformerConfig,
    ) -> VitEncoder {
        VitEncoder {
            grid,
            embed: Linear::new(store, init, &format!("{name}.embed"), grid.d_patch(), cfg.d_model),
            enc: Encoder::new(store, init, name, cfg),
        }
    }

    /// `img_node` is a flattened `(H*W) x 3` image node.
    pub fn encode(
        &self,
        g: &mut Graph,
        img_node: NodeId,
        rng: Option<&mut ChaCha20Rng>,
    ) -> Result<NodeId> {
        let patches = g.rearrange(
            img_node,
            self.grid.patchify_map(),
            (self.grid.n(), self.grid.d_patch()),
        );
        let emb = self.embed.apply(g, patches);
        self.enc.encode(g, emb, rng)
    }

    /// Convenience: encode a concrete image in evaluation mode.
    pub fn encode_image(&self, g: &mut Graph, img: &Image) -> Result<NodeId> {
        self.grid.check_image(img)?;
        let node = g.constant(image_to_matrix(img));
        self.encode(g, node, None)
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }
}

/// Runs the decoder stack over `N x d_model` features and projects each
/// position back to a sigmoid-bounded pixel patch.
#[derive(Debug, Clone)]
pub struct VitDecoder {
    grid: PatchGrid,
    dec: Encoder,
    head: Linear,
}

impl VitDecoder {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        grid: PatchGrid,
        cfg: TransformerConfig,
    ) -> VitDecoder {
        VitDecoder {
            grid,
            dec: Encoder::new(store, init, name, cfg),
            head: Linear::new(store, init, &format!("{name}.head"), cfg.d_model, grid.d_patch()),
        }
    }

    /// Features to a flattened `(H*W) x 3` image node in (0, 1).
    pub fn decode(
        &self,
        g: &mut Graph,
        features: NodeId,
        rng: Option<&mut ChaCha20Rng>,
    ) -> Result<NodeId> {
        let h = self.dec.encode(g, features, rng)?;
        let px = self.head.apply(g, h);
        let px = g.sigmoid(px);
        Ok(g.rearrange(
            px,
            self.grid.unpatchify_map(),
            (self.grid.strip_h * self.grid.strip_w, 3),
        ))
    }

    /// Materialize a decoded image node as an [`Image`].
    pub fn to_image(&self, g: &Graph, node: NodeId) -> Image {
        matrix_to_image(g.value(node), self.grid.strip_h, self.grid.strip_w)
    }
}
