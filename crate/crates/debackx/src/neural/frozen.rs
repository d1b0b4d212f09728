//! Frozen perceptual feature net: three non-overlapping convolutional
//! stages with fixed seeded random weights. A stand-in for a pretrained
//! perceptual network — it supplies a multi-scale feature distance with
//! the same loss structure, without shipping pretrained weights.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::neural::graph::{Graph, NodeId};
use crate::neural::params::{Init, ParamStore};
use crate::neural::patch::image_to_matrix;

const FROZEN_SEED: u64 = 0x7065_7263_6570_7421; // "percept!"

/// Stage geometry: (patch, c_in, c_out). Non-overlapping patches mean
/// kernel size == stride, so each stage is a rearrange plus a matmul.
const STAGES: [(usize, usize, usize); 3] = [(4, 3, 16), (2, 16, 32), (2, 32, 64)];

/// Index map taking a flattened `(h*w) x c` feature map to
/// `(h/p * w/p) x (p*p*c)` patch vectors, raster order.
fn patch_map(h: usize, w: usize, c: usize, p: usize) -> Vec<usize> {
    let (rows, cols) = (h / p, w / p);
    let mut map = Vec::with_capacity(rows * cols * p * p * c);
    for pr in 0..rows {
        for pc in 0..cols {
            for dr in 0..p {
                for dc in 0..p {
                    let (r, col) = (pr * p + dr, pc * p + dc);
                    for ch in 0..c {
                        map.push((r * w + col) * c + ch);
                    }
                }
            }
        }
    }
    map
}

/// Fixed random conv net with taps after each stage. Weights never
/// change; they enter graphs as constants, so no gradient reaches them.
#[derive(Debug, Clone)]
pub struct FrozenFeatureNet {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array2<f64>>,
}

impl Default for FrozenFeatureNet {
    fn default() -> Self {
        Self::new()
    }
}

impl FrozenFeatureNet {
    pub fn new() -> FrozenFeatureNet {
        let mut init = Init::new(FROZEN_SEED);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (p, c_in, c_out) in STAGES {
            weights.push(init.linear(p * p * c_in, c_out));
            biases.push(init.uniform(1, c_out, -0.1, 0.1));
        }
        FrozenFeatureNet { weights, biases }
    }

    /// Image dims must be divisible by the total downsampling (16).
    pub fn check_dims(h: usize, w: usize) -> Result<()> {
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Input(format!(
                "feature net needs dims divisible by 16, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Differentiable taps for an image node already flattened to
    /// `(h*w) x 3`. Returns one position-normalized feature matrix per
    /// stage.
    pub fn taps_graph(
        &self,
        g: &mut Graph,
        img: NodeId,
        h: usize,
        w: usize,
    ) -> Result<[NodeId; 3]> {
        Self::check_dims(h, w)?;
        if g.value(img).dim() != (h * w, 3) {
            return Err(Error::Input(format!(
                "expected flattened {h}x{w} image, got {:?}",
                g.value(img).dim()
            )));
        }
        let mut cur = img;
        let (mut ch, mut cw) = (h, w);
        let mut taps = [0usize; 3];
        for (i, (p, c_in, c_out)) in STAGES.into_iter().enumerate() {
            let map = patch_map(ch, cw, c_in, p);
            ch /= p;
            cw /= p;
            let patched = g.rearrange(cur, map, (ch * cw, p * p * c_in));
            let w_node = g.constant(self.weights[i].clone());
            let b_node = g.constant(self.biases[i].clone());
            let lin = g.matmul(patched, w_node);
            let lin = g.add_row(lin, b_node);
            cur = g.relu(lin);
            taps[i] = g.row_unit_norm(cur);
            let _ = c_out;
        }
        Ok(taps)
    }

    /// Evaluation-path taps for a concrete image.
    pub fn taps(&self, img: &Image) -> Result<Vec<Array2<f64>>> {
        let (h, w) = img.dims();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(image_to_matrix(img));
        let taps = self.taps_graph(&mut g, x, h, w)?;
        Ok(taps.iter().map(|&t| g.value(t).clone()).collect())
    }

    /// FNV-1a over the bit patterns of every weight, in order. Used to
    /// assert the net is untouched by training.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        };
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            w.iter().copied().for_each(&mut eat);
            b.iter().copied().for_each(&mut eat);
        }
        h
    }
}
