//! The shared image loss: pixel MSE plus a weighted perceptual term from
//! the frozen feature net (reconstruction + perceptual, lambda_p = 0.1).

use crate::error::Result;
use crate::img::Image;
use crate::neural::frozen::FrozenFeatureNet;
use crate::neural::graph::{Graph, NodeId};
use crate::neural::patch::image_to_matrix;

pub const LAMBDA_P: f64 = 0.1;

/// Differentiable image loss for a predicted image node (flattened
/// `(h*w) x 3`) against a fixed target image.
pub fn image_loss_graph(
    g: &mut Graph,
    pred: NodeId,
    target: &Image,
    lambda_p: f64,
    net: &FrozenFeatureNet,
) -> Result<NodeId> {
    let (h, w) = target.dims();
    let target_m = image_to_matrix(target);
    let mse = g.mse_loss(pred, &target_m);
    if lambda_p == 0.0 {
        return Ok(mse);
    }
    let pred_taps = net.taps_graph(g, pred, h, w)?;
    let target_taps = net.taps(target)?;
    let mut total = mse;
    for (tap, tgt) in pred_taps.into_iter().zip(target_taps.iter()) {
        let term = g.mse_loss(tap, tgt);
        let term = g.scale(term, lambda_p);
        total = g.add(total, term);
    }
    Ok(total)
}

/// Evaluation-path image loss on concrete images.
pub fn image_loss(y: &Image, y_hat: &Image, lambda_p: f64, net: &FrozenFeatureNet) -> Result<f64> {
    let mut loss = y.mse(y_hat)?;
    if lambda_p != 0.0 {
        let ta = net.taps(y)?;
        let tb = net.taps(y_hat)?;
        for (a, b) in ta.iter().zip(tb.iter()) {
            let n = a.len() as f64;
            let mse = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / n;
            loss += lambda_p * mse;
        }
    }
    Ok(loss)
}
