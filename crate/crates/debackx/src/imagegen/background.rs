//! Procedural backgrounds: seeded value noise, a linear gradient, and a
//! few geometric shapes. Intensities stay below [`BG_MAX`] so white
//! subtitle text is always separable from the background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::img::Image;

/// Upper intensity bound for generated backgrounds.
pub const BG_MAX: f64 = 0.70;

const BG_MIN: f64 = 0.03;

/// Deterministic procedural background of the given size.
pub fn make_background(seed: u64, base_h: usize, base_w: usize) -> Image {
    assert!(base_h > 0 && base_w > 0, "background dims must be positive");
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6261636b_67726f75); // "backgrou"

    // Two octaves of bilinear value noise.
    let mut field = vec![0.0f64; base_h * base_w];
    for (cell, weight) in [(16usize, 0.5f64), (4, 0.25)] {
        let gh = base_h.div_ceil(cell) + 1;
        let gw = base_w.div_ceil(cell) + 1;
        let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
        for r in 0..base_h {
            let gr = r as f64 / cell as f64;
            let (r0, fr) = (gr.floor() as usize, gr.fract());
            for c in 0..base_w {
                let gc = c as f64 / cell as f64;
                let (c0, fc) = (gc.floor() as usize, gc.fract());
                let v00 = grid[r0 * gw + c0];
                let v01 = grid[r0 * gw + c0 + 1];
                let v10 = grid[(r0 + 1) * gw + c0];
                let v11 = grid[(r0 + 1) * gw + c0 + 1];
                let v = v00 * (1.0 - fr) * (1.0 - fc)
                    + v01 * (1.0 - fr) * fc
                    + v10 * fr * (1.0 - fc)
                    + v11 * fr * fc;
                field[r * base_w + c] += weight * v;
            }
        }
    }

    // Linear gradient with a random direction.
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    let (dr, dc) = (theta.sin(), theta.cos());
    let span = (base_h as f64 * dr.abs() + base_w as f64 * dc.abs()).max(1.0);
    for r in 0..base_h {
        for c in 0..base_w {
            let t = (r as f64 * dr + c as f64 * dc) / span;
            field[r * base_w + c] += 0.8 * (t - 0.5);
        }
    }

    // 2..=6 shapes: filled rectangles and discs with an intensity delta.
    let n_shapes = rng.gen_range(2..=6usize);
    for _ in 0..n_shapes {
        let delta = rng.gen_range(-0.5..0.5f64);
        if rng.gen::<bool>() {
            let h = rng.gen_range(base_h / 8..=base_h.div_ceil(2)).max(1);
            let w = rng.gen_range(base_w / 8..=base_w.div_ceil(2)).max(1);
            let r0 = rng.gen_range(0..base_h);
            let c0 = rng.gen_range(0..base_w);
            for r in r0..(r0 + h).min(base_h) {
                for c in c0..(c0 + w).min(base_w) {
                    field[r * base_w + c] += delta;
                }
            }
        } else {
            let rad = rng.gen_range(base_h.min(base_w) / 8..=base_h.min(base_w) / 2).max(2) as f64;
            let cr = rng.gen_range(0..base_h) as f64;
            let cc = rng.gen_range(0..base_w) as f64;
            for r in 0..base_h {
                for c in 0..base_w {
                    let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    if d2 <= rad * rad {
                        field[r * base_w + c] += delta;
                    }
                }
            }
        }
    }

    // Normalize by the 5th/95th percentile so a single extreme shape
    // cannot flatten the rest of the image, then clamp and tint.
    let mut sorted = field.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = sorted[(sorted.len() - 1) * 5 / 100];
    let hi = sorted[(sorted.len() - 1) * 95 / 100];
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let gains = [
        rng.gen_range(0.7..1.0f64),
        rng.gen_range(0.7..1.0f64),
        rng.gen_range(0.7..1.0f64),
    ];

    let mut img = Image::zeros(base_h, base_w);
    for r in 0..base_h {
        for c in 0..base_w {
            let f = ((field[r * base_w + c] - lo) * scale).clamp(0.0, 1.0);
            for ch in 0..3 {
                img.set(r, c, ch, BG_MIN + f * (BG_MAX - BG_MIN) * gains[ch]);
            }
        }
    }
    img
}
