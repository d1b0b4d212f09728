//! Patch geometry: raster-order patchify/unpatchify between images and
//! patch-vector sequences, both as eager array ops and as index maps for
//! the tape's `rearrange`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::img::Image;

/// Raster-order patch grid over a strip image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub strip_h: usize,
    pub strip_w: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(strip_h: usize, strip_w: usize, patch_size: usize) -> Result<PatchGrid> {
        if patch_size == 0 || strip_h % patch_size != 0 || strip_w % patch_size != 0 {
            return Err(Error::Input(format!(
                "strip {strip_h}x{strip_w} not divisible by patch size {patch_size}"
            )));
        }
        Ok(PatchGrid {
            patch_size,
            strip_h,
            strip_w,
            rows: strip_h / patch_size,
            cols: strip_w / patch_size,
        })
    }

    /// Sequence length: one vector per patch, raster order.
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    /// Patch-vector width: `patch_size^2 * 3`.
    pub fn d_patch(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    /// Index map for `Graph::rearrange` taking a flattened `(H*W) x 3`
    /// image to `(N) x (p*p*3)` patch vectors. Within a patch the layout
    /// is row-major pixels with channels innermost.
    pub fn patchify_map(&self) -> Vec<usize> {
        let p = self.patch_size;
        let w = self.strip_w;
        let mut map = Vec::with_capacity(self.n() * self.d_patch());
        for pr in 0..self.rows {
            for pc in 0..self.cols {
                for dr in 0..p {
                    for dc in 0..p {
                        let r = pr * p + dr;
                        let c = pc * p + dc;
                        for ch in 0..3 {
                            map.push((r * w + c) * 3 + ch);
                        }
                    }
                }
            }
        }
        map
    }

    /// Inverse of [`patchify_map`](Self::patchify_map): patch vectors back
    /// to a flattened `(H*W) x 3` image.
    pub fn unpatchify_map(&self) -> Vec<usize> {
        let fwd = self.patchify_map();
        let mut inv = vec![0usize; fwd.len()];
        for (out, &src) in fwd.iter().enumerate() {
            inv[src] = out;
        }
        inv
    }

    pub fn check_image(&self, img: &Image) -> Result<()> {
        if img.height() != self.strip_h || img.width() != self.strip_w {
            return Err(Error::Input(format!(
                "image {}x{} does not match grid {}x{}",
                img.height(),
                img.width(),
                self.strip_h,
                self.strip_w
            )));
        }
        Ok(())
    }
}

/// Flatten an image to the `(H*W) x 3` matrix used on the tape.
pub fn image_to_matrix(img: &Image) -> Array2<f64> {
    let (h, w) = (img.height(), img.width());
    Array2::from_shape_fn((h * w, 3), |(i, ch)| img.get(i / w, i % w, ch))
}

/// Inverse of [`image_to_matrix`].
pub fn matrix_to_image(m: &Array2<f64>, h: usize, w: usize) -> Image {
    assert_eq!(m.dim(), (h * w, 3));
    let mut img = Image::zeros(h, w);
    for i in 0..h * w {
        for ch in 0..3 {
            img.set(i / w, i % w, ch, m[(i, ch)]);
        }
    }
    img
}

/// Eager patchify: `N x d_patch` matrix in raster order.
pub fn patchify(img: &Image, grid: &PatchGrid) -> Result<Array2<f64>> {
    grid.check_image(img)?;
    let flat = image_to_matrix(img);
    let slice: Vec<f64> = flat.iter().copied().collect();
    let data: Vec<f64> = grid.patchify_map().iter().map(|&i| slice[i]).collect();
    Ok(Array2::from_shape_vec((grid.n(), grid.d_patch()), data).unwrap())
}

/// Eager unpatchify; exact inverse of [`patchify`].
pub fn unpatchify(seq: &Array2<f64>, grid: &PatchGrid) -> Result<Image> {
    if seq.dim() != (grid.n(), grid.d_patch()) {
        return Err(Error::Input(format!(
            "sequence {:?} does not match grid ({}, {})",
            seq.dim(),
            grid.n(),
            grid.d_patch()
        )));
    }
    let slice: Vec<f64> = seq.iter().copied().collect();
    let data: Vec<f64> = grid.unpatchify_map().iter().map(|&i| slice[i]).collect();
    let m = Array2::from_shape_vec((grid.strip_h * grid.strip_w, 3), data).unwrap();
    Ok(matrix_to_image(&m, grid.strip_h, grid.strip_w))
}
