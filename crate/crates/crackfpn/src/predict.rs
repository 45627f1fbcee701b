//! Full-image prediction with frozen weights shared across worker threads.

use std::path::Path;

use crackfpn_core::tiling::{extract_tiles, plan_tiles, predict_resize_back, recombine, Combine};
use crackfpn_core::{BinaryMask, FpnNet, ProbMask, RasterImage};
use rayon::prelude::*;

use crate::error::Result;
use crate::io::{save_image, save_mask, save_prob};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Tiled { tile_h: usize, tile_w: usize, combine: Combine },
    ResizeBack { train_h: usize, train_w: usize },
}

pub struct Prediction {
    pub prob: ProbMask,
    pub mask: BinaryMask,
    /// Number of network forward passes.
    pub forwards: usize,
}

/// Runs inference on the current rayon pool; tile results are merged in plan
/// order so the output does not depend on the worker count.
pub fn predict_image(model: &FpnNet, image: &RasterImage, mode: PredictMode, threshold: f32) -> Result<Prediction> {
    let (prob, forwards) = match mode {
        PredictMode::Tiled { tile_h, tile_w, combine } => {
            let plan = plan_tiles(image.height(), image.width(), tile_h, tile_w)?.with_combine(combine);
            let tiles = extract_tiles(image, &plan)?;
            let probs = tiles
                .par_iter()
                .map_init(|| model.clone(), |m, t| m.predict(t))
                .collect::<crackfpn_core::Result<Vec<_>>>()?;
            (recombine(&plan, &probs)?, plan.len())
        }
        PredictMode::ResizeBack { train_h, train_w } => {
            let mut m = model.clone();
            (predict_resize_back(&mut m, image, train_h, train_w)?, 1)
        }
    };
    let mask = prob.binarize(threshold)?;
    Ok(Prediction { prob, mask, forwards })
}

/// The photo with the prediction's boundary drawn in red.
pub fn overlay(image: &RasterImage, mask: &BinaryMask) -> RasterImage {
    let (h, w) = (image.height(), image.width());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0 {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || mask.get(y - 1, x) == 0
                || mask.get(y + 1, x) == 0
                || mask.get(y, x - 1) == 0
                || mask.get(y, x + 1) == 0;
            if edge {
                out.set_pixel(y, x, [255, 0, 0]);
            }
        }
    }
    out
}

/// Writes `prob/{id}.png`, `mask/{id}.png` and `overlay/{id}.png`.
pub fn write_prediction(out_dir: &Path, id: &str, image: &RasterImage, p: &Prediction) -> Result<()> {
    let name = format!("{id}.png");
    save_prob(&p.prob, &out_dir.join("prob").join(&name))?;
    save_mask(&p.mask, &out_dir.join("mask").join(&name))?;
    save_image(&overlay(image, &p.mask), &out_dir.join("overlay").join(&name))
}
