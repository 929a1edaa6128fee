//! Static heatmap rendering of occlusion maps.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use statenet::diff::Tensor;

const CELL_W: u32 = 6;
const CELL_H: u32 = 18;

/// Blue (negative) through white to red (positive), scaled by the largest |heat|.
fn colour(v: f64, scale: f64) -> Rgb<u8> {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |c: f64| (255.0 * (1.0 - c.abs())).round() as u8;
    if t >= 0.0 {
        Rgb([255, fade(t), fade(t)])
    } else {
        Rgb([fade(t), fade(t), 255])
    }
}

/// Writes a `rows × positions` heat matrix as a PNG.
pub fn heatmap_png(heat: &Tensor, path: &Path) -> Result<()> {
    let (rows, cols) = (heat.dim(0), heat.dim(1));
    let scale = heat.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut img = RgbImage::new(cols as u32 * CELL_W, rows as u32 * CELL_H);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (r, c) = ((y / CELL_H) as usize, (x / CELL_W) as usize);
        *px = colour(heat.data()[r * cols + c], scale);
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
