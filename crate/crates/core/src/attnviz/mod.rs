//! Attention maps of transformer classifiers rendered as heatmap overlays.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{resize_bilinear, save_rgb_png};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

/// Per-token salience on the token grid and its image-sized rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// `[Gh, Gw]`, non-negative, summing to one.
    pub grid: Tensor,
    /// `[H, W]` in `[0,1]`: the grid upsampled and min-max normalised.
    pub upsampled: Tensor,
}

/// Salience per key token from attention weights `[h,T,T]` or `[1,h,T,T]`:
/// the mean over heads, then over queries.
pub fn salience(weights: &Tensor) -> Result<Vec<f64>> {
    let (h, t) = match weights.shape() {
        &[h, t, t2] | &[1, h, t, t2] if t == t2 => (h, t),
        other => {
            return Err(Error::InvalidShape(format!(
                "attention weights must be [h,T,T] or [1,h,T,T], got {other:?}"
            )))
        }
    };
    let mut out = vec![0.0; t];
    for row in weights.data().chunks(t) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += w;
        }
    }
    let scale = 1.0 / (h * t) as f64;
    Ok(out.into_iter().map(|v| v * scale).collect())
}

/// Upsamples `grid` to `height×width` bilinearly and rescales to `[0,1]`.
/// A constant grid maps to 0.5 everywhere.
pub fn upsample(grid: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let &[gh, gw] = grid.shape() else {
        return Err(Error::InvalidShape(format!("grid must be [Gh,Gw], got {:?}", grid.shape())));
    };
    let planar = Tensor::new(vec![1, gh, gw], grid.data().to_vec())?;
    let up = resize_bilinear(&planar, height, width)?;
    let (lo, hi) = up
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let data = if hi > lo {
        up.data().iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; height * width]
    };
    Tensor::new(vec![height, width], data)
}

/// Builds the map from last-block weights for a `grid`-shaped token layout
/// and an `image_hw`-sized input.
pub fn attention_map(weights: &Tensor, grid: (usize, usize), image_hw: (usize, usize)) -> Result<AttentionMap> {
    let s = salience(weights)?;
    if s.len() != grid.0 * grid.1 {
        return Err(Error::Shape {
            op: "attention map",
            lhs: vec![s.len()],
            rhs: vec![grid.0, grid.1],
        });
    }
    let grid = Tensor::new(vec![grid.0, grid.1], s)?;
    let upsampled = upsample(&grid, image_hw.0, image_hw.1)?;
    Ok(AttentionMap { grid, upsampled })
}

/// Runs `model` in eval mode on one `[3,H,W]` image and reads the last
/// block's attention.
pub fn extract_attention(model: &mut Model, image: &Tensor) -> Result<AttentionMap> {
    let grid = model
        .token_grid()
        .ok_or_else(|| Error::UnsupportedFamily(model.family().to_string()))?;
    let &[c, h, w] = image.shape() else {
        return Err(Error::InvalidShape(format!("expected one [C,H,W] image, got {:?}", image.shape())));
    };
    let x = image.clone().reshape(vec![1, c, h, w])?;
    model.predict(x)?;
    let weights = model.last_attention().expect("transformer forward caches attention");
    attention_map(weights, grid, (h, w))
}

const fn build_ramp() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        let tent = if i < 128 { 2 * i } else { 2 * (255 - i) + 1 };
        table[i] = [i as u8, tent as u8, (255 - i) as u8];
        i += 1;
    }
    table
}

/// Blue (low) to red (high) colour table; green peaks mid-ramp.
pub const RAMP: [[u8; 3]; 256] = build_ramp();

/// Ramp colour for `u` in `[0,1]` as RGB in `[0,1]`.
pub fn ramp_color(u: f64) -> [f64; 3] {
    let idx = (u.clamp(0.0, 1.0) * 255.0).round() as usize;
    RAMP[idx].map(|c| f64::from(c) / 255.0)
}

/// Blends the coloured heatmap over `image` (`[3,H,W]` matching the map):
/// `out = (1 − alpha)·image + alpha·ramp(map)`.
pub fn render_heatmap(map: &AttentionMap, image: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let &[3, h, w] = image.shape() else {
        return Err(Error::InvalidShape(format!("expected [3,H,W], got {:?}", image.shape())));
    };
    if map.upsampled.shape() != [h, w] {
        return Err(Error::Shape {
            op: "render_heatmap",
            lhs: map.upsampled.shape().to_vec(),
            rhs: vec![h, w],
        });
    }
    let img = image.data();
    let mut out = vec![0.0; 3 * h * w];
    for (i, u) in map.upsampled.data().iter().enumerate() {
        let color = ramp_color(*u);
        for c in 0..3 {
            let k = c * h * w + i;
            out[k] = (1.0 - alpha) * img[k] + alpha * color[c];
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Grid as CSV: one line per grid row, values comma-separated.
pub fn grid_csv(grid: &Tensor) -> String {
    let w = grid.shape()[1];
    let mut out = String::new();
    for row in grid.data().chunks(w) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to a String");
    }
    out
}

/// Writes `<stem>_attn.png` and `<stem>_attn.csv` into `dir`.
pub fn write_outputs(dir: &Path, stem: &str, map: &AttentionMap, overlay: &Tensor) -> Result<(PathBuf, PathBuf)> {
    let png = dir.join(format!("{stem}_attn.png"));
    let csv = dir.join(format!("{stem}_attn.csv"));
    save_rgb_png(&png, overlay)?;
    std::fs::write(&csv, grid_csv(&map.grid)).map_err(|e| Error::io(&csv, e))?;
    Ok((png, csv))
}

#[cfg(test)]
mod tests;
