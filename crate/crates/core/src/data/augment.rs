use rand::Rng as _;

use super::image::resize_bilinear;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub target: (usize, usize),
    pub hflip_prob: f64,
    pub rotation_max_degrees: f64,
}

impl AugmentationConfig {
    /// Resize only.
    pub fn identity(target: (usize, usize)) -> Self {
        Self {
            target,
            hflip_prob: 0.0,
            rotation_max_degrees: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.0 == 0 || self.target.1 == 0 {
            return Err(Error::Config(format!(
                "augmentation target {}x{} must be positive",
                self.target.0, self.target.1
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("field `hflip_prob`: {} outside [0, 1]", self.hflip_prob)));
        }
        if !(0.0..=180.0).contains(&self.rotation_max_degrees) {
            return Err(Error::Config(format!(
                "field `rotation_max_degrees`: {} outside [0, 180]",
                self.rotation_max_degrees
            )));
        }
        Ok(())
    }
}

/// Resize, random horizontal flip, random rotation, for pixels in `[0,1]`.
/// Exactly two values are drawn from `rng` per call whatever the config, so
/// streams stay aligned.
pub fn augment(pixels: &Tensor, cfg: &AugmentationConfig, rng: &mut Rng) -> Result<Tensor> {
    let flip_draw: f64 = rng.random();
    let angle_draw: f64 = rng.random();
    let mut img = resize_bilinear(pixels, cfg.target.0, cfg.target.1)?;
    if flip_draw < cfg.hflip_prob {
        img = hflip(&img);
    }
    let degrees = (2.0 * angle_draw - 1.0) * cfg.rotation_max_degrees;
    if degrees != 0.0 {
        img = rotate(&img, degrees);
    }
    // Interpolation weights sum to one only up to rounding.
    Ok(img.map(|v| v.clamp(0.0, 1.0)))
}

/// Mirrors each row of `[C,H,W]`.
pub fn hflip(img: &Tensor) -> Tensor {
    let w = *img.shape().last().expect("image has a width");
    let mut data = img.data().to_vec();
    for row in data.chunks_mut(w) {
        row.reverse();
    }
    Tensor::new(img.shape().to_vec(), data).expect("shape unchanged")
}

/// Rotates `[C,H,W]` counter-clockwise by `degrees` about the image centre,
/// sampling bilinearly; source points outside the image read as zero.
pub fn rotate(img: &Tensor, degrees: f64) -> Tensor {
    let &[c, h, w] = img.shape() else {
        panic!("rotate expects [C,H,W], got {:?}", img.shape());
    };
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = img.data();
    let mut out = vec![0.0; c * h * w];
    let read = |plane: &[f64], y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            // Inverse map: rotate the output coordinate back by -θ. Image y
            // grows downward, hence the sign pattern.
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let top = read(plane, y0, x0) * (1.0 - fx) + read(plane, y0, x0 + 1) * fx;
                let bottom = read(plane, y0 + 1, x0) * (1.0 - fx) + read(plane, y0 + 1, x0 + 1) * fx;
                out[(ch * h + y) * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("shape unchanged")
}
