//! Index-shuffling kernels shared by the convolution, pooling and patch ops.

use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a sliding window: `floor((input + 2·pad − kernel)/stride) + 1`,
/// or `None` when the window does not fit the padded input.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_output_extent(h, self.kh, self.stride, self.pad)?,
            conv_output_extent(w, self.kw, self.stride, self.pad)?,
        ))
    }
}

/// Unfolds one `[C,H,W]` image into `[C·kh·kw, Ho·Wo]` columns.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize, win: Window, cols: &mut [f64]) {
    let (ho, wo) = win.output(h, w).expect("window checked by caller");
    let plane = ho * wo;
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..win.kh {
            for kj in 0..win.kw {
                let row = (ch * win.kh + ki) * win.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
pub(crate) fn col2im(cols: &[f64], c: usize, h: usize, w: usize, win: Window, dx: &mut [f64]) {
    let (ho, wo) = win.output(h, w).expect("window checked by caller");
    let plane = ho * wo;
    for ch in 0..c {
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ki in 0..win.kh {
            for kj in 0..win.kw {
                let row = (ch * win.kh + ki) * win.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Flat offset in `[N,C,H,W]` of patch element `(n, token, feature)` for the
/// `[N, T, P·P·C]` token layout. Tokens run left-to-right, top-to-bottom;
/// features are ordered `(row in patch, column in patch, channel)`.
#[inline]
fn patch_source(
    n: usize,
    token: usize,
    feature: usize,
    (c, h, w): (usize, usize, usize),
    p: usize,
) -> usize {
    let gw = w / p;
    let (gy, gx) = (token / gw, token % gw);
    let ch = feature % c;
    let px = (feature / c) % p;
    let py = feature / (c * p);
    ((n * c + ch) * h + gy * p + py) * w + gx * p + px
}

pub(crate) fn check_patch_grid(h: usize, w: usize, p: usize) -> Result<(usize, usize)> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::InvalidShape(format!(
            "patch size {p} must divide image height {h} and width {w}"
        )));
    }
    Ok((h / p, w / p))
}

pub(crate) fn patchify_gather(x: &Tensor, p: usize) -> Result<Tensor> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::InvalidShape(format!(
            "patchify expects [N,C,H,W], got {:?}",
            x.shape()
        )));
    };
    let (gh, gw) = check_patch_grid(h, w, p)?;
    let tokens = gh * gw;
    let feat = p * p * c;
    let src = x.data();
    let mut out = vec![0.0; n * tokens * feat];
    for b in 0..n {
        for t in 0..tokens {
            let row = &mut out[(b * tokens + t) * feat..(b * tokens + t + 1) * feat];
            for (f, v) in row.iter_mut().enumerate() {
                *v = src[patch_source(b, t, f, (c, h, w), p)];
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, tokens, feat], out))
}

pub(crate) fn patchify_scatter(g: &Tensor, (n, c, h, w): (usize, usize, usize, usize), p: usize) -> Tensor {
    let tokens = (h / p) * (w / p);
    let feat = p * p * c;
    let mut out = vec![0.0; n * c * h * w];
    let src = g.data();
    for b in 0..n {
        for t in 0..tokens {
            for f in 0..feat {
                out[patch_source(b, t, f, (c, h, w), p)] = src[(b * tokens + t) * feat + f];
            }
        }
    }
    Tensor::from_parts(vec![n, c, h, w], out)
}

/// Inverse of patchify: folds `[N, T, P·P·C]` tokens back into `[N,C,H,W]`.
pub fn unpatchify(tokens: &Tensor, channels: usize, height: usize, width: usize, patch: usize) -> Result<Tensor> {
    let (gh, gw) = check_patch_grid(height, width, patch)?;
    let &[n, t, f] = tokens.shape() else {
        return Err(Error::InvalidShape(format!(
            "unpatchify expects [N,T,F], got {:?}",
            tokens.shape()
        )));
    };
    if t != gh * gw || f != patch * patch * channels {
        return Err(Error::Shape {
            op: "unpatchify",
            lhs: tokens.shape().to_vec(),
            rhs: vec![n, gh * gw, patch * patch * channels],
        });
    }
    Ok(patchify_scatter(tokens, (n, channels, height, width), patch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extent_arithmetic() {
        assert_eq!(conv_output_extent(224, 3, 1, 0), Some(222));
        assert_eq!(conv_output_extent(222, 2, 2, 0), Some(111));
        assert_eq!(conv_output_extent(224, 7, 2, 3), Some(112));
        assert_eq!(conv_output_extent(112, 3, 2, 1), Some(56));
        assert_eq!(conv_output_extent(2, 3, 1, 0), None);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w) = (2, 5, 4);
        let win = Window { kh: 3, kw: 2, stride: 2, pad: 1 };
        let (ho, wo) = win.output(h, w).unwrap();
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = (0..c * 6 * ho * wo).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, win, &mut cols);
        let mut dx = vec![0.0; x.len()];
        col2im(&y, c, h, w, win, &mut dx);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn token_zero_layout() {
        let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let t = patchify_gather(&x, 2).unwrap();
        assert_eq!(t.shape(), &[1, 4, 4]);
        assert_eq!(&t.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&t.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }
}
