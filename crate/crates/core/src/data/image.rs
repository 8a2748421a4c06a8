use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a PNG into `[3,H,W]` values in `[0,1]` at its native size.
/// Grayscale is replicated across channels; alpha is dropped.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let bad = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(bad("palette image was not expanded".into())),
    };
    let sample: Box<dyn Fn(usize) -> f64> = match info.bit_depth {
        BitDepth::Eight => Box::new(|i| f64::from(buf[i]) / 255.0),
        BitDepth::Sixteen => Box::new(|i| f64::from(u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]])) / 65535.0),
        other => return Err(bad(format!("unsupported bit depth {other:?}"))),
    };
    let mut out = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let base = y * info.line_size / bytes_per_sample(info.bit_depth) + x * channels;
            for c in 0..3 {
                let src = if channels >= 3 { base + c } else { base };
                out[(c * h + y) * w + x] = sample(src);
            }
        }
    }
    Tensor::new(vec![3, h, w], out)
}

fn bytes_per_sample(depth: BitDepth) -> usize {
    if depth == BitDepth::Sixteen {
        2
    } else {
        1
    }
}

/// Reads a PNG and resizes it to `height×width` (bilinear).
pub fn load_image(path: &Path, (height, width): (usize, usize)) -> Result<Tensor> {
    resize_bilinear(&read_png(path)?, height, width)
}

/// Bilinear resampling of every channel of `[C,H,W]` with pixel-centre
/// alignment: output pixel `i` samples source coordinate
/// `(i + 0.5)·in/out − 0.5`, clamped to the image.
pub fn resize_bilinear(img: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let &[c, h, w] = img.shape() else {
        return Err(Error::InvalidShape(format!("expected [C,H,W], got {:?}", img.shape())));
    };
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape(format!("target size {height}x{width} must be positive")));
    }
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (taps(h, height), taps(w, width));
    let src = img.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, height, width], out)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, width: usize, height: usize, color: ColorType, bytes: &[u8]) -> Result<()> {
    let fail = |e: png::EncodingError| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(bytes).map_err(fail)?;
    writer.finish().map_err(fail)
}

/// Writes channel 0 of `[C,H,W]` as an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, img: &Tensor) -> Result<()> {
    let &[_, h, w] = img.shape() else {
        return Err(Error::InvalidShape(format!("expected [C,H,W], got {:?}", img.shape())));
    };
    let bytes: Vec<u8> = img.data()[..h * w].iter().map(|v| quantize(*v)).collect();
    write_png(path, w, h, ColorType::Grayscale, &bytes)
}

/// Writes `[3,H,W]` as an 8-bit RGB PNG.
pub fn save_rgb_png(path: &Path, img: &Tensor) -> Result<()> {
    let &[3, h, w] = img.shape() else {
        return Err(Error::InvalidShape(format!("expected [3,H,W], got {:?}", img.shape())));
    };
    let d = img.data();
    let mut bytes = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            bytes.push(quantize(d[c * h * w + i]));
        }
    }
    write_png(path, w, h, ColorType::Rgb, &bytes)
}
