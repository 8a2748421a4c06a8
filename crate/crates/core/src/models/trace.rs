use super::spec::{Family, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::conv_output_extent;

fn extent(x: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    conv_output_extent(x, k, s, p)
        .filter(|v| *v > 0)
        .ok_or_else(|| Error::Config(format!("input extent {x} too small for a {k}x{k} window")))
}

fn stem(spec: &ModelSpec, n: usize, out: &mut Vec<(String, Vec<usize>)>) -> Result<(usize, usize)> {
    let w0 = spec.resnet.widths[0];
    let (h, w) = (extent(spec.height, 7, 2, 3)?, extent(spec.width, 7, 2, 3)?);
    out.push(("stem".into(), vec![n, w0, h, w]));
    let (h, w) = (extent(h, 3, 2, 1)?, extent(w, 3, 2, 1)?);
    out.push(("pool".into(), vec![n, w0, h, w]));
    Ok((h, w))
}

fn encoder(spec: &ModelSpec, n: usize, tokens: usize, out: &mut Vec<(String, Vec<usize>)>) {
    let d = spec.vit.dim;
    out.push(("tokens".into(), vec![n, tokens, d]));
    for i in 0..spec.vit.depth {
        out.push((format!("block{}", i + 1), vec![n, tokens, d]));
    }
    out.push(("pooled".into(), vec![n, d]));
}

/// Shapes of the named intermediates a forward pass over `n` images records,
/// computed from the `ModelSpec` alone without allocating any weights.
pub fn trace_shapes(spec: &ModelSpec, n: usize) -> Result<Vec<(String, Vec<usize>)>> {
    spec.validate()?;
    let mut out = Vec::new();
    let k = spec.num_classes;
    match spec.family {
        Family::Cnn => {
            let c = &spec.cnn;
            let (mut h, mut w) = (spec.height, spec.width);
            for (i, ch) in [c.conv1, c.conv2].into_iter().enumerate() {
                (h, w) = (extent(h, 3, 1, 0)?, extent(w, 3, 1, 0)?);
                out.push((format!("conv{}", i + 1), vec![n, ch, h, w]));
                (h, w) = (extent(h, 2, 2, 0)?, extent(w, 2, 2, 0)?);
                out.push((format!("pool{}", i + 1), vec![n, ch, h, w]));
            }
            out.push(("flatten".into(), vec![n, c.conv2 * h * w]));
            out.push(("dense".into(), vec![n, c.dense]));
        }
        Family::Resnet => {
            let (mut h, mut w) = stem(spec, n, &mut out)?;
            for s in 0..4 {
                if s > 0 {
                    (h, w) = (extent(h, 3, 2, 1)?, extent(w, 3, 2, 1)?);
                }
                out.push((format!("stage{}", s + 1), vec![n, spec.resnet.widths[s], h, w]));
            }
            out.push(("gap".into(), vec![n, spec.resnet.widths[3]]));
        }
        Family::VitV1_32 | Family::VitV2_32 => {
            let p = spec.family.patch_size().expect("vit family");
            let t = (spec.height / p) * (spec.width / p);
            out.push(("patches".into(), vec![n, t, p * p * spec.channels]));
            encoder(spec, n, t, &mut out);
        }
        Family::VitResnet16 => {
            let (h, w) = stem(spec, n, &mut out)?;
            out.push(("stage1".into(), vec![n, spec.resnet.widths[0], h, w]));
            let (gh, gw) = (spec.height / 16, spec.width / 16);
            out.push(("grid".into(), vec![n, spec.vit.dim, gh, gw]));
            encoder(spec, n, gh * gw, &mut out);
        }
    }
    out.push(("output".into(), vec![n, k]));
    Ok(out)
}
