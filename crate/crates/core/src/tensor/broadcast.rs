//! Singleton-extent broadcasting with trailing alignment.
//!
//! Shapes are aligned at their last axis; a missing leading axis or an
//! extent of 1 stretches to match the other operand. Nothing else broadcasts.

use super::{numel, strides_of, Tensor};
use crate::error::{Error, Result};

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape {
                    op: "broadcast",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` expressed in the index space of `out`, zero on every
/// broadcast axis.
pub(crate) fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
pub(crate) fn for_each_pair(
    out: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    let rank = out.len();
    let mut counter = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        // Odometer increment.
        let mut axis = rank;
        while axis > 0 {
            axis -= 1;
            counter[axis] += 1;
            ia += a_strides[axis];
            ib += b_strides[axis];
            if counter[axis] < out[axis] {
                break;
            }
            ia -= a_strides[axis] * out[axis];
            ib -= b_strides[axis] * out[axis];
            counter[axis] = 0;
        }
    }
}

/// Sums `grad` (shaped like the broadcast output) back down to `shape`.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape();
    let mut acc = vec![0.0; numel(shape)];
    let target = aligned_strides(shape, out);
    let zeros = vec![0; out.len()];
    let g = grad.data();
    for_each_pair(out, &target, &zeros, |o, t, _| acc[t] += g[o]);
    Tensor::from_parts(shape.to_vec(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_alignment() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[4]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[], &[5]).unwrap(), vec![5]);
        assert!(broadcast_shape(&[2, 3], &[2]).is_err());
    }

    #[test]
    fn reduce_sums_broadcast_axes() {
        let g = Tensor::ones(&[2, 3]);
        let r = reduce_to_shape(&g, &[3]);
        assert_eq!(r.data(), &[2.0, 2.0, 2.0]);
        let r = reduce_to_shape(&g, &[2, 1]);
        assert_eq!(r.data(), &[3.0, 3.0]);
    }
}
