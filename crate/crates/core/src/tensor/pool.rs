use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub k: usize,
    pub s: usize,
}

impl PoolSpec {
    pub fn new(k: usize, s: usize) -> Result<Self> {
        if k == 0 || s == 0 {
            return Err(Error::Config(format!(
                "pool kernel and stride must be >= 1, got k={k} s={s}"
            )));
        }
        Ok(Self { k, s })
    }
}

/// `floor((input - k) / s) + 1`, or `None` when the window does not fit.
pub fn pool_out_dim(input: usize, k: usize, s: usize) -> Option<usize> {
    if input < k || s == 0 {
        None
    } else {
        Some((input - k) / s + 1)
    }
}

/// Max pooling without padding. Returns the pooled tensor and, for every
/// output element, the flat index of its maximum inside the input plane
/// (first occurrence wins on ties).
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    let (Some(ho), Some(wo)) = (pool_out_dim(h, spec.k, spec.s), pool_out_dim(w, spec.k, spec.s))
    else {
        return Err(Error::Dimension(format!(
            "pool window {} larger than {h}x{w} input",
            spec.k
        )));
    };
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let xin = &src[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let (y0, x0) = (oy * spec.s, ox * spec.s);
                let mut best = y0 * w + x0;
                let mut best_v = xin[best];
                for ky in 0..spec.k {
                    let row = (y0 + ky) * w;
                    for kx in 0..spec.k {
                        let idx = row + x0 + kx;
                        if xin[idx] > best_v {
                            best_v = xin[idx];
                            best = idx;
                        }
                    }
                }
                let o = (plane * ho + oy) * wo + ox;
                dst[o] = best_v;
                arg[o] = best as u32;
            }
        }
    }
    Ok((out, arg))
}

/// Route each output gradient to the recorded argmax of its window.
pub fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    dy: &Tensor<T>,
    argmax: &[u32],
) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => {
            return Err(Error::Dimension(format!(
                "pool input shape must be rank 4, got {input_shape:?}"
            )))
        }
    };
    let (dn, dc, ho, wo) = dy.dims4()?;
    if dn != n || dc != c || argmax.len() != dy.len() {
        return Err(Error::Dimension(
            "pool gradient does not match the forward pass".into(),
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let plane_out = ho * wo;
    let d = dx.data_mut();
    for (o, (&g, &a)) in dy.data().iter().zip(argmax).enumerate() {
        let plane = o / plane_out;
        d[plane * h * w + a as usize] += g;
    }
    Ok(dx)
}
