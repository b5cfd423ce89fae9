use serde::{Deserialize, Serialize};

use super::{debug_check_finite, gemm, Scalar, Tensor, Trans};
use crate::error::{Error, Result};
use crate::par;

/// Items per gradient accumulation group. Fixed so the summation order does
/// not depend on the number of threads.
const GRAD_GROUP: usize = 8;

/// Square convolution geometry: kernel `k`, stride `s`, zero padding `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub k: usize,
    pub s: usize,
    pub p: usize,
}

impl ConvSpec {
    pub fn new(k: usize, s: usize, p: usize) -> Result<Self> {
        if k == 0 || s == 0 {
            return Err(Error::Config(format!(
                "kernel and stride must be >= 1, got k={k} s={s}"
            )));
        }
        Ok(Self { k, s, p })
    }
}

/// `floor((input + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_out_dim(input: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = input + 2 * p;
    if padded < k || s == 0 {
        None
    } else {
        Some((padded - k) / s + 1)
    }
}

/// Unfold one `c x h x w` image into a `(c*k*k) x (ho*wo)` column matrix.
pub fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    spec: ConvSpec,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let ConvSpec { k, s, p } = spec;
    let hw_out = ho * wo;
    debug_assert_eq!(cols.len(), c * k * k * hw_out);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if p == 0 && s == 1 {
                        out_row.copy_from_slice(&src[kx..kx + wo]);
                        continue;
                    }
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back into an image, accumulating overlapping taps.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    spec: ConvSpec,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let ConvSpec { k, s, p } = spec;
    let hw_out = ho * wo;
    x.fill(T::ZERO);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

struct ConvShape {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
    ho: usize,
    wo: usize,
}

fn conv_shape<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: ConvSpec,
) -> Result<ConvShape> {
    let (n, c, h, w) = x.dims4()?;
    let (co, ci, kh, kw) = weights.dims4()?;
    if ci != c {
        return Err(Error::Dimension(format!(
            "conv input has {c} channels but weights expect {ci}"
        )));
    }
    if kh != spec.k || kw != spec.k {
        return Err(Error::Dimension(format!(
            "conv weights are {kh}x{kw} but spec says k={}",
            spec.k
        )));
    }
    if bias.len() != co {
        return Err(Error::Dimension(format!(
            "conv bias has {} entries for {co} filters",
            bias.len()
        )));
    }
    let (Some(ho), Some(wo)) = (
        conv_out_dim(h, spec.k, spec.s, spec.p),
        conv_out_dim(w, spec.k, spec.s, spec.p),
    ) else {
        return Err(Error::Dimension(format!(
            "{h}x{w} input with padding {} is smaller than kernel {}",
            spec.p, spec.k
        )));
    };
    Ok(ConvShape {
        n,
        c,
        h,
        w,
        co,
        ho,
        wo,
    })
}

/// Cross-correlation of `x` (`n x c x h x w`) with `weights` (`co x c x k x k`).
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let ConvShape {
        n,
        c,
        h,
        w,
        co,
        ho,
        wo,
    } = conv_shape(x, weights, bias, spec)?;
    let ckk = c * spec.k * spec.k;
    let hw_out = ho * wo;
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    if n == 0 {
        return Ok(out);
    }
    let mut items: Vec<&mut [T]> = out.data_mut().chunks_mut(co * hw_out).collect();
    par::for_each_mut(&mut items, |i, y| {
        let mut cols = vec![T::ZERO; ckk * hw_out];
        im2col(x.item(i), c, h, w, spec, ho, wo, &mut cols);
        for (o, row) in y.chunks_mut(hw_out).enumerate() {
            row.fill(bias.data()[o]);
        }
        gemm(
            Trans::No,
            Trans::No,
            co,
            hw_out,
            ckk,
            T::ONE,
            weights.data(),
            &cols,
            T::ONE,
            y,
        );
    });
    debug_check_finite(&out, "conv2d_forward");
    Ok(out)
}

/// Gradients of a convolution: `(d input, d weights, d bias)`.
///
/// The input gradient is skipped (returned as `None`) when `need_dx` is false,
/// which is the case for the first layer of the net.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    dy: &Tensor<T>,
    spec: ConvSpec,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let ConvShape {
        n,
        c,
        h,
        w,
        co,
        ho,
        wo,
    } = conv_shape(x, weights, bias, spec)?;
    if dy.shape() != [n, co, ho, wo] {
        return Err(Error::Dimension(format!(
            "conv upstream gradient {:?} does not match output [{n}, {co}, {ho}, {wo}]",
            dy.shape()
        )));
    }
    let ckk = c * spec.k * spec.k;
    let hw_out = ho * wo;
    let per_in = c * h * w;

    let groups = par::map_chunks(n, GRAD_GROUP, |range| {
        let mut dw = vec![T::ZERO; co * ckk];
        let mut db = vec![T::ZERO; co];
        let mut dx = if need_dx {
            vec![T::ZERO; range.len() * per_in]
        } else {
            Vec::new()
        };
        let mut cols = vec![T::ZERO; ckk * hw_out];
        for (j, i) in range.enumerate() {
            let g = dy.item(i);
            im2col(x.item(i), c, h, w, spec, ho, wo, &mut cols);
            gemm(
                Trans::No,
                Trans::Yes,
                co,
                ckk,
                hw_out,
                T::ONE,
                g,
                &cols,
                T::ONE,
                &mut dw,
            );
            for (o, row) in g.chunks(hw_out).enumerate() {
                let mut s = T::ZERO;
                for &v in row {
                    s += v;
                }
                db[o] += s;
            }
            if need_dx {
                gemm(
                    Trans::Yes,
                    Trans::No,
                    ckk,
                    hw_out,
                    co,
                    T::ONE,
                    weights.data(),
                    g,
                    T::ZERO,
                    &mut cols,
                );
                col2im(
                    &cols,
                    c,
                    h,
                    w,
                    spec,
                    ho,
                    wo,
                    &mut dx[j * per_in..(j + 1) * per_in],
                );
            }
        }
        (dw, db, dx)
    });

    let mut dw = Tensor::zeros(weights.shape());
    let mut db = Tensor::zeros(bias.shape());
    let mut dx_data = Vec::with_capacity(if need_dx { n * per_in } else { 0 });
    for (gw, gb, gx) in groups {
        for (a, b) in dw.data_mut().iter_mut().zip(&gw) {
            *a += *b;
        }
        for (a, b) in db.data_mut().iter_mut().zip(&gb) {
            *a += *b;
        }
        dx_data.extend(gx);
    }
    let dx = if need_dx {
        Some(Tensor::from_vec(x.shape(), dx_data)?)
    } else {
        None
    };
    debug_check_finite(&dw, "conv2d_backward");
    Ok((dx, dw, db))
}
