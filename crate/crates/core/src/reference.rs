//! Slow, loop-for-loop reference implementations used as test oracles.
//!
//! Nothing here shares code with the production kernels: convolution is a
//! direct seven-deep loop, pooling scans every cell, metrics compare every GT
//! box with every proposal. All arithmetic is in `f64`.

use crate::geometry::{iou, BBox};

/// Direct cross-correlation. `x` is `n x c x h x w`, `w` is `co x c x k x k`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (n, c, h, wd): (usize, usize, usize, usize),
    w: &[f64],
    b: &[f64],
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for i in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((i * c + ci) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w[((o * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((i * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

/// `y[i][o] = b[o] + sum_d x[i][d] * w[d][o]`, weights stored `d x o`.
pub fn fc(x: &[f64], n: usize, d: usize, w: &[f64], b: &[f64], o: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * o];
    for i in 0..n {
        for j in 0..o {
            let mut acc = b[j];
            for t in 0..d {
                acc += x[i * d + t] * w[t * o + j];
            }
            y[i * o + j] = acc;
        }
    }
    y
}

/// Window max pooling without padding. Argmax is the flat in-plane index of
/// the first maximum in row-major window order.
pub fn maxpool(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    s: usize,
) -> (Vec<f64>, Vec<u32>, usize, usize) {
    let ho = (h - k) / s + 1;
    let wo = (w - k) / s + 1;
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for plane in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best: Option<(f64, usize)> = None;
                for y in 0..h {
                    for xx in 0..w {
                        let inside = y >= oy * s && y < oy * s + k && xx >= ox * s && xx < ox * s + k;
                        if !inside {
                            continue;
                        }
                        let v = x[plane * h * w + y * w + xx];
                        if best.is_none_or(|(bv, _)| v > bv) {
                            best = Some((v, y * w + xx));
                        }
                    }
                }
                let (v, i) = best.expect("non-empty window");
                out.push(v);
                arg.push(i as u32);
            }
        }
    }
    (out, arg, ho, wo)
}

/// Whether cell offset `j` of an axis of length `len` falls in bin `i` of
/// `bins`; an empty bin owns the single cell at its start.
fn in_bin(j: usize, i: usize, len: usize, bins: usize) -> bool {
    let lo = i * len / bins;
    let hi = (i + 1) * len / bins;
    if hi > lo {
        j >= lo && j < hi
    } else {
        j == lo.min(len - 1)
    }
}

/// RoI max pooling over `[x0, x1) x [y0, y1)` of a `c x h x w` map by scanning
/// every cell of every plane for every bin.
#[allow(clippy::too_many_arguments)]
pub fn roi_maxpool(
    fmap: &[f64],
    (c, h, w): (usize, usize, usize),
    (x0, y0, x1, y1): (usize, usize, usize, usize),
    bins_y: usize,
    bins_x: usize,
) -> (Vec<f64>, Vec<u32>) {
    let (rh, rw) = (y1 - y0, x1 - x0);
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for ch in 0..c {
        for by in 0..bins_y {
            for bx in 0..bins_x {
                let mut best: Option<(f64, usize)> = None;
                for y in 0..h {
                    for x in 0..w {
                        if y < y0 || y >= y1 || x < x0 || x >= x1 {
                            continue;
                        }
                        if !in_bin(y - y0, by, rh, bins_y) || !in_bin(x - x0, bx, rw, bins_x) {
                            continue;
                        }
                        let v = fmap[ch * h * w + y * w + x];
                        if best.is_none_or(|(bv, _)| v > bv) {
                            best = Some((v, y * w + x));
                        }
                    }
                }
                let (v, i) = best.expect("every bin owns a cell");
                out.push(v);
                arg.push(i as u32);
            }
        }
    }
    (out, arg)
}

/// Mean two-class cross-entropy computed from probabilities directly.
pub fn softmax_xent(logits: &[f64], labels: &[u8]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let (a, b) = (logits[2 * i], logits[2 * i + 1]);
        let p1 = 1.0 / (1.0 + (a - b).exp());
        let p = if l == 1 { p1 } else { 1.0 - p1 };
        total -= p.ln();
    }
    total / n as f64
}

/// Recall at `k` by testing every (GT, proposal) pair of every image.
pub fn recall_at_k(images: &[(Vec<BBox>, Vec<BBox>)], k: usize, threshold: f64) -> f64 {
    let mut total = 0usize;
    let mut hit = 0usize;
    for (proposals, gt) in images {
        for g in gt {
            total += 1;
            let mut found = false;
            for (rank, p) in proposals.iter().enumerate() {
                if rank < k && iou(p, g) >= threshold {
                    found = true;
                }
            }
            if found {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Recall for each k in `1..=k_max`, each point computed from scratch.
pub fn recall_curve(images: &[(Vec<BBox>, Vec<BBox>)], threshold: f64, k_max: usize) -> Vec<f64> {
    (1..=k_max).map(|k| recall_at_k(images, k, threshold)).collect()
}

/// Step-curve area on a log10 axis, one unit interval `[k, k+1)` at a time.
pub fn auc_log(curve: &[f64]) -> f64 {
    let kmax = curve.len();
    if kmax == 0 {
        return 0.0;
    }
    if kmax == 1 {
        return curve[0];
    }
    let mut area = 0.0;
    for k in 1..kmax {
        area += curve[k - 1] * (((k + 1) as f64) / k as f64).log10();
    }
    area / (kmax as f64).log10()
}

/// Step-curve area on a linear axis, one unit interval at a time.
pub fn auc_linear(curve: &[f64]) -> f64 {
    let kmax = curve.len();
    if kmax == 0 {
        return 0.0;
    }
    if kmax == 1 {
        return curve[0];
    }
    let mut area = 0.0;
    for k in 1..kmax {
        area += curve[k - 1];
    }
    area / (kmax - 1) as f64
}

/// Smallest `k` whose recall reaches `target`, by recomputing recall for
/// every `k`.
pub fn proposals_for_recall(
    images: &[(Vec<BBox>, Vec<BBox>)],
    threshold: f64,
    k_max: usize,
    target: f64,
) -> Option<usize> {
    (1..=k_max).find(|&k| recall_at_k(images, k, threshold) >= target)
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
/// Only the listed `coords` are differentiated, in order.
pub fn numeric_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
    coords: &[usize],
) -> Vec<f64> {
    let mut xs = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = xs[i];
            xs[i] = orig + h;
            let up = f(&xs);
            xs[i] = orig - h;
            let down = f(&xs);
            xs[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero gradients from
/// turning rounding noise into large relative errors.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
