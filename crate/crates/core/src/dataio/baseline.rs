//! A deliberately simple edge-density proposer.
//!
//! Each sliding window is scored by the Sobel magnitude inside it minus the
//! magnitude in its central half, less a penalty for contours that cross its
//! boundary, normalized by perimeter^1.5. Greedy NMS then keeps the top `n`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{iou, BBox};
use crate::raster::Image;
use crate::sampler::{gen_sliding_windows, SamplerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Proposals to return.
    pub n: usize,
    /// Neighbor IoU of the candidate window grid.
    pub alpha: f64,
    pub min_side: usize,
    pub nms_iou: f64,
    /// Weight of the boundary-straddling penalty.
    pub straddle_weight: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            alpha: 0.75,
            min_side: 16,
            nms_iou: 0.8,
            straddle_weight: 1.0,
        }
    }
}

/// Summed-area tables of Sobel responses.
pub struct EdgeMaps {
    width: usize,
    height: usize,
    mag: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl EdgeMaps {
    pub fn new(image: &Image) -> Self {
        let (w, h) = (image.width(), image.height());
        let g = image.gray();
        let at = |x: isize, y: isize| -> f64 {
            let xc = x.clamp(0, w as isize - 1) as usize;
            let yc = y.clamp(0, h as isize - 1) as usize;
            g[yc * w + xc] as f64
        };
        let mut mag = vec![0.0; w * h];
        let mut gxs = vec![0.0; w * h];
        let mut gys = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
                let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
                let i = y as usize * w + x as usize;
                gxs[i] = gx.abs() / 8.0;
                gys[i] = gy.abs() / 8.0;
                mag[i] = gx.hypot(gy) / 8.0;
            }
        }
        Self {
            width: w,
            height: h,
            mag: integral(&mag, w, h),
            gx: integral(&gxs, w, h),
            gy: integral(&gys, w, h),
        }
    }

    fn sum(table: &[f64], w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = w + 1;
        table[y1 * s + x1] - table[y0 * s + x1] - table[y1 * s + x0] + table[y0 * s + x0]
    }

    /// Edge score of a box (higher = more object-like to this heuristic).
    pub fn score(&self, b: &BBox, straddle_weight: f64) -> f64 {
        let (w, h) = (self.width, self.height);
        let cl = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n);
        let x0 = cl(b.x_min(), w - 1);
        let y0 = cl(b.y_min(), h - 1);
        let x1 = cl(b.x_max(), w).max(x0 + 1);
        let y1 = cl(b.y_max(), h).max(y0 + 1);
        let (bw, bh) = (x1 - x0, y1 - y0);
        let e_box = Self::sum(&self.mag, w, x0, y0, x1, y1);
        let (cx0, cy0) = (x0 + bw / 4, y0 + bh / 4);
        let (cx1, cy1) = ((x1 - bw / 4).max(cx0), (y1 - bh / 4).max(cy0));
        let e_center = Self::sum(&self.mag, w, cx0, cy0, cx1, cy1);
        // contours crossing a vertical side show up as |gy|, horizontal sides as |gx|
        let strip = |c: usize, n: usize| (c.saturating_sub(1), (c + 1).min(n));
        let (lx0, lx1) = strip(x0, w);
        let (rx0, rx1) = strip(x1, w);
        let (ty0, ty1) = strip(y0, h);
        let (by0, by1) = strip(y1, h);
        let straddle = Self::sum(&self.gy, w, lx0, y0, lx1, y1)
            + Self::sum(&self.gy, w, rx0, y0, rx1, y1)
            + Self::sum(&self.gx, w, x0, ty0, x1, ty1)
            + Self::sum(&self.gx, w, x0, by0, x1, by1);
        let perimeter = 2.0 * (bw + bh) as f64;
        (e_box - e_center - straddle_weight * straddle) / perimeter.powf(1.5)
    }
}

fn integral(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let s = w + 1;
    let mut t = vec![0.0; s * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += v[y * w + x];
            t[(y + 1) * s + x + 1] = t[y * s + x + 1] + row;
        }
    }
    t
}

/// Score candidate windows, sort descending (enumeration order breaks ties),
/// and greedily keep boxes whose IoU with every kept box is at most
/// `cfg.nms_iou`, until `cfg.n` are kept.
pub fn baseline_propose(image: &Image, cfg: &BaselineConfig) -> Result<Vec<(BBox, f64)>> {
    let scfg = SamplerConfig {
        alpha: cfg.alpha,
        min_window_side: cfg.min_side,
        ..SamplerConfig::default()
    };
    scfg.validate()?;
    let windows = gen_sliding_windows(image.width(), image.height(), &scfg);
    let maps = EdgeMaps::new(image);
    let mut scored: Vec<(BBox, f64)> = windows
        .into_iter()
        .map(|b| {
            let s = maps.score(&b, cfg.straddle_weight);
            (b, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut kept: Vec<(BBox, f64)> = Vec::with_capacity(cfg.n);
    for (b, s) in scored {
        if kept.len() >= cfg.n {
            break;
        }
        if kept.iter().all(|(k, _)| iou(k, &b) <= cfg.nms_iou) {
            kept.push((b, s));
        }
    }
    Ok(kept)
}
