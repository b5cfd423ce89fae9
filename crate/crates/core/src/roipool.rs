//! Shared-feature scoring: run the trunk once per image scale, project each
//! box into the feature map, max-pool it onto a fixed grid, and feed the
//! pooled features through the head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::netdef::{
    head_backward, head_forward, object_scores, trunk_backward, trunk_forward, HeadTape, Layers,
    NetParams, TrunkTape,
};
use crate::par;
use crate::raster::Image;
use crate::tensor::{Scalar, Tensor};

/// Boxes per head evaluation chunk in inference.
const HEAD_CHUNK: usize = 256;

/// Image scales for the feature pyramid and the box area each box is
/// steered towards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    /// Target lengths of the shorter image side, ascending.
    pub sizes: Vec<usize>,
    /// Preferred box area (pixels squared) after resizing.
    pub target_area: f64,
}

impl ScaleSet {
    pub fn new(sizes: Vec<usize>, target_area: f64) -> Result<Self> {
        let s = Self { sizes, target_area };
        s.validate()?;
        Ok(s)
    }

    pub fn single(size: usize, target_area: f64) -> Result<Self> {
        Self::new(vec![size], target_area)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config("scale set must be non-empty and positive".into()));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "scales must be strictly ascending, got {:?}",
                self.sizes
            )));
        }
        if !(self.target_area > 0.0 && self.target_area.is_finite()) {
            return Err(Error::Config("target box area must be positive".into()));
        }
        Ok(())
    }

    /// Resize factor for scale `i` on an image with the given dimensions.
    pub fn factor(&self, i: usize, width: usize, height: usize) -> f64 {
        self.sizes[i] as f64 / width.min(height) as f64
    }
}

impl Default for ScaleSet {
    fn default() -> Self {
        Self {
            sizes: vec![400, 600, 900],
            target_area: 140.0 * 140.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiGrid {
    pub bins_y: usize,
    pub bins_x: usize,
}

impl RoiGrid {
    pub fn new(bins_y: usize, bins_x: usize) -> Result<Self> {
        if bins_y == 0 || bins_x == 0 {
            return Err(Error::Config("RoI grid bins must be >= 1".into()));
        }
        Ok(Self { bins_y, bins_x })
    }
}

impl Default for RoiGrid {
    fn default() -> Self {
        Self {
            bins_y: 16,
            bins_x: 16,
        }
    }
}

/// Half-open integer cell range `[x0, x1) x [y0, y1)` in a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureRoi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl FeatureRoi {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Map an image-space box onto feature cells: start = floor(coord / stride),
/// end = ceil(coord / stride), at least one cell per axis, clipped to the
/// `fmap_w x fmap_h` map.
pub fn project_box(b: &BBox, stride: usize, fmap_w: usize, fmap_h: usize) -> Result<FeatureRoi> {
    if stride == 0 || fmap_w == 0 || fmap_h == 0 {
        return Err(Error::Config("stride and feature map size must be positive".into()));
    }
    let s = stride as f64;
    let axis = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
        let start = (lo / s).floor().max(0.0);
        let mut end = (hi / s).ceil();
        if end <= start {
            end = start + 1.0;
        }
        if start >= n as f64 || end <= 0.0 {
            return None;
        }
        Some((start as usize, (end as usize).min(n)))
    };
    match (
        axis(b.x_min(), b.x_max(), fmap_w),
        axis(b.y_min(), b.y_max(), fmap_h),
    ) {
        (Some((x0, x1)), Some((y0, y1))) => Ok(FeatureRoi { x0, y0, x1, y1 }),
        _ => Err(Error::DegenerateBox(format!(
            "{:?} projects outside the {fmap_w}x{fmap_h} feature map (stride {stride})",
            b.to_array()
        ))),
    }
}

/// The trunk's valid convolutions leave a strip at the right and bottom of
/// an image that no feature cell starts in. Boxes lying in that strip are
/// moved inward so they pool from the border cells.
pub fn fit_to_map(b: &BBox, stride: usize, fmap_w: usize, fmap_h: usize) -> Result<BBox> {
    let s = stride as f64;
    let (cw, ch) = (fmap_w as f64 * s, fmap_h as f64 * s);
    let x0 = b.x_min().min(cw - s).max(0.0);
    let y0 = b.y_min().min(ch - s).max(0.0);
    BBox::new(x0, y0, b.x_max().max(x0 + 1.0), b.y_max().max(y0 + 1.0))
}

/// Integer bin bounds `[start, end)` along an axis of length `len` split into
/// `bins`: start = floor(i * len / bins), end = floor((i + 1) * len / bins).
/// An empty bin takes the single cell it falls in.
pub fn bin_bounds(len: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins)
        .map(|i| {
            let start = i * len / bins;
            let end = (i + 1) * len / bins;
            if end > start {
                (start, end)
            } else {
                let c = start.min(len - 1);
                (c, c + 1)
            }
        })
        .collect()
}

/// Max-pool `roi` of a `c x h x w` feature map onto `grid`.
///
/// Returns `c x bins_y x bins_x` values and, per output, the flat `y * w + x`
/// index of the maximum in its channel plane (first occurrence on ties).
pub fn roi_maxpool<T: Scalar>(
    fmap: &[T],
    (c, h, w): (usize, usize, usize),
    roi: &FeatureRoi,
    grid: RoiGrid,
) -> Result<(Vec<T>, Vec<u32>)> {
    if fmap.len() != c * h * w {
        return Err(Error::Dimension(format!(
            "feature map has {} values, expected {c}x{h}x{w}",
            fmap.len()
        )));
    }
    if roi.x0 >= roi.x1 || roi.y0 >= roi.y1 || roi.x1 > w || roi.y1 > h {
        return Err(Error::DegenerateBox(format!(
            "RoI {roi:?} is empty or outside the {w}x{h} map"
        )));
    }
    let ys = bin_bounds(roi.height(), grid.bins_y);
    let xs = bin_bounds(roi.width(), grid.bins_x);
    let nb = grid.bins_y * grid.bins_x;
    let mut out = vec![T::ZERO; c * nb];
    let mut arg = vec![0u32; c * nb];
    for ch in 0..c {
        let plane = &fmap[ch * h * w..(ch + 1) * h * w];
        for (by, &(ys0, ys1)) in ys.iter().enumerate() {
            for (bx, &(xs0, xs1)) in xs.iter().enumerate() {
                let mut best = (roi.y0 + ys0) * w + roi.x0 + xs0;
                let mut best_v = plane[best];
                for y in roi.y0 + ys0..roi.y0 + ys1 {
                    for x in roi.x0 + xs0..roi.x0 + xs1 {
                        let idx = y * w + x;
                        if plane[idx] > best_v {
                            best_v = plane[idx];
                            best = idx;
                        }
                    }
                }
                let o = ch * nb + by * grid.bins_x + bx;
                out[o] = best_v;
                arg[o] = best as u32;
            }
        }
    }
    Ok((out, arg))
}

/// Scatter pooled-output gradients back to their argmax cells, accumulating
/// into `d_fmap` (`c x h x w`).
pub fn roi_maxpool_backward<T: Scalar>(
    d_out: &[T],
    argmax: &[u32],
    (c, h, w): (usize, usize, usize),
    d_fmap: &mut [T],
) -> Result<()> {
    if d_out.len() != argmax.len() || d_out.len() % c.max(1) != 0 || d_fmap.len() != c * h * w {
        return Err(Error::Dimension("RoI gradient does not match the forward pass".into()));
    }
    let nb = d_out.len() / c;
    for (o, (&g, &a)) in d_out.iter().zip(argmax).enumerate() {
        let ch = o / nb;
        d_fmap[ch * h * w + a as usize] += g;
    }
    Ok(())
}

/// Pick the scale whose resized box area is closest to the target area.
/// Returns the scale index and its resize factor; ties go to the smaller scale.
pub fn select_scale(b: &BBox, width: usize, height: usize, scales: &ScaleSet) -> Result<(usize, f64)> {
    scales.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Dimension("image has zero size".into()));
    }
    let mut best = (0, scales.factor(0, width, height));
    let mut best_err = f64::INFINITY;
    for i in 0..scales.sizes.len() {
        let f = scales.factor(i, width, height);
        let err = (b.area() * f * f - scales.target_area).abs();
        if err < best_err {
            best_err = err;
            best = (i, f);
        }
    }
    Ok(best)
}

/// Pixel dimensions of an image resized by `factor` (at least one pixel).
pub fn scaled_dims(width: usize, height: usize, factor: f64) -> (usize, usize) {
    let w = ((width as f64 * factor).round() as usize).max(1);
    let h = ((height as f64 * factor).round() as usize).max(1);
    (w, h)
}

/// Mean-subtracted `1 x 3 x h x w` tensor of an image.
pub fn image_tensor<T: Scalar>(image: &Image, means: [f32; 3]) -> Tensor<T> {
    let plane = image.width() * image.height();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| T::from_f64((v - means[i / plane]) as f64))
        .collect();
    Tensor::from_vec(&[1, 3, image.height(), image.width()], data).expect("image tensor shape")
}

/// Where one box lands in the pyramid.
#[derive(Clone, Copy, Debug)]
struct BoxPlacement {
    level: usize,
    roi: FeatureRoi,
}

/// One trunk pass over an image at one scale.
#[derive(Clone, Debug)]
pub struct PyramidLevel<T> {
    pub scale_index: usize,
    pub fx: f64,
    pub fy: f64,
    pub tape: TrunkTape<T>,
}

impl<T: Scalar> PyramidLevel<T> {
    fn dims(&self) -> (usize, usize, usize) {
        let s = self.tape.conv2.shape();
        (s[1], s[2], s[3])
    }
}

fn grid_of<T>(params: &NetParams<T>) -> Result<RoiGrid> {
    let [gy, gx] = params
        .config
        .roi_grid
        .ok_or_else(|| Error::Config("net has no RoI grid; it was built for the crop path".into()))?;
    RoiGrid::new(gy, gx)
}

/// Plan the pyramid levels a set of `(image index, box)` pairs needs, run the
/// trunk for each, and locate every box in its level.
fn build_levels<T: Scalar>(
    params: &NetParams<T>,
    images: &[&Image],
    boxes: &[(usize, BBox)],
    scales: &ScaleSet,
) -> Result<(Vec<PyramidLevel<T>>, Vec<usize>, Vec<BoxPlacement>)> {
    scales.validate()?;
    let mut wanted: Vec<(usize, usize)> = Vec::new();
    let mut choice = Vec::with_capacity(boxes.len());
    for (i, (img_idx, b)) in boxes.iter().enumerate() {
        let img = images.get(*img_idx).ok_or_else(|| {
            Error::at_box(i, Error::Data(format!("image index {img_idx} out of range")))
        })?;
        if !b.is_inside(img.width() as f64 + 1e-6, img.height() as f64 + 1e-6) {
            return Err(Error::at_box(
                i,
                Error::DegenerateBox(format!(
                    "{:?} is not inside the {}x{} image",
                    b.to_array(),
                    img.width(),
                    img.height()
                )),
            ));
        }
        let (s, _) = select_scale(b, img.width(), img.height(), scales)?;
        choice.push((*img_idx, s));
        if !wanted.contains(&(*img_idx, s)) {
            wanted.push((*img_idx, s));
        }
    }
    wanted.sort_unstable();

    let results = par::map_indexed(wanted.len(), |j| -> Result<PyramidLevel<T>> {
        let (img_idx, s) = wanted[j];
        let img = images[img_idx];
        let f = scales.factor(s, img.width(), img.height());
        let (w, h) = scaled_dims(img.width(), img.height(), f);
        let resized = img.resized(w, h);
        let tape = trunk_forward(params, image_tensor(&resized, params.means))?;
        Ok(PyramidLevel {
            scale_index: s,
            fx: w as f64 / img.width() as f64,
            fy: h as f64 / img.height() as f64,
            tape,
        })
    });
    let levels = results.into_iter().collect::<Result<Vec<_>>>()?;
    let level_image: Vec<usize> = wanted.iter().map(|&(i, _)| i).collect();

    let stride = params.config.total_stride();
    let mut placements = Vec::with_capacity(boxes.len());
    for (i, ((_, b), key)) in boxes.iter().zip(&choice).enumerate() {
        let level = wanted.binary_search(key).expect("level planned above");
        let lv = &levels[level];
        let (_, fh, fw) = lv.dims();
        let roi = b
            .scaled(lv.fx, lv.fy)
            .and_then(|sb| fit_to_map(&sb, stride, fw, fh))
            .and_then(|sb| project_box(&sb, stride, fw, fh))
            .map_err(|e| Error::at_box(i, e))?;
        placements.push(BoxPlacement { level, roi });
    }
    Ok((levels, level_image, placements))
}

fn pool_features<T: Scalar>(
    levels: &[PyramidLevel<T>],
    placements: &[BoxPlacement],
    grid: RoiGrid,
) -> Result<(Tensor<T>, Vec<Vec<u32>>)> {
    let c = levels
        .first()
        .map(|l| l.dims().0)
        .unwrap_or_default();
    let per = c * grid.bins_y * grid.bins_x;
    let pooled = par::map_indexed(placements.len(), |i| {
        let p = placements[i];
        let lv = &levels[p.level];
        roi_maxpool(lv.tape.conv2.data(), lv.dims(), &p.roi, grid).map_err(|e| Error::at_box(i, e))
    });
    let mut feats = Vec::with_capacity(placements.len() * per);
    let mut args = Vec::with_capacity(placements.len());
    for r in pooled {
        let (f, a) = r?;
        feats.extend_from_slice(&f);
        args.push(a);
    }
    Ok((Tensor::from_vec(&[placements.len(), per.max(1)], feats)?, args))
}

/// Objectness for every box of one image through the shared-feature path.
/// Scores come back in input order.
pub fn forward_objectness_fast(
    params: &NetParams<f32>,
    image: &Image,
    boxes: &[BBox],
    scales: &ScaleSet,
) -> Result<Vec<f64>> {
    let grid = grid_of(params)?;
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    let tagged: Vec<(usize, BBox)> = boxes.iter().map(|b| (0, *b)).collect();
    let (levels, _, placements) = build_levels(params, &[image], &tagged, scales)?;
    let c = levels[0].dims().0;
    let per = c * grid.bins_y * grid.bins_x;
    let chunks = par::map_chunks(placements.len(), HEAD_CHUNK, |range| -> Result<Vec<f64>> {
        let mut feats = Vec::with_capacity(range.len() * per);
        for i in range.clone() {
            let p = placements[i];
            let lv = &levels[p.level];
            let (f, _) = roi_maxpool(lv.tape.conv2.data(), lv.dims(), &p.roi, grid)
                .map_err(|e| Error::at_box(i, e))?;
            feats.extend_from_slice(&f);
        }
        let x = Tensor::from_vec(&[range.len(), per], feats)?;
        Ok(object_scores(&head_forward(params, x)?.logits))
    });
    let mut scores = Vec::with_capacity(boxes.len());
    for c in chunks {
        scores.extend(c?);
    }
    Ok(scores)
}

/// Recorded shared-feature forward pass over a multi-image batch.
#[derive(Clone, Debug)]
pub struct FastTape<T> {
    levels: Vec<PyramidLevel<T>>,
    placements: Vec<BoxPlacement>,
    argmax: Vec<Vec<u32>>,
    head: HeadTape<T>,
}

/// Shared-feature forward/backward session for training.
#[derive(Debug)]
pub struct FastSession<'a, T> {
    params: &'a NetParams<T>,
    scales: &'a ScaleSet,
    tape: Option<FastTape<T>>,
}

impl<'a, T: Scalar> FastSession<'a, T> {
    pub fn new(params: &'a NetParams<T>, scales: &'a ScaleSet) -> Self {
        Self {
            params,
            scales,
            tape: None,
        }
    }

    /// Forward over `(image index, box)` pairs; returns `n x 2` logits.
    pub fn forward(&mut self, images: &[&Image], boxes: &[(usize, BBox)]) -> Result<Tensor<T>> {
        let grid = grid_of(self.params)?;
        let (levels, _, placements) = build_levels(self.params, images, boxes, self.scales)?;
        let (feats, argmax) = pool_features(&levels, &placements, grid)?;
        let head = head_forward(self.params, feats)?;
        let logits = head.logits.clone();
        self.tape = Some(FastTape {
            levels,
            placements,
            argmax,
            head,
        });
        Ok(logits)
    }

    pub fn backward(&mut self, d_logits: &Tensor<T>) -> Result<Layers<T>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let mut grads = Layers::zeros_for(&self.params.config)?;
        let d_feats = head_backward(self.params, &tape.head, d_logits, &mut grads)?;
        let per = d_feats.dims2().1;
        let mut d_maps: Vec<Tensor<T>> = tape
            .levels
            .iter()
            .map(|l| Tensor::zeros(l.tape.conv2.shape()))
            .collect();
        for (i, p) in tape.placements.iter().enumerate() {
            let dims = tape.levels[p.level].dims();
            roi_maxpool_backward(
                &d_feats.data()[i * per..(i + 1) * per],
                &tape.argmax[i],
                dims,
                d_maps[p.level].data_mut(),
            )?;
        }
        let level_grads = par::map_indexed(tape.levels.len(), |j| -> Result<Layers<T>> {
            let mut g = Layers::zeros_for(&self.params.config)?;
            trunk_backward(self.params, &tape.levels[j].tape, &d_maps[j], &mut g)?;
            Ok(g)
        });
        for g in level_grads {
            grads.accumulate(&g?)?;
        }
        Ok(grads)
    }

    /// Same role as the crop session's signature: equal signatures mean the
    /// two passes share one linear piece of the network.
    pub fn activation_signature(&self) -> Option<Vec<u32>> {
        let t = self.tape.as_ref()?;
        let mut sig = Vec::new();
        for l in &t.levels {
            sig.extend_from_slice(&l.tape.pool_argmax);
            sig.extend(l.tape.conv1.data().iter().map(|&v| (v > T::ZERO) as u32));
            sig.extend(l.tape.conv2.data().iter().map(|&v| (v > T::ZERO) as u32));
        }
        for a in &t.argmax {
            sig.extend_from_slice(a);
        }
        sig.extend(t.head.fc6.data().iter().map(|&v| (v > T::ZERO) as u32));
        Some(sig)
    }
}
