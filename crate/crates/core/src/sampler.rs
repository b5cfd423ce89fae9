//! Training-sample generation: sliding-window negatives and perturbed
//! ground-truth positives for the first stage, proposal-mined hard negatives
//! for the second, and balanced minibatch composition.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip_to_image, max_iou, perturb_gt, BBox};

/// Perturbation attempts per requested positive before giving up on a GT box.
pub const MAX_POSITIVE_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// IoU between neighboring sliding windows.
    pub alpha: f64,
    /// Window aspect ratios as width / height.
    pub aspect_ratios: Vec<f64>,
    pub gamma: f64,
    pub stage1_pos: f64,
    pub stage1_neg: f64,
    pub stage2_pos: f64,
    pub stage2_neg: f64,
    /// Fraction of each batch that is positive (1:3 gives 0.25).
    pub pos_fraction: f64,
    pub min_window_side: usize,
    /// Perturbed positives drawn per GT box when building a pool.
    pub positives_per_gt: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.65,
            aspect_ratios: vec![1.0, 2.0 / 3.0, 1.0 / 3.0, 1.5, 3.0],
            gamma: 0.2,
            stage1_pos: 0.5,
            stage1_neg: 0.5,
            stage2_pos: 0.7,
            stage2_neg: 0.3,
            pos_fraction: 0.25,
            min_window_side: 16,
            positives_per_gt: 32,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.aspect_ratios.is_empty() || self.aspect_ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("aspect ratios must be positive".into());
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 0.5), got {}", self.gamma));
        }
        if self.stage1_neg > self.stage1_pos || self.stage2_neg > self.stage2_pos {
            return bad("negative threshold exceeds positive threshold".into());
        }
        if !(self.pos_fraction > 0.0 && self.pos_fraction < 1.0) {
            return bad(format!("positive fraction must lie in (0, 1), got {}", self.pos_fraction));
        }
        if self.min_window_side == 0 {
            return bad("min window side must be positive".into());
        }
        Ok(())
    }

    /// Translation step for a window of extent `len`: neighbors one step
    /// apart overlap with IoU `alpha`.
    pub fn step(&self, len: f64) -> f64 {
        len * (1.0 - self.alpha) / (1.0 + self.alpha)
    }

    /// Ratio between consecutive window scales: concentric neighbors overlap
    /// with IoU `alpha`.
    pub fn scale_ratio(&self) -> f64 {
        1.0 / self.alpha.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Background = 0,
    Object = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Sliding,
    PerturbedGt,
    Proposal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: usize,
    pub bbox: BBox,
    pub label: Label,
    pub stage: u8,
    pub source: Source,
}

/// An unclipped window with its position in the enumeration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawWindow {
    pub aspect: usize,
    pub scale: usize,
    pub row: usize,
    pub col: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl RawWindow {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.x + self.w, self.y + self.h).expect("positive window")
    }
}

fn positions(extent: f64, len: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let p = k as f64 * step;
        // the last window may overhang the border by less than one step
        if p >= extent - len + step - 1e-9 {
            break;
        }
        out.push(p);
        k += 1;
    }
    out
}

/// Enumerate windows before clipping, aspect-major, then scale, row, column.
pub fn sliding_window_grid(width: usize, height: usize, cfg: &SamplerConfig) -> Vec<RawWindow> {
    let (wf, hf) = (width as f64, height as f64);
    let min = cfg.min_window_side as f64;
    let ratio = cfg.scale_ratio();
    let mut out = Vec::new();
    for (ai, &ar) in cfg.aspect_ratios.iter().enumerate() {
        // the shorter side starts at `min`
        let (mut w, mut h) = if ar >= 1.0 { (min * ar, min) } else { (min, min / ar) };
        let mut si = 0;
        while w <= wf + 1e-9 && h <= hf + 1e-9 {
            let dx = cfg.step(w);
            let dy = cfg.step(h);
            for (r, y) in positions(hf, h, dy).into_iter().enumerate() {
                for (c, x) in positions(wf, w, dx).into_iter().enumerate() {
                    out.push(RawWindow {
                        aspect: ai,
                        scale: si,
                        row: r,
                        col: c,
                        x,
                        y,
                        w,
                        h,
                    });
                }
            }
            w *= ratio;
            h *= ratio;
            si += 1;
        }
    }
    out
}

/// Sliding windows clipped to the image. Empty when the image is smaller
/// than the minimum window.
pub fn gen_sliding_windows(width: usize, height: usize, cfg: &SamplerConfig) -> Vec<BBox> {
    sliding_window_grid(width, height, cfg)
        .into_iter()
        .filter_map(|r| clip_to_image(&r.bbox(), width as f64, height as f64).ok())
        .collect()
}

/// Label candidate boxes against the image's GT boxes; `None` means discard.
///
/// Stage 1 keeps sliding windows with max-IoU <= `stage1_neg` as background
/// and perturbed GT with max-IoU >= `stage1_pos` as objects. Stage 2 labels
/// any box by max-IoU: >= `stage2_pos` object, < `stage2_neg` background,
/// otherwise discarded.
pub fn label_boxes(
    boxes: &[BBox],
    gt: &[BBox],
    stage: u8,
    source: Source,
    cfg: &SamplerConfig,
) -> Vec<Option<Label>> {
    boxes
        .iter()
        .map(|b| {
            let m = max_iou(b, gt);
            match (stage, source) {
                (1, Source::PerturbedGt) => (m >= cfg.stage1_pos).then_some(Label::Object),
                (1, _) => (m <= cfg.stage1_neg).then_some(Label::Background),
                _ => {
                    if m >= cfg.stage2_pos {
                        Some(Label::Object)
                    } else if m < cfg.stage2_neg {
                        Some(Label::Background)
                    } else {
                        None
                    }
                }
            }
        })
        .collect()
}

/// Draw `count` perturbed GT boxes whose max-IoU with `gt` is at least
/// `min_iou`, choosing the source box uniformly for each.
pub fn gen_positives<R: Rng + ?Sized>(
    gt: &[BBox],
    count: usize,
    min_iou: f64,
    cfg: &SamplerConfig,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Vec<BBox>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if gt.is_empty() {
        return Err(Error::SamplingExhausted("no ground truth to perturb".into()));
    }
    let (wf, hf) = (width as f64, height as f64);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g = gt[rng.random_range(0..gt.len())];
        let mut found = None;
        for _ in 0..MAX_POSITIVE_ATTEMPTS {
            if let Ok(p) = perturb_gt(&g, cfg.gamma, wf, hf, rng) {
                if max_iou(&p, gt) >= min_iou {
                    found = Some(p);
                    break;
                }
            }
        }
        match found {
            Some(p) => out.push(p),
            None => {
                return Err(Error::SamplingExhausted(format!(
                    "GT box {:?} produced no perturbation with IoU >= {min_iou} in {MAX_POSITIVE_ATTEMPTS} attempts",
                    g.to_array()
                )))
            }
        }
    }
    Ok(out)
}

/// Positive and negative samples available from one image.
#[derive(Clone, Debug, Default)]
pub struct ImagePools {
    pub pos: Vec<LabeledSample>,
    pub neg: Vec<LabeledSample>,
}

fn per_image_rng(seed: u64, stage: u8, image: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((stage as u64) << 56));
    rng.set_stream(image as u64);
    rng
}

fn collect(
    image: usize,
    stage: u8,
    source: Source,
    boxes: &[BBox],
    labels: &[Option<Label>],
    pools: &mut ImagePools,
) {
    for (b, l) in boxes.iter().zip(labels) {
        let s = |label| LabeledSample {
            image,
            bbox: *b,
            label,
            stage,
            source,
        };
        match l {
            Some(Label::Object) => pools.pos.push(s(Label::Object)),
            Some(Label::Background) => pools.neg.push(s(Label::Background)),
            None => {}
        }
    }
}

/// Stage-1 pools: every surviving sliding window as a negative, plus
/// `positives_per_gt` perturbed positives per GT box.
pub fn stage1_pools(
    image: usize,
    width: usize,
    height: usize,
    gt: &[BBox],
    cfg: &SamplerConfig,
) -> Result<ImagePools> {
    cfg.validate()?;
    let mut pools = ImagePools::default();
    let windows = gen_sliding_windows(width, height, cfg);
    let labels = label_boxes(&windows, gt, 1, Source::Sliding, cfg);
    collect(image, 1, Source::Sliding, &windows, &labels, &mut pools);
    if !gt.is_empty() {
        let mut rng = per_image_rng(cfg.seed, 1, image);
        let pos = gen_positives(gt, cfg.positives_per_gt * gt.len(), cfg.stage1_pos, cfg, width, height, &mut rng)?;
        let labels = label_boxes(&pos, gt, 1, Source::PerturbedGt, cfg);
        collect(image, 1, Source::PerturbedGt, &pos, &labels, &mut pools);
    }
    Ok(pools)
}

/// Stage-2 pools from bottom-up proposals. Positives are proposals at or above
/// `stage2_pos`, topped up with perturbed GT to `positives_per_gt` per GT box.
pub fn stage2_pools(
    image: usize,
    width: usize,
    height: usize,
    gt: &[BBox],
    proposals: &[BBox],
    cfg: &SamplerConfig,
) -> Result<ImagePools> {
    cfg.validate()?;
    let mut pools = ImagePools::default();
    let labels = label_boxes(proposals, gt, 2, Source::Proposal, cfg);
    collect(image, 2, Source::Proposal, proposals, &labels, &mut pools);
    let want = cfg.positives_per_gt * gt.len();
    if pools.pos.len() < want {
        let mut rng = per_image_rng(cfg.seed, 2, image);
        let extra = gen_positives(gt, want - pools.pos.len(), cfg.stage2_pos, cfg, width, height, &mut rng)?;
        let labels = label_boxes(&extra, gt, 2, Source::PerturbedGt, cfg);
        collect(image, 2, Source::PerturbedGt, &extra, &labels, &mut pools);
    }
    Ok(pools)
}

/// Number of positives in a batch of `batch` at the given fraction.
pub fn positives_in_batch(batch: usize, pos_fraction: f64) -> usize {
    ((batch as f64 * pos_fraction).round() as usize).min(batch)
}

/// Without-replacement draws from `0..len`, reshuffling at each epoch end.
#[derive(Clone, Debug)]
struct EpochCursor {
    order: Vec<usize>,
    next: usize,
}

impl EpochCursor {
    fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            next: len,
        }
    }

    fn draw<R: Rng>(&mut self, n: usize, rng: &mut R, out: &mut Vec<usize>) {
        for _ in 0..n {
            if self.next >= self.order.len() {
                self.order.shuffle(rng);
                self.next = 0;
            }
            out.push(self.order[self.next]);
            self.next += 1;
        }
    }
}

/// Draw one balanced batch from `pos` and `neg`, shuffled.
pub fn compose_batch<R: Rng>(
    pos: &[LabeledSample],
    neg: &[LabeledSample],
    batch: usize,
    pos_fraction: f64,
    rng: &mut R,
) -> Result<Vec<LabeledSample>> {
    let pools = vec![ImagePools {
        pos: pos.to_vec(),
        neg: neg.to_vec(),
    }];
    BatchComposer::new(pools, 1, batch, pos_fraction)?.next_batch_with(rng)
}

/// Deterministic stream of balanced minibatches.
///
/// With `images_per_batch = k`, every batch is drawn from `k` images (cycled
/// without replacement), each contributing `batch / k` samples at the
/// configured ratio; this keeps the shared-feature path to `k` trunk passes
/// per iteration. A single merged pool gives plain global sampling.
#[derive(Clone, Debug)]
pub struct BatchComposer {
    pools: Vec<ImagePools>,
    usable: Vec<usize>,
    image_cursor: EpochCursor,
    pos_cursors: Vec<EpochCursor>,
    neg_cursors: Vec<EpochCursor>,
    images_per_batch: usize,
    batch: usize,
    pos_fraction: f64,
    rng: ChaCha8Rng,
}

impl BatchComposer {
    pub fn new(pools: Vec<ImagePools>, images_per_batch: usize, batch: usize, pos_fraction: f64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Composition("batch size must be positive".into()));
        }
        let usable: Vec<usize> = pools
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.pos.is_empty() && !p.neg.is_empty())
            .map(|(i, _)| i)
            .collect();
        if usable.is_empty() {
            let msg = if pools.iter().all(|p| p.pos.is_empty()) {
                "positive pool is empty"
            } else {
                "no image has both positives and negatives"
            };
            return Err(Error::Composition(msg.into()));
        }
        let k = images_per_batch.clamp(1, usable.len().min(batch));
        Ok(Self {
            image_cursor: EpochCursor::new(usable.len()),
            pos_cursors: pools.iter().map(|p| EpochCursor::new(p.pos.len())).collect(),
            neg_cursors: pools.iter().map(|p| EpochCursor::new(p.neg.len())).collect(),
            pools,
            usable,
            images_per_batch: k,
            batch,
            pos_fraction,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn pools(&self) -> &[ImagePools] {
        &self.pools
    }

    pub fn next_batch(&mut self) -> Result<Vec<LabeledSample>> {
        let mut rng = self.rng.clone();
        let out = self.next_batch_with(&mut rng);
        self.rng = rng;
        out
    }

    fn next_batch_with<R: Rng>(&mut self, rng: &mut R) -> Result<Vec<LabeledSample>> {
        let k = self.images_per_batch;
        let mut imgs = Vec::with_capacity(k);
        self.image_cursor.draw(k, rng, &mut imgs);
        let n_pos = positives_in_batch(self.batch, self.pos_fraction);
        let mut out = Vec::with_capacity(self.batch);
        let mut idx = Vec::new();
        for (j, &u) in imgs.iter().enumerate() {
            let i = self.usable[u];
            // spread the totals so the whole batch hits n_pos exactly
            let share = |total: usize| total * (j + 1) / k - total * j / k;
            let p = share(n_pos);
            let n = share(self.batch - n_pos);
            idx.clear();
            self.pos_cursors[i].draw(p, rng, &mut idx);
            out.extend(idx.iter().map(|&t| self.pools[i].pos[t]));
            idx.clear();
            self.neg_cursors[i].draw(n, rng, &mut idx);
            out.extend(idx.iter().map(|&t| self.pools[i].neg[t]));
        }
        out.shuffle(rng);
        Ok(out)
    }
}
