//! Two-stage training: sliding-window negatives first, then hard negatives
//! mined from bottom-up proposals.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::netdef::{build_net, crop_batch, CropSession, Checkpoint, NetParams};
use crate::par;
use crate::raster::Image;
use crate::roipool::{FastSession, ScaleSet};
use crate::sampler::{stage1_pools, stage2_pools, BatchComposer, ImagePools, SamplerConfig};
use crate::tensor::{sgd_step, softmax_xent, OptimState, SgdConfig, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Per-sample crops through the whole net.
    Crop,
    /// Shared trunk passes per image with RoI-pooled features.
    Fast,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crop" => Ok(TrainMode::Crop),
            "fast" => Ok(TrainMode::Fast),
            _ => Err(Error::Config(format!("unknown train mode {s:?}, expected crop or fast"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub stage: u8,
    pub iterations: usize,
    pub batch: usize,
    pub base_lr: f64,
    /// The learning rate drops by `decay_factor` every `decay_every` iterations.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Write an intermediate checkpoint this often (0 = only at the end).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainSchedule {
    /// Full-size recipe: 60k iterations on the crop path, 120k on the fast path.
    pub fn paper(stage: u8, mode: TrainMode) -> Self {
        Self {
            stage,
            iterations: match mode {
                TrainMode::Crop => 60_000,
                TrainMode::Fast => 120_000,
            },
            batch: 128,
            base_lr: 0.001,
            decay_every: 20_000,
            decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            checkpoint_every: 0,
            seed: 0,
        }
    }

    /// Shrink iterations and decay interval by the same factor.
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("schedule scale must be positive, got {factor}")));
        }
        self.iterations = (self.iterations as f64 * factor).round() as usize;
        self.decay_every = ((self.decay_every as f64 * factor).round() as usize).max(1);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.batch == 0 || self.decay_every == 0 {
            return Err(Error::Config("batch size and decay interval must be positive".into()));
        }
        if self.iterations > 0 && self.decay_every > self.iterations {
            return Err(Error::Config(format!(
                "decay interval {} exceeds {} iterations",
                self.decay_every, self.iterations
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay factor must lie in (0, 1], got {}", self.decay_factor)));
        }
        self.sgd(self.base_lr).validate()
    }

    fn sgd(&self, lr: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// Step-decayed learning rate at `iteration`.
pub fn lr_at(iteration: usize, schedule: &TrainSchedule) -> f64 {
    schedule.base_lr * schedule.decay_factor.powi((iteration / schedule.decay_every) as i32)
}

/// EMA factor applied to the logged loss.
pub const EMA_FACTOR: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub ema_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub entries: Vec<LossEntry>,
}

impl LossLog {
    pub fn push(&mut self, iteration: usize, lr: f64, loss: f64) {
        let ema_loss = match self.entries.last() {
            Some(e) => EMA_FACTOR * e.ema_loss + (1.0 - EMA_FACTOR) * loss,
            None => loss,
        };
        self.entries.push(LossEntry {
            iteration,
            lr,
            loss,
            ema_loss,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,lr,loss,ema_loss\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{},{}", e.iteration, e.lr, e.loss, e.ema_loss);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Least-squares slope of raw loss against iteration over the first `n` entries.
    pub fn slope(&self, n: usize) -> f64 {
        let e = &self.entries[..n.min(self.entries.len())];
        let m = e.len() as f64;
        if e.len() < 2 {
            return 0.0;
        }
        let mx = e.iter().map(|e| e.iteration as f64).sum::<f64>() / m;
        let my = e.iter().map(|e| e.loss).sum::<f64>() / m;
        let sxy: f64 = e.iter().map(|e| (e.iteration as f64 - mx) * (e.loss - my)).sum();
        let sxx: f64 = e.iter().map(|e| (e.iteration as f64 - mx).powi(2)).sum();
        sxy / sxx
    }

    /// Mean raw loss of the last `n` entries.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let e = &self.entries[self.entries.len().saturating_sub(n)..];
        e.iter().map(|e| e.loss).sum::<f64>() / e.len().max(1) as f64
    }
}

/// One image's share of the training data.
#[derive(Clone, Debug)]
pub struct TrainImage {
    pub image: Image,
    pub gt: Vec<BBox>,
    /// Bottom-up proposals, needed for stage 2.
    pub proposals: Vec<BBox>,
}

/// Sample pools for every image, built in parallel.
pub fn build_pools(stage: u8, images: &[TrainImage], cfg: &SamplerConfig) -> Result<Vec<ImagePools>> {
    let pools = par::map_indexed(images.len(), |i| {
        let t = &images[i];
        let (w, h) = (t.image.width(), t.image.height());
        match stage {
            1 => stage1_pools(i, w, h, &t.gt, cfg),
            _ => stage2_pools(i, w, h, &t.gt, &t.proposals, cfg),
        }
    });
    pools.into_iter().collect()
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub mode: TrainMode,
    /// Pyramid used by the fast path.
    pub scales: ScaleSet,
    /// Allow stage 2 to start from a model that never went through stage 1.
    pub allow_fresh_stage2: bool,
}

/// Progress notifications from [`train_stage`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step(&'a LossEntry),
    Checkpoint(&'a Checkpoint),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: LossLog,
    pub momentum: Vec<Tensor<f32>>,
}

fn check_mode(params: &NetParams<f32>, mode: TrainMode) -> Result<()> {
    let cfg = &params.config;
    match mode {
        TrainMode::Fast if cfg.roi_grid.is_none() => Err(Error::Config(
            "fast-mode training needs a net with an RoI grid".into(),
        )),
        TrainMode::Crop => {
            let (c, h, w) = cfg.trunk_out(cfg.input_side, cfg.input_side)?;
            if c * h * w != cfg.fc6_input_len()? {
                return Err(Error::Config(format!(
                    "crop-mode training needs a head fed by the full {h}x{w} crop feature map"
                )));
            }
            Ok(())
        }
        TrainMode::Fast => Ok(()),
    }
}

/// Forward, loss and backward for one batch of `(image, box, label)` samples.
fn batch_grads(
    params: &NetParams<f32>,
    images: &[&Image],
    samples: &[(usize, BBox, u8)],
    opts: &TrainOptions,
) -> Result<(f64, crate::netdef::Layers<f32>)> {
    let labels: Vec<u8> = samples.iter().map(|s| s.2).collect();
    match opts.mode {
        TrainMode::Crop => {
            let items: Vec<(&Image, BBox)> = samples.iter().map(|s| (images[s.0], s.1)).collect();
            let x = crop_batch(params, &items)?;
            let mut sess = CropSession::new(params);
            let logits = sess.forward(x)?;
            let (loss, d) = softmax_xent(&logits, &labels)?;
            Ok((loss as f64, sess.backward(&d)?))
        }
        TrainMode::Fast => {
            // only the images that occur in the batch get trunk passes
            let mut used: Vec<usize> = samples.iter().map(|s| s.0).collect();
            used.sort_unstable();
            used.dedup();
            let local: Vec<&Image> = used.iter().map(|&i| images[i]).collect();
            let boxes: Vec<(usize, BBox)> = samples
                .iter()
                .map(|s| (used.binary_search(&s.0).expect("image listed"), s.1))
                .collect();
            let mut sess = FastSession::new(params, &opts.scales);
            let logits = sess.forward(&local, &boxes)?;
            let (loss, d) = softmax_xent(&logits, &labels)?;
            Ok((loss as f64, sess.backward(&d)?))
        }
    }
}

fn sgd_update(params: &mut NetParams<f32>, grads: &crate::netdef::Layers<f32>, opt: &mut OptimState<f32>) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.layers.tensors_mut();
    sgd_step(&mut p, &g, opt)
}

/// Run one training stage in place. `observer` sees every logged step and
/// an intermediate checkpoint every `schedule.checkpoint_every` iterations;
/// an error from it stops training.
pub fn train_stage(
    params: &mut NetParams<f32>,
    images: &[TrainImage],
    composer: &mut BatchComposer,
    schedule: &TrainSchedule,
    opts: &TrainOptions,
    observer: &mut dyn FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    params.validate()?;
    check_mode(params, opts.mode)?;
    if schedule.stage == 2 && params.stage < 1 && !opts.allow_fresh_stage2 {
        return Err(Error::State(
            "stage 2 starts from a stage-1 model; pass the override flag to train it from scratch".into(),
        ));
    }
    let mut opt = OptimState::new(schedule.sgd(schedule.base_lr), params.layers.tensors())?;
    let refs: Vec<&Image> = images.iter().map(|t| &t.image).collect();
    let mut log = LossLog::default();
    for it in 0..schedule.iterations {
        let lr = lr_at(it, schedule);
        opt.config.lr = lr;
        let batch = composer.next_batch()?;
        let samples: Vec<(usize, BBox, u8)> = batch.iter().map(|s| (s.image, s.bbox, s.label.as_u8())).collect();
        let (loss, grads) = batch_grads(params, &refs, &samples, opts)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it, loss });
        }
        sgd_update(params, &grads, &mut opt)?;
        log.push(it, lr, loss);
        params.stage = schedule.stage as u32;
        params.iteration = it as u64 + 1;
        observer(TrainEvent::Step(log.entries.last().expect("just pushed")))?;
        if schedule.checkpoint_every > 0 && (it + 1) % schedule.checkpoint_every == 0 && it + 1 < schedule.iterations {
            observer(TrainEvent::Checkpoint(&Checkpoint {
                params: params.clone(),
                momentum: Some(opt.velocity.clone()),
            }))?;
        }
    }
    Ok(TrainOutcome {
        log,
        momentum: opt.velocity,
    })
}

/// Brief warm-up of the convolutional layers on a synthetic shape task:
/// GT crops labeled by shape family (category parity) through a throwaway
/// head. The fully connected layers are re-initialized afterwards.
pub fn synthetic_pretrain(
    params: &mut NetParams<f32>,
    images: &[TrainImage],
    categories: &[Vec<u32>],
    iterations: usize,
    batch: usize,
    lr: f64,
    opts: &TrainOptions,
) -> Result<LossLog> {
    check_mode(params, opts.mode)?;
    let mut items: Vec<(usize, BBox, u8)> = Vec::new();
    for (i, (t, cats)) in images.iter().zip(categories).enumerate() {
        for (b, c) in t.gt.iter().zip(cats) {
            items.push((i, *b, (c % 2) as u8));
        }
    }
    let mut log = LossLog::default();
    if items.is_empty() || iterations == 0 {
        return Ok(log);
    }
    let sgd = SgdConfig {
        lr,
        momentum: 0.9,
        weight_decay: 0.0005,
    };
    let mut opt = OptimState::new(sgd, params.layers.tensors())?;
    let refs: Vec<&Image> = images.iter().map(|t| &t.image).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.config.seed ^ 0x5eed);
    let mut order: Vec<usize> = Vec::new();
    for it in 0..iterations {
        let mut samples = Vec::with_capacity(batch);
        while samples.len() < batch {
            if order.is_empty() {
                order = (0..items.len()).collect();
                order.shuffle(&mut rng);
            }
            samples.push(items[order.pop().expect("non-empty")]);
        }
        let (loss, grads) = batch_grads(params, &refs, &samples, opts)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it, loss });
        }
        sgd_update(params, &grads, &mut opt)?;
        log.push(it, lr, loss);
    }
    let fresh = build_net(&params.config)?;
    params.layers.fc6_w = fresh.layers.fc6_w;
    params.layers.fc6_b = fresh.layers.fc6_b;
    params.layers.fc7_w = fresh.layers.fc7_w;
    params.layers.fc7_b = fresh.layers.fc7_b;
    Ok(log)
}

/// Keep only GT boxes whose category is in `keep` (all when `keep` is empty).
pub fn filter_gt(boxes: &[BBox], categories: &[u32], keep: &[u32]) -> Vec<BBox> {
    if keep.is_empty() {
        return boxes.to_vec();
    }
    boxes
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(&categories.get(*i).copied().unwrap_or(0)))
        .map(|(_, b)| *b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdef::NetConfig;
    use crate::sampler::{Label, LabeledSample, Source};

    #[test]
    fn lr_examples() {
        let s = TrainSchedule::paper(1, TrainMode::Crop);
        assert_eq!(lr_at(0, &s), 0.001);
        assert!((lr_at(20_000, &s) - 0.0001).abs() < 1e-18);
        assert!((lr_at(45_000, &s) - 0.00001).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for it in (0..60_000).step_by(500) {
            assert!(lr_at(it, &s) <= prev);
            prev = lr_at(it, &s);
        }
    }

    #[test]
    fn scaled_schedule() {
        let s = TrainSchedule::paper(1, TrainMode::Crop).scaled(1.0 / 30.0).unwrap();
        assert_eq!((s.iterations, s.decay_every), (2000, 667));
        let f = TrainSchedule::paper(1, TrainMode::Fast).scaled(1.0 / 30.0).unwrap();
        assert_eq!(f.iterations, 4000);
        assert!(TrainSchedule::paper(1, TrainMode::Crop).scaled(0.0).is_err());
        let mut bad = s.clone();
        bad.decay_every = 5000;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ema_log() {
        let mut l = LossLog::default();
        l.push(0, 0.1, 1.0);
        l.push(1, 0.1, 0.0);
        assert_eq!(l.entries[1].ema_loss, 0.99);
        assert!(l.to_csv().starts_with("iteration,lr,loss,ema_loss\n0,0.1,1,1\n"));
        assert!(l.slope(2) < 0.0);
    }

    fn tiny_data() -> (Vec<TrainImage>, BatchComposer) {
        let img = Image::new(64, 64, (0..3 * 64 * 64).map(|i| (i % 97) as f32).collect()).unwrap();
        let gt = vec![BBox::new(10.0, 10.0, 40.0, 40.0).unwrap()];
        let mk = |b: BBox, label| LabeledSample {
            image: 0,
            bbox: b,
            label,
            stage: 1,
            source: Source::Sliding,
        };
        let pools = vec![ImagePools {
            pos: vec![mk(gt[0], Label::Object)],
            neg: vec![mk(BBox::new(30.0, 30.0, 64.0, 64.0).unwrap(), Label::Background)],
        }];
        let data = vec![TrainImage {
            image: img,
            gt,
            proposals: vec![],
        }];
        (data, BatchComposer::new(pools, 1, 4, 0.25).unwrap())
    }

    fn opts(mode: TrainMode) -> TrainOptions {
        TrainOptions {
            mode,
            scales: ScaleSet::single(64, 30.0 * 30.0).unwrap(),
            allow_fresh_stage2: false,
        }
    }

    #[test]
    fn zero_iterations_leave_params_unchanged() {
        let (data, mut comp) = tiny_data();
        let mut p = build_net(&NetConfig::small()).unwrap();
        let before = p.clone();
        let mut s = TrainSchedule::paper(1, TrainMode::Crop);
        s.iterations = 0;
        let out = train_stage(&mut p, &data, &mut comp, &s, &opts(TrainMode::Crop), &mut |_| Ok(())).unwrap();
        assert!(out.log.entries.is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn stage2_needs_stage1_unless_overridden() {
        let (data, mut comp) = tiny_data();
        let mut p = build_net(&NetConfig::small()).unwrap();
        let mut s = TrainSchedule::paper(2, TrainMode::Crop);
        s.iterations = 1;
        s.decay_every = 1;
        let e = train_stage(&mut p, &data, &mut comp, &s, &opts(TrainMode::Crop), &mut |_| Ok(())).unwrap_err();
        assert!(matches!(e, Error::State(_)));
        let mut o = opts(TrainMode::Crop);
        o.allow_fresh_stage2 = true;
        train_stage(&mut p, &data, &mut comp, &s, &o, &mut |_| Ok(())).unwrap();
        assert_eq!((p.stage, p.iteration), (2, 1));
    }

    #[test]
    fn divergence_is_reported() {
        let (data, mut comp) = tiny_data();
        let mut p = build_net(&NetConfig::small()).unwrap();
        // finite logits whose cross-entropy overflows
        p.layers.fc7_b.data_mut().copy_from_slice(&[f32::MAX, -f32::MAX]);
        let mut s = TrainSchedule::paper(1, TrainMode::Crop);
        s.iterations = 3;
        s.decay_every = 3;
        let e = train_stage(&mut p, &data, &mut comp, &s, &opts(TrainMode::Crop), &mut |_| Ok(())).unwrap_err();
        assert!(matches!(e, Error::Divergence { iteration: 0, .. }), "{e}");
    }

    #[test]
    fn fast_mode_needs_grid_and_checkpoints_fire() {
        let (data, mut comp) = tiny_data();
        let mut p = build_net(&NetConfig::small()).unwrap();
        let mut s = TrainSchedule::paper(1, TrainMode::Fast);
        s.iterations = 4;
        s.decay_every = 2;
        s.checkpoint_every = 2;
        assert!(train_stage(&mut p, &data, &mut comp, &s, &opts(TrainMode::Fast), &mut |_| Ok(())).is_err());
        let mut p = build_net(&NetConfig::small().with_roi_grid(Some([4, 4]))).unwrap();
        let mut seen = Vec::new();
        train_stage(&mut p, &data, &mut comp, &s, &opts(TrainMode::Fast), &mut |e| {
            if let TrainEvent::Checkpoint(c) = e {
                seen.push(c.params.iteration);
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![2]);
    }

    #[test]
    fn filter_keeps_listed_categories() {
        let b = |x: f64| BBox::new(x, 0.0, x + 1.0, 1.0).unwrap();
        let boxes = [b(0.0), b(1.0), b(2.0)];
        assert_eq!(filter_gt(&boxes, &[0, 1, 2], &[0, 2]), vec![b(0.0), b(2.0)]);
        assert_eq!(filter_gt(&boxes, &[0, 1, 2], &[]).len(), 3);
    }
}
