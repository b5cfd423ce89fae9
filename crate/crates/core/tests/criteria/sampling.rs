//! Stage-2 label and batch-ratio invariants, and sliding-window overlap.

use deepbox::dataio::{baseline_propose, render_scene, BaselineConfig, SynthConfig};
use deepbox::geometry::{iou, max_iou, BBox};
use deepbox::sampler::{sliding_window_grid, stage2_pools, BatchComposer, Label, SamplerConfig};

pub const MIN_SAMPLES: usize = 10_000;
pub const BATCH: usize = 128;

#[derive(Debug, Default)]
pub struct SamplingResult {
    pub samples: usize,
    pub batches: usize,
    pub bad_pos: usize,
    pub bad_neg: usize,
    pub in_gap: usize,
    pub bad_batches: usize,
}

/// Draw at least `MIN_SAMPLES` stage-2 samples from synthetic scenes with
/// baseline proposals and check every label against a fresh max-IoU.
pub fn stage2(seed: u64, scenes: usize, images_per_batch: usize) -> SamplingResult {
    let synth = SynthConfig {
        images: scenes,
        seed,
        ..SynthConfig::default()
    };
    let bcfg = BaselineConfig {
        n: 300,
        ..BaselineConfig::default()
    };
    let cfg = SamplerConfig {
        seed,
        ..SamplerConfig::default()
    };
    let mut gts: Vec<Vec<BBox>> = Vec::new();
    let mut pools = Vec::new();
    for i in 0..scenes {
        let scene = render_scene(&synth, i).unwrap();
        let gt: Vec<BBox> = scene.objects.iter().map(|o| o.bbox).collect();
        let props: Vec<BBox> = baseline_propose(&scene.image, &bcfg)
            .unwrap()
            .into_iter()
            .map(|(b, _)| b)
            .collect();
        pools.push(stage2_pools(i, synth.width, synth.height, &gt, &props, &cfg).unwrap());
        gts.push(gt);
    }
    let mut composer = BatchComposer::new(pools, images_per_batch, BATCH, cfg.pos_fraction)
        .unwrap()
        .with_seed(seed);
    let mut res = SamplingResult::default();
    while res.samples < MIN_SAMPLES {
        let batch = composer.next_batch().unwrap();
        let mut pos = 0i64;
        let mut neg = 0i64;
        for s in &batch {
            let m = max_iou(&s.bbox, &gts[s.image]);
            if (cfg.stage2_neg..cfg.stage2_pos).contains(&m) {
                res.in_gap += 1;
            }
            match s.label {
                Label::Object => {
                    pos += 1;
                    if m < cfg.stage2_pos {
                        res.bad_pos += 1;
                    }
                }
                Label::Background => {
                    neg += 1;
                    if m >= cfg.stage2_neg {
                        res.bad_neg += 1;
                    }
                }
            }
        }
        if (3 * pos - neg).abs() > 3 {
            res.bad_batches += 1;
        }
        res.samples += batch.len();
        res.batches += 1;
    }
    res
}

/// Largest deviation of neighbor-window IoU from `alpha` over several image
/// sizes, before clipping. Covers horizontal, vertical and scale neighbors.
pub fn window_overlap_error(alpha: f64) -> (usize, f64) {
    let cfg = SamplerConfig {
        alpha,
        ..SamplerConfig::default()
    };
    let mut pairs = 0;
    let mut worst = 0.0f64;
    for (w, h) in [(100, 100), (160, 160), (240, 130), (333, 257)] {
        let grid = sliding_window_grid(w, h, &cfg);
        for (i, a) in grid.iter().enumerate() {
            for b in &grid[i + 1..] {
                if a.aspect != b.aspect {
                    break;
                }
                let same_scale = a.scale == b.scale;
                let neighbor = same_scale
                    && ((a.row == b.row && b.col == a.col + 1) || (a.col == b.col && b.row == a.row + 1));
                if neighbor {
                    worst = worst.max((iou(&a.bbox(), &b.bbox()) - alpha).abs());
                    pairs += 1;
                }
            }
            // concentric copy one scale up
            let (cx, cy) = (a.x + a.w / 2.0, a.y + a.h / 2.0);
            let r = cfg.scale_ratio();
            let up = BBox::new(cx - a.w * r / 2.0, cy - a.h * r / 2.0, cx + a.w * r / 2.0, cy + a.h * r / 2.0).unwrap();
            worst = worst.max((iou(&a.bbox(), &up) - alpha).abs());
            pairs += 1;
        }
    }
    (pairs, worst)
}

pub fn run(seed: u64) -> Result<String, String> {
    let r = stage2(seed, 24, 2);
    let (pairs, worst) = window_overlap_error(0.65);
    let line = format!(
        "{} samples in {} batches: bad pos {}, bad neg {}, in [0.3,0.7) {}, bad ratio batches {}; {} window pairs, max |IoU-0.65| {:.1e}",
        r.samples, r.batches, r.bad_pos, r.bad_neg, r.in_gap, r.bad_batches, pairs, worst
    );
    let ok = r.samples >= MIN_SAMPLES
        && r.bad_pos == 0
        && r.bad_neg == 0
        && r.in_gap == 0
        && r.bad_batches == 0
        && pairs > 0
        && worst <= 1e-9;
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}
