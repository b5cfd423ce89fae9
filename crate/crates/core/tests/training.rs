use deepbox::dataio::{render_scene, SynthConfig};
use deepbox::netdef::{build_net, write_checkpoint, Checkpoint, NetConfig, NetParams};
use deepbox::roipool::ScaleSet;
use deepbox::sampler::{BatchComposer, ImagePools, SamplerConfig};
use deepbox::trainer::{build_pools, train_stage, TrainImage, TrainMode, TrainOptions, TrainSchedule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenes(n: usize, seed: u64) -> Vec<TrainImage> {
    let cfg = SynthConfig {
        images: n,
        seed,
        ..SynthConfig::default()
    };
    (0..n)
        .map(|i| {
            let s = render_scene(&cfg, i).unwrap();
            TrainImage {
                gt: s.objects.iter().map(|o| o.bbox).collect(),
                image: s.image,
                proposals: Vec::new(),
            }
        })
        .collect()
}

/// Small net with the inputs centered on the training images' mean color.
fn fast_net(images: &[TrainImage], seed: u64) -> NetParams<f32> {
    let mut p = build_net(&NetConfig::small().with_roi_grid(Some([4, 4])).with_seed(seed)).unwrap();
    let mut m = [0.0f64; 3];
    for t in images {
        for (a, b) in m.iter_mut().zip(t.image.channel_means()) {
            *a += b / images.len() as f64;
        }
    }
    p.means = m.map(|v| v as f32);
    p
}

fn fast_opts() -> TrainOptions {
    TrainOptions {
        mode: TrainMode::Fast,
        scales: ScaleSet::single(160, 4096.0).unwrap(),
        allow_fresh_stage2: false,
    }
}

fn schedule(iterations: usize, batch: usize, lr: f64) -> TrainSchedule {
    let mut s = TrainSchedule::paper(1, TrainMode::Fast);
    s.iterations = iterations;
    s.decay_every = iterations;
    s.batch = batch;
    s.base_lr = lr;
    s.checkpoint_every = 0;
    s
}

/// 4 images x (4 positives + 12 negatives) = 64 fixed samples; with batch 64
/// over 4 images every batch is the whole set.
fn memorization_set(images: &[TrainImage]) -> Vec<ImagePools> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    build_pools(1, images, &SamplerConfig::default())
        .unwrap()
        .into_iter()
        .map(|mut p| {
            p.pos.shuffle(&mut rng);
            p.neg.shuffle(&mut rng);
            p.pos.truncate(4);
            p.neg.truncate(12);
            p
        })
        .collect()
}

#[test]
fn memorizes_64_samples() {
    let images = scenes(4, 31);
    let pools = memorization_set(&images);
    assert_eq!(pools.iter().map(|p| p.pos.len() + p.neg.len()).sum::<usize>(), 64);
    let mut composer = BatchComposer::new(pools, 4, 64, 0.25).unwrap().with_seed(1);
    let mut params = fast_net(&images, 1);
    let out = train_stage(&mut params, &images, &mut composer, &schedule(500, 64, 0.001), &fast_opts(), &mut |_| Ok(()))
        .unwrap();
    let tail = out.log.tail_mean(20);
    assert!(tail < 0.3, "final training loss {tail}");
}

#[test]
fn loss_falls_over_first_200_iterations() {
    let images = scenes(16, 32);
    let pools = build_pools(1, &images, &SamplerConfig::default()).unwrap();
    let mut composer = BatchComposer::new(pools, 2, 128, 0.25).unwrap().with_seed(2);
    let mut params = fast_net(&images, 2);
    let out = train_stage(&mut params, &images, &mut composer, &schedule(200, 128, 0.001), &fast_opts(), &mut |_| Ok(()))
        .unwrap();
    let slope = out.log.slope(200);
    assert!(slope < 0.0, "loss slope {slope}");
}

#[test]
fn reference_mode_reruns_are_bit_identical() {
    let images = scenes(4, 33);
    let run = || {
        let pools = build_pools(1, &images, &SamplerConfig::default()).unwrap();
        let mut composer = BatchComposer::new(pools, 2, 32, 0.25).unwrap().with_seed(3);
        let mut params = fast_net(&images, 3);
        let out = train_stage(&mut params, &images, &mut composer, &schedule(5, 32, 0.001), &fast_opts(), &mut |_| Ok(()))
            .unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(
            &mut bytes,
            &Checkpoint {
                params,
                momentum: Some(out.momentum),
            },
        )
        .unwrap();
        bytes
    };
    assert_eq!(run(), run());
}
