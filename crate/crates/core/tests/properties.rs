use std::path::Path;

use deepbox::dataio::{parse_jsonl, to_jsonl, ImageRecord};
use deepbox::evalkit::{auc_linear, auc_log, build_eval_set, evaluate, recall_curve, EvalConfig, EvalImage, GtFilter};
use deepbox::geometry::{iou, BBox};
use deepbox::netdef::{build_net, read_checkpoint, write_checkpoint, Checkpoint, NetConfig};
use deepbox::raster::Image;
use deepbox::rerank::{rerank, score_boxes, ScorePath};
use deepbox::roipool::{bin_bounds, forward_objectness_fast, ScaleSet};
use deepbox::tensor::{
    conv2d_forward, conv_out_dim, maxpool_forward, pool_out_dim, softmax, ConvSpec, PoolSpec, Tensor,
};
use deepbox::trainer::{lr_at, TrainMode, TrainSchedule};
use proptest::prelude::*;

fn arb_box(extent: f64) -> impl Strategy<Value = BBox> {
    (0.0..extent - 2.0, 0.0..extent - 2.0, 1.0..extent, 1.0..extent).prop_map(move |(x, y, w, h)| {
        let x1 = (x + w).min(extent);
        let y1 = (y + h).min(extent);
        BBox::new(x, y, x1.max(x + 1.0), y1.max(y + 1.0)).unwrap()
    })
}

fn arb_int_box() -> impl Strategy<Value = BBox> {
    (0u8..30, 0u8..30, 1u8..12, 1u8..12).prop_map(|(x, y, w, h)| {
        BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap()
    })
}

fn arb_eval_images() -> impl Strategy<Value = Vec<EvalImage>> {
    prop::collection::vec(
        (prop::collection::vec(arb_int_box(), 0..15), prop::collection::vec((arb_int_box(), 0u32..4), 0..6)),
        1..4,
    )
    .prop_map(|imgs| {
        imgs.into_iter()
            .enumerate()
            .map(|(i, (proposals, gt))| EvalImage {
                image_id: format!("img{i}"),
                proposals,
                categories: gt.iter().map(|g| g.1).collect(),
                gt: gt.into_iter().map(|g| g.0).collect(),
            })
            .collect()
    })
}

fn image(w: usize, h: usize, seed: u64) -> Image {
    let data = (0..3 * w * h)
        .map(|i| ((i as u64 * 2654435761 + seed * 97) % 251) as f32)
        .collect();
    Image::new(w, h, data).unwrap()
}

proptest! {
    #[test]
    fn iou_of_box_with_itself_is_one(a in arb_box(200.0)) {
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn conv_and_pool_shapes_follow_formula(
        h in 1usize..40, w in 1usize..40, k in 1usize..6, s in 1usize..4, p in 0usize..3,
    ) {
        let x = Tensor::<f32>::filled(&[1, 1, h, w], 1.0);
        let spec = ConvSpec::new(k, s, p).unwrap();
        let wt = Tensor::<f32>::filled(&[1, 1, k, k], 0.5);
        let b = Tensor::<f32>::zeros(&[1]);
        match conv2d_forward(&x, &wt, &b, spec) {
            Ok(y) => {
                let want = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
                prop_assert!(h + 2 * p >= k && w + 2 * p >= k);
                prop_assert_eq!((y.shape()[2], y.shape()[3]), want);
                prop_assert_eq!(conv_out_dim(h, k, s, p), Some(want.0));
            }
            Err(_) => prop_assert!(h + 2 * p < k || w + 2 * p < k),
        }
        match maxpool_forward(&x, PoolSpec::new(k, s).unwrap()) {
            Ok((y, _)) => {
                prop_assert_eq!((y.shape()[2], y.shape()[3]), ((h - k) / s + 1, (w - k) / s + 1));
                prop_assert_eq!(pool_out_dim(h, k, s), Some((h - k) / s + 1));
            }
            Err(_) => prop_assert!(h < k || w < k),
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(z in prop::collection::vec(-50.0f32..50.0, 2..40)) {
        let n = z.len() / 2;
        let t = Tensor::from_vec(&[n, 2], z[..2 * n].to_vec()).unwrap();
        for row in softmax(&t).data().chunks(2) {
            prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn conv_forward_is_deterministic(seed in any::<u64>()) {
        let v = |n: usize, off: u64| -> Vec<f32> {
            (0..n).map(|i| (((i as u64 + off) * 2654435761 ^ seed) % 1000) as f32 / 500.0 - 1.0).collect()
        };
        let x = Tensor::from_vec(&[2, 3, 9, 9], v(486, 1)).unwrap();
        let w = Tensor::from_vec(&[4, 3, 3, 3], v(108, 2)).unwrap();
        let b = Tensor::from_vec(&[4], v(4, 3)).unwrap();
        let spec = ConvSpec::new(3, 1, 1).unwrap();
        let y1 = conv2d_forward(&x, &w, &b, spec).unwrap();
        let y2 = conv2d_forward(&x, &w, &b, spec).unwrap();
        prop_assert_eq!(
            y1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bins_partition_the_roi(len in 1usize..40, bins in 1usize..12) {
        let b = bin_bounds(len, bins);
        prop_assert_eq!(b.len(), bins);
        if len >= bins {
            // contiguous, disjoint, covering
            prop_assert_eq!(b[0].0, 0);
            prop_assert_eq!(b[bins - 1].1, len);
            for w in b.windows(2) {
                prop_assert_eq!(w[0].1, w[1].0);
            }
            prop_assert!(b.iter().all(|(s, e)| e > s));
        } else {
            // every bin is one cell and every cell is used
            prop_assert!(b.iter().all(|(s, e)| e - s == 1 && *e <= len));
            let mut cells: Vec<usize> = b.iter().map(|(s, _)| *s).collect();
            cells.dedup();
            prop_assert_eq!(cells, (0..len).collect::<Vec<_>>());
        }
    }

    #[test]
    fn lr_is_non_increasing(a in 0usize..120_000, b in 0usize..120_000) {
        let s = TrainSchedule::paper(1, TrainMode::Fast);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(lr_at(hi, &s) <= lr_at(lo, &s));
    }

    #[test]
    fn recall_is_monotone_and_auc_bounded(images in arb_eval_images()) {
        let mut prev_curve: Option<Vec<f64>> = None;
        for t in [0.3, 0.5, 0.7, 0.9] {
            let c = recall_curve(&images, t, 20);
            prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
            if let Some(p) = &prev_curve {
                prop_assert!(c.iter().zip(p).all(|(a, b)| a <= b));
                prop_assert!(auc_log(&c) <= auc_log(p));
                prop_assert!(auc_linear(&c) <= auc_linear(p));
            }
            for a in [auc_log(&c), auc_linear(&c)] {
                prop_assert!((0.0..=1.0).contains(&a));
            }
            prev_curve = Some(c);
        }
    }

    #[test]
    fn full_category_filter_equals_unfiltered(images in arb_eval_images()) {
        let to_records = |props: bool| -> Vec<ImageRecord> {
            images.iter().map(|i| {
                let mut r = ImageRecord::new(i.image_id.clone(), if props { i.proposals.clone() } else { i.gt.clone() });
                if !props {
                    r.categories = i.categories.clone();
                }
                r
            }).collect()
        };
        let gt = to_records(false);
        let props = to_records(true);
        let all = GtFilter { categories: Some((0..4).collect()), max_area: None };
        let cfg = EvalConfig { k_max: 20, ..EvalConfig::default() };
        let a = evaluate(&build_eval_set(&gt, &props, &GtFilter::default()).unwrap(), &cfg).unwrap();
        let mut cfg_f = cfg.clone();
        cfg_f.filter = all.clone();
        let b = evaluate(&build_eval_set(&gt, &props, &all).unwrap(), &cfg_f).unwrap();
        prop_assert_eq!(a.curves, b.curves);
        prop_assert_eq!(a.hits, b.hits);
    }

    #[test]
    fn proposal_records_roundtrip(
        boxes in prop::collection::vec(arb_box(500.0), 0..10),
        seed in any::<u32>(),
    ) {
        let mut r = ImageRecord::new(format!("im{seed}"), boxes.clone());
        r.scores = boxes.iter().enumerate().map(|(i, _)| (seed as f64 + i as f64) / 7.0).collect();
        r.categories = boxes.iter().enumerate().map(|(i, _)| (seed as usize + i) as u32 % 5).collect();
        let bytes = to_jsonl(std::slice::from_ref(&r)).unwrap();
        let back = parse_jsonl(std::str::from_utf8(&bytes).unwrap(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, vec![r]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn checkpoints_roundtrip(seed in any::<u64>()) {
        let mut params = build_net(&NetConfig::small().with_seed(seed).with_roi_grid(Some([2, 2]))).unwrap();
        params.stage = 1;
        params.iteration = seed % 1000;
        params.means = [seed as f32 % 7.0, 1.5, -2.25];
        let ck = Checkpoint { params, momentum: None };
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ck).unwrap();
        prop_assert_eq!(read_checkpoint(&bytes[..]).unwrap(), ck);
    }

    #[test]
    fn crop_scores_ignore_batch_order(perm_seed in any::<u64>()) {
        let params = build_net(&NetConfig::small().with_seed(4)).unwrap();
        let img = image(90, 70, 1);
        let boxes: Vec<BBox> = (0..5)
            .map(|i| BBox::new(i as f64 * 5.0, i as f64 * 3.0, 40.0 + i as f64 * 9.0, 30.0 + i as f64 * 7.0).unwrap())
            .collect();
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        let mut s = perm_seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<BBox> = order.iter().map(|&i| boxes[i]).collect();
        let a = score_boxes(&params, &img, &boxes, ScorePath::Crop, &ScaleSet::default()).unwrap();
        let b = score_boxes(&params, &img, &shuffled, ScorePath::Crop, &ScaleSet::default()).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(a[i].to_bits(), b[j].to_bits());
        }
    }

    #[test]
    fn fast_scores_are_permutation_equivariant(rot in 0usize..6) {
        let params = build_net(&NetConfig::small().with_seed(5).with_roi_grid(Some([4, 4]))).unwrap();
        let img = image(120, 100, 2);
        let boxes: Vec<BBox> = (0..6)
            .map(|i| BBox::new(i as f64 * 7.0, i as f64 * 4.0, 50.0 + i as f64 * 10.0, 40.0 + i as f64 * 9.0).unwrap())
            .collect();
        let mut rotated = boxes.clone();
        rotated.rotate_left(rot);
        let scales = ScaleSet::default();
        let a = forward_objectness_fast(&params, &img, &boxes, &scales).unwrap();
        let mut b = forward_objectness_fast(&params, &img, &rotated, &scales).unwrap();
        b.rotate_right(rot);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rerank_is_a_deterministic_permutation(n in 1usize..12, dup in 0usize..12) {
        let params = build_net(&NetConfig::small().with_seed(6).with_roi_grid(Some([4, 4]))).unwrap();
        let img = image(100, 100, 3);
        let mut boxes: Vec<BBox> = (0..n)
            .map(|i| BBox::new((i * 5) as f64, (i * 3) as f64, (40 + i * 5) as f64, (35 + i * 4) as f64).unwrap())
            .collect();
        let d = dup % n;
        boxes.push(boxes[d]);
        let rec = ImageRecord::new("x", boxes.clone());
        let scales = ScaleSet::default();
        let r1 = rerank(&params, &img, &rec, None, ScorePath::Fast, &scales).unwrap();
        let r2 = rerank(&params, &img, &rec, None, ScorePath::Fast, &scales).unwrap();
        prop_assert_eq!(&r1.order, &r2.order);
        let mut sorted = r1.order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..boxes.len()).collect::<Vec<_>>());
        // the duplicate shares its original's score and stays behind it
        let pos_orig = r1.order.iter().position(|&i| i == d).unwrap();
        let pos_dup = r1.order.iter().position(|&i| i == n).unwrap();
        prop_assert!(pos_orig < pos_dup);
        prop_assert_eq!(r1.scores[pos_orig], r1.scores[pos_dup]);
    }
}
