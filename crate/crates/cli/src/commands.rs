use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use deepbox::dataio::{
    baseline_propose, gen_synthetic, read_jsonl, write_jsonl, BaselineConfig, Dataset, ImageRecord, SplitPaths,
    SynthConfig,
};
use deepbox::evalkit::{build_eval_set, dump_reports, evaluate, DensityImage, EvalConfig, EvalReport, GtFilter, HitStatus};
use deepbox::netdef::{build_net, load_checkpoint, save_checkpoint, Checkpoint, NetConfig, NetParams};
use deepbox::par;
use deepbox::raster::Image;
use deepbox::rerank::{rerank, ScorePath};
use deepbox::roipool::ScaleSet;
use deepbox::sampler::{BatchComposer, SamplerConfig};
use deepbox::trainer::{build_pools, synthetic_pretrain, train_stage, TrainEvent, TrainImage, TrainMode, TrainOptions, TrainSchedule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{EvalArgs, EvalOpts, GenSynthArgs, ProposeArgs, RerankArgs, ReportArgs, SplitArgs, TrainArgs};
use crate::manifest::Recorder;

fn paths(s: &SplitArgs) -> SplitPaths {
    SplitPaths::new(&s.root, &s.split)
}

/// Training-time settings that rerank needs, stored next to the checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    pub mode: TrainMode,
    pub scales: ScaleSet,
    pub holdout_categories: Vec<u32>,
}

fn model_path(p: &SplitPaths, model: &str) -> PathBuf {
    if model.ends_with(".dbox") || model.contains('/') {
        PathBuf::from(model)
    } else {
        p.model(model)
    }
}

fn meta_path(model: &Path) -> PathBuf {
    model.with_extension("meta.json")
}

pub fn gen_synth(a: &GenSynthArgs, rec: &mut Recorder) -> Result<Value> {
    let cfg = SynthConfig {
        images: a.images,
        width: a.width,
        height: a.height,
        min_objects: a.min_objects,
        max_objects: a.max_objects,
        min_object_side: a.min_object_side,
        max_object_side: a.max_object_side,
        clutter: a.clutter,
        categories: a.categories,
        seed: a.seed,
    };
    rec.seed("synth", a.seed);
    let p = paths(&a.split);
    let ds = rec.phase("render", || Ok(gen_synthetic(&cfg, &p)?))?;
    rec.output(&p.image_index())?;
    rec.output(&p.annotations())?;
    let objects: usize = ds.annotations.iter().map(|r| r.boxes.len()).sum();
    Ok(json!({ "images": ds.len(), "objects": objects }))
}

pub fn propose_baseline(a: &ProposeArgs, rec: &mut Recorder) -> Result<Value> {
    let p = paths(&a.split);
    let ds = Dataset::open(p.clone())?;
    rec.input(&p.image_index())?;
    let cfg = BaselineConfig {
        n: a.n,
        alpha: a.alpha,
        min_side: a.min_side,
        nms_iou: a.nms_iou,
        straddle_weight: a.straddle_weight,
    };
    if cfg.n == 0 {
        bail!("--n must be at least 1");
    }
    let t = Instant::now();
    let records = rec.phase("propose", || {
        let out = par::map_indexed(ds.len(), |i| -> deepbox::Result<ImageRecord> {
            let img = ds.load_image(i)?;
            let props = baseline_propose(&img, &cfg)?;
            let mut r = ImageRecord::new(ds.images[i].image_id.clone(), props.iter().map(|p| p.0).collect());
            r.scores = props.iter().map(|p| p.1).collect();
            r.ranker = Some("baseline".into());
            Ok(r)
        });
        Ok(out.into_iter().collect::<deepbox::Result<Vec<_>>>()?)
    })?;
    let secs = t.elapsed().as_secs_f64();
    let out = p.proposals(&a.name);
    write_jsonl(&out, &records)?;
    rec.output(&out)?;
    let total: usize = records.iter().map(|r| r.boxes.len()).sum();
    Ok(json!({
        "images": records.len(),
        "proposals": total,
        "seconds_per_image": secs / records.len().max(1) as f64,
    }))
}

fn load_images(ds: &Dataset, n: usize) -> Result<Vec<Image>> {
    let v = par::map_indexed(n, |i| ds.load_image(i));
    Ok(v.into_iter().collect::<deepbox::Result<Vec<_>>>()?)
}

fn parse_grid(s: &str, mode: TrainMode, profile: &str) -> Result<Option<[usize; 2]>> {
    match s {
        "auto" => Ok(match (mode, profile) {
            (TrainMode::Crop, _) => None,
            (TrainMode::Fast, "paper") => Some([16, 16]),
            (TrainMode::Fast, _) => Some([4, 4]),
        }),
        "none" => Ok(None),
        _ => {
            let (a, b) = s
                .split_once('x')
                .ok_or_else(|| anyhow!("--grid must look like 4x4, none or auto, got {s:?}"))?;
            Ok(Some([a.parse()?, b.parse()?]))
        }
    }
}

pub fn train(a: &TrainArgs, rec: &mut Recorder) -> Result<Value> {
    let p = paths(&a.split);
    let ds = Dataset::open(p.clone())?;
    rec.input(&p.image_index())?;
    rec.input(&p.annotations())?;
    rec.seed("train", a.seed);
    let mode: TrainMode = a.mode.parse()?;
    let n = a.max_images.unwrap_or(ds.len()).min(ds.len());
    if n == 0 {
        bail!("the split has no images to train on");
    }
    let images = rec.phase("load", || load_images(&ds, n))?;

    let proposals: Vec<Vec<deepbox::BBox>> = if a.stage == 2 {
        let pp = p.proposals(&a.proposals);
        rec.input(&pp)?;
        let recs = ds.load_proposals(&pp)?;
        recs.into_iter().take(n).map(|r| r.map(|r| r.boxes).unwrap_or_default()).collect()
    } else {
        vec![Vec::new(); n]
    };
    let mut categories = Vec::with_capacity(n);
    let data: Vec<TrainImage> = images
        .into_iter()
        .zip(proposals)
        .enumerate()
        .map(|(i, (image, proposals))| {
            let g = &ds.annotations[i];
            let keep: Vec<usize> = (0..g.boxes.len())
                .filter(|&j| !a.holdout_categories.contains(&g.category(j)))
                .collect();
            categories.push(keep.iter().map(|&j| g.category(j)).collect::<Vec<u32>>());
            TrainImage {
                image,
                gt: keep.iter().map(|&j| g.boxes[j]).collect(),
                proposals,
            }
        })
        .collect();

    let mut params: NetParams = match &a.init {
        Some(m) => {
            let mp = model_path(&p, m);
            rec.input(&mp)?;
            load_checkpoint(&mp)?.params
        }
        None => {
            let base = if a.profile == "paper" { NetConfig::paper() } else { NetConfig::small() };
            let cfg = base.with_seed(a.seed).with_roi_grid(parse_grid(&a.grid, mode, &a.profile)?);
            let mut net = build_net(&cfg)?;
            net.means = rec.phase("means", || Ok(ds.channel_means()?))?;
            net
        }
    };
    let scales = ScaleSet::new(a.scales.clone(), a.target_area)?;
    let opts = TrainOptions {
        mode,
        scales: scales.clone(),
        allow_fresh_stage2: a.allow_fresh_stage2,
    };

    let mut schedule = TrainSchedule::paper(a.stage, mode).scaled(a.scale)?;
    if let Some(it) = a.iterations {
        schedule.iterations = it;
        schedule.decay_every = schedule.decay_every.min(it.max(1));
    }
    schedule.batch = a.batch;
    schedule.base_lr = a.lr;
    schedule.momentum = a.momentum;
    schedule.weight_decay = a.weight_decay;
    schedule.checkpoint_every = a.checkpoint_every;
    schedule.seed = a.seed;
    schedule.validate()?;

    let mut pretrain = Value::Null;
    if a.pretrain_iterations > 0 {
        let log = rec.phase("pretrain", || {
            Ok(synthetic_pretrain(&mut params, &data, &categories, a.pretrain_iterations, a.batch, a.lr, &opts)?)
        })?;
        pretrain = json!({ "iterations": log.entries.len(), "final_loss": log.tail_mean(20) });
    }

    let sampler = SamplerConfig {
        positives_per_gt: a.positives_per_gt,
        seed: a.seed,
        ..SamplerConfig::default()
    };
    let pools = rec.phase("sample", || Ok(build_pools(a.stage, &data, &sampler)?))?;
    let (n_pos, n_neg) = pools
        .iter()
        .fold((0, 0), |acc, p| (acc.0 + p.pos.len(), acc.1 + p.neg.len()));
    let ipb = a.images_per_batch.unwrap_or(match mode {
        TrainMode::Fast => 2,
        TrainMode::Crop => a.batch,
    });
    let mut composer = BatchComposer::new(pools, ipb, a.batch, sampler.pos_fraction)?.with_seed(a.seed);

    let out_name = a.out.clone().unwrap_or_else(|| format!("deepbox-s{}", a.stage));
    let out = p.model(&out_name);
    let partial = p.model(&format!("{out_name}.partial"));
    let log_every = a.log_every;
    let total = schedule.iterations;
    let outcome = rec.phase("train", || {
        Ok(train_stage(&mut params, &data, &mut composer, &schedule, &opts, &mut |e| {
            match e {
                TrainEvent::Step(s) => {
                    if log_every > 0 && ((s.iteration + 1) % log_every == 0 || s.iteration + 1 == total) {
                        eprintln!(
                            "train: iteration {}/{total} lr {:.2e} loss {:.4} ema {:.4}",
                            s.iteration + 1,
                            s.lr,
                            s.loss,
                            s.ema_loss
                        );
                    }
                }
                TrainEvent::Checkpoint(c) => save_checkpoint(&partial, c)?,
            }
            Ok(())
        })?)
    })?;

    save_checkpoint(
        &out,
        &Checkpoint {
            params: params.clone(),
            momentum: Some(outcome.momentum),
        },
    )?;
    rec.output(&out)?;
    let loss_path = a
        .loss_log
        .clone()
        .unwrap_or_else(|| out.with_extension("loss.csv"));
    outcome.log.write_csv(&loss_path)?;
    rec.output(&loss_path)?;
    let meta = ModelMeta {
        mode,
        scales,
        holdout_categories: a.holdout_categories.clone(),
    };
    let mp = meta_path(&out);
    deepbox::dataio::write_atomic(&mp, &serde_json::to_vec_pretty(&meta)?)?;
    rec.output(&mp)?;
    let log = &outcome.log;
    Ok(json!({
        "model": out,
        "images": n,
        "positives": n_pos,
        "negatives": n_neg,
        "iterations": log.entries.len(),
        "first_loss": log.entries.first().map(|e| e.loss),
        "final_ema_loss": log.entries.last().map(|e| e.ema_loss),
        "final_loss_mean20": if log.entries.is_empty() { None } else { Some(log.tail_mean(20)) },
        "loss_slope_200": log.slope(200),
        "pretrain": pretrain,
    }))
}

fn random_order(n: usize, k: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    order.extend(k..n);
    order
}

pub fn rerank_cmd(a: &RerankArgs, rec: &mut Recorder) -> Result<Value> {
    let p = paths(&a.split);
    let ds = Dataset::open(p.clone())?;
    rec.input(&p.image_index())?;
    let src = p.proposals(&a.proposals);
    rec.input(&src)?;
    let records = read_jsonl(&src)?;
    let path: ScorePath = a.path.parse()?;
    let top_k = if a.all { None } else { Some(a.top_k) };

    let model = if a.random {
        None
    } else {
        let name = a.model.as_deref().ok_or_else(|| anyhow!("--model is required unless --random is given"))?;
        let mp = model_path(&p, name);
        rec.input(&mp)?;
        let params = load_checkpoint(&mp)?.params;
        let meta: Option<ModelMeta> = match std::fs::read(meta_path(&mp)) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes).context("parsing model metadata")?),
            Err(_) => None,
        };
        let mut scales = meta.map(|m| m.scales).unwrap_or_default();
        if !a.scales.is_empty() {
            scales.sizes = a.scales.clone();
        }
        if let Some(t) = a.target_area {
            scales.target_area = t;
        }
        scales.validate()?;
        Some((params, scales))
    };
    rec.seed("rerank", a.seed);

    let t = Instant::now();
    let out = rec.phase("rerank", || {
        let results = par::map_indexed(records.len(), |i| -> Result<ImageRecord> {
            let r = &records[i];
            let idx = ds
                .index_of(&r.image_id)
                .ok_or_else(|| anyhow!("{}: line {}: unknown image_id {:?}", src.display(), i + 1, r.image_id))?;
            match &model {
                None => {
                    let k = top_k.unwrap_or(r.boxes.len()).min(r.boxes.len());
                    let order = random_order(r.boxes.len(), k, a.seed, idx as u64);
                    let pick = |v: &[f64]| v.is_empty().then(Vec::new).unwrap_or_else(|| order.iter().map(|&j| v[j]).collect());
                    Ok(ImageRecord {
                        image_id: r.image_id.clone(),
                        boxes: order.iter().map(|&j| r.boxes[j]).collect(),
                        scores: pick(&r.scores),
                        categories: if r.categories.is_empty() {
                            Vec::new()
                        } else {
                            order.iter().map(|&j| r.categories[j]).collect()
                        },
                        objectness: None,
                        ranker: Some("random".into()),
                    })
                }
                Some((params, scales)) => {
                    let img = ds.load_image(idx)?;
                    let res = rerank(params, &img, r, top_k, path, scales)
                        .with_context(|| format!("reranking image {:?}", r.image_id))?;
                    Ok(res.apply(r))
                }
            }
        });
        results.into_iter().collect::<Result<Vec<_>>>()
    })?;
    let secs = t.elapsed().as_secs_f64();
    let name = a.out_name.clone().unwrap_or_else(|| if a.random { "random".into() } else { "deepbox".into() });
    let dst = p.proposals(&name);
    write_jsonl(&dst, &out)?;
    rec.output(&dst)?;
    let scored: usize = out.iter().map(|r| r.objectness.as_ref().map_or(0, |o| o.len())).sum();
    Ok(json!({
        "images": out.len(),
        "scored_boxes": scored,
        "path": if a.random { "random" } else { path.name() },
        "seconds_per_image": secs / out.len().max(1) as f64,
    }))
}

fn eval_config(o: &EvalOpts) -> Result<EvalConfig> {
    if o.iou.is_empty() || o.iou.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        bail!("--iou thresholds must lie in (0, 1]");
    }
    if o.k_max == 0 || o.k_fixed == 0 {
        bail!("--k-max and --k-fixed must be at least 1");
    }
    Ok(EvalConfig {
        ious: o.iou.clone(),
        k_max: o.k_max,
        k_fixed: o.k_fixed,
        filter: GtFilter {
            categories: (!o.holdout_categories.is_empty()).then(|| o.holdout_categories.clone()),
            max_area: o.max_gt_area,
        },
    })
}

fn evaluate_set(ds: &Dataset, p: &SplitPaths, name: &str, cfg: &EvalConfig) -> Result<(Vec<ImageRecord>, EvalReport)> {
    let src = p.proposals(name);
    let props = read_jsonl(&src)?;
    let set = build_eval_set(&ds.annotations, &props, &cfg.filter)?;
    let report = evaluate(&set, cfg)?;
    Ok((props, report))
}

fn summary(r: &EvalReport) -> Value {
    let curves: serde_json::Map<String, Value> = r
        .curves
        .iter()
        .map(|c| {
            (
                c.iou.to_string(),
                json!({
                    "auc_log": c.auc_log,
                    "auc_linear": c.auc_linear,
                    "recall_at_100": c.recall_at(100),
                    "recall_at_1000": c.recall_at(1000),
                    "needed": c.needed,
                }),
            )
        })
        .collect();
    json!({ "images": r.images, "gt_boxes": r.gt_boxes, "average_recall": r.average_recall, "curves": curves })
}

pub fn eval(a: &EvalArgs, rec: &mut Recorder) -> Result<Value> {
    let p = paths(&a.split);
    let ds = Dataset::open(p.clone())?;
    rec.input(&p.annotations())?;
    let cfg = eval_config(&a.opts)?;
    rec.input(&p.proposals(&a.proposals))?;
    let (_, report) = rec.phase("evaluate", || evaluate_set(&ds, &p, &a.proposals, &cfg))?;
    let dir = p.reports_dir(a.out.as_deref().unwrap_or(&a.proposals));
    for f in dump_reports(&[(a.proposals.as_str(), &report)], &[], &dir)? {
        rec.output(&f)?;
    }
    let s = summary(&report);
    println!("{}", json!({ "proposals": a.proposals, "summary": s }));
    Ok(s)
}

pub fn report(a: &ReportArgs, rec: &mut Recorder) -> Result<Value> {
    let p = paths(&a.split);
    let ds = Dataset::open(p.clone())?;
    rec.input(&p.annotations())?;
    let cfg = eval_config(&a.opts)?;
    let mut evals = Vec::new();
    for name in &a.proposals {
        rec.input(&p.proposals(name))?;
        let (props, r) = rec.phase(&format!("evaluate {name}"), || evaluate_set(&ds, &p, name, &cfg))?;
        evals.push((name.as_str(), props, r));
    }
    let (_, first_props, first) = &evals[0];
    let split = &a.split.split;
    let density: Vec<DensityImage> = first_props
        .iter()
        .take(a.density_images)
        .filter_map(|r| {
            let i = ds.index_of(&r.image_id)?;
            let e = &ds.images[i];
            let gt = first
                .hits
                .iter()
                .filter(|h| h.image_id == r.image_id)
                .map(|h| (h.gt, h.status.clone()))
                .collect::<Vec<(deepbox::BBox, HitStatus)>>();
            Some(DensityImage {
                image_id: r.image_id.clone(),
                width: e.width,
                height: e.height,
                href: Some(format!("../../../../images/{split}/{}", e.file)),
                proposals: r.boxes.iter().take(a.density_top).copied().collect(),
                gt,
            })
        })
        .collect();
    let named: Vec<(&str, &EvalReport)> = evals.iter().map(|(n, _, r)| (*n, r)).collect();
    let dir = p.reports_dir(&a.out);
    for f in rec.phase("write", || Ok(dump_reports(&named, &density, &dir)?))? {
        rec.output(&f)?;
    }
    let out: serde_json::Map<String, Value> = evals.iter().map(|(n, _, r)| (n.to_string(), summary(r))).collect();
    println!("{}", Value::Object(out.clone()));
    Ok(Value::Object(out))
}
