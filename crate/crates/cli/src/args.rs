use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

const LAYOUT: &str = "\
Dataset layout under --root:
  images/<split>/index.jsonl        {\"image_id\", \"file\", \"width\", \"height\"} per line
  images/<split>/<id>.png           8-bit RGB
  annotations/<split>/gt.jsonl      {\"image_id\", \"boxes\": [[x_min,y_min,x_max,y_max],...], \"scores\", \"categories\"}
  proposals/<split>/<name>.jsonl    same schema; reranked files add \"objectness\" and \"ranker\"
  models/<split>/<name>.dbox        binary checkpoint (magic DBOX, little-endian)
  reports/<split>/<name>/           CSV, JSON and SVG reports
  runs/<split>/<command>.manifest.json   run manifest (override with --manifest)

Config precedence: command-line flags > --config TOML file > defaults. Keys are
flag names (kebab or snake case), either at the top level or in a table named
after the subcommand, e.g. [train].";

const TRAIN_HELP: &str = "\
Outputs:
  models/<split>/<out>.dbox         final checkpoint with momentum buffers
  models/<split>/<out>.loss.csv     iteration,lr,loss,ema_loss (ema factor 0.99)
  models/<split>/<out>.partial.dbox intermediate checkpoint (with --checkpoint-every)";

const EVAL_HELP: &str = "\
Outputs in reports/<split>/<out>/:
  report_<ranker>.json   full report including the AUC formulas
  summary.csv            ranker,iou,auc_log,auc_linear,k_25,k_50,k_75,recall_at_10,recall_at_100,recall_at_1000,average_recall
  curves.csv             ranker,iou,k,recall
  recall_vs_iou.csv      ranker,k,iou,recall
  hits_<ranker>.csv      image_id,gt_index,category,gt_x_min,gt_y_min,gt_x_max,gt_y_max,status,best_index,best_x_min,best_y_min,best_x_max,best_y_max,best_iou,hit_rank
  *.svg                  recall plots (report also writes density/<image_id>.svg)";

#[derive(Parser, Debug)]
#[command(name = "deepbox", version, about = "Objectness reranking of object proposals", after_help = LAYOUT)]
pub struct Cli {
    /// Worker threads (0 = one per core; 1 = bitwise-reproducible reference mode).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// TOML config file with defaults for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic split with ground truth.
    GenSynth(GenSynthArgs),
    /// Run the edge-density baseline proposer over a split.
    ProposeBaseline(ProposeArgs),
    /// Train one stage of the objectness net.
    Train(TrainArgs),
    /// Rerank a proposal file with a trained model.
    Rerank(RerankArgs),
    /// Evaluate one proposal file against ground truth.
    Eval(EvalArgs),
    /// Evaluate and compare several proposal files, with plots and density overlays.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynth(_) => "gen-synth",
            Command::ProposeBaseline(_) => "propose-baseline",
            Command::Train(_) => "train",
            Command::Rerank(_) => "rerank",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SplitArgs {
    /// Dataset root directory.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(after_help = LAYOUT)]
pub struct GenSynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    #[arg(long, default_value_t = 160)]
    pub height: usize,
    #[arg(long, default_value_t = 1)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 3)]
    pub max_objects: usize,
    #[arg(long, default_value_t = 24)]
    pub min_object_side: usize,
    #[arg(long, default_value_t = 96)]
    pub max_object_side: usize,
    /// Clutter items per 10,000 pixels.
    #[arg(long, default_value_t = 8.0)]
    pub clutter: f64,
    /// Category count (shape kind = c % 4, texture = c / 4); at most 12.
    #[arg(long, default_value_t = 8)]
    pub categories: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(after_help = LAYOUT)]
pub struct ProposeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    /// Proposals per image.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Neighbor IoU of the candidate window grid.
    #[arg(long, default_value_t = 0.75)]
    pub alpha: f64,
    #[arg(long, default_value_t = 16)]
    pub min_side: usize,
    /// Suppress a window whose IoU with a kept one exceeds this.
    #[arg(long, default_value_t = 0.8)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = 1.0)]
    pub straddle_weight: f64,
    /// Output proposal set name.
    #[arg(long, default_value = "baseline")]
    pub name: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(after_help = TRAIN_HELP)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    /// 1 = sliding windows, 2 = hard negatives from proposals.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// crop or fast.
    #[arg(long, default_value = "crop", value_parser = ["crop", "fast"])]
    pub mode: String,
    /// Schedule scale applied to iterations and decay interval, e.g. 1/30.
    #[arg(long, default_value = "1", value_parser = parse_fraction)]
    pub scale: f64,
    /// Override the scaled iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    /// small or paper.
    #[arg(long, default_value = "small", value_parser = ["small", "paper"])]
    pub profile: String,
    /// RoI grid such as 4x4, "none", or "auto" (none for crop; 4x4 small / 16x16 paper for fast).
    #[arg(long, default_value = "auto")]
    pub grid: String,
    /// Fast-path pyramid: shorter-side lengths.
    #[arg(long, value_delimiter = ',', default_value = "160,320")]
    pub scales: Vec<usize>,
    /// Fast-path preferred box area after resizing.
    #[arg(long, default_value_t = 4096.0)]
    pub target_area: f64,
    /// Images sampled per batch (default: 2 for fast, the batch size for crop).
    #[arg(long)]
    pub images_per_batch: Option<usize>,
    /// Checkpoint to start from (required for stage 2 unless --allow-fresh-stage2).
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub allow_fresh_stage2: bool,
    /// Output model name (default deepbox-s<stage>).
    #[arg(long)]
    pub out: Option<String>,
    /// Proposal set mined for stage-2 samples.
    #[arg(long, default_value = "baseline")]
    pub proposals: String,
    /// Categories withheld from training (their objects are unlabeled), e.g. 1,3,5.
    #[arg(long, value_delimiter = ',')]
    pub holdout_categories: Vec<u32>,
    /// Perturbed positives per GT box.
    #[arg(long, default_value_t = 32)]
    pub positives_per_gt: usize,
    /// Synthetic pretraining iterations before the stage (0 = off).
    #[arg(long, default_value_t = 0)]
    pub pretrain_iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Use only the first N images of the split.
    #[arg(long)]
    pub max_images: Option<usize>,
    /// Loss-log CSV path (default next to the model).
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the loss every N iterations to stderr (0 = quiet).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(after_help = LAYOUT)]
pub struct RerankArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    /// Model name under models/<split>/, or a path to a .dbox file.
    #[arg(long, required_unless_present = "random")]
    pub model: Option<String>,
    #[arg(long, default_value = "baseline")]
    pub proposals: String,
    /// Output proposal set name (default deepbox).
    #[arg(long)]
    pub out_name: Option<String>,
    /// Score only the top N proposals by source order.
    #[arg(long, default_value_t = 2048)]
    pub top_k: usize,
    /// Score every proposal (overrides --top-k).
    #[arg(long)]
    pub all: bool,
    /// crop or fast.
    #[arg(long, default_value = "fast", value_parser = ["crop", "fast"])]
    pub path: String,
    /// Fast-path pyramid (default: the one stored with the model).
    #[arg(long, value_delimiter = ',')]
    pub scales: Vec<usize>,
    #[arg(long)]
    pub target_area: Option<f64>,
    /// Ignore the model and shuffle the scored prefix (a chance-level ranker).
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalOpts {
    /// IoU thresholds for recall-vs-k curves; the first is primary.
    #[arg(long = "iou", value_delimiter = ',', default_value = "0.7,0.5")]
    pub iou: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub k_max: usize,
    /// Proposal budget for recall vs IoU and average recall.
    #[arg(long, default_value_t = 1000)]
    pub k_fixed: usize,
    /// Only GT boxes with area below this.
    #[arg(long)]
    pub max_gt_area: Option<f64>,
    /// Only GT boxes of these categories.
    #[arg(long, value_delimiter = ',')]
    pub holdout_categories: Vec<u32>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(after_help = EVAL_HELP)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value = "baseline")]
    pub proposals: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: EvalOpts,
    /// Report directory name (default: the proposal set name).
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(after_help = EVAL_HELP)]
pub struct ReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    /// Proposal sets to compare; the first one drives the overlays.
    #[arg(long, value_delimiter = ',', required = true)]
    pub proposals: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: EvalOpts,
    /// Images that get a density overlay.
    #[arg(long, default_value_t = 10)]
    pub density_images: usize,
    /// Proposals drawn per overlay.
    #[arg(long, default_value_t = 100)]
    pub density_top: usize,
    #[arg(long, default_value = "comparison")]
    pub out: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest_path: PathBuf,
    /// Re-run even if recorded input hashes no longer match.
    #[arg(long)]
    pub force: bool,
}

/// Accept `0.5`, `1/30` and similar.
pub fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?,
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} must be a positive finite number"))
    }
}
