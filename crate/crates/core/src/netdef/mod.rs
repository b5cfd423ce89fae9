//! The four-layer objectness network:
//! `conv(11, 96, 4) - pool(3, 2) - conv(5, 256, 1) - fc(1024) - fc(2)`,
//! with a ReLU after every layer except the last and a two-way softmax.
//!
//! The net is split into a convolutional *trunk* (conv1, pool, conv2) and a
//! fully connected *head* (fc6, fc7). The crop path feeds the flattened trunk
//! output of each warped crop into the head; the shared-feature path in
//! [`crate::roipool`] runs the trunk once per image and pools a fixed grid
//! per box before the head.

mod checkpoint;
mod preprocess;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use preprocess::{crop_batch, preprocess_crop};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, conv_out_dim, fc_backward, fc_forward, maxpool_backward,
    maxpool_forward, pool_out_dim, relu_backward, relu_inplace, softmax, ConvSpec, PoolSpec,
    Scalar, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-width layers.
    Paper,
    /// Channel counts and fc6 width divided by four.
    Small,
}

impl Profile {
    pub fn code(self) -> u32 {
        match self {
            Profile::Paper => 0,
            Profile::Small => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Profile::Paper),
            1 => Some(Profile::Small),
            _ => None,
        }
    }

    fn divisor(self) -> usize {
        match self {
            Profile::Paper => 1,
            Profile::Small => 4,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "small" => Ok(Profile::Small),
            _ => Err(Error::Config(format!("unknown profile {s:?} (paper|small)"))),
        }
    }
}

/// Convolution layer shape: kernel, output channels, stride, padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub k: usize,
    pub channels: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn spec(&self) -> ConvSpec {
        ConvSpec {
            k: self.k,
            s: self.stride,
            p: self.pad,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub profile: Profile,
    /// Side of the square crop fed to the crop path.
    pub input_side: usize,
    pub conv1: ConvLayer,
    pub pool: PoolSpec,
    pub conv2: ConvLayer,
    pub fc6: usize,
    pub init_std: f64,
    pub seed: u64,
    /// Context margin (output pixels) added around each crop before warping.
    #[serde(default)]
    pub context_pad: usize,
    /// RoI pooling grid (`[bins_y, bins_x]`) when the head is fed pooled
    /// shared features; `None` for the crop path.
    #[serde(default)]
    pub roi_grid: Option<[usize; 2]>,
}

impl NetConfig {
    pub fn new(profile: Profile) -> Self {
        let d = profile.divisor();
        Self {
            profile,
            input_side: 140,
            conv1: ConvLayer {
                k: 11,
                channels: 96 / d,
                stride: 4,
                pad: 0,
            },
            pool: PoolSpec { k: 3, s: 2 },
            conv2: ConvLayer {
                k: 5,
                channels: 256 / d,
                stride: 1,
                pad: 2,
            },
            fc6: 1024 / d,
            init_std: 0.01,
            seed: 0,
            context_pad: 0,
            roi_grid: None,
        }
    }

    pub fn paper() -> Self {
        Self::new(Profile::Paper)
    }

    pub fn small() -> Self {
        Self::new(Profile::Small)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_roi_grid(mut self, grid: Option<[usize; 2]>) -> Self {
        self.roi_grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.profile.divisor();
        let arch = (
            self.conv1.k,
            self.conv1.channels,
            self.conv1.stride,
            self.pool.k,
            self.pool.s,
            self.conv2.k,
            self.conv2.channels,
            self.conv2.stride,
            self.fc6,
        );
        let expected = (11, 96 / d, 4, 3, 2, 5, 256 / d, 1, 1024 / d);
        if arch != expected {
            return Err(Error::Config(format!(
                "{:?} profile must be conv(11,{},4)-pool(3,2)-conv(5,{},1)-fc({})-fc(2), got {arch:?}",
                self.profile, expected.1, expected.6, expected.8
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init std must be positive, got {}", self.init_std)));
        }
        if 2 * self.context_pad >= self.input_side {
            return Err(Error::Config(format!(
                "context pad {} too large for input side {}",
                self.context_pad, self.input_side
            )));
        }
        if let Some([gy, gx]) = self.roi_grid {
            if gy == 0 || gx == 0 {
                return Err(Error::Config("RoI grid bins must be >= 1".into()));
            }
        }
        self.trunk_out(self.input_side, self.input_side)?;
        Ok(())
    }

    /// Trunk output `(channels, height, width)` for an `h x w` input.
    pub fn trunk_out(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let dim = |n: usize| -> Option<usize> {
            let c1 = conv_out_dim(n, self.conv1.k, self.conv1.stride, self.conv1.pad)?;
            let p = pool_out_dim(c1, self.pool.k, self.pool.s)?;
            conv_out_dim(p, self.conv2.k, self.conv2.stride, self.conv2.pad)
        };
        match (dim(h), dim(w)) {
            (Some(ho), Some(wo)) => Ok((self.conv2.channels, ho, wo)),
            _ => Err(Error::Dimension(format!(
                "{h}x{w} input is too small for the trunk"
            ))),
        }
    }

    /// Image-to-feature-map coordinate divisor.
    pub fn total_stride(&self) -> usize {
        self.conv1.stride * self.pool.s * self.conv2.stride
    }

    pub fn fc6_input_len(&self) -> Result<usize> {
        match self.roi_grid {
            Some([gy, gx]) => Ok(self.conv2.channels * gy * gx),
            None => {
                let (c, h, w) = self.trunk_out(self.input_side, self.input_side)?;
                Ok(c * h * w)
            }
        }
    }

    /// Stable hash of the canonical JSON encoding.
    pub fn hash(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// The eight learnable tensors, in forward order. Also used for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Layers<T> {
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    pub fc6_w: Tensor<T>,
    pub fc6_b: Tensor<T>,
    pub fc7_w: Tensor<T>,
    pub fc7_b: Tensor<T>,
}

pub const LAYER_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc6.weight",
    "fc6.bias",
    "fc7.weight",
    "fc7.bias",
];

impl<T: Scalar> Layers<T> {
    pub fn zeros_for(cfg: &NetConfig) -> Result<Self> {
        let shapes = layer_shapes(cfg)?;
        let mut it = shapes.iter().map(|s| Tensor::zeros(s));
        Ok(Self {
            conv1_w: it.next().unwrap(),
            conv1_b: it.next().unwrap(),
            conv2_w: it.next().unwrap(),
            conv2_b: it.next().unwrap(),
            fc6_w: it.next().unwrap(),
            fc6_b: it.next().unwrap(),
            fc7_w: it.next().unwrap(),
            fc7_b: it.next().unwrap(),
        })
    }

    pub fn from_vec(mut tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != 8 {
            return Err(Error::Dimension(format!("expected 8 layer tensors, got {}", tensors.len())));
        }
        let mut it = tensors.drain(..);
        Ok(Self {
            conv1_w: it.next().unwrap(),
            conv1_b: it.next().unwrap(),
            conv2_w: it.next().unwrap(),
            conv2_b: it.next().unwrap(),
            fc6_w: it.next().unwrap(),
            fc6_b: it.next().unwrap(),
            fc7_w: it.next().unwrap(),
            fc7_b: it.next().unwrap(),
        })
    }

    pub fn tensors(&self) -> [&Tensor<T>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc6_w,
            &self.fc6_b,
            &self.fc7_w,
            &self.fc7_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc6_w,
            &mut self.fc6_b,
            &mut self.fc7_w,
            &mut self.fc7_b,
        ]
    }

    pub fn cast<U: Scalar>(&self) -> Layers<U> {
        Layers {
            conv1_w: self.conv1_w.cast(),
            conv1_b: self.conv1_b.cast(),
            conv2_w: self.conv2_w.cast(),
            conv2_b: self.conv2_b.cast(),
            fc6_w: self.fc6_w.cast(),
            fc6_b: self.fc6_b.cast(),
            fc7_w: self.fc7_w.cast(),
            fc7_b: self.fc7_b.cast(),
        }
    }

    /// Elementwise sum, in place.
    pub fn accumulate(&mut self, other: &Layers<T>) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

/// Expected parameter shapes, in [`LAYER_NAMES`] order.
pub fn layer_shapes(cfg: &NetConfig) -> Result<[Vec<usize>; 8]> {
    let fc6_in = cfg.fc6_input_len()?;
    Ok([
        vec![cfg.conv1.channels, 3, cfg.conv1.k, cfg.conv1.k],
        vec![cfg.conv1.channels],
        vec![cfg.conv2.channels, cfg.conv1.channels, cfg.conv2.k, cfg.conv2.k],
        vec![cfg.conv2.channels],
        vec![fc6_in, cfg.fc6],
        vec![cfg.fc6],
        vec![cfg.fc6, 2],
        vec![2],
    ])
}

/// Learnable weights plus the metadata that travels with a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T = f32> {
    pub config: NetConfig,
    /// Per-channel RGB mean subtracted from every input.
    pub means: [f32; 3],
    /// 0 = freshly initialized, 1 = sliding-window stage, 2 = hard-negative stage.
    pub stage: u32,
    pub iteration: u64,
    pub layers: Layers<T>,
}

impl<T: Scalar> NetParams<T> {
    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        NetParams {
            config: self.config.clone(),
            means: self.means,
            stage: self.stage,
            iteration: self.iteration,
            layers: self.layers.cast(),
        }
    }

    /// Check tensor shapes against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = layer_shapes(&self.config)?;
        for ((name, t), s) in LAYER_NAMES.iter().zip(self.layers.tensors()).zip(&shapes) {
            if t.shape() != s.as_slice() {
                return Err(Error::Dimension(format!(
                    "{name} has shape {:?}, config expects {s:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Initialize a net: every weight drawn from `N(0, init_std)`, biases zero.
pub fn build_net(cfg: &NetConfig) -> Result<NetParams<f32>> {
    cfg.validate()?;
    let mut layers = Layers::<f32>::zeros_for(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0f64, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
    for w in [
        &mut layers.conv1_w,
        &mut layers.conv2_w,
        &mut layers.fc6_w,
        &mut layers.fc7_w,
    ] {
        for v in w.data_mut() {
            *v = normal.sample(&mut rng) as f32;
        }
    }
    Ok(NetParams {
        config: cfg.clone(),
        means: [0.0; 3],
        stage: 0,
        iteration: 0,
        layers,
    })
}

/// Activations kept from a trunk forward pass.
#[derive(Clone, Debug)]
pub struct TrunkTape<T> {
    pub input: Tensor<T>,
    pub conv1: Tensor<T>,
    pub pooled: Tensor<T>,
    pub pool_argmax: Vec<u32>,
    /// conv2 output after ReLU: the trunk's result.
    pub conv2: Tensor<T>,
}

/// conv1 - relu - pool - conv2 - relu over an `n x 3 x h x w` batch.
pub fn trunk_forward<T: Scalar>(params: &NetParams<T>, input: Tensor<T>) -> Result<TrunkTape<T>> {
    let cfg = &params.config;
    let l = &params.layers;
    let (_, c, _, _) = input.dims4()?;
    if c != 3 {
        return Err(Error::Dimension(format!("trunk expects 3 input channels, got {c}")));
    }
    let mut conv1 = conv2d_forward(&input, &l.conv1_w, &l.conv1_b, cfg.conv1.spec())?;
    relu_inplace(&mut conv1);
    let (pooled, pool_argmax) = maxpool_forward(&conv1, cfg.pool)?;
    let mut conv2 = conv2d_forward(&pooled, &l.conv2_w, &l.conv2_b, cfg.conv2.spec())?;
    relu_inplace(&mut conv2);
    Ok(TrunkTape {
        input,
        conv1,
        pooled,
        pool_argmax,
        conv2,
    })
}

/// Backpropagate `d_out` (gradient w.r.t. the post-ReLU trunk output) into
/// the conv parameter gradients of `grads`. The input gradient is not formed.
pub fn trunk_backward<T: Scalar>(
    params: &NetParams<T>,
    tape: &TrunkTape<T>,
    d_out: &Tensor<T>,
    grads: &mut Layers<T>,
) -> Result<()> {
    let cfg = &params.config;
    let l = &params.layers;
    let d_conv2 = relu_backward(&tape.conv2, d_out)?;
    let (d_pooled, dw2, db2) =
        conv2d_backward(&tape.pooled, &l.conv2_w, &l.conv2_b, &d_conv2, cfg.conv2.spec(), true)?;
    let d_pooled = d_pooled.expect("requested input gradient");
    let d_conv1 = maxpool_backward(tape.conv1.shape(), &d_pooled, &tape.pool_argmax)?;
    let d_conv1 = relu_backward(&tape.conv1, &d_conv1)?;
    let (_, dw1, db1) =
        conv2d_backward(&tape.input, &l.conv1_w, &l.conv1_b, &d_conv1, cfg.conv1.spec(), false)?;
    grads.conv1_w.add_assign(&dw1)?;
    grads.conv1_b.add_assign(&db1)?;
    grads.conv2_w.add_assign(&dw2)?;
    grads.conv2_b.add_assign(&db2)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct HeadTape<T> {
    pub input: Tensor<T>,
    pub fc6: Tensor<T>,
    pub logits: Tensor<T>,
}

/// fc6 - relu - fc7 over an `n x d` feature matrix.
pub fn head_forward<T: Scalar>(params: &NetParams<T>, features: Tensor<T>) -> Result<HeadTape<T>> {
    let l = &params.layers;
    let mut fc6 = fc_forward(&features, &l.fc6_w, &l.fc6_b)?;
    relu_inplace(&mut fc6);
    let logits = fc_forward(&fc6, &l.fc7_w, &l.fc7_b)?;
    Ok(HeadTape {
        input: features,
        fc6,
        logits,
    })
}

/// Backpropagate logit gradients through the head. Returns the gradient with
/// respect to the head input and accumulates fc gradients into `grads`.
pub fn head_backward<T: Scalar>(
    params: &NetParams<T>,
    tape: &HeadTape<T>,
    d_logits: &Tensor<T>,
    grads: &mut Layers<T>,
) -> Result<Tensor<T>> {
    let l = &params.layers;
    let (d_fc6, dw7, db7) = fc_backward(&tape.fc6, &l.fc7_w, &l.fc7_b, d_logits)?;
    let d_fc6 = relu_backward(&tape.fc6, &d_fc6)?;
    let (d_in, dw6, db6) = fc_backward(&tape.input, &l.fc6_w, &l.fc6_b, &d_fc6)?;
    grads.fc6_w.add_assign(&dw6)?;
    grads.fc6_b.add_assign(&db6)?;
    grads.fc7_w.add_assign(&dw7)?;
    grads.fc7_b.add_assign(&db7)?;
    Ok(d_in)
}

/// Probability of the object class (index 1) for each row of logits.
pub fn object_scores<T: Scalar>(logits: &Tensor<T>) -> Vec<f64> {
    softmax(logits)
        .data()
        .chunks(2)
        .map(|r| r[1].to_f64())
        .collect()
}

/// Crop-path forward over a preprocessed `n x 3 x S x S` batch: logits.
pub fn crop_logits<T: Scalar>(params: &NetParams<T>, input: Tensor<T>) -> Result<Tensor<T>> {
    check_crop_input(params, &input)?;
    let trunk = trunk_forward(params, input)?;
    let n = trunk.conv2.shape()[0];
    let per = trunk.conv2.len() / n.max(1);
    let feats = trunk.conv2.reshape(&[n, per])?;
    Ok(head_forward(params, feats)?.logits)
}

fn check_crop_input<T: Scalar>(params: &NetParams<T>, input: &Tensor<T>) -> Result<()> {
    let s = params.config.input_side;
    let (_, c, h, w) = input.dims4()?;
    if c != 3 || h != s || w != s {
        return Err(Error::Dimension(format!(
            "crop path expects n x 3 x {s} x {s} input, got {:?}",
            input.shape()
        )));
    }
    if params.config.roi_grid.is_some() {
        let crop_len = {
            let (c, h, w) = params.config.trunk_out(s, s)?;
            c * h * w
        };
        if crop_len != params.config.fc6_input_len()? {
            return Err(Error::Dimension(format!(
                "head expects {} pooled features but a {s}x{s} crop yields {crop_len}",
                params.config.fc6_input_len()?
            )));
        }
    }
    Ok(())
}

/// Objectness of a single preprocessed `1 x 3 x S x S` input.
pub fn forward_objectness(params: &NetParams<f32>, input: &Tensor<f32>) -> Result<f64> {
    if input.shape().first() != Some(&1) {
        return Err(Error::Dimension(format!(
            "expected a single input, got shape {:?}",
            input.shape()
        )));
    }
    let logits = crop_logits(params, input.clone())?;
    Ok(object_scores(&logits)[0])
}

/// Objectness for every item of a preprocessed batch.
pub fn forward_scores<T: Scalar>(params: &NetParams<T>, input: Tensor<T>) -> Result<Vec<f64>> {
    Ok(object_scores(&crop_logits(params, input)?))
}

/// Recorded crop-path forward pass awaiting its backward pass.
#[derive(Clone, Debug)]
pub struct CropTape<T> {
    trunk: TrunkTape<T>,
    head: HeadTape<T>,
}

/// A crop-path forward/backward session over a fixed set of parameters.
#[derive(Debug)]
pub struct CropSession<'a, T> {
    params: &'a NetParams<T>,
    tape: Option<CropTape<T>>,
}

impl<'a, T: Scalar> CropSession<'a, T> {
    pub fn new(params: &'a NetParams<T>) -> Self {
        Self { params, tape: None }
    }

    /// Forward pass; returns logits and records the tape.
    pub fn forward(&mut self, input: Tensor<T>) -> Result<Tensor<T>> {
        check_crop_input(self.params, &input)?;
        let trunk = trunk_forward(self.params, input)?;
        let n = trunk.conv2.shape()[0];
        let per = trunk.conv2.len() / n.max(1);
        let feats = trunk.conv2.clone().reshape(&[n, per])?;
        let head = head_forward(self.params, feats)?;
        let logits = head.logits.clone();
        self.tape = Some(CropTape { trunk, head });
        Ok(logits)
    }

    /// Backward pass for the last forward. Consumes the tape.
    pub fn backward(&mut self, d_logits: &Tensor<T>) -> Result<Layers<T>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let mut grads = Layers::zeros_for(&self.params.config)?;
        let d_feats = head_backward(self.params, &tape.head, d_logits, &mut grads)?;
        let d_trunk = d_feats.reshape(tape.trunk.conv2.shape())?;
        trunk_backward(self.params, &tape.trunk, &d_trunk, &mut grads)?;
        Ok(grads)
    }

    /// ReLU on/off pattern and pool argmaxes of the recorded pass; two passes
    /// with equal signatures are on the same linear piece of the net.
    pub fn activation_signature(&self) -> Option<Vec<u32>> {
        let t = self.tape.as_ref()?;
        let mut sig: Vec<u32> = t.trunk.pool_argmax.clone();
        for layer in [&t.trunk.conv1, &t.trunk.conv2, &t.head.fc6] {
            sig.extend(layer.data().iter().map(|&v| (v > T::ZERO) as u32));
        }
        Some(sig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_shapes() {
        let cfg = NetConfig::paper();
        let shapes = layer_shapes(&cfg).unwrap();
        assert_eq!(shapes[0], vec![96, 3, 11, 11]);
        assert_eq!(cfg.fc6_input_len().unwrap(), 65_536);
        assert_eq!(cfg.trunk_out(140, 140).unwrap(), (256, 16, 16));
        assert_eq!(cfg.total_stride(), 8);
        assert_eq!(shapes[6], vec![1024, 2]);
    }

    #[test]
    fn small_profile_divides_by_four() {
        let cfg = NetConfig::small();
        assert_eq!(cfg.conv1.channels, 24);
        assert_eq!(cfg.conv2.channels, 64);
        assert_eq!(cfg.fc6, 256);
        let mut bad = cfg.clone();
        bad.conv2.channels = 65;
        assert!(matches!(build_net(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let cfg = NetConfig::small().with_seed(42);
        let a = build_net(&cfg).unwrap();
        let b = build_net(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.conv1_b.data().iter().all(|&v| v == 0.0));
        let w = a.layers.fc6_w.data();
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - 0.01).abs() < 5e-4, "std {std}");
        let c = build_net(&NetConfig::small().with_seed(43)).unwrap();
        assert_ne!(a.layers.fc6_w, c.layers.fc6_w);
    }

    #[test]
    fn zero_weights_score_half() {
        let cfg = NetConfig::small();
        let mut p = build_net(&cfg).unwrap();
        for t in p.layers.tensors_mut() {
            t.fill(0.0);
        }
        let x = Tensor::filled(&[1, 3, 140, 140], 17.0f32);
        assert_eq!(forward_objectness(&p, &x).unwrap(), 0.5);
    }

    #[test]
    fn wrong_input_shape() {
        let p = build_net(&NetConfig::small()).unwrap();
        let x = Tensor::zeros(&[1, 3, 100, 140]);
        assert!(matches!(forward_objectness(&p, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let p = build_net(&NetConfig::small()).unwrap();
        let mut s = CropSession::new(&p);
        let d = Tensor::zeros(&[1, 2]);
        assert!(matches!(s.backward(&d), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let p = build_net(&NetConfig::small().with_seed(1)).unwrap();
        let x = Tensor::filled(&[2, 3, 140, 140], 30.0f32);
        let mut s = CropSession::new(&p);
        s.forward(x).unwrap();
        let g = s.backward(&Tensor::zeros(&[2, 2])).unwrap();
        assert!(g.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn config_hash_tracks_changes() {
        let a = NetConfig::small();
        assert_eq!(a.hash(), NetConfig::small().hash());
        assert_ne!(a.hash(), a.clone().with_seed(9).hash());
    }
}
