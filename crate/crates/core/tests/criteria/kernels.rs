//! Production kernels against the naive loop oracles.

use deepbox::reference;
use deepbox::roipool::{roi_maxpool, FeatureRoi, RoiGrid};
use deepbox::tensor::{conv2d_forward, fc_forward, maxpool_forward, ConvSpec, PoolSpec, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 100;
/// Elementwise relative tolerance for the 64-bit kernels.
pub const TOL_F64: f64 = 1e-6;
/// The 32-bit kernels are held to a relative error against the largest output
/// magnitude, since single-precision sums lose digits to cancellation.
pub const TOL_F32: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct KernelResult {
    pub kernel: &'static str,
    pub instances: usize,
    pub max_rel_f64: f64,
    pub max_rel_f32: f64,
    pub exact_mismatches: usize,
}

impl KernelResult {
    fn new(kernel: &'static str) -> Self {
        Self {
            kernel,
            ..Self::default()
        }
    }

    fn float(&mut self, got64: &[f64], got32: &[f32], want: &[f64]) {
        assert_eq!(got64.len(), want.len(), "{}: output length", self.kernel);
        assert_eq!(got32.len(), want.len(), "{}: output length", self.kernel);
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for ((a, b), w) in got64.iter().zip(got32).zip(want) {
            self.max_rel_f64 = self.max_rel_f64.max(reference::rel_error(*a, *w, 1e-12));
            self.max_rel_f32 = self.max_rel_f32.max((*b as f64 - w).abs() / scale);
        }
    }

    fn exact<T: PartialEq>(&mut self, got: &[T], want: &[T]) {
        if got != want {
            self.exact_mismatches += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES
            && self.max_rel_f64 <= TOL_F64
            && self.max_rel_f32 <= TOL_F32
            && self.exact_mismatches == 0
    }
}

fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn both(shape: &[usize], v: &[f64]) -> (Tensor<f64>, Tensor<f32>) {
    let t64 = Tensor::from_vec(shape, v.to_vec()).unwrap();
    let t32 = t64.cast::<f32>();
    (t64, t32)
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64()).collect()
}

pub fn conv(seed: u64) -> KernelResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = KernelResult::new("conv");
    for _ in 0..INSTANCES {
        let k = rng.random_range(1..=5);
        let s = rng.random_range(1..=3);
        let p = rng.random_range(0..=2.min(k - 1));
        let (n, c, co) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=5));
        let (h, w) = (rng.random_range(k..k + 8), rng.random_range(k..k + 8));
        let x = randv(&mut rng, n * c * h * w);
        let wt = randv(&mut rng, co * c * k * k);
        let b = randv(&mut rng, co);
        let spec = ConvSpec::new(k, s, p).unwrap();
        let (x64, x32) = both(&[n, c, h, w], &x);
        let (w64, w32) = both(&[co, c, k, k], &wt);
        let (b64, b32) = both(&[co], &b);
        let y64 = conv2d_forward(&x64, &w64, &b64, spec).unwrap();
        let y32 = conv2d_forward(&x32, &w32, &b32, spec).unwrap();
        let (want, ho, wo) = reference::conv2d(&x, (n, c, h, w), &wt, &b, co, k, s, p);
        assert_eq!(y64.shape(), [n, co, ho, wo]);
        res.float(y64.data(), y32.data(), &want);
        res.instances += 1;
    }
    res
}

pub fn fc(seed: u64) -> KernelResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = KernelResult::new("fc");
    for _ in 0..INSTANCES {
        let (n, d, o) = (rng.random_range(1..=8), rng.random_range(1..=80), rng.random_range(1..=10));
        let x = randv(&mut rng, n * d);
        let wt = randv(&mut rng, d * o);
        let b = randv(&mut rng, o);
        let (x64, x32) = both(&[n, d], &x);
        let (w64, w32) = both(&[d, o], &wt);
        let (b64, b32) = both(&[o], &b);
        let y64 = fc_forward(&x64, &w64, &b64).unwrap();
        let y32 = fc_forward(&x32, &w32, &b32).unwrap();
        res.float(y64.data(), y32.data(), &reference::fc(&x, n, d, &wt, &b, o));
        res.instances += 1;
    }
    res
}

pub fn pool(seed: u64) -> KernelResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = KernelResult::new("pool");
    for _ in 0..INSTANCES {
        let k = rng.random_range(1..=4);
        let s = rng.random_range(1..=3);
        let (n, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(k..k + 9), rng.random_range(k..k + 9));
        // coarse values make ties common, which exercises the tie rule
        let x: Vec<f64> = (0..n * c * h * w).map(|_| rng.random_range(0..6) as f64).collect();
        let (x64, x32) = both(&[n, c, h, w], &x);
        let spec = PoolSpec::new(k, s).unwrap();
        let (y64, a64) = maxpool_forward(&x64, spec).unwrap();
        let (y32, a32) = maxpool_forward(&x32, spec).unwrap();
        let (want, warg, _, _) = reference::maxpool(&x, (n, c, h, w), k, s);
        res.exact(&to_f64(&y64), &want);
        res.exact(&to_f64(&y32), &want);
        res.exact(&a64, &warg);
        res.exact(&a32, &warg);
        res.instances += 1;
    }
    res
}

pub fn roi(seed: u64) -> KernelResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = KernelResult::new("roi_maxpool");
    for _ in 0..INSTANCES {
        let (c, h, w) = (rng.random_range(1..=3), rng.random_range(1..=12), rng.random_range(1..=12));
        let x0 = rng.random_range(0..w);
        let x1 = rng.random_range(x0 + 1..=w);
        let y0 = rng.random_range(0..h);
        let y1 = rng.random_range(y0 + 1..=h);
        let (gy, gx) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let f: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(0..6) as f64).collect();
        let f32v: Vec<f32> = f.iter().map(|&v| v as f32).collect();
        let roi_box = FeatureRoi { x0, y0, x1, y1 };
        let grid = RoiGrid::new(gy, gx).unwrap();
        let (y64, a64) = roi_maxpool(&f, (c, h, w), &roi_box, grid).unwrap();
        let (y32, a32) = roi_maxpool(&f32v, (c, h, w), &roi_box, grid).unwrap();
        let (want, warg) = reference::roi_maxpool(&f, (c, h, w), (x0, y0, x1, y1), gy, gx);
        res.exact(&y64, &want);
        res.exact(&y32.iter().map(|&v| v as f64).collect::<Vec<_>>(), &want);
        res.exact(&a64, &warg);
        res.exact(&a32, &warg);
        res.instances += 1;
    }
    res
}

pub fn run(seed: u64) -> Result<String, String> {
    let results = [conv(seed), fc(seed + 1), pool(seed + 2), roi(seed + 3)];
    let summary = results
        .iter()
        .map(|r| {
            format!(
                "{} {} inst f64 {:.1e} f32 {:.1e} exact-mismatch {}",
                r.kernel, r.instances, r.max_rel_f64, r.max_rel_f32, r.exact_mismatches
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    if results.iter().all(KernelResult::passed) {
        Ok(summary)
    } else {
        Err(summary)
    }
}
