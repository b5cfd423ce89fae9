//! Central finite-difference checks for every layer in 64-bit mode.

use deepbox::reference::{numeric_gradient, rel_error};
use deepbox::roipool::{roi_maxpool, roi_maxpool_backward, FeatureRoi, RoiGrid};
use deepbox::tensor::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, softmax_xent, ConvSpec, PoolSpec, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;
pub const CONFIGS: usize = 20;
const FLOOR: f64 = 1e-6;

/// Worst relative error of one layer over all its configurations.
#[derive(Debug, Default)]
pub struct LayerResult {
    pub layer: &'static str,
    pub configs: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

impl LayerResult {
    fn new(layer: &'static str) -> Self {
        Self {
            layer,
            ..Self::default()
        }
    }

    fn compare(&mut self, analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            self.max_rel = self.max_rel.max(rel_error(*a, *n, FLOOR));
            self.checked += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.configs >= CONFIGS && self.checked > 0 && self.max_rel < TOL
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).expect("shape matches data")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

pub fn conv(seed: u64) -> LayerResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = LayerResult::new("conv");
    for _ in 0..CONFIGS {
        let k = rng.random_range(1..=3);
        let s = rng.random_range(1..=2);
        let p = rng.random_range(0..k);
        let (n, c, co) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(k..k + 5), rng.random_range(k..k + 5));
        let spec = ConvSpec::new(k, s, p).expect("valid spec");
        let x = randn(&mut rng, n * c * h * w);
        let wt = randn(&mut rng, co * c * k * k);
        let b = randn(&mut rng, co);
        let xs = [n, c, h, w];
        let ws = [co, c, k, k];
        let y = conv2d_forward(&t(&xs, x.clone()), &t(&ws, wt.clone()), &t(&[co], b.clone()), spec).unwrap();
        let r = randn(&mut rng, y.len());
        let (dx, dw, db) = conv2d_backward(
            &t(&xs, x.clone()),
            &t(&ws, wt.clone()),
            &t(&[co], b.clone()),
            &t(y.shape(), r.clone()),
            spec,
            true,
        )
        .unwrap();
        let loss = |x: &[f64], wt: &[f64], b: &[f64]| {
            let y = conv2d_forward(&t(&xs, x.to_vec()), &t(&ws, wt.to_vec()), &t(&[co], b.to_vec()), spec).unwrap();
            dot(y.data(), &r)
        };
        res.compare(dx.unwrap().data(), &numeric_gradient(|v| loss(v, &wt, &b), &x, H, &all(x.len())));
        res.compare(dw.data(), &numeric_gradient(|v| loss(&x, v, &b), &wt, H, &all(wt.len())));
        res.compare(db.data(), &numeric_gradient(|v| loss(&x, &wt, v), &b, H, &all(b.len())));
        res.configs += 1;
    }
    res
}

pub fn fc(seed: u64) -> LayerResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = LayerResult::new("fc");
    for _ in 0..CONFIGS {
        let (n, d, o) = (rng.random_range(1..=8), rng.random_range(1..=12), rng.random_range(1..=6));
        let x = randn(&mut rng, n * d);
        let wt = randn(&mut rng, d * o);
        let b = randn(&mut rng, o);
        let r = randn(&mut rng, n * o);
        let (dx, dw, db) = fc_backward(&t(&[n, d], x.clone()), &t(&[d, o], wt.clone()), &t(&[o], b.clone()), &t(&[n, o], r.clone())).unwrap();
        let loss = |x: &[f64], wt: &[f64], b: &[f64]| {
            let y = fc_forward(&t(&[n, d], x.to_vec()), &t(&[d, o], wt.to_vec()), &t(&[o], b.to_vec())).unwrap();
            dot(y.data(), &r)
        };
        res.compare(dx.data(), &numeric_gradient(|v| loss(v, &wt, &b), &x, H, &all(x.len())));
        res.compare(dw.data(), &numeric_gradient(|v| loss(&x, v, &b), &wt, H, &all(wt.len())));
        res.compare(db.data(), &numeric_gradient(|v| loss(&x, &wt, v), &b, H, &all(b.len())));
        res.configs += 1;
    }
    res
}

pub fn relu(seed: u64) -> LayerResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = LayerResult::new("relu");
    for _ in 0..CONFIGS {
        let shape = [rng.random_range(1..=4), rng.random_range(1..=10)];
        let len = shape[0] * shape[1];
        let x = randn(&mut rng, len);
        let r = randn(&mut rng, len);
        let y = relu_forward(&t(&shape, x.clone()));
        let dx = relu_backward(&y, &t(&shape, r.clone())).unwrap();
        // a step across zero changes the linear piece; those inputs are skipped
        let coords: Vec<usize> = (0..len).filter(|&i| x[i].abs() > 2.0 * H).collect();
        res.skipped += len - coords.len();
        let num = numeric_gradient(|v| dot(relu_forward(&t(&shape, v.to_vec())).data(), &r), &x, H, &coords);
        let ana: Vec<f64> = coords.iter().map(|&i| dx.data()[i]).collect();
        res.compare(&ana, &num);
        res.configs += 1;
    }
    res
}

pub fn pool(seed: u64) -> LayerResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = LayerResult::new("pool");
    for _ in 0..CONFIGS {
        let k = rng.random_range(1..=3);
        let s = rng.random_range(1..=2);
        let (n, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(k..k + 5), rng.random_range(k..k + 5));
        let spec = PoolSpec::new(k, s).unwrap();
        let shape = [n, c, h, w];
        let x = randn(&mut rng, n * c * h * w);
        let (y, arg) = maxpool_forward(&t(&shape, x.clone()), spec).unwrap();
        let r = randn(&mut rng, y.len());
        let dx = maxpool_backward(&shape, &t(y.shape(), r.clone()), &arg).unwrap();
        let mut coords = Vec::new();
        let mut xs = x.clone();
        for i in 0..x.len() {
            let stable = [H, -H].iter().all(|d| {
                xs[i] = x[i] + d;
                let same = maxpool_forward(&t(&shape, xs.clone()), spec).unwrap().1 == arg;
                xs[i] = x[i];
                same
            });
            if stable {
                coords.push(i);
            } else {
                res.skipped += 1;
            }
        }
        let num = numeric_gradient(
            |v| dot(maxpool_forward(&t(&shape, v.to_vec()), spec).unwrap().0.data(), &r),
            &x,
            H,
            &coords,
        );
        let ana: Vec<f64> = coords.iter().map(|&i| dx.data()[i]).collect();
        res.compare(&ana, &num);
        res.configs += 1;
    }
    res
}

pub fn softmax_xent_layer(seed: u64) -> LayerResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = LayerResult::new("softmax-xent");
    for _ in 0..CONFIGS {
        let n = rng.random_range(1..=8);
        let z: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        let (_, grad) = softmax_xent(&t(&[n, 2], z.clone()), &labels).unwrap();
        let num = numeric_gradient(
            |v| softmax_xent(&t(&[n, 2], v.to_vec()), &labels).unwrap().0,
            &z,
            H,
            &all(z.len()),
        );
        res.compare(grad.data(), &num);
        res.configs += 1;
    }
    res
}

pub fn roi(seed: u64) -> LayerResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = LayerResult::new("roi_maxpool");
    for _ in 0..CONFIGS {
        let (c, h, w) = (rng.random_range(1..=3), rng.random_range(2..=9), rng.random_range(2..=9));
        let x0 = rng.random_range(0..w);
        let x1 = rng.random_range(x0 + 1..=w);
        let y0 = rng.random_range(0..h);
        let y1 = rng.random_range(y0 + 1..=h);
        let roi_box = FeatureRoi { x0, y0, x1, y1 };
        let grid = RoiGrid::new(rng.random_range(1..=4), rng.random_range(1..=4)).unwrap();
        let f = randn(&mut rng, c * h * w);
        let (y, arg) = roi_maxpool(&f, (c, h, w), &roi_box, grid).unwrap();
        let r = randn(&mut rng, y.len());
        let mut d = vec![0.0; f.len()];
        roi_maxpool_backward(&r, &arg, (c, h, w), &mut d).unwrap();
        let mut coords = Vec::new();
        let mut fs = f.clone();
        for i in 0..f.len() {
            let stable = [H, -H].iter().all(|dd| {
                fs[i] = f[i] + dd;
                let same = roi_maxpool(&fs, (c, h, w), &roi_box, grid).unwrap().1 == arg;
                fs[i] = f[i];
                same
            });
            if stable {
                coords.push(i);
            } else {
                res.skipped += 1;
            }
        }
        let num = numeric_gradient(
            |v| dot(&roi_maxpool(v, (c, h, w), &roi_box, grid).unwrap().0, &r),
            &f,
            H,
            &coords,
        );
        let ana: Vec<f64> = coords.iter().map(|&i| d[i]).collect();
        res.compare(&ana, &num);
        res.configs += 1;
    }
    res
}

pub fn all_layers(seed: u64) -> Vec<LayerResult> {
    vec![
        conv(seed),
        pool(seed + 1),
        relu(seed + 2),
        fc(seed + 3),
        softmax_xent_layer(seed + 4),
        roi(seed + 5),
    ]
}

/// Criterion line for the whole suite.
pub fn run(seed: u64) -> Result<String, String> {
    let results = all_layers(seed);
    let summary = results
        .iter()
        .map(|r| format!("{} {} cfg max_rel {:.1e}", r.layer, r.configs, r.max_rel))
        .collect::<Vec<_>>()
        .join("; ");
    if results.iter().all(LayerResult::passed) {
        Ok(summary)
    } else {
        Err(summary)
    }
}
