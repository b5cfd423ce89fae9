//! Crop path and fast path agree on aligned whole-image boxes.

use deepbox::dataio::{render_scene, SynthConfig};
use deepbox::netdef::{build_net, NetConfig};
use deepbox::rerank::score_consistency_check;

pub const TOL: f64 = 1e-5;

/// Worst score difference over `nets` random nets and one synthetic square
/// image per side in `sides`.
pub fn worst_difference(nets: u64, sides: &[usize]) -> (usize, f64) {
    let mut cases = 0;
    let mut worst = 0.0f64;
    for seed in 0..nets {
        let mut cfg = NetConfig::small().with_seed(seed).with_roi_grid(Some([16, 16]));
        // wide enough weights that scores move away from 0.5
        cfg.init_std = 0.05;
        let params = build_net(&cfg).unwrap();
        for &side in sides {
            let synth = SynthConfig {
                width: side,
                height: side,
                seed: 100 + seed,
                ..SynthConfig::default()
            };
            let scene = render_scene(&synth, 0).unwrap();
            let d = score_consistency_check(&params, &scene.image, &[scene.image.full_box()]).unwrap();
            worst = worst.max(d);
            cases += 1;
        }
    }
    (cases, worst)
}

pub fn run(_seed: u64) -> Result<String, String> {
    let (cases, worst) = worst_difference(6, &[140]);
    let line = format!("{cases} nets x images, 16x16 grid, max |crop - fast| {worst:.2e}");
    if cases > 0 && worst < TOL {
        Ok(line)
    } else {
        Err(line)
    }
}
