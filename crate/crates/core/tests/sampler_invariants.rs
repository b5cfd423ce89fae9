mod criteria;

use criteria::sampling;

#[test]
fn stage2_samples_respect_thresholds_and_ratio() {
    let r = sampling::stage2(21, 24, 2);
    assert!(r.samples >= sampling::MIN_SAMPLES);
    assert_eq!((r.bad_pos, r.bad_neg, r.in_gap, r.bad_batches), (0, 0, 0, 0), "{r:?}");
}

#[test]
fn global_batches_respect_ratio() {
    let r = sampling::stage2(22, 12, 1);
    assert_eq!(r.bad_batches, 0, "{r:?}");
}

#[test]
fn neighbor_windows_overlap_at_alpha() {
    for alpha in [0.5, 0.65, 0.8] {
        let (pairs, worst) = sampling::window_overlap_error(alpha);
        assert!(pairs > 100);
        assert!(worst <= 1e-9, "alpha {alpha}: {worst}");
    }
}
