mod criteria;

use criteria::consistency;

#[test]
fn crop_and_fast_paths_agree_on_whole_images() {
    let (cases, worst) = consistency::worst_difference(3, &[140]);
    assert_eq!(cases, 3);
    assert!(worst < consistency::TOL, "{worst}");
}
