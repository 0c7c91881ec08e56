use sfparse::crf::{meanfield, CrfParams, PixelField};
use sfparse::eval::{evaluate, isolated_errors};
use sfparse::synth::flipped_two_region;

#[test]
fn meanfield_repairs_flipped_unaries() {
    let (image, costs, truth) = flipped_two_region(3, 96, 64, 0.1).unwrap();
    let field = PixelField { width: 96, height: 64, num_classes: 2, data: costs };
    let raw = field.argmin_map();
    let (_, labels) = meanfield(&field, &image, &CrfParams::default()).unwrap();
    let before = evaluate("flip", &raw, &truth).unwrap().per_pixel().unwrap();
    let after = evaluate("flip", &labels, &truth).unwrap().per_pixel().unwrap();
    assert!(before <= 0.90, "raw unaries already at {before}");
    assert!(after >= 0.99, "after 10 iterations {after}");

    let isolated = isolated_errors(&raw, &truth).unwrap();
    let fixed = isolated.iter().filter(|&&p| labels.labels()[p] == truth.labels()[p]).count();
    assert!(fixed * 2 >= isolated.len());
}
