use codemi::blackbox::{s_bi, s_uni, CalibratedScore, ScoreKind};
use proptest::prelude::*;

fn straight_l2(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        acc += d * d;
    }
    acc.sqrt()
}

fn quad() -> impl Strategy<Value = (usize, Vec<f32>)> {
    (1usize..64).prop_flat_map(|d| (Just(d), prop::collection::vec(-10f32..10.0, 4 * d)))
}

proptest! {
    #[test]
    fn scores_match_straight_line_l2((d, v) in quad()) {
        let (a, b, c, e) = (&v[..d], &v[d..2 * d], &v[2 * d..3 * d], &v[3 * d..]);
        let expected = straight_l2(a, b) - straight_l2(c, e);
        prop_assert!((s_uni(a, b, c, e) - expected).abs() <= 1e-6);
        prop_assert!((s_bi(a, b, c, e) - expected).abs() <= 1e-6);
    }
}

#[test]
fn hand_examples() {
    assert!((s_uni(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0]) - 2f64.sqrt()).abs() < 1e-12);
    assert!((s_uni(&[0.2], &[0.0], &[0.5], &[0.0]) + 0.3).abs() < 1e-6);
    assert!((s_bi(&[0.3, 0.1], &[0.3, 0.1], &[0.4], &[0.0]) + 0.4).abs() < 1e-6);
    assert!((s_bi(&[1.0], &[0.0], &[0.0], &[0.0]) - 1.0).abs() < 1e-12);
}

#[test]
fn bimodal_scores_flip_sign_for_thresholding() {
    let bi = CalibratedScore { value: -0.4, kind: ScoreKind::SBi };
    let uni = CalibratedScore { value: -0.4, kind: ScoreKind::SUni };
    assert_eq!(bi.normalized(), 0.4);
    assert_eq!(uni.normalized(), -0.4);
}
