use capscale::metrics::{bleu, bleu4, cider_d, fit_loglinear, EvalPair};
use serde::Deserialize;

fn pair(id: &str, c: &str, refs: &[&str]) -> EvalPair {
    EvalPair::new(id, c, refs.iter().map(|s| s.to_string()).collect()).unwrap()
}

#[derive(Deserialize)]
struct RefCase {
    pairs: Vec<EvalPair>,
    bleu: Vec<f64>,
    cider: f64,
    cider_per_image: Vec<f64>,
}

fn reference_cases() -> Vec<RefCase> {
    serde_json::from_str(include_str!("fixtures/metrics_reference.json")).unwrap()
}

#[test]
fn matches_coco_reference_outputs() {
    for case in reference_cases() {
        let b = bleu(&case.pairs);
        for n in 0..4 {
            assert!((b.bleu[n] / 100.0 - case.bleu[n]).abs() < 1e-6, "bleu{}", n + 1);
        }
        let c = cider_d(&case.pairs);
        assert!((c.score - case.cider).abs() < 1e-6);
        for (a, e) in c.per_image.iter().zip(&case.cider_per_image) {
            assert!((a - e).abs() < 1e-6);
        }
    }
}

#[test]
fn bleu_two_pair_hand_value() {
    let ps = vec![
        pair("1", "a cat sits on the mat", &["the cat sits on the mat"]),
        pair("2", "a dog runs", &["a dog runs fast"]),
    ];
    // clipped matches / candidate n-grams per order: 8/9, 6/7, 4/5, 2/3
    // candidate length 9 against reference length 10
    let want = 100.0 * (8.0 / 9.0 * 6.0 / 7.0 * 4.0 / 5.0 * 2.0 / 3.0f64).powf(0.25) * (-1.0f64 / 9.0).exp();
    assert!((bleu4(&ps) - want).abs() < 1e-9);
}

#[test]
fn cider_hand_values() {
    // two images, each candidate equal to its single reference: unigram and
    // bigram cosines are 1, there are no 3- or 4-grams -> 10 * 2 / 4
    let same = vec![pair("1", "a b", &["a b"]), pair("2", "c d", &["c d"])];
    let r = cider_d(&same);
    assert!((r.score - 5.0).abs() < 1e-12);
    // one shared unigram out of two, no shared bigram: 10 * (1/2) / 4
    let half = vec![pair("1", "a b", &["a b"]), pair("2", "c e", &["c d"])];
    let r = cider_d(&half);
    assert!((r.per_image[1] - 1.25).abs() < 1e-12);
    assert!((r.score - 3.125).abs() < 1e-12);
    assert!(!r.degenerate_idf);
    assert!(cider_d(&[pair("1", "a b", &["a b"])]).degenerate_idf);
}

#[test]
fn permutation_invariant() {
    let mut ps = reference_cases().remove(1).pairs;
    let b = bleu4(&ps);
    let c = cider_d(&ps).score;
    ps.reverse();
    assert!((bleu4(&ps) - b).abs() < 1e-9);
    assert!((cider_d(&ps).score - c).abs() < 1e-9);
}

#[test]
fn replacing_candidate_by_reference_does_not_lower_scores() {
    for case in reference_cases() {
        let b0 = bleu4(&case.pairs);
        let c0 = cider_d(&case.pairs).score;
        let mut ps = case.pairs.clone();
        ps[0].candidate = ps[0].references[0].clone();
        assert!(bleu4(&ps) >= b0 - 1e-12);
        assert!(cider_d(&ps).score >= c0 - 1e-12);
    }
}

#[test]
fn loglinear_recovers_exact_line() {
    let pts: Vec<(f64, f64)> = [1e3, 1e4, 3e4, 1e5].iter().map(|&x: &f64| (x, 2.5 + 0.7 * x.ln())).collect();
    let f = fit_loglinear(&pts).unwrap();
    assert!((f.intercept - 2.5).abs() < 1e-9 && (f.slope - 0.7).abs() < 1e-9);
}

#[test]
fn loglinear_noisy_normal_equations() {
    // x = ln(size) = 1..5 exactly; y noisy
    let e = std::f64::consts::E;
    let ys = [1.0, 2.5, 2.0, 4.5, 5.0];
    let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (e.powi(i as i32 + 1), y)).collect();
    // sum x = 15, sum x^2 = 55, sum y = 15, sum xy = 1 + 5 + 6 + 18 + 25 = 55
    // b = (5*55 - 15*15) / (5*55 - 15^2) = 50/50 = 1, a = (15 - 15) / 5 = 0
    let f = fit_loglinear(&pts).unwrap();
    assert!((f.slope - 1.0).abs() < 1e-9);
    assert!(f.intercept.abs() < 1e-9);
    let want = [0.0, 0.5, -1.0, 0.5, 0.0];
    for (r, w) in f.residuals.iter().zip(want) {
        assert!((r - w).abs() < 1e-9);
    }
}

#[test]
fn scores_are_bitwise_repeatable() {
    let ps = reference_cases().remove(1).pairs;
    let first = (bleu4(&ps).to_bits(), cider_d(&ps).score.to_bits());
    for _ in 0..20 {
        assert_eq!((bleu4(&ps).to_bits(), cider_d(&ps).score.to_bits()), first);
    }
}
