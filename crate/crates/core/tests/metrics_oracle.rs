use birdrone_core::metrics::{detection_accuracy, evaluate, map_range, match_dataset};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

mod support;

#[test]
fn map_matches_brute_force_on_thousand_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let (preds, gts) = random_instance(&mut rng);
        let (m50, m5095) = map_range(&preds, &gts, CLASSES);
        let o50 = oracle_map(&preds, &gts, 0.5);
        let o5095 = oracle_map50_95(&preds, &gts);
        assert!((m50 - o50).abs() < 1e-12, "case {case}: {m50} vs {o50}");
        assert!((m5095 - o5095).abs() < 1e-12, "case {case}: {m5095} vs {o5095}");

        let conf = 0.5;
        let (tp, fn_count, fp) = match_dataset(&preds, &gts, 0.5, conf).counts();
        assert_eq!((tp, fn_count, fp), oracle_counts(&preds, &gts, 0.5, conf), "case {case}");
        let r = evaluate(&preds, &gts, conf, 160, CLASSES);
        assert!((r.detection_accuracy + r.fn_pct + r.fp_pct - 100.0).abs() < 1e-9);
    }
}

#[test]
fn single_match_at_iou_point_six_scores_point_three() {
    let (det, gt) = iou_point_six_pair();
    assert_eq!(oracle_iou(&gt, &det.bbox), 0.6);
    let (m50, m5095) = map_range(&[vec![det]], &[vec![gt]], CLASSES);
    assert_eq!(m50, 1.0);
    assert_eq!(m5095, 0.3);
}

#[test]
fn report_on_empty_split() {
    let r = evaluate(&[vec![], vec![]], &[vec![], vec![]], 0.25, 160, CLASSES);
    assert_eq!((r.map50, r.map50_95, r.precision, r.recall), (0.0, 0.0, 0.0, 0.0));
    assert_eq!((r.detection_accuracy, r.fn_pct, r.fp_pct), (100.0, 0.0, 0.0));
}

proptest! {
    #[test]
    fn accuracy_terms_sum_to_hundred(tp in 0usize..10_000, fn_count in 0usize..10_000, fp in 0usize..10_000) {
        let a = detection_accuracy(tp, fn_count, fp);
        prop_assert!((a.accuracy + a.fn_pct + a.fp_pct - 100.0).abs() < 1e-9);
        prop_assert!(a.accuracy >= 0.0 && a.fn_pct >= 0.0 && a.fp_pct >= 0.0);
    }

    #[test]
    fn matching_conserves_counts(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, gts) = random_instance(&mut rng);
        for thr in [0.5, 0.75] {
            let m = match_dataset(&preds, &gts, thr, 0.0);
            for ((im, p), g) in m.images.iter().zip(&preds).zip(&gts) {
                prop_assert_eq!(im.tp.len() + im.fp.len(), p.len());
                prop_assert_eq!(im.tp.len() + im.fn_gt.len(), g.len());
                let mut used: Vec<usize> = im.tp.iter().map(|t| t.1).collect();
                used.sort_unstable();
                used.dedup();
                prop_assert_eq!(used.len(), im.tp.len());
            }
        }
    }
}
