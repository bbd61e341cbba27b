mod common;

use common::oracle::{ap_oracle, iou_oracle, per_class_ap_oracle, random_scene};
use hazeforge::eval::{evaluate, iou, BBox, DetectionBox, EvalOptions, TruthBox};
use proptest::prelude::*;

fn t(class: i64, b: [f64; 4]) -> TruthBox {
    TruthBox {
        sample_id: "img".into(),
        class_id: class,
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
    }
}

fn d(class: i64, b: [f64; 4], confidence: f64) -> DetectionBox {
    DetectionBox {
        sample_id: "img".into(),
        class_id: class,
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
        confidence,
    }
}

#[test]
fn hand_enumerated_two_class_scene() {
    let truths = vec![
        t(0, [0.0, 0.0, 10.0, 10.0]),
        t(0, [20.0, 20.0, 30.0, 30.0]),
        t(1, [0.0, 0.0, 5.0, 5.0]),
    ];
    let dets = vec![
        d(0, [0.0, 0.0, 10.0, 10.0], 0.9),   // TP on truth 0
        d(0, [1.0, 0.0, 11.0, 10.0], 0.8),   // its truth is taken: FP
        d(0, [20.0, 20.0, 30.0, 30.0], 0.3), // TP on truth 1
        d(1, [0.0, 0.0, 5.0, 5.0], 0.2),     // TP, below the 0.25 operating point
        d(1, [50.0, 50.0, 60.0, 60.0], 0.7), // FP
    ];
    let r = evaluate(&dets, &truths, &EvalOptions::default());
    // class 0: PR (.5,1) (.5,.5) (1,2/3) -> .5*1 + .5*2/3
    // class 1: PR (0,0) (1,.5) -> .5
    assert!((r.per_class_ap[&0] - 5.0 / 6.0).abs() < 1e-12);
    assert!((r.per_class_ap[&1] - 0.5).abs() < 1e-12);
    assert!((r.map - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(
        (r.counts.true_positives, r.counts.false_positives, r.counts.false_negatives),
        (2, 2, 1)
    );
    assert!((r.precision - 0.5).abs() < 1e-12);
    assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.map_percent - 200.0 / 3.0).abs() < 1e-9);
}

#[test]
fn ap_oracle_sanity() {
    assert_eq!(ap_oracle(&[true], 1), 1.0);
    assert_eq!(ap_oracle(&[true, false], 1), 1.0);
    assert_eq!(ap_oracle(&[false, true], 1), 0.5);
    assert_eq!(ap_oracle(&[false], 1), 0.0);
}

#[test]
fn random_scenes_match_oracle() {
    for seed in 0..500 {
        let (dets, truths) = random_scene(seed);
        let r = evaluate(&dets, &truths, &EvalOptions::default());
        let oracle = per_class_ap_oracle(&dets, &truths, 0.5);
        assert_eq!(r.per_class_ap.keys().collect::<Vec<_>>(), oracle.keys().collect::<Vec<_>>());
        for (c, ap) in &oracle {
            assert!((r.per_class_ap[c] - ap).abs() <= 1e-12, "seed {seed} class {c}");
        }
        for v in [r.map, r.precision, r.recall] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(r.counts.true_positives + r.counts.false_negatives, truths.len());
    }
}

proptest! {
    #[test]
    fn iou_agrees_with_oracle(a in (0i32..20, 0i32..20, 1i32..10, 1i32..10),
                              b in (0i32..20, 0i32..20, 1i32..10, 1i32..10)) {
        let ba = BBox::new(a.0 as f64, a.1 as f64, (a.0 + a.2) as f64, (a.1 + a.3) as f64);
        let bb = BBox::new(b.0 as f64, b.1 as f64, (b.0 + b.2) as f64, (b.1 + b.3) as f64);
        let v = iou(&ba, &bb);
        prop_assert!((v - iou_oracle(&ba, &bb)).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&bb, &ba));
    }

    #[test]
    fn shuffling_lines_keeps_report(seed in 0u64..10_000, perm_seed in any::<u64>()) {
        let (dets, truths) = random_scene(seed);
        // permutations that reorder equal-confidence detections change tie
        // ranks by design, so confidences are made distinct first
        let dets: Vec<DetectionBox> = dets
            .into_iter()
            .enumerate()
            .map(|(i, mut d)| { d.confidence = (d.confidence * 0.9 + i as f64 * 1e-3).min(1.0); d })
            .collect();
        let base = evaluate(&dets, &truths, &EvalOptions::default());
        let mut sd = dets.clone();
        let mut st = truths.clone();
        let n = sd.len();
        for i in (1..n).rev() {
            sd.swap(i, (perm_seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        st.reverse();
        let shuffled = evaluate(&sd, &st, &EvalOptions::default());
        prop_assert_eq!(base.per_class_ap.len(), shuffled.per_class_ap.len());
        for (c, ap) in &base.per_class_ap {
            prop_assert!((shuffled.per_class_ap[c] - ap).abs() < 1e-12);
        }
        prop_assert_eq!(base.counts, shuffled.counts);
    }

    #[test]
    fn dropping_false_positive_never_hurts(seed in 0u64..10_000) {
        let (dets, truths) = random_scene(seed);
        let base = evaluate(&dets, &truths, &EvalOptions::default());
        let tp = common::oracle::match_oracle(&dets, &truths, 0.5);
        if let Some(fp) = tp.iter().position(|&h| !h) {
            let mut fewer = dets.clone();
            fewer.remove(fp);
            let after = evaluate(&fewer, &truths, &EvalOptions::default());
            for (c, ap) in &base.per_class_ap {
                prop_assert!(after.per_class_ap[c] >= ap - 1e-12);
            }
            if !base.precision_undefined && !after.precision_undefined {
                prop_assert!(after.precision >= base.precision - 1e-12);
            }
        }
    }
}
