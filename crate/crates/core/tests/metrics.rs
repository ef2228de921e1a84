use proptest::prelude::*;

use octnet_core::eval::{
    aggregate_metrics, class_metrics, compare, reference_fixture, ConfusionMatrix, Reference, ReferenceFixture,
};
use octnet_core::Error;

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

fn labels() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..6).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..200)))
}

proptest! {
    #[test]
    fn matrix_from_predictions_is_consistent((k, pairs) in labels()) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = ConfusionMatrix::from_predictions(names(k), &truth, &pred).unwrap();
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        for c in 0..k {
            prop_assert_eq!(cm.row_sums()[c], truth.iter().filter(|&&t| t == c).count() as u64);
            prop_assert_eq!(cm.col_sums()[c], pred.iter().filter(|&&p| p == c).count() as u64);
        }
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        prop_assert!((cm.accuracy().unwrap() - correct as f64 / pairs.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn micro_averages_equal_accuracy((k, pairs) in labels()) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = ConfusionMatrix::from_predictions(names(k), &truth, &pred).unwrap();
        let r = aggregate_metrics(&cm).unwrap();
        prop_assert!((r.micro.precision - r.accuracy).abs() < 1e-12);
        prop_assert!((r.micro.sensitivity - r.accuracy).abs() < 1e-12);
        prop_assert!((r.micro.f1 - r.accuracy).abs() < 1e-12);
        for m in [r.macro_.precision, r.macro_.sensitivity, r.macro_.f1] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        for c in &r.per_class {
            prop_assert_eq!(c.tp + c.tn + c.fp + c.fn_, cm.total());
        }
    }

    #[test]
    fn per_class_counts_match_definition((k, pairs) in labels()) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = ConfusionMatrix::from_predictions(names(k), &truth, &pred).unwrap();
        for c in 0..k {
            let m = class_metrics(&cm, c).unwrap();
            let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as u64;
            let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as u64;
            let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as u64;
            prop_assert_eq!((m.tp, m.fp, m.fn_), (tp, fp, fn_));
            if tp + fp > 0 {
                prop_assert!((m.precision - tp as f64 / (tp + fp) as f64).abs() < 1e-12);
            }
            if tp + fn_ > 0 {
                prop_assert!((m.sensitivity - tp as f64 / (tp + fn_) as f64).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn hand_worked_three_class_example() {
    // rows true, cols predicted
    let cm = ConfusionMatrix::new(names(3), vec![vec![5, 2, 0], vec![1, 3, 1], vec![0, 0, 4]]).unwrap();
    let r = aggregate_metrics(&cm).unwrap();
    assert!((r.accuracy - 12.0 / 16.0).abs() < 1e-12);
    let c0 = &r.per_class[0];
    assert_eq!((c0.tp, c0.fp, c0.fn_, c0.tn), (5, 1, 2, 8));
    assert!((c0.precision - 5.0 / 6.0).abs() < 1e-12);
    assert!((c0.sensitivity - 5.0 / 7.0).abs() < 1e-12);
    assert!((c0.f1 - 2.0 * 5.0 / (2.0 * 5.0 + 1.0 + 2.0)).abs() < 1e-12);
    assert!((c0.accuracy - 13.0 / 16.0).abs() < 1e-12);
    let macro_p = (5.0 / 6.0 + 3.0 / 5.0 + 4.0 / 5.0) / 3.0;
    assert!((r.macro_.precision - macro_p).abs() < 1e-12);
}

#[test]
fn never_predicted_class_is_flagged_not_nan() {
    let cm = ConfusionMatrix::new(names(2), vec![vec![3, 0], vec![2, 0]]).unwrap();
    let r = aggregate_metrics(&cm).unwrap();
    let c1 = &r.per_class[1];
    assert!(c1.degenerate);
    assert_eq!(c1.precision, 0.0);
    assert!(r.per_class.iter().all(|c| c.f1.is_finite()));
}

#[test]
fn invalid_inputs() {
    assert!(matches!(ConfusionMatrix::from_predictions(names(3), &[0, 3], &[0, 1]), Err(Error::Label(_))));
    assert!(ConfusionMatrix::new(names(2), vec![vec![1, 2, 3], vec![1, 2, 3]]).is_err());
    assert!(matches!(aggregate_metrics(&ConfusionMatrix::zeros(names(4))), Err(Error::EmptyInput(_))));
}

#[test]
fn compare_respects_tolerance() {
    let cm = ConfusionMatrix::new(names(2), vec![vec![9, 1], vec![0, 10]]).unwrap();
    let r = aggregate_metrics(&cm).unwrap();
    let reference = Reference { accuracy: Some(0.954), precision: Some(0.944), sensitivity: None, f1: Some(0.95) };
    let rows = compare(&r, &reference, 0.005);
    assert_eq!(rows.len(), 3);
    let pass: Vec<bool> = rows.iter().map(|c| c.pass).collect();
    assert_eq!(pass, [true, false, true]);
}

#[test]
fn reference_fixture_integrity() {
    let fixture = reference_fixture().unwrap();
    assert_eq!(fixture.entries.len(), 8);
    let json = serde_json::to_string(&fixture).unwrap();
    // Tamper with one count so a row no longer matches its class total.
    let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
    value["entries"][0]["rows"][0][0] = serde_json::json!(1);
    let tampered = ReferenceFixture::parse(&value.to_string()).and_then(|f| f.validate());
    assert!(matches!(tampered, Err(Error::Integrity(_))), "{tampered:?}");
}
