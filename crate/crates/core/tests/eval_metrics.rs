use pgn_core::data::synthetic::{generate, SyntheticConfig};
use pgn_core::data::Split;
use pgn_core::diffcore::{Rng, Tensor};
use pgn_core::eval::{
    average_precision, count_transitions, export_curves, fgsm_baseline, mean_average_precision,
    parse_curves, score, softmax_rows, top1_accuracy, MetricsRow, SummaryRow, SummaryTable,
    CURVE_HEADER,
};
use pgn_core::models::{desk_classifier, AccessPolicy};
use pgn_core::train::{train_classifier, ClassifierOptions};
use pgn_core::Error;
use proptest::prelude::*;

proptest! {
    #[test]
    fn map_lies_in_unit_interval(seed in 0u64..500, n in 4usize..40) {
        let mut rng = Rng::new(seed, 2);
        let scores = rng.uniform_tensor(&[n, 4], 0.0, 1.0);
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let m = mean_average_precision(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn transitions_account_for_accuracy_change(
        rows in prop::collection::vec((0usize..3, 0usize..3, 0usize..3), 1..40)
    ) {
        let v: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let p: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let l: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let (pos, neg) = count_transitions(&v, &p, &l).unwrap();
        let n = l.len() as f64;
        let delta = top1_accuracy(&p, &l).unwrap() - top1_accuracy(&v, &l).unwrap();
        prop_assert!((delta - (pos as f64 - neg as f64) / n).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..500) {
        let logits = Rng::new(seed, 3).uniform_tensor(&[5, 7], -20.0, 20.0);
        let p = softmax_rows(&logits).unwrap();
        for row in p.data().chunks(7) {
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn ap_without_positives_is_undefined() {
    assert_eq!(average_precision(&[0.3, 0.2], &[false, false]), None);
    let scores = Tensor::new(vec![2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
    assert_eq!(mean_average_precision(&scores, &[0, 1]).unwrap(), 1.0);
}

#[test]
fn curves_round_trip_through_a_file() {
    let rows: Vec<MetricsRow> = (1..=3)
        .map(|e| MetricsRow {
            epoch: e,
            l_d: 0.25 * e as f64,
            l_g: 0.125,
            l_r: 10.5 * e as f64,
            top1: 0.5,
            map: (e != 2).then_some(0.75),
            pos: e,
            neg: 2 * e,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    export_curves(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(CURVE_HEADER));
    assert!(text.lines().nth(2).unwrap().contains(",NA,"));
    assert_eq!(parse_curves(&text).unwrap(), rows);
    assert!(export_curves(&[], &path).is_err());
}

#[test]
fn fgsm_degrades_and_respects_access() {
    let cfg = SyntheticConfig::default();
    let train = generate(200, 8, Split::Train, &cfg).unwrap();
    let (f, _) = train_classifier(
        &train,
        &train,
        desk_classifier(10),
        &ClassifierOptions::new(3, 1),
    )
    .unwrap();
    let (_, clean, map) = score(&f, train.images(), train.labels()).unwrap();
    assert!(map.is_some());
    let same = fgsm_baseline(&f, train.images(), train.labels(), 0.0, &[1.0; 3]).unwrap();
    assert_eq!(same, clean);
    let attacked = fgsm_baseline(&f, train.images(), train.labels(), 0.05, &[1.0; 3]).unwrap();
    assert!(attacked < clean, "{attacked} vs {clean}");

    let b = f.with_policy(AccessPolicy::BlackBoxLabels);
    assert!(matches!(
        fgsm_baseline(&b, train.images(), train.labels(), 0.03, &[1.0; 3]),
        Err(Error::Access(_))
    ));
    assert_eq!(score(&b, train.images(), train.labels()).unwrap().2, None);
}

#[test]
fn summary_table_has_three_way_columns() {
    let table = SummaryTable {
        rows: vec![SummaryRow {
            dataset: "synthetic".into(),
            classifier: "desk".into(),
            vanilla: (0.9, Some(0.8)),
            proposed: (0.2, None),
            baseline: Some((0.4, Some(0.3))),
        }],
    };
    let text = table.render();
    let header = text.lines().next().unwrap();
    for col in ["vanilla", "proposed", "baseline"] {
        assert!(header.contains(col));
    }
    assert!(
        text.contains("90.0% / 0.800")
            && text.contains("20.0% / NA")
            && text.contains("40.0% / 0.300")
    );
}
