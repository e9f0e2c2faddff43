mod common;

use proptest::prelude::*;
use robustkit::corruptions::{corruption_suite_eval_with, CorruptionKind};
use robustkit::data::bench::*;
use robustkit::data::{gen_shapes, Dataset, OodVariant, Provenance, ShapesConfig};
use robustkit::{Error, Tensor};

/// Two-class threshold data the hand-set linear model classifies perfectly.
fn threshold_data() -> (robustkit::nn::Model, Dataset) {
    let m = common::linear_model(&[0.0, 1.0], &[0.0, -0.5]);
    let x = Tensor::new([6, 1, 1, 1], vec![0.1, 0.9, 0.2, 0.8, 0.05, 0.95]).unwrap();
    let ds = Dataset::new(x, vec![0, 1, 0, 1, 0, 1], 2, "test", Provenance::Generator { name: "hand".into(), seed: 0 }).unwrap();
    (m, ds)
}

fn clean_only() -> SuiteConfig {
    SuiteConfig { clean: true, ..Default::default() }
}

#[test]
fn clean_suite_on_perfect_model() {
    let (m, ds) = threshold_data();
    let r = run_benchmark(&m, "perfect", &ds, &clean_only(), &BenchContext::default()).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.rows[0].metric, Metric::CleanAccuracy);
    assert_eq!(r.rows[0].value, 100.0);
    assert_eq!(r.rows[0].samples, 6);
    assert_eq!(r.rows[0].dataset, "hand(seed=0)");
    assert!(r.complete);
    assert_eq!(r.toolkit_version, TOOLKIT_VERSION);
    assert_eq!(r.checkpoint_hash.len(), 64);
}

#[test]
fn empty_suite_is_rejected() {
    let (m, ds) = threshold_data();
    let suite = SuiteConfig { clean: false, ..Default::default() };
    assert!(matches!(run_benchmark(&m, "m", &ds, &suite, &BenchContext::default()), Err(Error::InvalidArgument(_))));
}

#[test]
fn failing_benchmark_marks_report_incomplete() {
    let (m, ds) = threshold_data();
    let suite = SuiteConfig { corruptions: Some(CorruptionSuite::default()), ood: vec![OodVariant::HardMined], ..clean_only() };
    let r = run_benchmark(&m, "m", &ds, &suite, &BenchContext::default()).unwrap();
    assert!(!r.complete);
    assert_eq!(r.failures.len(), 2, "{:?}", r.failures);
    assert!(r.failures[0].starts_with("corruptions:"));
    assert!(r.failures[1].starts_with("hard-mined:"));
    assert_eq!(r.rows.len(), 1);
    assert!(r.to_table().contains("INCOMPLETE"));
}

fn full_report() -> BenchmarkReport {
    let ds = gen_shapes(&ShapesConfig { n: 40, size: 12, ..Default::default() }, 3).unwrap();
    let m = common::small_cnn(4, 10);
    let base = common::small_cnn(5, 10);
    let kinds = vec![CorruptionKind::GaussianNoise, CorruptionKind::Fog];
    let baseline = corruption_suite_eval_with(&base, ds.images(), ds.labels(), 0, &kinds, &[1, 3]).unwrap();
    let suite = SuiteConfig {
        clean: true,
        robust_epsilons: vec![0.05, 0.0],
        apgd_steps: 5,
        square_queries: 20,
        corruptions: Some(CorruptionSuite { kinds, severities: vec![1, 3], seed: 0 }),
        ood: vec![OodVariant::RotationShift, OodVariant::EdgeSketch, OodVariant::HardMined],
        robust_samples: Some(10),
        seed: 7,
    };
    run_benchmark(&m, "desk", &ds, &suite, &BenchContext { baseline: Some(&baseline), reference: Some(&base) }).unwrap()
}

#[test]
fn full_suite_rows_and_ranges() {
    let r = full_report();
    assert!(r.complete, "{:?}", r.failures);
    let labels: Vec<String> = r.rows.iter().map(|x| x.metric.label()).collect();
    assert_eq!(
        labels,
        [
            "clean",
            "robust@0",
            "robust@0.05",
            "mCE",
            "ce/gaussian_noise",
            "ce/fog",
            "ood/rotation-shift",
            "ood/edge-sketch",
            "ood/hard-mined"
        ]
    );
    for row in &r.rows {
        assert!(row.value.is_finite() && row.value >= 0.0);
        if row.metric.is_percentage() {
            assert!(row.value <= 100.0, "{row:?}");
        }
        assert!(!row.dataset.is_empty());
    }
    // radius 0 leaves only clean-correct samples standing, the larger radius no more
    let r0 = r.value(&Metric::RobustAccuracy { epsilon: 0.0 }).unwrap();
    let r5 = r.value(&Metric::RobustAccuracy { epsilon: 0.05 }).unwrap();
    assert!(r5 <= r0);
    assert!(r.rows.iter().find(|x| x.metric.label() == "ood/edge-sketch").unwrap().dataset.contains("edge-sketch"));
}

#[test]
fn report_is_byte_identical_across_runs() {
    let a = full_report();
    let b = full_report();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(a.to_table(), b.to_table());
}

#[test]
fn report_round_trips_through_jsonl() {
    let r = full_report();
    let text = r.to_jsonl();
    assert_eq!(BenchmarkReport::from_jsonl(&text).unwrap(), r);
    assert!(text.lines().next().unwrap().contains("\"type\":\"header\""));
    assert!(text.lines().last().unwrap().contains("\"type\":\"footer\""));
    let mut incomplete = r.clone();
    incomplete.complete = false;
    incomplete.failures = vec!["robust: boom".into()];
    assert_eq!(BenchmarkReport::from_jsonl(&incomplete.to_jsonl()).unwrap(), incomplete);
}

#[test]
fn malformed_streams_are_rejected() {
    let r = full_report();
    let text = r.to_jsonl();
    let no_footer: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(BenchmarkReport::from_jsonl(&no_footer).is_err());
    let row_first: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert!(BenchmarkReport::from_jsonl(&row_first).is_err());
    let two = format!("{text}{text}");
    assert_eq!(parse_reports(&two).unwrap().len(), 2);
    assert!(BenchmarkReport::from_jsonl(&two).is_err());
    assert!(BenchmarkReport::from_jsonl("{\"type\":\"header\",\"bogus\":1}\n").is_err());
}

#[test]
fn config_hash_tracks_content() {
    let a = clean_only();
    assert_eq!(a.hash(), clean_only().hash());
    let b = SuiteConfig { seed: 1, ..clean_only() };
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn suite_config_defaults_from_partial_json() {
    let s: SuiteConfig = serde_json::from_str(r#"{"clean": true, "ood": ["edge-sketch"]}"#).unwrap();
    assert_eq!(s.apgd_steps, 100);
    assert_eq!(s.square_queries, 1000);
    assert_eq!(s.ood, vec![OodVariant::EdgeSketch]);
    assert!(serde_json::from_str::<SuiteConfig>(r#"{"clen": true}"#).is_err());
}

fn report_with(model: &str, mce: Option<f64>) -> BenchmarkReport {
    let mut rows = vec![MetricRow { metric: Metric::CleanAccuracy, value: 90.0, dataset: "d".into(), samples: 1 }];
    if let Some(v) = mce {
        rows.push(MetricRow { metric: Metric::Mce, value: v, dataset: "d".into(), samples: 1 });
    }
    BenchmarkReport {
        model: model.into(),
        checkpoint_hash: "0".repeat(64),
        config_hash: "1".repeat(64),
        toolkit_version: TOOLKIT_VERSION.into(),
        rows,
        complete: true,
        failures: vec![],
    }
}

#[test]
fn leaderboard_puts_missing_mce_last() {
    let reports = vec![report_with("a", None), report_with("b", Some(80.0)), report_with("c", Some(60.5))];
    let lb = leaderboard(&reports);
    let names: Vec<&str> = lb.iter().map(|e| e.model.as_str()).collect();
    assert_eq!(names, ["c", "b", "a"]);
    let table = leaderboard_table(&lb);
    assert!(table.lines().nth(1).unwrap().contains("60.50"));
    assert!(table.lines().nth(3).unwrap().contains(" - "));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leaderboard_matches_sort_oracle(values in proptest::collection::vec(0.0f64..300.0, 1..12)) {
        let reports: Vec<BenchmarkReport> =
            values.iter().enumerate().map(|(i, &v)| report_with(&format!("m{i}"), Some(v))).collect();
        // selection sort over the extracted column, stable on ties
        let mut remaining: Vec<(usize, f64)> = values.iter().cloned().enumerate().collect();
        let mut expect = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for k in 1..remaining.len() {
                if remaining[k].1 < remaining[best].1 {
                    best = k;
                }
            }
            expect.push(format!("m{}", remaining.remove(best).0));
        }
        let got: Vec<String> = leaderboard(&reports).into_iter().map(|e| e.model).collect();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn rows_round_trip(eps in 0.0f32..1.0, value in 0.0f64..100.0) {
        let mut r = report_with("p", Some(value * 3.0));
        r.rows.push(MetricRow { metric: Metric::RobustAccuracy { epsilon: eps }, value, dataset: "x".into(), samples: 3 });
        prop_assert_eq!(BenchmarkReport::from_jsonl(&r.to_jsonl()).unwrap(), r);
    }
}

#[test]
fn baseline_may_cover_extra_kinds() {
    let ds = gen_shapes(&ShapesConfig { n: 30, size: 12, ..Default::default() }, 3).unwrap();
    let m = common::small_cnn(4, 10);
    let all = vec![CorruptionKind::GaussianNoise, CorruptionKind::Fog, CorruptionKind::Contrast];
    let baseline = corruption_suite_eval_with(&common::small_cnn(5, 10), ds.images(), ds.labels(), 0, &all, &[2]).unwrap();
    let suite = SuiteConfig {
        corruptions: Some(CorruptionSuite { kinds: vec![CorruptionKind::Fog], severities: vec![2], seed: 0 }),
        ..clean_only()
    };
    let r = run_benchmark(&m, "m", &ds, &suite, &BenchContext { baseline: Some(&baseline), reference: None }).unwrap();
    assert!(r.complete, "{:?}", r.failures);
    // one kind: the mean equals that kind's error
    assert_eq!(r.value(&Metric::Mce), r.value(&Metric::CorruptionError { kind: CorruptionKind::Fog }));
    // a kind missing from the baseline still fails
    let missing = SuiteConfig {
        corruptions: Some(CorruptionSuite { kinds: vec![CorruptionKind::Pixelate], severities: vec![2], seed: 0 }),
        ..clean_only()
    };
    let r = run_benchmark(&m, "m", &ds, &missing, &BenchContext { baseline: Some(&baseline), reference: None }).unwrap();
    assert!(!r.complete);
}
