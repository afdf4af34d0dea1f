use std::collections::BTreeMap;
use std::path::PathBuf;

use sqlaudit_core::corpus::{load_corpus, Corpus, CorpusPaths, PredictionSet};
use sqlaudit_core::harness::{
    evaluate_corpus, failure_set, rewrite_corpus, suggest_labels, taxonomy_report, ErrorGroup, EvalConfig, EvalReport,
    HarnessError, TaxonomyLabel,
};

fn mini() -> Corpus {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini");
    load_corpus(
        &CorpusPaths {
            examples: dir.join("dev.json"),
            schemas: Some(dir.join("tables.json")),
            databases: None,
        },
        None,
    )
    .unwrap()
}

fn gold_predictions(c: &Corpus, name: &str) -> PredictionSet {
    PredictionSet {
        system_name: name.into(),
        entries: c.examples.iter().map(|e| (e.example_id.clone(), e.gold_sql.clone())).collect(),
    }
}

/// Gold answers except for `wrong`, which get a query of a different arity
/// (never equal to any fixture gold result).
fn system(c: &Corpus, name: &str, wrong: &[&str]) -> PredictionSet {
    let mut p = gold_predictions(c, name);
    for id in wrong {
        p.entries.insert((*id).into(), "SELECT 1, 2, 3".into());
    }
    p
}

fn eval(c: &Corpus, p: &PredictionSet) -> EvalReport {
    evaluate_corpus(p, c, 2, &EvalConfig::default())
}

#[test]
fn gold_against_itself_is_perfect() {
    let c = mini();
    let r = eval(&c, &gold_predictions(&c, "gold"));
    assert_eq!(r.aggregates.evaluated, 12);
    assert_eq!(r.aggregates.exec_correct, 12, "{:?}", r.exec_failures());
    assert_eq!(r.aggregates.execution_accuracy, 100.0);
    assert_eq!(r.aggregates.set_match_accuracy, 100.0);
    assert_eq!(r.aggregates.set_match_with_values_accuracy, 100.0);
    let ids: Vec<&str> = r.records.iter().map(|x| x.example_id.as_str()).collect();
    assert_eq!(ids, (0..12).map(|i| i.to_string()).collect::<Vec<_>>());
}

#[test]
fn evaluation_is_byte_identical_across_runs() {
    let c = mini();
    let p = system(&c, "a", &["1", "5"]);
    let a = serde_json::to_string(&eval(&c, &p)).unwrap();
    let b = serde_json::to_string(&eval(&c, &p)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_predictions_count_as_wrong() {
    let c = mini();
    let mut p = gold_predictions(&c, "partial");
    p.entries.remove("4");
    let r = eval(&c, &p);
    assert_eq!(r.aggregates.missing_predictions, 1);
    assert_eq!(r.aggregates.exec_correct, 11);
    assert!((r.aggregates.execution_accuracy - 100.0 * 11.0 / 12.0).abs() < 0.01);
    assert_eq!(r.exec_failures(), ["4"]);
}

#[test]
fn rewritten_gold_diverges_on_forged_ties() {
    let c = mini();
    let rewritten = PredictionSet {
        system_name: "rewritten".into(),
        entries: {
            let mut m: BTreeMap<String, String> = gold_predictions(&c, "x").entries;
            m.extend(rewrite_corpus(&c).replacements());
            m
        },
    };
    let r = eval(&c, &rewritten);
    let failures = r.exec_failures();
    // Stadium query: a forged tie at the maximum separates the forms.
    assert!(failures.contains(&"0".to_string()), "{failures:?}");
    // Unrewritten examples are untouched.
    for id in ["1", "4", "5", "6", "8", "9"] {
        assert!(!failures.contains(&id.to_string()), "{id}");
    }
    assert!(r.aggregates.set_match_accuracy <= 50.0 + 1e-9);
    assert!(r.aggregates.execution_accuracy >= r.aggregates.set_match_accuracy);
}

#[test]
fn failure_set_is_the_intersection() {
    let c = mini();
    let a = eval(&c, &system(&c, "a", &["1", "5", "6", "9"]));
    let b = eval(&c, &system(&c, "b", &["5", "6", "9", "11"]));
    let g = eval(&c, &system(&c, "c", &["0", "5", "6", "9"]));
    assert_eq!(a.exec_failures(), ["1", "5", "6", "9"]);
    let all = failure_set(&[a.clone(), b.clone(), g]).unwrap();
    assert_eq!(all, ["5", "6", "9"]);
    let two = failure_set(&[a.clone(), b]).unwrap();
    assert!(all.iter().all(|id| two.contains(id)));
    assert_eq!(failure_set(std::slice::from_ref(&a)).unwrap(), a.exec_failures());
    assert!(matches!(failure_set(&[]), Err(HarnessError::NoReports)));
}

#[test]
fn failure_set_rejects_mismatched_corpora() {
    let c = mini();
    let a = eval(&c, &gold_predictions(&c, "a"));
    let mut b = a.clone();
    b.records.pop();
    assert!(matches!(failure_set(&[a, b]), Err(HarnessError::CorpusMismatch(_))));
}

#[test]
fn taxonomy_histograms() {
    let c = mini();
    let empty = taxonomy_report(&[], &c).unwrap();
    assert_eq!(empty.total, 0);
    assert_eq!(empty.totals.len(), 5);
    assert!(empty.totals.values().all(|&n| n == 0));

    let uniform: Vec<TaxonomyLabel> = ErrorGroup::ALL
        .iter()
        .enumerate()
        .map(|(i, g)| TaxonomyLabel {
            example_id: i.to_string(),
            source: "sys".into(),
            group: *g,
            suggested: false,
        })
        .collect();
    let r = taxonomy_report(&uniform, &c).unwrap();
    assert!(r.per_source["sys"].values().all(|&n| n == 1));
    assert_eq!(r.total, 5);

    let bad = TaxonomyLabel {
        example_id: "nope".into(),
        source: "sys".into(),
        group: ErrorGroup::Schema,
        suggested: false,
    };
    assert!(matches!(taxonomy_report(&[bad], &c), Err(HarnessError::UnknownExample(_))));
}

#[test]
fn suggested_labels_follow_findings() {
    let c = mini();
    let ids: Vec<String> = ["0", "2", "3", "4", "9"].iter().map(|s| s.to_string()).collect();
    let labels = suggest_labels(&c, &ids, "sys");
    let got: Vec<(&str, ErrorGroup)> = labels.iter().map(|l| (l.example_id.as_str(), l.group)).collect();
    // Example 3 groups by the maker key, so its finding is low severity.
    assert_eq!(got, [("0", ErrorGroup::Limit), ("2", ErrorGroup::GroupBy), ("4", ErrorGroup::Limit)]);
    assert!(labels.iter().all(|l| l.suggested));
    let r = taxonomy_report(&labels, &c).unwrap();
    assert_eq!(r.totals[&ErrorGroup::Limit], 2);
    assert_eq!(r.totals[&ErrorGroup::Schema], 0);
}
