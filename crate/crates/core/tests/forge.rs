use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use proptest::prelude::*;
use sqlaudit_core::corpus::{load_corpus, Corpus, CorpusPaths};
use sqlaudit_core::exec::{ExecutionBackend, SqliteBackend, Value};
use sqlaudit_core::forge::{forge_tie_free_instance, forge_tie_instance, random_instance, ForgeError, ForgeOptions};
use sqlaudit_core::instance::{DbInstance, Provenance};
use sqlaudit_core::metrics::{compare_results, execution_accuracy, has_top_level_order, CompareOptions};
use sqlaudit_core::rewrite::rewrite_query;
use sqlaudit_core::sql::{parse_and_resolve, print_sql, DbSchema, SqlAst};

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

fn gold(c: &Corpus, i: usize) -> (DbSchema, SqlAst) {
    let ex = &c.examples[i];
    let schema = c.schema_for(ex).clone();
    let ast = parse_and_resolve(&ex.gold_sql, &schema).unwrap();
    (schema, ast)
}

fn col(inst: &DbInstance, table: &str, column: &str) -> usize {
    inst.schema.table(table).unwrap().column_index(column).unwrap()
}

fn opts(seed: u64) -> ForgeOptions {
    ForgeOptions {
        seed,
        target_id: "t".into(),
        ..ForgeOptions::default()
    }
}

/// Every foreign-key value of every row appears in the parent table.
fn foreign_keys_hold(inst: &DbInstance) -> bool {
    inst.schema.tables.iter().all(|t| {
        t.foreign_keys.iter().all(|fk| {
            let parent = inst.schema.table(&fk.foreign_table).unwrap();
            let present: BTreeSet<String> = inst
                .rows(&parent.name)
                .iter()
                .map(|r| format!("{:?}", fk.foreign_columns.iter().map(|c| &r[parent.column_index(c).unwrap()]).collect::<Vec<_>>()))
                .collect();
            inst.rows(&t.name).iter().all(|r| {
                let v = format!("{:?}", fk.columns.iter().map(|c| &r[t.column_index(c).unwrap()]).collect::<Vec<_>>());
                present.contains(&v)
            })
        })
    })
}

fn primary_keys_hold(inst: &DbInstance) -> bool {
    inst.schema.tables.iter().all(|t| {
        let idx: Vec<usize> = t.primary_key.iter().map(|c| t.column_index(c).unwrap()).collect();
        let keys: Vec<String> = inst
            .rows(&t.name)
            .iter()
            .map(|r| format!("{:?}", idx.iter().map(|&i| &r[i]).collect::<Vec<_>>()))
            .collect();
        keys.iter().collect::<BTreeSet<_>>().len() == keys.len()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_instances_respect_declared_constraints(seed in any::<u64>(), rows in 0usize..12, db in 0usize..4) {
        let c = mini();
        let schema = c.schemas.values().nth(db).unwrap();
        let a = random_instance(schema, seed, rows).unwrap();
        prop_assert!(foreign_keys_hold(&a));
        prop_assert!(primary_keys_hold(&a));
        prop_assert_eq!(&a, &random_instance(schema, seed, rows).unwrap());
        prop_assert!(a.rows(&schema.tables[0].name).len() == rows);
    }
}

#[test]
fn stadium_tie_has_two_rows_at_the_maximum() {
    let c = mini();
    let (schema, q2) = gold(&c, 0);
    let q1 = parse_and_resolve(
        "SELECT name, capacity FROM stadium WHERE average = (SELECT MAX(average) FROM stadium)",
        &schema,
    )
    .unwrap();
    let b = SqliteBackend::default();
    for seed in 0..10 {
        let tie = forge_tie_instance(&schema, &q2, &opts(seed)).unwrap();
        // Oracle: scan the stadium table for the maximum and count holders.
        let avg = col(&tie, "stadium", "Average");
        let (name, cap) = (col(&tie, "stadium", "Name"), col(&tie, "stadium", "Capacity"));
        let rows = tie.rows("stadium");
        let max = rows.iter().filter_map(|r| r[avg].as_f64()).fold(f64::MIN, f64::max);
        let outputs: BTreeSet<String> = rows
            .iter()
            .filter(|r| r[avg].as_f64() == Some(max))
            .map(|r| format!("{}|{}", r[name], r[cap]))
            .collect();
        assert!(outputs.len() >= 2, "seed {seed}");
        assert!(b.execute_once(&tie, &print_sql(&q1)).unwrap().len() >= 2);
        assert!(!execution_accuracy(&b, &q1, &q2, &[tie], &CompareOptions::default()).overall);

        let free = forge_tie_free_instance(&schema, &q2, &opts(seed)).unwrap();
        assert_eq!(b.execute_once(&free, &print_sql(&q1)).unwrap().len(), 1);
        assert!(execution_accuracy(&b, &q1, &q2, &[free], &CompareOptions::default()).overall);
    }
}

#[test]
fn country_language_tie_gives_a_country_two_languages() {
    let c = mini();
    let (schema, q) = gold(&c, 2);
    let tie = forge_tie_instance(&schema, &q, &opts(1)).unwrap();
    assert!(matches!(tie.provenance, Provenance::TieForged { .. }));
    let (code, name) = (col(&tie, "country", "Code"), col(&tie, "country", "Name"));
    let (cc, lang) = (col(&tie, "countrylanguage", "CountryCode"), col(&tie, "countrylanguage", "Language"));
    let names: BTreeMap<String, String> = tie.rows("country").iter().map(|r| (r[code].to_string(), r[name].to_string())).collect();
    let mut by_name: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in tie.rows("countrylanguage") {
        if let Some(n) = names.get(&r[cc].to_string()) {
            by_name.entry(n.clone()).or_default().insert(r[lang].to_string());
        }
    }
    assert!(by_name.values().any(|l| l.len() >= 2));

    let free = forge_tie_free_instance(&schema, &q, &opts(1)).unwrap();
    let names: BTreeMap<String, String> = free.rows("country").iter().map(|r| (r[code].to_string(), r[name].to_string())).collect();
    let mut by_name: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in free.rows("countrylanguage") {
        if let Some(n) = names.get(&r[cc].to_string()) {
            by_name.entry(n.clone()).or_default().insert(r[lang].to_string());
        }
    }
    assert!(by_name.values().all(|l| l.len() == 1), "grouped name must determine the language");
}

#[test]
fn district_tie_maps_one_name_to_two_areas() {
    let c = mini();
    let (schema, q) = gold(&c, 1);
    let tie = forge_tie_instance(&schema, &q, &opts(5)).unwrap();
    let (n, a) = (col(&tie, "district", "District_name"), col(&tie, "district", "City_Area"));
    let mut areas: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in tie.rows("district") {
        areas.entry(r[n].to_string()).or_default().insert(r[a].to_string());
    }
    assert!(areas.values().any(|s| s.len() >= 2));
}

#[test]
fn trivially_tie_free_with_one_row_per_table() {
    let c = mini();
    let (schema, q) = gold(&c, 4);
    let free = forge_tie_free_instance(&schema, &q, &opts(0)).unwrap();
    assert!(free.tables.values().all(|rows| rows.len() == 1));
}

#[test]
fn queries_without_findings_are_rejected() {
    let c = mini();
    let (schema, q) = gold(&c, 6);
    assert!(matches!(forge_tie_instance(&schema, &q, &opts(0)), Err(ForgeError::CannotForge(_))));
}

fn results_agree(schema: &DbSchema, q: &SqlAst, inst: &DbInstance) -> Option<bool> {
    let rewritten = rewrite_query(q, schema).rewritten?;
    let b = SqliteBackend::default();
    let mut h = b.open(inst).unwrap();
    let a = b.run(&mut h, &print_sql(q)).unwrap();
    let r = b.run(&mut h, &print_sql(&rewritten)).unwrap();
    let ordered = has_top_level_order(q) && has_top_level_order(&rewritten);
    Some(compare_results(&a, &r, ordered, &CompareOptions::default()))
}

#[test]
fn forged_instances_separate_or_reconcile_rewrites() {
    let c = mini();
    for i in 0..c.examples.len() {
        let (schema, q) = gold(&c, i);
        for seed in 0..5 {
            if let Ok(tie) = forge_tie_instance(&schema, &q, &opts(seed)) {
                tie.validate().unwrap();
                if let Some(agree) = results_agree(&schema, &q, &tie) {
                    assert!(!agree, "example {i} seed {seed}: tie instance should separate the rewrite");
                }
            }
            if let Ok(free) = forge_tie_free_instance(&schema, &q, &opts(seed)) {
                free.validate().unwrap();
                if let Some(agree) = results_agree(&schema, &q, &free) {
                    assert!(agree, "example {i} seed {seed}: tie-free instance should reconcile the rewrite");
                }
            }
        }
    }
}

#[test]
fn forging_is_deterministic() {
    let c = mini();
    let (schema, q) = gold(&c, 7);
    assert_eq!(
        forge_tie_instance(&schema, &q, &opts(11)).unwrap(),
        forge_tie_instance(&schema, &q, &opts(11)).unwrap()
    );
    assert_eq!(
        forge_tie_free_instance(&schema, &q, &opts(11)).unwrap(),
        forge_tie_free_instance(&schema, &q, &opts(11)).unwrap()
    );
}

#[test]
fn forged_instances_export() {
    let c = mini();
    let (schema, q) = gold(&c, 0);
    let tie = forge_tie_instance(&schema, &q, &opts(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    tie.write_csv_dir(&dir.path().join("csv")).unwrap();
    tie.write_sqlite(&dir.path().join("db.sqlite")).unwrap();
    let back = DbInstance::from_csv_dir(schema.clone(), &dir.path().join("csv")).unwrap();
    assert_eq!(back.tables, tie.tables);
    let lazy = DbInstance::from_sqlite_file(schema, dir.path().join("db.sqlite"));
    let b = SqliteBackend::default();
    let rows = b.execute_once(&lazy, "SELECT count(*) FROM stadium").unwrap();
    assert_eq!(rows.rows[0][0], Value::Integer(tie.rows("stadium").len() as i64));
}
