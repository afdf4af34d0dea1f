//! Generated-query properties for the parser, metrics, auditor and rewriter.

use std::path::PathBuf;
use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::sample::subsequence;
use sqlaudit_core::corpus::{load_corpus, Corpus, CorpusPaths};
use sqlaudit_core::dialect::classify_backend_error;
use sqlaudit_core::exec::{ResultTable, SqliteBackend, Value};
use sqlaudit_core::forge::random_instance;
use sqlaudit_core::metrics::{compare_results, exact_set_match, execution_accuracy, CompareOptions};
use sqlaudit_core::rewrite::rewrite_query;
use sqlaudit_core::sql::{parse_and_resolve, parse_sql, print_sql, resolve_columns, DbSchema, Dialect};
use sqlaudit_core::tie_audit::{audit_query, TieCategory};

fn schema() -> &'static DbSchema {
    static S: OnceLock<DbSchema> = OnceLock::new();
    S.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini");
        let c: Corpus = load_corpus(
            &CorpusPaths {
                examples: dir.join("dev.json"),
                schemas: Some(dir.join("tables.json")),
                databases: None,
            },
            None,
        )
        .unwrap();
        c.schemas["concert_singer"].clone()
    })
}

const NUMERIC: [&str; 2] = ["Age", "Song_release_year"];
const TEXT: [&str; 3] = ["Name", "Country", "Song_Name"];

#[derive(Debug, Clone)]
enum Pred {
    Cmp(usize, &'static str, i64),
    Between(usize, i64, i64),
    InList(usize, Vec<i64>),
    TextEq(usize, String),
    Like(usize, String),
    InSub,
    Or(Box<Pred>, Box<Pred>),
    Not(Box<Pred>),
}

impl Pred {
    fn render(&self, q: &dyn Fn(&str) -> String) -> String {
        match self {
            Pred::Cmp(c, op, n) => format!("{} {op} {n}", q(NUMERIC[*c])),
            Pred::Between(c, a, b) => format!("{} BETWEEN {a} AND {b}", q(NUMERIC[*c])),
            Pred::InList(c, xs) => format!(
                "{} IN ({})",
                q(NUMERIC[*c]),
                xs.iter().map(i64::to_string).collect::<Vec<_>>().join(", ")
            ),
            Pred::TextEq(c, s) => format!("{} = '{s}'", q(TEXT[*c])),
            Pred::Like(c, s) => format!("{} LIKE '%{s}%'", q(TEXT[*c])),
            Pred::InSub => format!("{} IN (SELECT Singer_ID FROM singer_in_concert)", q("Singer_ID")),
            Pred::Or(a, b) => format!("({} OR {})", a.render(q), b.render(q)),
            Pred::Not(p) => format!("NOT ({})", p.render(q)),
        }
    }
}

fn pred() -> impl Strategy<Value = Pred> {
    let leaf = prop_oneof![
        (0..2usize, prop::sample::select(vec!["=", ">", "<", ">=", "<=", "!="]), -5..60i64).prop_map(|(c, o, n)| Pred::Cmp(c, o, n)),
        (0..2usize, 0..30i64, 30..60i64).prop_map(|(c, a, b)| Pred::Between(c, a, b)),
        (0..2usize, prop::collection::vec(0..50i64, 1..4)).prop_map(|(c, v)| Pred::InList(c, v)),
        (0..3usize, "[A-Za-z]{1,8}").prop_map(|(c, s)| Pred::TextEq(c, s)),
        (0..3usize, "[a-z]{1,4}").prop_map(|(c, s)| Pred::Like(c, s)),
        Just(Pred::InSub),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Pred::Or(Box::new(a), Box::new(b))),
            inner.prop_map(|p| Pred::Not(Box::new(p))),
        ]
    })
}

/// A single-table query over `singer`, rendered from parts so that
/// equivalent variants can be produced.
#[derive(Debug, Clone)]
struct GenQuery {
    distinct: bool,
    items: Vec<&'static str>,
    preds: Vec<Pred>,
    group: Option<usize>,
    having: Option<i64>,
    order: Option<(&'static str, bool)>,
    limit: Option<u32>,
}

const ITEMS: [&str; 5] = ["Name", "Country", "Age", "Song_Name", "Singer_ID"];

fn gen_query() -> impl Strategy<Value = GenQuery> {
    (
        any::<bool>(),
        subsequence(ITEMS.to_vec(), 1..=3),
        prop::collection::vec(pred(), 0..4),
        prop::option::of(0..3usize),
        prop::option::of(0..4i64),
        prop::option::of((prop::sample::select(ITEMS.to_vec()), any::<bool>())),
        prop::option::of(prop_oneof![Just(1u32), 2..5u32]),
    )
        .prop_map(|(distinct, items, preds, group, having, order, limit)| GenQuery {
            distinct,
            items,
            preds,
            group,
            having: group.and(having),
            order,
            limit,
        })
}

impl GenQuery {
    fn render(&self, alias: Option<&str>, item_order: &[usize], pred_order: &[usize]) -> String {
        let q = |c: &str| alias.map_or(c.to_string(), |a| format!("{a}.{c}"));
        let mut sql = String::from("SELECT ");
        if self.distinct {
            sql.push_str("DISTINCT ");
        }
        let mut items: Vec<String> = item_order.iter().map(|&i| q(self.items[i])).collect();
        if self.group.is_some() {
            items.push("COUNT(*)".into());
        }
        sql.push_str(&items.join(", "));
        sql.push_str(" FROM singer");
        if let Some(a) = alias {
            sql.push_str(&format!(" AS {a}"));
        }
        if !self.preds.is_empty() {
            let preds: Vec<String> = pred_order.iter().map(|&i| self.preds[i].render(&q)).collect();
            sql.push_str(&format!(" WHERE {}", preds.join(" AND ")));
        }
        if let Some(g) = self.group {
            sql.push_str(&format!(" GROUP BY {}", q(ITEMS[g])));
        }
        if let Some(h) = self.having {
            sql.push_str(&format!(" HAVING COUNT(*) > {h}"));
        }
        if let Some((c, desc)) = self.order {
            sql.push_str(&format!(" ORDER BY {}{}", q(c), if desc { " DESC" } else { "" }));
        }
        if let Some(n) = self.limit {
            sql.push_str(&format!(" LIMIT {n}"));
        }
        sql
    }

    fn plain(&self) -> String {
        let items: Vec<usize> = (0..self.items.len()).collect();
        let preds: Vec<usize> = (0..self.preds.len()).collect();
        self.render(None, &items, &preds)
    }
}

fn parse(sql: &str) -> sqlaudit_core::sql::SqlAst {
    parse_and_resolve(sql, schema()).unwrap_or_else(|e| panic!("{sql}: {e}"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn print_then_parse_is_structurally_identity(g in gen_query()) {
        let text = g.plain();
        let once = parse_sql(&text, Dialect::BenchmarkLenient).unwrap();
        let twice = parse_sql(&print_sql(&once), Dialect::BenchmarkLenient).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn resolution_is_idempotent(g in gen_query()) {
        let ast = parse(&g.plain());
        prop_assert_eq!(resolve_columns(&ast, schema()).unwrap(), ast);
    }

    #[test]
    fn set_match_is_reflexive(g in gen_query(), values in any::<bool>()) {
        let ast = parse(&g.plain());
        prop_assert!(exact_set_match(&ast, &ast, values).unwrap().matched);
    }

    #[test]
    fn set_match_is_symmetric(a in gen_query(), b in gen_query(), values in any::<bool>()) {
        let (x, y) = (parse(&a.plain()), parse(&b.plain()));
        let ab = exact_set_match(&x, &y, values).unwrap();
        let ba = exact_set_match(&y, &x, values).unwrap();
        prop_assert_eq!(ab.matched, ba.matched);
        prop_assert_eq!(ab.clauses, ba.clauses);
    }

    #[test]
    fn set_match_ignores_predicate_and_column_order(
        g in gen_query(),
        perm_seed in any::<u64>(),
        alias in any::<bool>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
        let mut items: Vec<usize> = (0..g.items.len()).collect();
        let mut preds: Vec<usize> = (0..g.preds.len()).collect();
        items.shuffle(&mut rng);
        preds.shuffle(&mut rng);
        let variant = g.render(alias.then_some("T1"), &items, &preds);
        let (a, b) = (parse(&g.plain()), parse(&variant));
        prop_assert!(exact_set_match(&a, &b, true).unwrap().matched, "{} vs {}", g.plain(), variant);
    }

    #[test]
    fn findings_point_at_existing_nodes(g in gen_query()) {
        let ast = parse(&g.plain());
        for f in audit_query(&ast, schema()) {
            prop_assert!(ast.node_at(&f.location).is_some(), "{}", f.location);
        }
    }

    #[test]
    fn unrelated_predicate_keeps_limit1_finding(g in gen_query(), extra in pred()) {
        let ast = parse(&g.plain());
        let has = |a: &sqlaudit_core::sql::SqlAst| audit_query(a, schema()).iter().any(|f| f.category == TieCategory::Limit1);
        if has(&ast) {
            let mut more = g.clone();
            more.preds.push(extra);
            prop_assert!(has(&parse(&more.plain())));
        }
    }

    #[test]
    fn rewrites_reparse_and_are_idempotent(g in gen_query()) {
        let ast = parse(&g.plain());
        if let Some(r) = rewrite_query(&ast, schema()).rewritten {
            let printed = print_sql(&r);
            let back = parse_and_resolve(&printed, schema());
            prop_assert!(back.is_ok(), "{printed}");
            let again = rewrite_query(&back.unwrap(), schema());
            prop_assert!(again.rewritten.is_none(), "{printed} rewrote again");
        }
    }

    #[test]
    fn classify_backend_error_is_total_and_deterministic(code in ".{0,12}", message in ".{0,60}") {
        prop_assert_eq!(classify_backend_error(&code, &message), classify_backend_error(&code, &message));
    }

    #[test]
    fn column_permutation_never_matters_for_one_column(
        a in prop::collection::vec(-3..3i64, 0..6),
        b in prop::collection::vec(-3..3i64, 0..6),
        ordered in any::<bool>(),
    ) {
        let table = |v: &[i64]| ResultTable {
            columns: vec!["x".into()],
            rows: v.iter().map(|&n| vec![Value::Integer(n)]).collect(),
        };
        let strict = CompareOptions::default();
        let lenient = CompareOptions { spider_compat: true, ..strict };
        prop_assert_eq!(
            compare_results(&table(&a), &table(&b), ordered, &strict),
            compare_results(&table(&a), &table(&b), ordered, &lenient)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn execution_accuracy_is_monotone_in_instances(a in gen_query(), b in gen_query(), seed in any::<u64>()) {
        let (x, y) = (parse(&a.plain()), parse(&b.plain()));
        let instances: Vec<_> = (0..3).map(|i| random_instance(schema(), seed.wrapping_add(i), 4).unwrap()).collect();
        let backend = SqliteBackend::default();
        let opts = CompareOptions::default();
        let mut prev = true;
        for k in 1..=instances.len() {
            let now = execution_accuracy(&backend, &x, &y, &instances[..k], &opts).overall;
            prop_assert!(prev || !now, "false flipped to true at {k}");
            prev = now;
        }
        prop_assert!(execution_accuracy(&backend, &x, &x, &instances, &opts).overall);
    }
}
