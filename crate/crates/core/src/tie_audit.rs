//! Detection of output-tie ambiguities in resolved queries.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rewrite;
use crate::sql::{print_expr, BinaryOp, ColumnRef, DbSchema, Expr, QueryNode, QueryPath, SqlAst};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TieCategory {
    Limit1,
    LimitN,
    GroupByMisuse,
    OrderByDistinct,
}

impl TieCategory {
    pub const ALL: [TieCategory; 4] = [
        TieCategory::Limit1,
        TieCategory::LimitN,
        TieCategory::GroupByMisuse,
        TieCategory::OrderByDistinct,
    ];

    /// Column heading used in corpus tables.
    pub fn label(self) -> &'static str {
        match self {
            TieCategory::Limit1 => "LIMIT 1",
            TieCategory::LimitN => "LIMIT N",
            TieCategory::GroupByMisuse => "GROUP BY",
            TieCategory::OrderByDistinct => "ORDER BY",
        }
    }
}

impl fmt::Display for TieCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Normal,
    /// The pattern is present but the schema rules out an actual tie
    /// (e.g. ungrouped columns determined by a grouped key).
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieFinding {
    pub category: TieCategory,
    pub location: QueryPath,
    pub explanation: String,
    pub rewritable: bool,
    pub severity: Severity,
}

/// Finding tagged with its example, as written to JSON reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub example_id: String,
    #[serde(flatten)]
    pub finding: TieFinding,
}

/// Audit every query node of `ast`.
///
/// `ast` should be resolved against `schema`; unresolved trees are audited
/// by column name, which loses alias and key information.
pub fn audit_query(ast: &SqlAst, schema: &DbSchema) -> Vec<TieFinding> {
    let mut out = Vec::new();
    for node in ast.nodes() {
        audit_node(&node, schema, &mut out);
    }
    out
}

fn audit_node(node: &QueryNode<'_>, schema: &DbSchema, out: &mut Vec<TieFinding>) {
    let q = node.ast;
    let finding = |category, explanation: String, rewritable, severity| TieFinding {
        category,
        location: node.path.clone(),
        explanation,
        rewritable,
        severity,
    };

    if let Some(limit) = q.limit {
        if limit.count > 0 {
            if q.order_by.is_empty() {
                out.push(finding(
                    TieCategory::LimitN,
                    format!("LIMIT {} without ORDER BY returns an arbitrary subset of rows", limit.count),
                    false,
                    Severity::Normal,
                ));
            } else if limit.count == 1 {
                let blocker = rewrite::limit1_blocker(node);
                let severity = if order_key_is_unique(q, schema) {
                    Severity::Low
                } else {
                    Severity::Normal
                };
                let keys: Vec<String> = q.order_by.iter().map(|o| print_expr(&o.expr)).collect();
                out.push(finding(
                    TieCategory::Limit1,
                    format!("ORDER BY {} LIMIT 1 keeps one row when several share the extreme value", keys.join(", ")),
                    blocker.is_none(),
                    severity,
                ));
            } else {
                out.push(finding(
                    TieCategory::LimitN,
                    format!("ORDER BY ... LIMIT {} cuts through rows tied at the boundary", limit.count),
                    false,
                    Severity::Normal,
                ));
            }
        }
    }

    if let Some(g) = group_by_misuse(q, schema) {
        let severity = if g.determined {
            Severity::Low
        } else {
            Severity::Normal
        };
        let explanation = if q.group_by.is_empty() {
            format!(
                "aggregated and non-aggregated columns ({}) are mixed without GROUP BY",
                g.columns.join(", ")
            )
        } else {
            format!("selected columns ({}) are neither aggregated nor grouped", g.columns.join(", "))
        };
        let rewritable = !q.group_by.is_empty() && !g.wildcard;
        out.push(finding(TieCategory::GroupByMisuse, explanation, rewritable, severity));
    }

    if let Some((keys, determined)) = order_by_distinct(q, schema) {
        let severity = if determined {
            Severity::Low
        } else {
            Severity::Normal
        };
        out.push(finding(
            TieCategory::OrderByDistinct,
            format!("DISTINCT with ORDER BY on {} which is not selected", keys.join(", ")),
            false,
            severity,
        ));
    }
}

/// Identity of a column for comparisons: the resolved base column when
/// available, otherwise the spelled qualifier and name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct ColKey {
    pub table: String,
    pub column: String,
}

impl ColKey {
    pub fn of(c: &ColumnRef) -> ColKey {
        match c.resolved_column() {
            Some(r) => ColKey {
                table: r.table.to_ascii_lowercase(),
                column: r.column.to_ascii_lowercase(),
            },
            None => ColKey {
                table: c.qualifier.as_ref().map(|q| q.normalized()).unwrap_or_default(),
                column: c.name.normalized(),
            },
        }
    }
}

impl fmt::Display for ColKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.table.is_empty() {
            f.write_str(&self.column)
        } else {
            write!(f, "{}.{}", self.table, self.column)
        }
    }
}

/// Alias- and quoting-insensitive text of an expression.
pub(crate) fn expr_key(e: &Expr) -> String {
    let mut e = e.clone();
    e.walk_mut(&mut |x| {
        if let Expr::Column(c) = x {
            let k = ColKey::of(c);
            let qualifier = (!k.table.is_empty()).then(|| crate::sql::Ident::new(k.table));
            *x = Expr::Column(ColumnRef::new(qualifier, crate::sql::Ident::new(k.column)));
        }
    });
    print_expr(&e)
}

fn is_local(c: &ColumnRef) -> bool {
    c.resolved_column().is_none_or(|r| r.outer_depth == 0)
}

struct GroupByMisuse {
    columns: Vec<String>,
    wildcard: bool,
    determined: bool,
}

/// Local bare columns of select items that are neither grouped nor inside
/// an aggregate, plus whether the select list has a wildcard. Only
/// meaningful for aggregate queries.
pub(crate) fn ungrouped_columns(q: &SqlAst) -> (Vec<&ColumnRef>, bool) {
    let grouped_exprs: BTreeSet<String> = q.group_by.iter().map(|g| expr_key(&q.expand_term(g))).collect();
    let grouped_cols = grouped_columns(q);
    let mut seen = BTreeSet::new();
    let mut ungrouped = Vec::new();
    let mut wildcard = false;
    for item in &q.select {
        if matches!(item.expr, Expr::Wildcard { .. }) {
            wildcard = true;
            continue;
        }
        if grouped_exprs.contains(&expr_key(&item.expr)) {
            continue;
        }
        for c in item.expr.bare_columns() {
            let k = ColKey::of(c);
            if is_local(c) && !grouped_cols.contains(&k) && seen.insert(k) {
                ungrouped.push(c);
            }
        }
    }
    (ungrouped, wildcard)
}

fn grouped_columns(q: &SqlAst) -> BTreeSet<ColKey> {
    q.group_by
        .iter()
        .filter_map(|g| match q.expand_term(g) {
            Expr::Column(c) => Some(ColKey::of(&c)),
            _ => None,
        })
        .collect()
}

pub(crate) fn is_aggregate_query(q: &SqlAst) -> bool {
    !q.group_by.is_empty() || q.having.is_some() || q.select.iter().any(|s| s.aggregated)
}

fn group_by_misuse(q: &SqlAst, schema: &DbSchema) -> Option<GroupByMisuse> {
    if !is_aggregate_query(q) {
        return None;
    }
    let (ungrouped, wildcard) = ungrouped_columns(q);
    if ungrouped.is_empty() && !wildcard {
        return None;
    }
    let keys: Vec<ColKey> = ungrouped.iter().map(|c| ColKey::of(c)).collect();
    let determined = !wildcard && {
        let closure = fd_closure(q, schema, &grouped_columns(q));
        keys.iter().all(|k| closure.contains(k))
    };
    let mut columns: Vec<String> = keys.iter().map(ToString::to_string).collect();
    if wildcard {
        columns.push("*".into());
    }
    Some(GroupByMisuse {
        columns,
        wildcard,
        determined,
    })
}

/// ORDER BY terms of a DISTINCT query that are not among its output.
pub(crate) fn unselected_order_terms(q: &SqlAst) -> Vec<&Expr> {
    if !q.distinct || q.order_by.is_empty() {
        return Vec::new();
    }
    let selected: BTreeSet<String> = q.select.iter().map(|s| expr_key(&s.expr)).collect();
    let wildcard_tables: Vec<Option<String>> = q
        .select
        .iter()
        .filter_map(|s| match &s.expr {
            Expr::Wildcard { qualifier } => Some(qualifier.as_ref().map(|i| i.normalized())),
            _ => None,
        })
        .collect();
    let mut missing = Vec::new();
    for o in &q.order_by {
        if q.designated_select_item(&o.expr).is_some() || selected.contains(&expr_key(&o.expr)) {
            continue;
        }
        if let Expr::Column(c) = &o.expr {
            let covered_by_wildcard = wildcard_tables.iter().any(|w| match w {
                None => true,
                Some(t) => c.qualifier.as_ref().is_some_and(|qual| qual.matches(t)),
            });
            if covered_by_wildcard || !is_local(c) {
                continue;
            }
        }
        missing.push(&o.expr);
    }
    missing
}

fn order_by_distinct(q: &SqlAst, schema: &DbSchema) -> Option<(Vec<String>, bool)> {
    let missing_terms = unselected_order_terms(q);
    if missing_terms.is_empty() {
        return None;
    }
    let selected_cols: BTreeSet<ColKey> = q
        .select
        .iter()
        .filter_map(|s| match &s.expr {
            Expr::Column(c) => Some(ColKey::of(c)),
            _ => None,
        })
        .collect();
    let missing: Vec<String> = missing_terms.iter().map(|e| print_expr(e)).collect();
    let missing_cols: Vec<ColKey> = missing_terms
        .iter()
        .flat_map(|e| e.bare_columns())
        .filter(|c| is_local(c))
        .map(ColKey::of)
        .collect();
    let determined = {
        let closure = fd_closure(q, schema, &selected_cols);
        let no_aggregates = q.order_by.iter().all(|o| !o.expr.contains_aggregate());
        no_aggregates && missing_cols.iter().all(|k| closure.contains(k))
    };
    Some((missing, determined))
}

fn order_key_is_unique(q: &SqlAst, schema: &DbSchema) -> bool {
    if q.order_by.len() != 1 || !q.group_by.is_empty() || q.select.iter().any(|s| s.aggregated) {
        return false;
    }
    let tables = q.base_tables();
    let single_table = q.from.len() == 1 && q.from[0].joins.is_empty() && tables.len() == 1;
    let Expr::Column(c) = &q.order_by[0].expr else {
        return false;
    };
    let Some(r) = c.resolved_column() else {
        return false;
    };
    single_table
        && schema
            .table(&r.table)
            .is_some_and(|t| t.keys().iter().any(|k| k.len() == 1 && k[0].eq_ignore_ascii_case(&r.column)))
}

/// Columns functionally determined by `start` within one query node, using
/// declared keys of base tables, `col = col` equalities and `col = literal`
/// constants from WHERE and ON conjuncts.
pub(crate) fn fd_closure(q: &SqlAst, schema: &DbSchema, start: &BTreeSet<ColKey>) -> BTreeSet<ColKey> {
    let mut closure = start.clone();
    let mut equalities: Vec<(ColKey, ColKey)> = Vec::new();
    let mut conjuncts: Vec<&Expr> = Vec::new();
    if let Some(w) = &q.where_clause {
        conjuncts.extend(w.conjuncts());
    }
    for twj in &q.from {
        for j in &twj.joins {
            if let Some(on) = &j.on {
                conjuncts.extend(on.conjuncts());
            }
        }
    }
    for c in conjuncts {
        if let Expr::Binary {
            left,
            op: BinaryOp::Eq | BinaryOp::DoubleEq,
            right,
        } = c
        {
            match (&**left, &**right) {
                (Expr::Column(a), Expr::Column(b)) if is_local(a) && is_local(b) => {
                    equalities.push((ColKey::of(a), ColKey::of(b)));
                }
                (Expr::Column(a), Expr::Literal(_)) | (Expr::Literal(_), Expr::Column(a)) if is_local(a) => {
                    closure.insert(ColKey::of(a));
                }
                _ => {}
            }
        }
    }

    // Key facts only for tables that appear once; a self-join would conflate
    // the two copies under one identity.
    let mut occurrences: HashMap<String, usize> = HashMap::new();
    for (name, _) in q.base_tables() {
        *occurrences.entry(name.normalized()).or_default() += 1;
    }
    let mut keys: Vec<(Vec<ColKey>, Vec<ColKey>)> = Vec::new();
    for (name, n) in &occurrences {
        if *n != 1 {
            continue;
        }
        let Some(table) = schema.table(name) else { continue };
        let tname = table.name.to_ascii_lowercase();
        let all: Vec<ColKey> = table
            .columns
            .iter()
            .map(|c| ColKey {
                table: tname.clone(),
                column: c.name.to_ascii_lowercase(),
            })
            .collect();
        for key in table.keys() {
            let kc = key
                .iter()
                .map(|c| ColKey {
                    table: tname.clone(),
                    column: c.to_ascii_lowercase(),
                })
                .collect();
            keys.push((kc, all.clone()));
        }
    }

    loop {
        let before = closure.len();
        for (a, b) in &equalities {
            if closure.contains(a) {
                closure.insert(b.clone());
            }
            if closure.contains(b) {
                closure.insert(a.clone());
            }
        }
        for (key, cols) in &keys {
            if key.iter().all(|k| closure.contains(k)) {
                closure.extend(cols.iter().cloned());
            }
        }
        if closure.len() == before {
            return closure;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{parse_and_resolve, Affinity, Column, ForeignKey, Table};

    fn table(name: &str, cols: &[(&str, Affinity)], pk: &[&str]) -> Table {
        Table {
            name: name.into(),
            columns: cols
                .iter()
                .map(|(n, a)| Column {
                    name: (*n).into(),
                    affinity: *a,
                })
                .collect(),
            primary_key: pk.iter().map(|s| s.to_string()).collect(),
            unique_constraints: vec![],
            foreign_keys: vec![],
        }
    }

    fn schema() -> DbSchema {
        use Affinity::*;
        let mut concert = table("concert", &[("concert_id", Integer), ("stadium_id", Integer), ("year", Text)], &["concert_id"]);
        concert.foreign_keys.push(ForeignKey {
            columns: vec!["stadium_id".into()],
            foreign_table: "stadium".into(),
            foreign_columns: vec!["stadium_id".into()],
        });
        DbSchema {
            database_id: "db".into(),
            tables: vec![
                table(
                    "stadium",
                    &[("stadium_id", Integer), ("name", Text), ("capacity", Integer), ("average", Integer)],
                    &["stadium_id"],
                ),
                concert,
                table("district", &[("district_id", Integer), ("district_name", Text), ("city_area", Real)], &["district_id"]),
                table("t", &[("id", Integer), ("a", Integer), ("b", Integer)], &["id"]),
            ],
        }
    }

    fn categories(sql: &str) -> Vec<TieCategory> {
        let s = schema();
        let ast = parse_and_resolve(sql, &s).unwrap();
        audit_query(&ast, &s).into_iter().map(|f| f.category).collect()
    }

    fn findings(sql: &str) -> Vec<TieFinding> {
        let s = schema();
        audit_query(&parse_and_resolve(sql, &s).unwrap(), &s)
    }

    #[test]
    fn limit_one_with_order() {
        let f = findings("SELECT name, capacity FROM stadium ORDER BY average DESC LIMIT 1");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].category, TieCategory::Limit1);
        assert!(f[0].rewritable);
        assert!(f[0].location.is_root());
    }

    #[test]
    fn limit_without_order_is_limit_n() {
        assert_eq!(categories("SELECT name FROM stadium LIMIT 1"), vec![TieCategory::LimitN]);
        assert_eq!(categories("SELECT name FROM stadium ORDER BY capacity LIMIT 3"), vec![TieCategory::LimitN]);
        assert!(categories("SELECT name FROM stadium LIMIT 0").is_empty());
    }

    #[test]
    fn distinct_order_by_absent_column() {
        assert_eq!(
            categories("SELECT DISTINCT district_name FROM district ORDER BY city_area DESC"),
            vec![TieCategory::OrderByDistinct]
        );
        assert!(categories("SELECT DISTINCT district_name, city_area FROM district ORDER BY city_area").is_empty());
        assert!(categories("SELECT DISTINCT district_name AS d FROM district ORDER BY d").is_empty());
        assert!(categories("SELECT DISTINCT district_name FROM district ORDER BY 1").is_empty());
        assert!(categories("SELECT district_name FROM district ORDER BY city_area").is_empty());
    }

    #[test]
    fn grouping_by_key_is_clean() {
        assert!(categories("SELECT id FROM t GROUP BY id").is_empty());
        assert!(categories("SELECT a, max(b) FROM t GROUP BY a").is_empty());
        assert!(categories("SELECT count(*) FROM t").is_empty());
    }

    #[test]
    fn mixed_aggregate_without_group_by() {
        let f = findings("SELECT name, max(average) FROM stadium");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].category, TieCategory::GroupByMisuse);
        assert!(!f[0].rewritable);
        assert_eq!(f[0].severity, Severity::Normal);
    }

    #[test]
    fn key_determined_grouping_is_low_severity() {
        let f = findings("SELECT id, a FROM t GROUP BY id");
        assert_eq!(f[0].category, TieCategory::GroupByMisuse);
        assert_eq!(f[0].severity, Severity::Low);
        assert!(f[0].rewritable);
        let f = findings("SELECT a, b FROM t GROUP BY a");
        assert_eq!(f[0].severity, Severity::Normal);
        // determined through the join equality onto stadium's key
        let f = findings(
            "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        );
        assert_eq!(f[0].severity, Severity::Low);
    }

    #[test]
    fn findings_in_subqueries() {
        let f = findings(
            "SELECT name FROM stadium WHERE stadium_id IN (SELECT stadium_id FROM concert ORDER BY year DESC LIMIT 1)",
        );
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].location.to_string(), "root/where#0");
    }

    #[test]
    fn unrelated_predicate_keeps_limit1() {
        let a = categories("SELECT name FROM stadium ORDER BY capacity DESC LIMIT 1");
        let b = categories("SELECT name FROM stadium WHERE average > 3 ORDER BY capacity DESC LIMIT 1");
        assert_eq!(a, b);
    }

    #[test]
    fn unique_order_key_is_low_severity() {
        let f = findings("SELECT name FROM stadium ORDER BY stadium_id DESC LIMIT 1");
        assert_eq!(f[0].severity, Severity::Low);
    }
}
