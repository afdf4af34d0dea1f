//! Exact set match and execution / test-suite accuracy.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::exec::{BackendError, ExecutionBackend, ResultTable, Value};
use crate::instance::DbInstance;
use crate::sql::{
    print_sql, BinaryOp, Direction, Expr, Literal, Resolution, SqlAst, TableFactor, UnaryOp,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum MetricError {
    #[error("queries resolve against different databases ({pred} vs {gold})")]
    SchemaMismatch { pred: String, gold: String },
}

/// Clauses compared by exact set match, in report order.
pub const MATCH_CLAUSES: [&str; 8] = ["select", "from", "where", "groupBy", "having", "orderBy", "limit", "setOp"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: bool,
    pub clauses: BTreeMap<String, bool>,
    pub mismatch_notes: Vec<String>,
}

/// Clause-wise structural comparison, insensitive to column order in
/// SELECT, predicate order under AND/OR, operand order of commutative
/// operators and table aliases. With `with_values` false every literal is
/// replaced by a placeholder first.
pub fn exact_set_match(pred: &SqlAst, gold: &SqlAst, with_values: bool) -> Result<MatchResult, MetricError> {
    if let (Some(p), Some(g)) = (&pred.schema_id, &gold.schema_id) {
        if !p.eq_ignore_ascii_case(g) {
            return Err(MetricError::SchemaMismatch {
                pred: p.clone(),
                gold: g.clone(),
            });
        }
    }
    let canon = Canon { with_values };
    let p = canon.query(pred);
    let g = canon.query(gold);
    let mut clauses = BTreeMap::new();
    let mut notes = Vec::new();
    for (name, (a, b)) in MATCH_CLAUSES.iter().zip(p.parts.iter().zip(&g.parts)) {
        let ok = a == b;
        if !ok {
            notes.push(format!("{name}: {a} vs {b}"));
        }
        clauses.insert((*name).to_string(), ok);
    }
    Ok(MatchResult {
        matched: clauses.values().all(|v| *v),
        clauses,
        mismatch_notes: notes,
    })
}

struct CanonQuery {
    parts: [String; 8],
}

impl CanonQuery {
    fn joined(&self) -> String {
        self.parts.join(" | ")
    }
}

struct Canon {
    with_values: bool,
}

impl Canon {
    fn query(&self, q: &SqlAst) -> CanonQuery {
        let mut select: Vec<String> = q.select.iter().map(|s| self.expr(q, &s.expr)).collect();
        select.sort();
        let select = format!("{}[{}]", if q.distinct { "distinct " } else { "" }, select.join(", "));

        let mut tables = Vec::new();
        let mut join_conds = Vec::new();
        for twj in &q.from {
            let factors = std::iter::once(&twj.relation).chain(twj.joins.iter().map(|j| &j.relation));
            for f in factors {
                tables.push(match f {
                    TableFactor::Table { name, .. } => name.normalized(),
                    TableFactor::Derived { subquery, .. } => format!("({})", self.query(subquery).joined()),
                });
            }
            for j in &twj.joins {
                if let Some(on) = &j.on {
                    join_conds.extend(on.conjuncts().into_iter().map(|c| self.expr(q, c)));
                }
            }
        }
        tables.sort();
        join_conds.sort();
        let from = format!("[{}] on [{}]", tables.join(", "), join_conds.join(" AND "));

        let where_ = q.where_clause.as_ref().map(|w| self.expr(q, w)).unwrap_or_default();
        let mut group: Vec<String> = q.group_by.iter().map(|g| self.expr(q, &q.expand_term(g))).collect();
        group.sort();
        let group = group.join(", ");
        let having = q.having.as_ref().map(|h| self.expr(q, h)).unwrap_or_default();
        let order = q
            .order_by
            .iter()
            .map(|o| {
                let d = if o.direction == Direction::Desc { " desc" } else { " asc" };
                format!("{}{d}", self.expr(q, &q.expand_term(&o.expr)))
            })
            .collect::<Vec<_>>()
            .join(", ");
        let limit = match (q.limit, self.with_values) {
            (None, _) => String::new(),
            (Some(_), false) => "limit".into(),
            (Some(l), true) => format!("limit {} offset {}", l.count, l.offset.unwrap_or(0)),
        };
        let set_op = match &q.set_op {
            None => String::new(),
            Some(so) => format!("{} ({})", so.op.keyword(), self.query(&so.operand).joined()),
        };
        CanonQuery {
            parts: [select, from, where_, group, having, order, limit, set_op],
        }
    }

    fn literal(&self, l: &Literal) -> String {
        if !self.with_values && !matches!(l, Literal::Null) {
            return "?".into();
        }
        match l {
            Literal::Number(n) => match n.parse::<f64>() {
                Ok(v) => format!("{v}"),
                Err(_) => n.clone(),
            },
            Literal::String { value, .. } => format!("'{value}'"),
            Literal::Null => "null".into(),
            Literal::Boolean(b) => b.to_string(),
        }
    }

    fn flatten<'a>(e: &'a Expr, op: BinaryOp, out: &mut Vec<&'a Expr>) {
        match e {
            Expr::Binary { left, op: o, right } if *o == op => {
                Self::flatten(left, op, out);
                Self::flatten(right, op, out);
            }
            other => out.push(other),
        }
    }

    fn expr(&self, q: &SqlAst, e: &Expr) -> String {
        match e {
            Expr::Column(c) => match &c.resolved {
                Some(Resolution::Column(r)) => format!("{}.{}", r.table.to_ascii_lowercase(), r.column.to_ascii_lowercase()),
                Some(Resolution::SelectAlias { index }) => match q.select.get(*index) {
                    Some(item) => self.expr(q, &item.expr),
                    None => c.name.normalized(),
                },
                None => c.name.normalized(),
            },
            Expr::Wildcard { qualifier } => match qualifier {
                None => "*".into(),
                Some(alias) => {
                    let table = q
                        .base_tables()
                        .into_iter()
                        .find(|(name, a)| a.unwrap_or(name).matches(&alias.value))
                        .map(|(name, _)| name.normalized())
                        .unwrap_or_else(|| alias.normalized());
                    format!("{table}.*")
                }
            },
            Expr::Literal(l) => self.literal(l),
            Expr::Unary { op, expr } => {
                let sym = match op {
                    UnaryOp::Not => "not ",
                    UnaryOp::Minus => "-",
                    UnaryOp::Plus => "",
                };
                format!("{sym}{}", self.expr(q, expr))
            }
            Expr::Binary { left, op, right } => match op {
                BinaryOp::And | BinaryOp::Or | BinaryOp::Plus | BinaryOp::Multiply => {
                    let mut parts = Vec::new();
                    Self::flatten(e, *op, &mut parts);
                    let mut parts: Vec<String> = parts.into_iter().map(|p| self.expr(q, p)).collect();
                    parts.sort();
                    format!("({})", parts.join(&format!(" {} ", op.symbol().to_ascii_lowercase())))
                }
                BinaryOp::Eq | BinaryOp::DoubleEq | BinaryOp::NotEq | BinaryOp::LtGt => {
                    let sym = if matches!(op, BinaryOp::Eq | BinaryOp::DoubleEq) { "=" } else { "!=" };
                    let mut pair = [self.expr(q, left), self.expr(q, right)];
                    pair.sort();
                    format!("({} {sym} {})", pair[0], pair[1])
                }
                BinaryOp::Gt => format!("({} < {})", self.expr(q, right), self.expr(q, left)),
                BinaryOp::GtEq => format!("({} <= {})", self.expr(q, right), self.expr(q, left)),
                _ => format!("({} {} {})", self.expr(q, left), op.symbol(), self.expr(q, right)),
            },
            Expr::Function { name, distinct, args } => {
                let args: Vec<String> = args.iter().map(|a| self.expr(q, a)).collect();
                format!("{}({}{})", name.to_ascii_lowercase(), if *distinct { "distinct " } else { "" }, args.join(", "))
            }
            Expr::Cast { expr, data_type } => format!("cast({} as {})", self.expr(q, expr), data_type.to_ascii_lowercase()),
            Expr::Case {
                operand,
                branches,
                else_result,
            } => {
                let mut s = String::from("case");
                if let Some(o) = operand {
                    s += &format!(" {}", self.expr(q, o));
                }
                for (w, t) in branches {
                    s += &format!(" when {} then {}", self.expr(q, w), self.expr(q, t));
                }
                if let Some(x) = else_result {
                    s += &format!(" else {}", self.expr(q, x));
                }
                s + " end"
            }
            Expr::IsNull { expr, negated } => {
                format!("({} is {}null)", self.expr(q, expr), if *negated { "not " } else { "" })
            }
            Expr::InList { expr, list, negated } => {
                let mut items: Vec<String> = list.iter().map(|i| self.expr(q, i)).collect();
                items.sort();
                format!("({} {}in [{}])", self.expr(q, expr), if *negated { "not " } else { "" }, items.join(", "))
            }
            Expr::InSubquery {
                expr,
                subquery,
                negated,
            } => format!(
                "({} {}in ({}))",
                self.expr(q, expr),
                if *negated { "not " } else { "" },
                self.query(subquery).joined()
            ),
            Expr::Between {
                expr,
                low,
                high,
                negated,
            } => format!(
                "({} {}between {} and {})",
                self.expr(q, expr),
                if *negated { "not " } else { "" },
                self.expr(q, low),
                self.expr(q, high)
            ),
            Expr::Like { expr, pattern, negated } => format!(
                "({} {}like {})",
                self.expr(q, expr),
                if *negated { "not " } else { "" },
                self.expr(q, pattern)
            ),
            Expr::Exists { subquery, negated } => {
                format!("{}exists ({})", if *negated { "not " } else { "" }, self.query(subquery).joined())
            }
            Expr::Subquery(sub) => format!("({})", self.query(sub).joined()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSemantics {
    /// Duplicate rows are significant.
    #[default]
    Multiset,
    Set,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Compare row sequences iff the gold query has a top-level ORDER BY.
    #[default]
    GoldOrderBy,
    Never,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareOptions {
    pub float_tol: f64,
    pub rows: RowSemantics,
    /// Accept a permutation of columns, as lenient leaderboard scripts do.
    pub spider_compat: bool,
    pub case_insensitive_text: bool,
    pub order: OrderPolicy,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            float_tol: 1e-6,
            rows: RowSemantics::Multiset,
            spider_compat: false,
            case_insensitive_text: false,
            order: OrderPolicy::GoldOrderBy,
        }
    }
}

fn values_equal(a: &Value, b: &Value, opts: &CompareOptions) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => true,
        (Value::Null, _) | (_, Value::Null) => false,
        (Value::Integer(x), Value::Integer(y)) => x == y,
        (Value::Text(x), Value::Text(y)) => {
            if opts.case_insensitive_text {
                x.eq_ignore_ascii_case(y)
            } else {
                x == y
            }
        }
        (x, y) => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() <= opts.float_tol * 1f64.max(x.abs()).max(y.abs()),
            _ => false,
        },
    }
}

fn rows_equal(a: &[Value], b: &[Value], perm: &[usize], opts: &CompareOptions) -> bool {
    a.len() == b.len() && perm.iter().enumerate().all(|(i, &j)| values_equal(&a[i], &b[j], opts))
}

fn row_cmp(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.sqlite_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

fn permute(row: &[Value], perm: &[usize]) -> Vec<Value> {
    perm.iter().map(|&j| row[j].clone()).collect()
}

fn dedup(rows: &mut Vec<Vec<Value>>, opts: &CompareOptions) {
    rows.sort_by(|a, b| row_cmp(a, b));
    let identity: Vec<usize> = (0..rows.first().map_or(0, Vec::len)).collect();
    rows.dedup_by(|a, b| rows_equal(a, b, &identity, opts));
}

/// Compare under one fixed column mapping (`perm[i]` = column of `b`
/// compared with column `i` of `a`).
fn compare_with(a: &ResultTable, b: &ResultTable, perm: &[usize], ordered: bool, opts: &CompareOptions) -> bool {
    let mut ra = a.rows.clone();
    let mut rb: Vec<Vec<Value>> = b.rows.iter().map(|r| permute(r, perm)).collect();
    let identity: Vec<usize> = (0..perm.len()).collect();
    if ordered {
        if opts.rows == RowSemantics::Set {
            ra.dedup_by(|x, y| rows_equal(x, y, &identity, opts));
            rb.dedup_by(|x, y| rows_equal(x, y, &identity, opts));
        }
        return ra.len() == rb.len() && ra.iter().zip(&rb).all(|(x, y)| rows_equal(x, y, &identity, opts));
    }
    if opts.rows == RowSemantics::Set {
        dedup(&mut ra, opts);
        dedup(&mut rb, opts);
    }
    if ra.len() != rb.len() {
        return false;
    }
    ra.sort_by(|x, y| row_cmp(x, y));
    rb.sort_by(|x, y| row_cmp(x, y));
    if ra.iter().zip(&rb).all(|(x, y)| rows_equal(x, y, &identity, opts)) {
        return true;
    }
    // Values within tolerance can sort differently; fall back to matching.
    if opts.float_tol > 0.0 && ra.len() <= 2000 {
        let mut used = vec![false; rb.len()];
        return ra.iter().all(|x| {
            match (0..rb.len()).find(|&j| !used[j] && rows_equal(x, &rb[j], &identity, opts)) {
                Some(j) => {
                    used[j] = true;
                    true
                }
                None => false,
            }
        });
    }
    false
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    fn heap(k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, cur, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            cur.swap(j, k - 1);
        }
    }
    heap(n, &mut cur, &mut out);
    out
}

/// Largest arity for which every column permutation is tried.
pub const MAX_PERMUTED_COLUMNS: usize = 6;

/// Result equality: row multisets (or sequences when `ordered`), numeric
/// cells within a relative tolerance, NULL equal only to NULL.
pub fn compare_results(a: &ResultTable, b: &ResultTable, ordered: bool, opts: &CompareOptions) -> bool {
    let width = |t: &ResultTable| t.rows.first().map_or(t.columns.len(), Vec::len);
    let (wa, wb) = (width(a), width(b));
    if wa != wb {
        return a.rows.is_empty() && b.rows.is_empty() && a.columns.len() == b.columns.len();
    }
    let identity: Vec<usize> = (0..wa).collect();
    if compare_with(a, b, &identity, ordered, opts) {
        return true;
    }
    if opts.spider_compat && wa > 1 && wa <= MAX_PERMUTED_COLUMNS {
        return permutations(wa)
            .into_iter()
            .skip(1)
            .any(|p| compare_with(a, b, &p, ordered, opts));
    }
    false
}

/// Whether the statement's final result is ordered.
pub fn has_top_level_order(ast: &SqlAst) -> bool {
    let mut cur = ast;
    while let Some(so) = &cur.set_op {
        cur = &so.operand;
    }
    !cur.order_by.is_empty()
}

/// Run a query on an instance through a backend.
pub fn execute<B: ExecutionBackend>(backend: &B, sql: &SqlAst, instance: &DbInstance) -> Result<ResultTable, BackendError> {
    backend.execute_once(instance, &print_sql(sql))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Pred,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Equal,
    NotEqual,
    Error { side: Side, error: BackendError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceVerdict {
    pub instance_id: String,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub verdicts: Vec<InstanceVerdict>,
    pub overall: bool,
}

/// Execution accuracy over a set of instances: equal on every one.
pub fn execution_accuracy<B: ExecutionBackend>(
    backend: &B,
    pred: &SqlAst,
    gold: &SqlAst,
    instances: &[DbInstance],
    opts: &CompareOptions,
) -> ExecOutcome {
    let ordered = match opts.order {
        OrderPolicy::GoldOrderBy => has_top_level_order(gold),
        OrderPolicy::Never => false,
        OrderPolicy::Always => true,
    };
    execution_accuracy_sql(backend, &print_sql(pred), &print_sql(gold), ordered, instances, opts)
}

/// Text-level variant for predictions that do not parse.
pub fn execution_accuracy_sql<B: ExecutionBackend>(
    backend: &B,
    pred: &str,
    gold: &str,
    ordered: bool,
    instances: &[DbInstance],
    opts: &CompareOptions,
) -> ExecOutcome {
    let verdicts: Vec<InstanceVerdict> = instances
        .iter()
        .map(|inst| {
            let verdict = match backend.open(inst) {
                Err(e) => Verdict::Error { side: Side::Gold, error: e },
                Ok(mut h) => match backend.run(&mut h, gold) {
                    Err(e) => Verdict::Error { side: Side::Gold, error: e },
                    Ok(g) => match backend.run(&mut h, pred) {
                        Err(e) => Verdict::Error { side: Side::Pred, error: e },
                        Ok(p) if compare_results(&p, &g, ordered, opts) => Verdict::Equal,
                        Ok(_) => Verdict::NotEqual,
                    },
                },
            };
            InstanceVerdict {
                instance_id: inst.instance_id.clone(),
                verdict,
            }
        })
        .collect();
    let overall = verdicts.iter().all(|v| v.verdict == Verdict::Equal);
    ExecOutcome { verdicts, overall }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{parse_and_resolve, Affinity, Column, DbSchema, Table};

    fn schema() -> DbSchema {
        let cols = |c: &[(&str, Affinity)]| {
            c.iter()
                .map(|(n, a)| Column {
                    name: (*n).into(),
                    affinity: *a,
                })
                .collect()
        };
        use Affinity::*;
        DbSchema {
            database_id: "db".into(),
            tables: vec![
                Table {
                    name: "t".into(),
                    columns: cols(&[("id", Integer), ("a", Integer), ("b", Integer), ("name", Text)]),
                    primary_key: vec!["id".into()],
                    unique_constraints: vec![],
                    foreign_keys: vec![],
                },
                Table {
                    name: "u".into(),
                    columns: cols(&[("id", Integer), ("t_id", Integer)]),
                    primary_key: vec!["id".into()],
                    unique_constraints: vec![],
                    foreign_keys: vec![],
                },
            ],
        }
    }

    fn esm(a: &str, b: &str, with_values: bool) -> MatchResult {
        let s = schema();
        exact_set_match(&parse_and_resolve(a, &s).unwrap(), &parse_and_resolve(b, &s).unwrap(), with_values).unwrap()
    }

    #[test]
    fn predicate_and_column_order_is_ignored() {
        assert!(esm("SELECT a FROM t WHERE a = 1 AND b = 2", "SELECT a FROM t WHERE b = 2 AND a = 1", true).matched);
        assert!(esm("SELECT a, b FROM t", "SELECT b, a FROM t", true).matched);
        assert!(esm("SELECT a FROM t WHERE a > 1", "SELECT a FROM t WHERE 1 < a", true).matched);
        assert!(esm("SELECT T1.a FROM t AS T1 JOIN u AS T2 ON T1.id = T2.t_id", "SELECT t.a FROM t JOIN u ON u.t_id = t.id", true).matched);
    }

    #[test]
    fn values_mode() {
        let a = "SELECT name FROM t WHERE name = 'Canada'";
        let b = "SELECT name FROM t WHERE name = 'Canadian'";
        assert!(esm(a, b, false).matched);
        let strict = esm(a, b, true);
        assert!(!strict.matched);
        assert!(!strict.clauses["where"]);
        assert!(strict.clauses["select"]);
        assert!(esm("SELECT a FROM t LIMIT 1", "SELECT a FROM t LIMIT 5", false).matched);
        assert!(!esm("SELECT a FROM t LIMIT 1", "SELECT a FROM t LIMIT 5", true).matched);
    }

    #[test]
    fn differing_select_fails_select_clause() {
        let r = esm("SELECT name FROM t GROUP BY a", "SELECT b FROM t GROUP BY a", true);
        assert!(!r.matched);
        assert!(!r.clauses["select"]);
        assert!(r.clauses["groupBy"]);
        assert_eq!(r.mismatch_notes.len(), 1);
    }

    #[test]
    fn subqueries_compared_recursively() {
        assert!(esm(
            "SELECT a FROM t WHERE id IN (SELECT t_id FROM u WHERE id = 1 AND t_id = 2)",
            "SELECT a FROM t WHERE id IN (SELECT t_id FROM u WHERE t_id = 2 AND id = 1)",
            true
        )
        .matched);
        assert!(!esm(
            "SELECT a FROM t WHERE id IN (SELECT t_id FROM u)",
            "SELECT a FROM t WHERE id IN (SELECT id FROM u)",
            true
        )
        .matched);
    }

    #[test]
    fn schema_mismatch() {
        let s = schema();
        let a = parse_and_resolve("SELECT a FROM t", &s).unwrap();
        let mut b = a.clone();
        b.schema_id = Some("other".into());
        assert!(matches!(exact_set_match(&a, &b, true), Err(MetricError::SchemaMismatch { .. })));
    }

    fn table(rows: Vec<Vec<Value>>) -> ResultTable {
        ResultTable {
            columns: (0..rows.first().map_or(0, Vec::len)).map(|i| format!("c{i}")).collect(),
            rows,
        }
    }

    #[test]
    fn result_comparison() {
        use Value::*;
        let opts = CompareOptions::default();
        let a = table(vec![vec![Integer(1), Text("x".into())], vec![Integer(2), Null]]);
        let b = table(vec![vec![Integer(2), Null], vec![Integer(1), Text("x".into())]]);
        assert!(compare_results(&a, &a, true, &opts));
        assert!(compare_results(&a, &b, false, &opts));
        assert!(!compare_results(&a, &b, true, &opts));
        let dup = table(vec![vec![Integer(1), Text("x".into())], vec![Integer(1), Text("x".into())], vec![Integer(2), Null]]);
        assert!(!compare_results(&a, &dup, false, &opts));
        let set = CompareOptions {
            rows: RowSemantics::Set,
            ..opts
        };
        assert!(compare_results(&a, &dup, false, &set));
        let tol = CompareOptions { float_tol: 1e-5, ..opts };
        assert!(compare_results(&table(vec![vec![Integer(1), Real(2.0000001)]]), &table(vec![vec![Integer(1), Real(2.0)]]), false, &tol));
        assert!(!compare_results(&table(vec![vec![Text("1".into())]]), &table(vec![vec![Integer(1)]]), false, &opts));
    }

    #[test]
    fn column_permutation_in_compat_mode() {
        use Value::*;
        let a = table(vec![vec![Integer(1), Text("x".into())]]);
        let b = table(vec![vec![Text("x".into()), Integer(1)]]);
        assert!(!compare_results(&a, &b, false, &CompareOptions::default()));
        let compat = CompareOptions {
            spider_compat: true,
            ..Default::default()
        };
        assert!(compare_results(&a, &b, false, &compat));
        assert_eq!(permutations(3).len(), 6);
    }
}
