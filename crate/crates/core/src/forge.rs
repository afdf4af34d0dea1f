//! Synthetic database instances.
//!
//! `random_instance` fills a schema with seeded random rows that respect keys
//! and foreign keys. The forging entry points search seeded random instances,
//! plus variants with one injected row, for an instance on which a tie-prone
//! query's result is ambiguous (or provably not), and accept a candidate only
//! after executing probe queries against it.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{BackendError, ExecutionBackend, ResultTable, SqliteBackend, SqliteHandle, Value};
use crate::instance::{DbInstance, Provenance};
use crate::metrics::{compare_results, has_top_level_order, CompareOptions};
use crate::rewrite::{expand_aliases, rewrite_query};
use crate::sql::{
    print_sql, Affinity, BinaryOp, ColumnRef, DbSchema, Expr, Ident, Limit, Literal, SelectItem, SqlAst, Table,
};
use crate::tie_audit::{audit_query, ungrouped_columns, unselected_order_terms, Severity, TieCategory, TieFinding};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForgeError {
    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),
    #[error("cannot forge: {0}")]
    CannotForge(String),
}

/// Candidate values per `(table, column)`, both lower-cased.
pub type ValuePools = BTreeMap<(String, String), Vec<Value>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomConfig {
    pub rows_per_table: usize,
    /// Per-table row counts overriding `rows_per_table`.
    pub table_rows: BTreeMap<String, usize>,
    /// Non-key values are drawn from `1..=domain_size` mapped into each
    /// affinity's value space; small domains make collisions likely.
    pub domain_size: usize,
    /// Probability of drawing from a column's pool when it has one.
    pub pool_rate: f64,
    pub pools: ValuePools,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self {
            rows_per_table: 5,
            table_rows: BTreeMap::new(),
            domain_size: 10,
            pool_rate: 0.5,
            pools: ValuePools::new(),
        }
    }
}

impl RandomConfig {
    pub fn with_rows(rows_per_table: usize) -> Self {
        Self {
            rows_per_table,
            ..Self::default()
        }
    }

    fn rows_for(&self, table: &str) -> usize {
        self.table_rows
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(table))
            .map_or(self.rows_per_table, |(_, v)| *v)
    }
}

/// Seeded random instance with `rows_per_table` rows in every table.
/// Generated values are never NULL.
pub fn random_instance(schema: &DbSchema, seed: u64, rows_per_table: usize) -> Result<DbInstance, ForgeError> {
    random_instance_with(schema, seed, &RandomConfig::with_rows(rows_per_table))
}

fn value_in_domain(affinity: Affinity, k: usize) -> Value {
    match affinity {
        Affinity::Integer => Value::Integer(k as i64),
        Affinity::Boolean => Value::Integer((k % 2) as i64),
        Affinity::Real => Value::Real(k as f64 + 0.5),
        Affinity::Text | Affinity::Blob => Value::Text(format!("v{k}")),
        Affinity::Date => Value::Text(format!("{:04}-{:02}-{:02}", 2000 + k / 336, (k / 28) % 12 + 1, k % 28 + 1)),
    }
}

fn key_value(affinity: Affinity, k: usize) -> Value {
    match affinity {
        Affinity::Boolean => Value::Integer(k as i64),
        other => value_in_domain(other, k),
    }
}

fn pool_of<'a>(pools: &'a ValuePools, table: &str, column: &str) -> &'a [Value] {
    pools
        .get(&(table.to_ascii_lowercase(), column.to_ascii_lowercase()))
        .map_or(&[], Vec::as_slice)
}

fn draw(rng: &mut ChaCha8Rng, affinity: Affinity, pool: &[Value], config: &RandomConfig) -> Value {
    if !pool.is_empty() && rng.gen_bool(config.pool_rate.clamp(0.0, 1.0)) {
        return pool.choose(rng).cloned().expect("non-empty pool");
    }
    value_in_domain(affinity, rng.gen_range(1..=config.domain_size.max(1)))
}

fn fk_columns(t: &Table) -> BTreeSet<String> {
    t.foreign_keys
        .iter()
        .flat_map(|fk| fk.columns.iter().map(|c| c.to_ascii_lowercase()))
        .collect()
}

/// Per key, the member that gets sequential values: the first one that is
/// not a foreign-key column. Keys made only of foreign-key columns get none.
fn sequential_columns(t: &Table) -> BTreeSet<usize> {
    let fks = fk_columns(t);
    t.keys()
        .iter()
        .filter_map(|key| key.iter().find(|c| !fks.contains(&c.to_ascii_lowercase())))
        .filter_map(|c| t.column_index(c))
        .collect()
}

/// Parents before children; cycles are broken in schema order.
fn fill_order(schema: &DbSchema) -> Vec<usize> {
    let n = schema.tables.len();
    let parents: Vec<BTreeSet<usize>> = schema
        .tables
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.foreign_keys
                .iter()
                .filter_map(|fk| schema.tables.iter().position(|p| p.name.eq_ignore_ascii_case(&fk.foreign_table)))
                .filter(|&p| p != i)
                .collect()
        })
        .collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n)
            .find(|&i| !done[i] && parents[i].iter().all(|&p| done[p]))
            .or_else(|| (0..n).find(|&i| !done[i]))
            .expect("unfinished table exists");
        done[next] = true;
        order.push(next);
    }
    order
}

fn dedupe_keys(t: &Table, rows: &mut Vec<Vec<Value>>) {
    for key in t.keys() {
        let idx: Vec<usize> = key.iter().filter_map(|c| t.column_index(c)).collect();
        let mut seen = BTreeSet::new();
        rows.retain(|r| seen.insert(idx.iter().map(|&i| format!("{:?}", r[i])).collect::<Vec<_>>()));
    }
}

pub fn random_instance_with(schema: &DbSchema, seed: u64, config: &RandomConfig) -> Result<DbInstance, ForgeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables: Vec<Vec<Vec<Value>>> = Vec::with_capacity(schema.tables.len());
    for t in &schema.tables {
        let n = config.rows_for(&t.name);
        let seq = sequential_columns(t);
        let fks = fk_columns(t);
        let rows = (0..n)
            .map(|i| {
                t.columns
                    .iter()
                    .enumerate()
                    .map(|(j, c)| {
                        if seq.contains(&j) {
                            key_value(c.affinity, i + 1)
                        } else if fks.contains(&c.name.to_ascii_lowercase()) {
                            Value::Null
                        } else {
                            draw(&mut rng, c.affinity, pool_of(&config.pools, &t.name, &c.name), config)
                        }
                    })
                    .collect()
            })
            .collect();
        tables.push(rows);
    }
    for ti in fill_order(schema) {
        let t = &schema.tables[ti];
        for fk in &t.foreign_keys {
            let Some(pi) = schema.tables.iter().position(|p| p.name.eq_ignore_ascii_case(&fk.foreign_table)) else {
                continue;
            };
            let parent = &schema.tables[pi];
            let local: Vec<usize> = fk.columns.iter().filter_map(|c| t.column_index(c)).collect();
            let remote: Vec<usize> = fk.foreign_columns.iter().filter_map(|c| parent.column_index(c)).collect();
            if local.len() != remote.len() || local.is_empty() {
                continue;
            }
            if !tables[ti].is_empty() && tables[pi].is_empty() {
                return Err(ForgeError::InfeasibleConstraints(format!(
                    "{} references empty table {}",
                    t.name, parent.name
                )));
            }
            for r in 0..tables[ti].len() {
                let p = rng.gen_range(0..tables[pi].len());
                let values: Vec<Value> = remote.iter().map(|&j| tables[pi][p][j].clone()).collect();
                for (&l, v) in local.iter().zip(values) {
                    tables[ti][r][l] = v;
                }
            }
        }
        dedupe_keys(t, &mut tables[ti]);
    }
    let mut inst = DbInstance::empty(schema.clone(), Provenance::Random { seed });
    inst.instance_id = format!("{}#random-{seed}", schema.database_id);
    for (t, rows) in schema.tables.iter().zip(tables) {
        inst.tables.insert(t.name.clone(), rows);
    }
    inst.validate()
        .map_err(|e| ForgeError::InfeasibleConstraints(e.to_string()))?;
    Ok(inst)
}

fn literal_value(lit: &Literal, affinity: Affinity) -> Vec<Value> {
    let text = match lit {
        Literal::Number(n) => n.clone(),
        Literal::String { value, .. } => value.clone(),
        Literal::Boolean(b) => (*b as i64).to_string(),
        Literal::Null => return Vec::new(),
    };
    match affinity {
        Affinity::Integer | Affinity::Boolean => match text.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => {
                let v = x.round() as i64;
                vec![Value::Integer(v), Value::Integer(v + 1), Value::Integer(v - 1)]
            }
            _ => Vec::new(),
        },
        Affinity::Real => match text.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => vec![Value::Real(x), Value::Real(x + 0.5), Value::Real(x - 0.5)],
            _ => Vec::new(),
        },
        Affinity::Text | Affinity::Blob | Affinity::Date => vec![Value::Text(text)],
    }
}

fn like_values(pattern: &str) -> Vec<Value> {
    let filled = pattern.replace('_', "x");
    vec![
        Value::Text(filled.replace('%', "")),
        Value::Text(filled.replace('%', "a")),
    ]
}

fn base_column(c: &ColumnRef) -> Option<(String, String, Affinity)> {
    c.resolved_column()
        .map(|r| (r.table.to_ascii_lowercase(), r.column.to_ascii_lowercase(), r.affinity))
}

/// Values mentioned next to each column in the query's predicates, so that
/// random rows satisfy WHERE clauses often. Columns compared with each other
/// share their pools.
pub fn literal_pools(ast: &SqlAst) -> ValuePools {
    let mut pools = ValuePools::new();
    let mut equal: Vec<((String, String), (String, String))> = Vec::new();
    let add = |pools: &mut ValuePools, c: &ColumnRef, values: Vec<Value>| {
        if let Some((t, col, _)) = base_column(c) {
            let entry = pools.entry((t, col)).or_default();
            for v in values {
                if !entry.contains(&v) {
                    entry.push(v);
                }
            }
        }
    };
    for node in ast.nodes() {
        for e in node.ast.local_exprs() {
            e.walk(&mut |x| match x {
                Expr::Binary { left, op, right } if op.is_comparison() => match (&**left, &**right) {
                    (Expr::Column(c), Expr::Literal(l)) | (Expr::Literal(l), Expr::Column(c)) => {
                        if let Some((_, _, aff)) = base_column(c) {
                            add(&mut pools, c, literal_value(l, aff));
                        }
                    }
                    (Expr::Column(a), Expr::Column(b)) => {
                        if let (Some((ta, ca, _)), Some((tb, cb, _))) = (base_column(a), base_column(b)) {
                            equal.push(((ta, ca), (tb, cb)));
                        }
                    }
                    _ => {}
                },
                Expr::Between { expr, low, high, .. } => {
                    if let Expr::Column(c) = &**expr {
                        if let Some((_, _, aff)) = base_column(c) {
                            for b in [low, high] {
                                if let Expr::Literal(l) = &**b {
                                    add(&mut pools, c, literal_value(l, aff));
                                }
                            }
                        }
                    }
                }
                Expr::InList { expr, list, .. } => {
                    if let Expr::Column(c) = &**expr {
                        if let Some((_, _, aff)) = base_column(c) {
                            for item in list {
                                if let Expr::Literal(l) = item {
                                    add(&mut pools, c, literal_value(l, aff));
                                }
                            }
                        }
                    }
                }
                Expr::Like { expr, pattern, .. } => {
                    if let (Expr::Column(c), Expr::Literal(Literal::String { value, .. })) = (&**expr, &**pattern) {
                        add(&mut pools, c, like_values(value));
                    }
                }
                Expr::InSubquery { expr, subquery, .. } => {
                    if let (Expr::Column(a), [item]) = (&**expr, subquery.select.as_slice()) {
                        if let (Expr::Column(b), Some(ka)) = (&item.expr, base_column(a)) {
                            if let Some(kb) = base_column(b) {
                                equal.push(((ka.0, ka.1), (kb.0, kb.1)));
                            }
                        }
                    }
                }
                _ => {}
            });
        }
    }
    for _ in 0..3 {
        for (a, b) in &equal {
            let merged: Vec<Value> = pools
                .get(a)
                .into_iter()
                .chain(pools.get(b))
                .flatten()
                .fold(Vec::new(), |mut acc, v| {
                    if !acc.contains(v) {
                        acc.push(v.clone());
                    }
                    acc
                });
            if !merged.is_empty() {
                pools.insert(a.clone(), merged.clone());
                pools.insert(b.clone(), merged);
            }
        }
    }
    pools
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeOptions {
    pub seed: u64,
    /// Id of the query the instance is forged for; recorded in provenance.
    pub target_id: String,
    pub max_attempts: usize,
}

impl Default for ForgeOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            target_id: String::new(),
            max_attempts: 200,
        }
    }
}

/// A probe query whose result on an instance shows whether one finding's
/// ambiguity is realized there.
#[derive(Debug, Clone)]
enum Probe {
    /// The finding node's rows without LIMIT, order keys prepended as the
    /// first `keys` columns; `cutoff` is OFFSET + LIMIT.
    Cutoff { sql: String, keys: usize, cutoff: usize },
    /// Returns a row iff the ambiguity is present.
    Exists { sql: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ProbeResult {
    Witnessed,
    Absent,
    /// Neither: e.g. rows tie at the cutoff but agree on every output column.
    Inconclusive,
}

fn same(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.sqlite_cmp(y).is_eq())
}

fn cutoff_result(rows: &[Vec<Value>], keys: usize, cutoff: usize) -> ProbeResult {
    if keys == 0 {
        if rows.len() <= cutoff {
            return ProbeResult::Absent;
        }
        return if rows.iter().any(|r| !same(r, &rows[0])) {
            ProbeResult::Witnessed
        } else {
            ProbeResult::Inconclusive
        };
    }
    let head = rows.len().min(cutoff + 1);
    if rows[..head].iter().any(|r| r[..keys].iter().any(Value::is_null)) {
        return ProbeResult::Inconclusive;
    }
    if cutoff == 0 || rows.len() <= cutoff || !same(&rows[cutoff - 1][..keys], &rows[cutoff][..keys]) {
        return ProbeResult::Absent;
    }
    let boundary = &rows[cutoff - 1][..keys];
    let tied: Vec<&[Value]> = rows.iter().filter(|r| same(&r[..keys], boundary)).map(|r| &r[keys..]).collect();
    if tied.iter().any(|r| !same(r, tied[0])) {
        ProbeResult::Witnessed
    } else {
        ProbeResult::Inconclusive
    }
}

impl Probe {
    fn evaluate(&self, backend: &SqliteBackend, handle: &mut SqliteHandle) -> Result<ProbeResult, BackendError> {
        match self {
            Probe::Cutoff { sql, keys, cutoff } => {
                let t = backend.run(handle, sql)?;
                Ok(cutoff_result(&t.rows, *keys, *cutoff))
            }
            Probe::Exists { sql } => Ok(if backend.run(handle, sql)?.is_empty() {
                ProbeResult::Absent
            } else {
                ProbeResult::Witnessed
            }),
        }
    }
}

fn column_ident(name: &str) -> Ident {
    let plain = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain {
        Ident::new(name)
    } else {
        Ident::quoted(name, '"')
    }
}

fn count_distinct_gt1(e: Expr) -> Expr {
    let count = Expr::Function {
        name: "COUNT".into(),
        distinct: true,
        args: vec![e],
    };
    Expr::binary(count, BinaryOp::Gt, Expr::Literal(Literal::Number("1".into())))
}

fn any_of(conds: Vec<Expr>) -> Option<Expr> {
    conds.into_iter().reduce(|a, b| Expr::binary(a, BinaryOp::Or, b))
}

/// The node with its GROUP BY terms and HAVING written without ordinal or
/// output-alias references, so its select list can be replaced.
fn detached(q: &SqlAst) -> SqlAst {
    let mut p = q.core();
    p.group_by = q.group_by.iter().map(|g| expand_aliases(q, g)).collect();
    p.having = q.having.as_ref().map(|h| expand_aliases(q, h));
    p
}

fn build_probe(ast: &SqlAst, finding: &TieFinding, schema: &DbSchema) -> Option<Probe> {
    let node = ast.nodes().into_iter().find(|n| n.path == finding.location)?;
    let q = node.ast;
    if q.references_outer_scope() {
        return None;
    }
    let compound = q.is_compound() || node.compound_tail;
    match finding.category {
        TieCategory::Limit1 | TieCategory::LimitN => {
            let limit = q.limit.filter(|_| !compound)?;
            let keys: Vec<Expr> = q.order_by.iter().map(|o| expand_aliases(q, &o.expr)).collect();
            let mut p = detached(q);
            p.limit = None;
            for (o, k) in p.order_by.iter_mut().zip(&keys) {
                o.expr = k.clone();
            }
            let mut select: Vec<SelectItem> = keys
                .iter()
                .enumerate()
                .map(|(i, k)| SelectItem::new(k.clone(), Some(Ident::new(format!("forge_key_{i}")))))
                .collect();
            select.extend(q.select.iter().cloned());
            p.select = select;
            Some(Probe::Cutoff {
                sql: print_sql(&p),
                keys: keys.len(),
                cutoff: (limit.offset.unwrap_or(0) + limit.count) as usize,
            })
        }
        TieCategory::GroupByMisuse => {
            let (cols, wildcard) = ungrouped_columns(q);
            let mut targets: Vec<Expr> = cols.into_iter().map(|c| Expr::Column(c.clone())).collect();
            if wildcard {
                for (name, alias) in q.base_tables() {
                    let Some(t) = schema.table(&name.value) else { continue };
                    for c in &t.columns {
                        targets.push(Expr::Column(ColumnRef::new(
                            Some(alias.unwrap_or(name).clone()),
                            column_ident(&c.name),
                        )));
                    }
                }
            }
            let cond = any_of(targets.into_iter().map(count_distinct_gt1).collect())?;
            let mut p = detached(q);
            p.distinct = false;
            p.order_by.clear();
            p.limit = Some(Limit {
                count: 1,
                offset: None,
            });
            p.having = Some(match p.having.take() {
                Some(h) => h.and(cond),
                None => cond,
            });
            p.select = vec![SelectItem::new(Expr::Literal(Literal::Number("1".into())), None)];
            Some(Probe::Exists { sql: print_sql(&p) })
        }
        TieCategory::OrderByDistinct => {
            if compound || q.select.iter().any(|s| matches!(s.expr, Expr::Wildcard { .. })) {
                return None;
            }
            let terms: Vec<Expr> = unselected_order_terms(q).into_iter().map(|t| expand_aliases(q, t)).collect();
            if terms.is_empty() {
                return None;
            }
            let mut inner = detached(q);
            inner.distinct = false;
            inner.order_by.clear();
            inner.limit = None;
            let n = q.select.len();
            inner.select = q
                .select
                .iter()
                .enumerate()
                .map(|(i, s)| SelectItem::new(s.expr.clone(), Some(Ident::new(format!("forge_s{i}")))))
                .chain(
                    terms
                        .iter()
                        .enumerate()
                        .map(|(j, t)| SelectItem::new(t.clone(), Some(Ident::new(format!("forge_k{j}"))))),
                )
                .collect();
            let group: Vec<String> = (0..n).map(|i| format!("forge_s{i}")).collect();
            let cond: Vec<String> = (0..terms.len()).map(|j| format!("COUNT(DISTINCT forge_k{j}) > 1")).collect();
            Some(Probe::Exists {
                sql: format!(
                    "SELECT 1 FROM ({}) AS forge_probe GROUP BY {} HAVING {} LIMIT 1",
                    print_sql(&inner),
                    group.join(", "),
                    cond.join(" OR ")
                ),
            })
        }
    }
}

/// Which row to clone into which table, keeping some columns and changing
/// others, to plant a tie next to an existing row.
#[derive(Debug, Clone)]
struct Injection {
    table: String,
    keep: BTreeSet<String>,
    perturb: Vec<String>,
}

fn injection_plan(ast: &SqlAst, finding: &TieFinding, schema: &DbSchema) -> Option<Injection> {
    let q = ast.node_at(&finding.location)?;
    let local_base = |c: &ColumnRef| {
        base_column(c)
            .filter(|_| c.resolved_column().is_some_and(|r| r.outer_depth == 0))
            .filter(|(t, _, _)| schema.table(t).is_some())
    };
    let mut constrained = BTreeSet::new();
    let conditions = q
        .where_clause
        .iter()
        .chain(q.from.iter().flat_map(|f| f.joins.iter().filter_map(|j| j.on.as_ref())));
    for e in conditions {
        for c in e.columns() {
            if let Some((t, col, _)) = base_column(c) {
                constrained.insert((t, col));
            }
        }
    }
    let selected: Vec<(String, String)> = q
        .select
        .iter()
        .flat_map(|s| s.expr.bare_columns())
        .filter_map(|c| local_base(c).map(|(t, col, _)| (t, col)))
        .collect();
    let free_in = |table: &str, cols: &[(String, String)], keep: &BTreeSet<String>| -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (t, c) in cols {
            if t == table && !keep.contains(c) && !constrained.contains(&(t.clone(), c.clone())) && !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    };
    let (table, keep, perturb) = match finding.category {
        TieCategory::Limit1 | TieCategory::LimitN if !q.order_by.is_empty() => {
            let Expr::Column(c) = expand_aliases(q, &q.order_by[0].expr) else {
                return None;
            };
            let (t, col, _) = local_base(&c)?;
            let keep: BTreeSet<String> = [col].into();
            let perturb = free_in(&t, &selected, &keep);
            (t, keep, perturb)
        }
        TieCategory::Limit1 | TieCategory::LimitN => {
            let (t, _) = selected.first()?.clone();
            let perturb = free_in(&t, &selected, &BTreeSet::new());
            (t, BTreeSet::new(), perturb)
        }
        TieCategory::GroupByMisuse => {
            let (cols, _) = ungrouped_columns(q);
            let cols: Vec<(String, String)> = cols
                .into_iter()
                .filter_map(|c| local_base(c).map(|(t, col, _)| (t, col)))
                .collect();
            let (t, _) = cols.iter().find(|k| !constrained.contains(k))?.clone();
            let perturb = free_in(&t, &cols, &BTreeSet::new());
            (t, BTreeSet::new(), perturb)
        }
        TieCategory::OrderByDistinct => {
            let cols: Vec<(String, String)> = unselected_order_terms(q)
                .into_iter()
                .flat_map(|e| e.bare_columns())
                .filter_map(|c| local_base(c).map(|(t, col, _)| (t, col)))
                .collect();
            let (t, _) = cols.iter().find(|k| !constrained.contains(k))?.clone();
            let perturb = free_in(&t, &cols, &BTreeSet::new());
            (t, BTreeSet::new(), perturb)
        }
    };
    (!perturb.is_empty()).then_some(Injection { table, keep, perturb })
}

fn fresh_value(affinity: Affinity, existing: &[&Value]) -> Option<Value> {
    match affinity {
        Affinity::Boolean => None,
        Affinity::Integer => Some(Value::Integer(
            existing.iter().filter_map(|v| v.as_f64()).fold(0.0, f64::max) as i64 + 1,
        )),
        Affinity::Real => Some(Value::Real(existing.iter().filter_map(|v| v.as_f64()).fold(0.0, f64::max).floor() + 1.5)),
        _ => (1..)
            .map(|k| value_in_domain(affinity, 1000 + k))
            .find(|v| !existing.contains(&v)),
    }
}

fn inject(
    base: &DbInstance,
    plan: &Injection,
    rng: &mut ChaCha8Rng,
    config: &RandomConfig,
) -> Vec<DbInstance> {
    let schema = &base.schema;
    let Some(t) = schema.table(&plan.table) else {
        return Vec::new();
    };
    let rows = base.rows(&t.name).to_vec();
    let fks = fk_columns(t);
    let mut out = Vec::new();
    for r in rows.iter().take(6) {
        let mut new = r.clone();
        let mut ok = true;
        for col in &plan.perturb {
            let Some(ci) = t.column_index(col) else {
                ok = false;
                break;
            };
            let affinity = t.columns[ci].affinity;
            let current = r[ci].clone();
            let fk = t
                .foreign_keys
                .iter()
                .find(|fk| fk.columns.len() == 1 && fk.columns[0].eq_ignore_ascii_case(col));
            let candidate = if let Some(fk) = fk {
                let parent = schema.table(&fk.foreign_table);
                let pj = parent.and_then(|p| p.column_index(&fk.foreign_columns[0]));
                let choices: Vec<Value> = match (parent, pj) {
                    (Some(p), Some(j)) => base.rows(&p.name).iter().map(|pr| pr[j].clone()).filter(|v| *v != current).collect(),
                    _ => Vec::new(),
                };
                choices.choose(rng).cloned()
            } else if fks.contains(col) {
                None
            } else {
                let pool = pool_of(&config.pools, &t.name, col);
                (0..16)
                    .map(|_| draw(rng, affinity, pool, config))
                    .find(|v| *v != current)
                    .or_else(|| {
                        let column: Vec<&Value> = rows.iter().map(|row| &row[ci]).collect();
                        fresh_value(affinity, &column)
                    })
            };
            match candidate {
                Some(v) => new[ci] = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        for key in t.keys() {
            let idx: Vec<usize> = key.iter().filter_map(|c| t.column_index(c)).collect();
            let clash = |row: &Vec<Value>, new: &Vec<Value>| idx.iter().all(|&i| row[i] == new[i]);
            if !rows.iter().any(|row| clash(row, &new)) {
                continue;
            }
            let member = key
                .iter()
                .find(|c| !fks.contains(&c.to_ascii_lowercase()) && !plan.keep.contains(&c.to_ascii_lowercase()))
                .and_then(|c| t.column_index(c));
            let Some(m) = member else {
                ok = false;
                break;
            };
            let column: Vec<&Value> = rows.iter().map(|row| &row[m]).collect();
            match fresh_value(t.columns[m].affinity, &column) {
                Some(v) => new[m] = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let mut inst = base.clone();
        inst.tables.get_mut(&t.name).expect("table present").push(new);
        if inst.validate().is_ok() {
            out.push(inst);
        }
    }
    out
}

/// Prepared state shared by every candidate instance of one forging run.
struct Forger<'a> {
    schema: &'a DbSchema,
    backend: SqliteBackend,
    original: String,
    ordered: bool,
    rewritten: Option<(String, bool)>,
    findings: Vec<TieFinding>,
    probes: Vec<Option<Probe>>,
    pools: ValuePools,
    opts: CompareOptions,
}

impl<'a> Forger<'a> {
    fn new(schema: &'a DbSchema, query: &SqlAst) -> Result<Self, ForgeError> {
        let findings = audit_query(query, schema);
        if findings.is_empty() {
            return Err(ForgeError::CannotForge("query has no tie findings".into()));
        }
        let probes = findings.iter().map(|f| build_probe(query, f, schema)).collect();
        let ordered = has_top_level_order(query);
        let rewritten = rewrite_query(query, schema)
            .rewritten
            .map(|r| (print_sql(&r), ordered && has_top_level_order(&r)));
        Ok(Self {
            schema,
            backend: SqliteBackend::default(),
            original: print_sql(query),
            ordered,
            rewritten,
            findings,
            probes,
            pools: literal_pools(query),
            opts: CompareOptions::default(),
        })
    }

    fn reversed_differs(&self, inst: &DbInstance, orig: &ResultTable) -> Result<bool, BackendError> {
        let other = self.backend.execute_once(&inst.with_reversed_rows(), &self.original)?;
        Ok(!compare_results(orig, &other, self.ordered, &self.opts))
    }

    fn rewrite_differs(&self, handle: &mut SqliteHandle, orig: &ResultTable) -> Result<Option<bool>, BackendError> {
        match &self.rewritten {
            None => Ok(None),
            Some((sql, ordered)) => {
                let r = self.backend.run(handle, sql)?;
                Ok(Some(!compare_results(orig, &r, *ordered, &self.opts)))
            }
        }
    }

    fn is_tied(&self, inst: &DbInstance, target: usize) -> Result<bool, BackendError> {
        let mut h = self.backend.open(inst)?;
        let orig = self.backend.run(&mut h, &self.original)?;
        let witnessed = match &self.probes[target] {
            Some(p) => p.evaluate(&self.backend, &mut h)? == ProbeResult::Witnessed,
            None => self.reversed_differs(inst, &orig)?,
        };
        if !witnessed {
            return Ok(false);
        }
        Ok(self.rewrite_differs(&mut h, &orig)?.unwrap_or(true))
    }

    /// `Some(non_empty)` when the instance realizes no finding.
    fn is_tie_free(&self, inst: &DbInstance) -> Result<Option<bool>, BackendError> {
        let mut h = self.backend.open(inst)?;
        let orig = self.backend.run(&mut h, &self.original)?;
        let mut needs_reversal = false;
        for p in &self.probes {
            match p {
                Some(p) => {
                    if p.evaluate(&self.backend, &mut h)? != ProbeResult::Absent {
                        return Ok(None);
                    }
                }
                None => needs_reversal = true,
            }
        }
        if needs_reversal && self.reversed_differs(inst, &orig)? {
            return Ok(None);
        }
        if self.rewrite_differs(&mut h, &orig)? == Some(true) {
            return Ok(None);
        }
        Ok(Some(!orig.is_empty()))
    }

    fn base(&self, seed: u64, rows: usize, domain: usize) -> Result<DbInstance, ForgeError> {
        let config = RandomConfig {
            rows_per_table: rows,
            domain_size: domain,
            pools: self.pools.clone(),
            ..RandomConfig::default()
        };
        random_instance_with(self.schema, seed, &config)
    }
}

fn check_original(err: BackendError, attempt: usize) -> Result<(), ForgeError> {
    if attempt == 0 {
        Err(ForgeError::CannotForge(format!("query does not execute: {err}")))
    } else {
        Ok(())
    }
}

/// Search for an instance on which the query's first unresolved tie is
/// realized: the tie is witnessed by a probe query and, when the query has a
/// rewrite, the original and rewritten queries return different results.
pub fn forge_tie_instance(schema: &DbSchema, query: &SqlAst, options: &ForgeOptions) -> Result<DbInstance, ForgeError> {
    let forger = Forger::new(schema, query)?;
    let candidates: Vec<usize> = (0..forger.findings.len())
        .filter(|&i| forger.findings[i].severity == Severity::Normal)
        .collect();
    let target = candidates
        .iter()
        .copied()
        .find(|&i| forger.findings[i].rewritable)
        .or_else(|| candidates.first().copied())
        .ok_or_else(|| ForgeError::CannotForge("every finding is determined by declared keys or constants".into()))?;
    let plan = injection_plan(query, &forger.findings[target], schema);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    const ROWS: [usize; 6] = [3, 4, 6, 5, 8, 2];
    for attempt in 0..options.max_attempts {
        let sub_seed: u64 = rng.gen();
        let rows = ROWS[attempt % ROWS.len()];
        let domain = 2 + (attempt / ROWS.len()) % 4;
        let base = match forger.base(sub_seed, rows, domain) {
            Ok(b) => b,
            Err(ForgeError::InfeasibleConstraints(r)) => return Err(ForgeError::CannotForge(r)),
            Err(e) => return Err(e),
        };
        let config = RandomConfig {
            domain_size: domain,
            pools: forger.pools.clone(),
            ..RandomConfig::default()
        };
        let mut candidates = match &plan {
            Some(p) => inject(&base, p, &mut rng, &config),
            None => Vec::new(),
        };
        candidates.push(base);
        for cand in candidates {
            match forger.is_tied(&cand, target) {
                Ok(true) => {
                    let mut inst = cand;
                    inst.provenance = Provenance::TieForged {
                        target: options.target_id.clone(),
                        seed: options.seed,
                    };
                    inst.instance_id = format!("{}#tie-{}-{}", schema.database_id, options.target_id, options.seed);
                    return Ok(inst);
                }
                Ok(false) => {}
                Err(e) => check_original(e, attempt)?,
            }
        }
    }
    Err(ForgeError::CannotForge(format!(
        "no instance realizing the {} tie at {} within {} attempts",
        forger.findings[target].category.label(),
        forger.findings[target].location,
        options.max_attempts
    )))
}

/// Search for an instance on which none of the query's ties is realized and
/// the original and rewritten queries agree. Instances with a non-empty
/// result are preferred; an empty-result instance is returned only when no
/// other qualifies.
pub fn forge_tie_free_instance(
    schema: &DbSchema,
    query: &SqlAst,
    options: &ForgeOptions,
) -> Result<DbInstance, ForgeError> {
    let forger = Forger::new(schema, query)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut fallback = None;
    const DOMAINS: [usize; 4] = [50, 8, 20, 4];
    for attempt in 0..options.max_attempts {
        let sub_seed: u64 = rng.gen();
        let domain = DOMAINS[attempt % DOMAINS.len()];
        let rows = 1 + (attempt / DOMAINS.len()) % 5;
        let base = match forger.base(sub_seed, rows, domain) {
            Ok(b) => b,
            Err(ForgeError::InfeasibleConstraints(r)) => return Err(ForgeError::CannotForge(r)),
            Err(e) => return Err(e),
        };
        match forger.is_tie_free(&base) {
            Ok(Some(true)) => {
                fallback = Some(base);
                break;
            }
            Ok(Some(false)) => {
                fallback.get_or_insert(base);
            }
            Ok(None) => {}
            Err(e) => check_original(e, attempt)?,
        }
    }
    let mut inst = fallback.ok_or_else(|| {
        ForgeError::CannotForge(format!("no tie-free instance within {} attempts", options.max_attempts))
    })?;
    inst.provenance = Provenance::TieFree {
        target: options.target_id.clone(),
        seed: options.seed,
    };
    inst.instance_id = format!("{}#tiefree-{}-{}", schema.database_id, options.target_id, options.seed);
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{parse_and_resolve, Column, ForeignKey};

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

    fn concert_schema() -> DbSchema {
        use Affinity::*;
        let mut concert = table("concert", &[("concert_id", Integer), ("stadium_id", Integer), ("year", Text)], &["concert_id"]);
        concert.foreign_keys.push(ForeignKey {
            columns: vec!["stadium_id".into()],
            foreign_table: "stadium".into(),
            foreign_columns: vec!["stadium_id".into()],
        });
        DbSchema {
            database_id: "concert_singer".into(),
            tables: vec![
                table(
                    "stadium",
                    &[("stadium_id", Integer), ("name", Text), ("capacity", Integer), ("average", Integer)],
                    &["stadium_id"],
                ),
                concert,
            ],
        }
    }

    #[test]
    fn random_instances_are_deterministic() {
        let s = concert_schema();
        assert_eq!(random_instance(&s, 7, 5).unwrap(), random_instance(&s, 7, 5).unwrap());
        assert_ne!(random_instance(&s, 7, 5).unwrap().tables, random_instance(&s, 8, 5).unwrap().tables);
        let empty = random_instance(&s, 1, 0).unwrap();
        assert!(empty.tables.values().all(Vec::is_empty));
    }

    #[test]
    fn empty_parent_is_infeasible() {
        let s = concert_schema();
        let mut config = RandomConfig::with_rows(3);
        config.table_rows.insert("stadium".into(), 0);
        assert!(matches!(
            random_instance_with(&s, 1, &config),
            Err(ForgeError::InfeasibleConstraints(_))
        ));
    }

    #[test]
    fn pools_follow_predicates() {
        let s = concert_schema();
        let q = parse_and_resolve("SELECT name FROM stadium WHERE capacity > 5000 AND name LIKE 'Glas%'", &s).unwrap();
        let pools = literal_pools(&q);
        assert!(pools[&("stadium".into(), "capacity".into())].contains(&Value::Integer(5001)));
        assert!(pools[&("stadium".into(), "name".into())].contains(&Value::Text("Glas".into())));
    }

    #[test]
    fn cutoff_witness_rules() {
        let r = |k: i64, v: &str| vec![Value::Integer(k), Value::Text(v.into())];
        assert_eq!(cutoff_result(&[r(9, "a"), r(9, "b")], 1, 1), ProbeResult::Witnessed);
        assert_eq!(cutoff_result(&[r(9, "a"), r(8, "b")], 1, 1), ProbeResult::Absent);
        assert_eq!(cutoff_result(&[r(9, "a"), r(9, "a")], 1, 1), ProbeResult::Inconclusive);
        assert_eq!(cutoff_result(&[r(9, "a")], 1, 1), ProbeResult::Absent);
        assert_eq!(cutoff_result(&[], 1, 1), ProbeResult::Absent);
        assert_eq!(cutoff_result(&[r(1, "a"), r(2, "b")], 0, 1), ProbeResult::Witnessed);
    }

    #[test]
    fn forges_stadium_tie_and_tie_free() {
        let s = concert_schema();
        let q2 = parse_and_resolve("SELECT name, capacity FROM stadium ORDER BY average DESC LIMIT 1", &s).unwrap();
        let q1 = parse_and_resolve(
            "SELECT name, capacity FROM stadium WHERE average = (SELECT MAX(average) FROM stadium)",
            &s,
        )
        .unwrap();
        let opts = ForgeOptions {
            seed: 3,
            target_id: "q2".into(),
            ..ForgeOptions::default()
        };
        let tie = forge_tie_instance(&s, &q2, &opts).unwrap();
        tie.validate().unwrap();
        let b = SqliteBackend::default();
        assert!(b.execute_once(&tie, &print_sql(&q1)).unwrap().len() >= 2);
        assert_eq!(b.execute_once(&tie, &print_sql(&q2)).unwrap().len(), 1);
        assert!(matches!(tie.provenance, Provenance::TieForged { .. }));

        let free = forge_tie_free_instance(&s, &q2, &opts).unwrap();
        assert_eq!(b.execute_once(&free, &print_sql(&q1)).unwrap().len(), 1);
    }

    #[test]
    fn key_determined_findings_cannot_be_forged() {
        let s = concert_schema();
        let q = parse_and_resolve("SELECT name FROM stadium ORDER BY stadium_id LIMIT 1", &s).unwrap();
        assert!(matches!(
            forge_tie_instance(&s, &q, &ForgeOptions::default()),
            Err(ForgeError::CannotForge(_))
        ));
        let plain = parse_and_resolve("SELECT name FROM stadium", &s).unwrap();
        assert!(forge_tie_free_instance(&s, &plain, &ForgeOptions::default()).is_err());
    }
}
