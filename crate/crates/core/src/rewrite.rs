//! Mechanical rewrites of tie-prone queries into deterministic forms.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::sql::{
    parse_sql, print_sql, resolve_columns, BinaryOp, DbSchema, Dialect, Direction, Expr, Ident, NodeContext,
    QueryNode, QueryPath, Resolution, SelectItem, SqlAst, SubqueryKind, TableFactor, TableWithJoins,
};
use crate::tie_audit::{audit_query, expr_key, ColKey, TieCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewriteRule {
    Limit1ToExtreme,
    GroupByCompletion,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub original: SqlAst,
    pub rewritten: Option<SqlAst>,
    pub rule: RewriteRule,
    pub reason_unrewritten: Option<String>,
    /// Per-query caveats, e.g. NULL handling of the extreme-value form.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum RewriteError {
    #[error("rule not applicable")]
    NotApplicable,
    #[error("unrewritable: {0}")]
    Unrewritable(String),
    #[error("rewritten query failed to re-resolve: {0}")]
    Invalid(String),
}

const NONDETERMINISTIC: &[&str] = &["RANDOM", "RANDOMBLOB", "CHANGES", "LAST_INSERT_ROWID", "TOTAL_CHANGES"];

/// Why the Limit1 node cannot take the extreme-value rewrite, if it cannot.
pub(crate) fn limit1_blocker(node: &QueryNode<'_>) -> Option<String> {
    let q = node.ast;
    if node.compound_tail {
        return Some("ORDER BY ... LIMIT 1 applies to a compound query".into());
    }
    if node.context == NodeContext::Subquery(SubqueryKind::Scalar) {
        return Some("scalar subquery context cannot return all tied rows".into());
    }
    if q.order_by.len() != 1 {
        return Some("multi-key ORDER BY".into());
    }
    if q.limit.is_some_and(|l| l.offset.is_some()) {
        return Some("LIMIT with OFFSET".into());
    }
    let key = expand_aliases(q, &q.order_by[0].expr);
    let mut nondeterministic = false;
    key.walk(&mut |e| {
        if let Expr::Function { name, .. } = e {
            nondeterministic |= NONDETERMINISTIC.contains(&name.as_str());
        }
    });
    if nondeterministic {
        return Some("order key is a non-deterministic expression".into());
    }
    if q.references_outer_scope() {
        return Some("correlated outer reference".into());
    }
    if q.group_by.is_empty() && (q.having.is_some() || q.select.iter().any(|s| s.aggregated) || key.contains_aggregate()) {
        return Some("aggregate query without GROUP BY yields a single row".into());
    }
    if !q.group_by.is_empty() {
        let grouped_exprs: BTreeSet<String> = q.group_by.iter().map(|g| expr_key(&q.expand_term(g))).collect();
        let grouped_cols: BTreeSet<ColKey> = q
            .group_by
            .iter()
            .filter_map(|g| match q.expand_term(g) {
                Expr::Column(c) => Some(ColKey::of(&c)),
                _ => None,
            })
            .collect();
        let covered = grouped_exprs.contains(&expr_key(&key))
            || key.bare_columns().iter().all(|c| grouped_cols.contains(&ColKey::of(c)));
        if !covered {
            return Some("order key is neither grouped nor aggregated".into());
        }
    }
    None
}

/// Replace references to output aliases of `q` by the aliased expressions.
pub(crate) fn expand_aliases(q: &SqlAst, e: &Expr) -> Expr {
    let mut e = q.expand_term(e);
    e.walk_mut(&mut |x| {
        if let Expr::Column(c) = x {
            if let Some(Resolution::SelectAlias { index }) = c.resolved {
                if let Some(item) = q.select.get(index) {
                    *x = item.expr.clone();
                }
            }
        }
    });
    e
}

fn conjoin(existing: Option<Expr>, extra: Expr) -> Expr {
    match existing {
        Some(e) => e.and(extra),
        None => extra,
    }
}

/// Rewrite one Limit1 node in place.
fn rewrite_limit1_node(q: &mut SqlAst) {
    let item = q.order_by[0].clone();
    let extreme = if item.direction == Direction::Desc { "MAX" } else { "MIN" };
    let key = expand_aliases(q, &item.expr);
    let where_clause = q.where_clause.as_ref().map(|w| expand_aliases(q, w));

    if q.group_by.is_empty() {
        let sub = SqlAst {
            select: vec![SelectItem::new(Expr::function(extreme, vec![key.clone()]), None)],
            from: q.from.clone(),
            where_clause: where_clause.clone(),
            ..SqlAst::default()
        };
        let pred = Expr::binary(key, BinaryOp::Eq, Expr::Subquery(Box::new(sub)));
        q.where_clause = Some(conjoin(q.where_clause.take(), pred));
    } else {
        let group_by: Vec<Expr> = q.group_by.iter().map(|g| expand_aliases(q, g)).collect();
        let having = q.having.as_ref().map(|h| expand_aliases(q, h));
        let inner = SqlAst {
            select: vec![SelectItem::new(key.clone(), Some(Ident::new("extreme_key")))],
            from: q.from.clone(),
            where_clause,
            group_by,
            having,
            ..SqlAst::default()
        };
        let sub = SqlAst {
            select: vec![SelectItem::new(Expr::function(extreme, vec![Expr::column("extreme_key")]), None)],
            from: vec![TableWithJoins {
                relation: TableFactor::Derived {
                    subquery: Box::new(inner),
                    alias: Some(Ident::new("extreme_groups")),
                },
                joins: vec![],
            }],
            ..SqlAst::default()
        };
        let pred = Expr::binary(key, BinaryOp::Eq, Expr::Subquery(Box::new(sub)));
        q.having = Some(conjoin(q.having.take(), pred));
    }
    q.order_by.clear();
    q.limit = None;
}

/// Round-trip through text so the result is freshly parsed and resolved.
fn finish(ast: SqlAst, schema: &DbSchema) -> Result<SqlAst, RewriteError> {
    let text = print_sql(&ast);
    let reparsed = parse_sql(&text, Dialect::BenchmarkLenient).map_err(|e| RewriteError::Invalid(e.to_string()))?;
    resolve_columns(&reparsed, schema).map_err(|e| RewriteError::Invalid(e.to_string()))
}

fn null_note(direction: Direction) -> String {
    match direction {
        Direction::Desc => "rows whose order key is NULL are never returned; if every key is NULL the rewrite returns no rows".into(),
        Direction::Asc => "SQLite sorts NULL first, so the original may return a NULL-key row where the MIN form skips NULLs".into(),
    }
}

/// Replace every rewritable `ORDER BY k LIMIT 1` with an extreme-value
/// predicate returning all tied rows.
pub fn rewrite_limit1(ast: &SqlAst, schema: &DbSchema) -> Result<RewriteOutcome, RewriteError> {
    let findings: Vec<_> = audit_query(ast, schema)
        .into_iter()
        .filter(|f| f.category == TieCategory::Limit1)
        .collect();
    if findings.is_empty() {
        return Err(RewriteError::NotApplicable);
    }
    let nodes = ast.nodes();
    let mut targets: Vec<(QueryPath, Direction)> = Vec::new();
    let mut blockers = Vec::new();
    for f in &findings {
        let node = nodes.iter().find(|n| n.path == f.location).expect("finding points at a node");
        match limit1_blocker(node) {
            None => targets.push((f.location.clone(), node.ast.order_by[0].direction)),
            Some(reason) => blockers.push(reason),
        }
    }
    if targets.is_empty() {
        return Err(RewriteError::Unrewritable(blockers.join("; ")));
    }
    targets.sort_by_key(|(p, _)| std::cmp::Reverse(p.0.len()));
    let mut out = ast.clone();
    let mut notes = Vec::new();
    for (path, dir) in &targets {
        let node = out.node_at_mut(path).expect("path stays valid while rewriting deepest first");
        rewrite_limit1_node(node);
        let note = null_note(*dir);
        if !notes.contains(&note) {
            notes.push(note);
        }
    }
    notes.extend(blockers.into_iter().map(|b| format!("left unrewritten: {b}")));
    Ok(RewriteOutcome {
        original: ast.clone(),
        rewritten: Some(finish(out, schema)?),
        rule: RewriteRule::Limit1ToExtreme,
        reason_unrewritten: None,
        notes,
    })
}

/// Extend GROUP BY with every non-aggregated selected column it lacks.
pub fn complete_group_by(ast: &SqlAst, schema: &DbSchema) -> Result<RewriteOutcome, RewriteError> {
    let targets: Vec<QueryPath> = audit_query(ast, schema)
        .into_iter()
        .filter(|f| f.category == TieCategory::GroupByMisuse && f.rewritable)
        .map(|f| f.location)
        .collect();
    if targets.is_empty() {
        return Err(RewriteError::NotApplicable);
    }
    let mut out = ast.clone();
    for path in &targets {
        let q = out.node_at_mut(path).expect("finding points at a node");
        let mut grouped: BTreeSet<ColKey> = q
            .group_by
            .iter()
            .filter_map(|g| match q.expand_term(g) {
                Expr::Column(c) => Some(ColKey::of(&c)),
                _ => None,
            })
            .collect();
        let grouped_exprs: BTreeSet<String> = q.group_by.iter().map(|g| expr_key(&q.expand_term(g))).collect();
        let mut additions = Vec::new();
        for item in &q.select {
            if grouped_exprs.contains(&expr_key(&item.expr)) {
                continue;
            }
            for c in item.expr.bare_columns() {
                let local = c.resolved_column().is_none_or(|r| r.outer_depth == 0);
                if local && grouped.insert(ColKey::of(c)) {
                    additions.push(Expr::Column(c.clone()));
                }
            }
        }
        q.group_by.extend(additions);
    }
    Ok(RewriteOutcome {
        original: ast.clone(),
        rewritten: Some(finish(out, schema)?),
        rule: RewriteRule::GroupByCompletion,
        reason_unrewritten: None,
        notes: Vec::new(),
    })
}

/// Both rules applied in sequence: GROUP BY completion, then Limit1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedRewrite {
    pub rewritten: Option<SqlAst>,
    pub rules_applied: Vec<RewriteRule>,
    pub unrewritable: Vec<String>,
    pub notes: Vec<String>,
}

pub fn rewrite_query(ast: &SqlAst, schema: &DbSchema) -> CombinedRewrite {
    let mut current = ast.clone();
    let mut result = CombinedRewrite {
        rewritten: None,
        rules_applied: Vec::new(),
        unrewritable: Vec::new(),
        notes: Vec::new(),
    };
    for rule in [RewriteRule::GroupByCompletion, RewriteRule::Limit1ToExtreme] {
        let step = match rule {
            RewriteRule::GroupByCompletion => complete_group_by(&current, schema),
            _ => rewrite_limit1(&current, schema),
        };
        match step {
            Ok(outcome) => {
                current = outcome.rewritten.expect("successful rewrite carries a query");
                result.rules_applied.push(rule);
                result.notes.extend(outcome.notes);
            }
            Err(RewriteError::NotApplicable) => {}
            Err(e @ (RewriteError::Unrewritable(_) | RewriteError::Invalid(_))) => result.unrewritable.push(e.to_string()),
        }
    }
    if !result.rules_applied.is_empty() {
        result.rewritten = Some(current);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{parse_and_resolve, Affinity, Column, Table};

    fn schema() -> DbSchema {
        let t = |name: &str, cols: &[(&str, Affinity)], pk: &str| Table {
            name: name.into(),
            columns: cols
                .iter()
                .map(|(n, a)| Column {
                    name: (*n).into(),
                    affinity: *a,
                })
                .collect(),
            primary_key: vec![pk.into()],
            unique_constraints: vec![],
            foreign_keys: vec![],
        };
        use Affinity::*;
        DbSchema {
            database_id: "db".into(),
            tables: vec![
                t("stadium", &[("stadium_id", Integer), ("name", Text), ("capacity", Integer), ("average", Integer)], "stadium_id"),
                t("concert", &[("concert_id", Integer), ("stadium_id", Integer), ("year", Text)], "concert_id"),
                t("t", &[("id", Integer), ("name", Text), ("a", Integer), ("b", Integer)], "id"),
            ],
        }
    }

    fn limit1(sql: &str) -> Result<String, RewriteError> {
        let s = schema();
        let ast = parse_and_resolve(sql, &s).unwrap();
        rewrite_limit1(&ast, &s).map(|o| print_sql(&o.rewritten.unwrap()))
    }

    fn group_by(sql: &str) -> Result<String, RewriteError> {
        let s = schema();
        let ast = parse_and_resolve(sql, &s).unwrap();
        complete_group_by(&ast, &s).map(|o| print_sql(&o.rewritten.unwrap()))
    }

    #[test]
    fn limit1_to_max_subquery() {
        assert_eq!(
            limit1("SELECT name, capacity FROM stadium ORDER BY average DESC LIMIT 1").unwrap(),
            "SELECT name, capacity FROM stadium WHERE average = (SELECT MAX(average) FROM stadium)"
        );
        assert_eq!(
            limit1("SELECT name FROM stadium WHERE capacity > 10 ORDER BY average LIMIT 1").unwrap(),
            "SELECT name FROM stadium WHERE capacity > 10 AND average = (SELECT MIN(average) FROM stadium WHERE capacity > 10)"
        );
    }

    #[test]
    fn aggregate_key_targets_having() {
        assert_eq!(
            limit1(
                "SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id \
                 GROUP BY T1.stadium_id ORDER BY COUNT(*) DESC LIMIT 1"
            )
            .unwrap(),
            "SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id \
             GROUP BY T1.stadium_id HAVING COUNT(*) = (SELECT MAX(extreme_key) FROM (SELECT COUNT(*) AS extreme_key \
             FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id) AS extreme_groups)"
        );
    }

    #[test]
    fn alias_keys_are_expanded() {
        assert_eq!(
            limit1("SELECT stadium_id, COUNT(*) AS n FROM concert GROUP BY 1 ORDER BY n DESC LIMIT 1").unwrap(),
            "SELECT stadium_id, COUNT(*) AS n FROM concert GROUP BY 1 HAVING COUNT(*) = (SELECT MAX(extreme_key) FROM \
             (SELECT COUNT(*) AS extreme_key FROM concert GROUP BY stadium_id) AS extreme_groups)"
        );
    }

    #[test]
    fn limit1_not_applicable_and_unrewritable() {
        assert_eq!(limit1("SELECT name FROM stadium"), Err(RewriteError::NotApplicable));
        assert_eq!(limit1("SELECT name FROM stadium LIMIT 1"), Err(RewriteError::NotApplicable));
        assert_eq!(
            limit1("SELECT name FROM t ORDER BY a, b LIMIT 1"),
            Err(RewriteError::Unrewritable("multi-key ORDER BY".into()))
        );
        assert_eq!(
            limit1("SELECT name FROM t ORDER BY a LIMIT 1 OFFSET 2"),
            Err(RewriteError::Unrewritable("LIMIT with OFFSET".into()))
        );
        assert!(matches!(limit1("SELECT name FROM t ORDER BY random() LIMIT 1"), Err(RewriteError::Unrewritable(_))));
        assert!(matches!(
            limit1("SELECT name FROM stadium AS s WHERE capacity > (SELECT a FROM t WHERE t.id = s.stadium_id ORDER BY b LIMIT 1)"),
            Err(RewriteError::Unrewritable(_))
        ));
    }

    #[test]
    fn nested_limit1_in_in_subquery() {
        assert_eq!(
            limit1("SELECT name FROM stadium WHERE stadium_id IN (SELECT stadium_id FROM concert ORDER BY year DESC LIMIT 1)")
                .unwrap(),
            "SELECT name FROM stadium WHERE stadium_id IN (SELECT stadium_id FROM concert WHERE year = (SELECT MAX(year) FROM concert))"
        );
    }

    #[test]
    fn rewrite_is_idempotent() {
        let s = schema();
        let ast = parse_and_resolve("SELECT name, capacity FROM stadium ORDER BY average DESC LIMIT 1", &s).unwrap();
        let once = rewrite_limit1(&ast, &s).unwrap().rewritten.unwrap();
        assert_eq!(rewrite_limit1(&once, &s), Err(RewriteError::NotApplicable));
        let ast = parse_and_resolve("SELECT id, name FROM t GROUP BY name", &s).unwrap();
        let once = complete_group_by(&ast, &s).unwrap().rewritten.unwrap();
        assert_eq!(complete_group_by(&once, &s), Err(RewriteError::NotApplicable));
    }

    #[test]
    fn group_by_completion() {
        assert_eq!(group_by("SELECT id, name FROM t GROUP BY name").unwrap(), "SELECT id, name FROM t GROUP BY name, id");
        assert_eq!(group_by("SELECT COUNT(*) FROM t"), Err(RewriteError::NotApplicable));
        assert_eq!(group_by("SELECT a, max(b) FROM t GROUP BY a"), Err(RewriteError::NotApplicable));
        assert_eq!(group_by("SELECT name, max(a) FROM t"), Err(RewriteError::NotApplicable));
        assert_eq!(
            group_by("SELECT b, a + id, COUNT(*) FROM t GROUP BY a").unwrap(),
            "SELECT b, a + id, COUNT(*) FROM t GROUP BY a, b, id"
        );
    }

    #[test]
    fn combined_rewrite_applies_both_rules() {
        let s = schema();
        let ast = parse_and_resolve(
            "SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id \
             GROUP BY T1.stadium_id ORDER BY count(*) DESC LIMIT 1",
            &s,
        )
        .unwrap();
        let r = rewrite_query(&ast, &s);
        assert_eq!(r.rules_applied, vec![RewriteRule::GroupByCompletion, RewriteRule::Limit1ToExtreme]);
        let text = print_sql(r.rewritten.as_ref().unwrap());
        assert!(text.contains("GROUP BY T1.stadium_id, T2.name HAVING"), "{text}");
    }
}
