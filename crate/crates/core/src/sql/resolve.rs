//! Column resolution: binds every column reference to a table column (or
//! to a select-list alias) using SQLite's scoping rules.

use super::ast::*;
use super::error::ResolveError;
use super::schema::{Affinity, DbSchema};

/// Annotate every column reference of `ast` with its binding and refresh the
/// aggregated flags. Resolving an already-resolved tree is a no-op.
pub fn resolve_columns(ast: &SqlAst, schema: &DbSchema) -> Result<SqlAst, ResolveError> {
    if let Some(id) = &ast.schema_id {
        if id != &schema.database_id {
            return Err(ResolveError::SchemaMismatch {
                query: id.clone(),
                schema: schema.database_id.clone(),
            });
        }
    }
    let mut out = ast.clone();
    let resolver = Resolver { schema };
    resolver.resolve_query(&mut out, &[])?;
    out.refresh_aggregate_flags();
    out.schema_id = Some(schema.database_id.clone());
    Ok(out)
}

#[derive(Debug, Clone)]
struct Binding {
    name: String,
    table: String,
    columns: Vec<(String, Affinity)>,
}

#[derive(Debug, Clone, Default)]
struct Scope {
    bindings: Vec<Binding>,
    aliases: Vec<Option<String>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum AliasPolicy {
    /// Output aliases are consulted only when no column matches.
    Fallback,
    /// Output aliases win over columns (ORDER BY).
    First,
    /// Aliases are not visible (FROM/ON, select list).
    Hidden,
}

struct Resolver<'s> {
    schema: &'s DbSchema,
}

impl<'s> Resolver<'s> {
    /// Resolve one query (and its set-operation chain); returns its output
    /// columns.
    fn resolve_query(&self, ast: &mut SqlAst, outer: &[Scope]) -> Result<Vec<(String, Affinity)>, ResolveError> {
        let mut scope = Scope::default();
        for twj in &mut ast.from {
            self.bind_factor(&mut twj.relation, outer, &mut scope)?;
            for j in &mut twj.joins {
                self.bind_factor(&mut j.relation, outer, &mut scope)?;
            }
        }
        scope.aliases = ast
            .select
            .iter()
            .map(|s| s.alias.as_ref().map(Ident::normalized))
            .collect();
        let aliases_exprs: Vec<Expr> = ast.select.iter().map(|s| s.expr.clone()).collect();

        let mut stack = Vec::with_capacity(outer.len() + 1);
        stack.push(scope.clone());
        stack.extend(outer.iter().cloned());

        for twj in &mut ast.from {
            for j in &mut twj.joins {
                if let Some(on) = &mut j.on {
                    self.resolve_expr(on, &stack, AliasPolicy::Hidden)?;
                }
            }
        }
        for item in &mut ast.select {
            self.resolve_expr(&mut item.expr, &stack, AliasPolicy::Hidden)?;
        }
        if let Some(w) = &mut ast.where_clause {
            self.resolve_expr(w, &stack, AliasPolicy::Fallback)?;
        }
        for g in &mut ast.group_by {
            self.resolve_expr(g, &stack, AliasPolicy::Fallback)?;
        }
        if let Some(h) = &mut ast.having {
            self.resolve_expr(h, &stack, AliasPolicy::Fallback)?;
        }
        for o in &mut ast.order_by {
            self.resolve_expr(&mut o.expr, &stack, AliasPolicy::First)?;
        }

        let mut output = Vec::new();
        for (item, expr) in ast.select.iter().zip(&aliases_exprs) {
            match &item.expr {
                Expr::Wildcard { qualifier } => {
                    for b in &scope.bindings {
                        if qualifier.as_ref().is_none_or(|q| q.matches(&b.name)) {
                            output.extend(b.columns.iter().cloned());
                        }
                    }
                }
                e => {
                    let name = match (&item.alias, expr) {
                        (Some(a), _) => a.value.clone(),
                        (None, Expr::Column(c)) => c.name.value.clone(),
                        (None, other) => super::printer::print_expr(other),
                    };
                    output.push((name, infer_affinity(e)));
                }
            }
        }

        if let Some(so) = &mut ast.set_op {
            self.resolve_query(&mut so.operand, outer)?;
        }
        Ok(output)
    }

    fn bind_factor(&self, factor: &mut TableFactor, outer: &[Scope], scope: &mut Scope) -> Result<(), ResolveError> {
        match factor {
            TableFactor::Table { name, alias } => {
                let table = self
                    .schema
                    .table(&name.value)
                    .ok_or_else(|| ResolveError::UnknownTable(name.value.clone()))?;
                scope.bindings.push(Binding {
                    name: alias.as_ref().unwrap_or(name).normalized(),
                    table: table.name.clone(),
                    columns: table.columns.iter().map(|c| (c.name.clone(), c.affinity)).collect(),
                });
            }
            TableFactor::Derived { subquery, alias } => {
                let columns = self.resolve_query(subquery, outer)?;
                let name = alias.as_ref().map(Ident::normalized).unwrap_or_default();
                scope.bindings.push(Binding {
                    table: alias.as_ref().map(|a| a.value.clone()).unwrap_or_default(),
                    name,
                    columns,
                });
            }
        }
        Ok(())
    }

    fn resolve_expr(&self, expr: &mut Expr, stack: &[Scope], policy: AliasPolicy) -> Result<(), ResolveError> {
        match expr {
            Expr::Column(c) => {
                c.resolved = Some(self.lookup(c, stack, policy)?);
                Ok(())
            }
            Expr::Wildcard { qualifier: Some(q) } => {
                if stack[0].bindings.iter().any(|b| q.matches(&b.name)) {
                    Ok(())
                } else {
                    Err(ResolveError::UnresolvedColumn(format!("{}.*", q.value)))
                }
            }
            Expr::InSubquery { expr, subquery, .. } => {
                self.resolve_expr(expr, stack, policy)?;
                self.resolve_query(subquery, stack)?;
                Ok(())
            }
            Expr::Exists { subquery, .. } | Expr::Subquery(subquery) => {
                self.resolve_query(subquery, stack)?;
                Ok(())
            }
            other => {
                for c in other.children_mut() {
                    self.resolve_expr(c, stack, policy)?;
                }
                Ok(())
            }
        }
    }

    fn lookup(&self, c: &ColumnRef, stack: &[Scope], policy: AliasPolicy) -> Result<Resolution, ResolveError> {
        let display = match &c.qualifier {
            Some(q) => format!("{}.{}", q.value, c.name.value),
            None => c.name.value.clone(),
        };
        if let Some(q) = &c.qualifier {
            for (depth, scope) in stack.iter().enumerate() {
                if let Some(b) = scope.bindings.iter().find(|b| q.matches(&b.name)) {
                    return match b.columns.iter().find(|(n, _)| c.name.matches(n)) {
                        Some((n, aff)) => Ok(Resolution::Column(ResolvedColumn {
                            table: b.table.clone(),
                            column: n.clone(),
                            affinity: *aff,
                            outer_depth: depth,
                        })),
                        None => Err(ResolveError::UnresolvedColumn(display)),
                    };
                }
            }
            return Err(ResolveError::UnresolvedColumn(display));
        }

        let alias_hit = |scope: &Scope| {
            scope
                .aliases
                .iter()
                .position(|a| a.as_deref() == Some(c.name.normalized().as_str()))
        };
        if policy == AliasPolicy::First {
            if let Some(index) = alias_hit(&stack[0]) {
                return Ok(Resolution::SelectAlias { index });
            }
        }
        for (depth, scope) in stack.iter().enumerate() {
            let mut hits = scope
                .bindings
                .iter()
                .filter_map(|b| b.columns.iter().find(|(n, _)| c.name.matches(n)).map(|col| (b, col)));
            if let Some((b, (n, aff))) = hits.next() {
                if hits.next().is_some() {
                    return Err(ResolveError::AmbiguousColumn(display));
                }
                return Ok(Resolution::Column(ResolvedColumn {
                    table: b.table.clone(),
                    column: n.clone(),
                    affinity: *aff,
                    outer_depth: depth,
                }));
            }
            if depth == 0 && policy == AliasPolicy::Fallback {
                if let Some(index) = alias_hit(scope) {
                    return Ok(Resolution::SelectAlias { index });
                }
            }
        }
        Err(ResolveError::UnresolvedColumn(display))
    }
}

/// Best-effort static type of an expression.
pub fn infer_affinity(e: &Expr) -> Affinity {
    match e {
        Expr::Column(c) => c.resolved_column().map_or(Affinity::Text, |r| r.affinity),
        Expr::Literal(Literal::Number(n)) => {
            if n.contains(['.', 'e', 'E']) {
                Affinity::Real
            } else {
                Affinity::Integer
            }
        }
        Expr::Literal(Literal::Boolean(_)) => Affinity::Boolean,
        Expr::Literal(_) => Affinity::Text,
        Expr::Function { name, args, .. } => match name.as_str() {
            "COUNT" | "LENGTH" | "INSTR" => Affinity::Integer,
            "AVG" | "TOTAL" | "ROUND" | "JULIANDAY" => Affinity::Real,
            "SUM" | "MAX" | "MIN" | "ABS" | "COALESCE" | "IFNULL" | "NULLIF" => {
                args.first().map_or(Affinity::Text, infer_affinity)
            }
            _ => Affinity::Text,
        },
        Expr::Cast { data_type, .. } => Affinity::from_declared(data_type),
        Expr::Unary { op: UnaryOp::Not, .. } => Affinity::Boolean,
        Expr::Unary { expr, .. } => infer_affinity(expr),
        Expr::Binary { left, op, right } => match op {
            BinaryOp::Concat => Affinity::Text,
            BinaryOp::Plus | BinaryOp::Minus | BinaryOp::Multiply | BinaryOp::Divide | BinaryOp::Modulo => {
                let (l, r) = (infer_affinity(left), infer_affinity(right));
                if l == Affinity::Real || r == Affinity::Real {
                    Affinity::Real
                } else {
                    Affinity::Integer
                }
            }
            _ => Affinity::Boolean,
        },
        Expr::Case { branches, .. } => branches.first().map_or(Affinity::Text, |(_, t)| infer_affinity(t)),
        Expr::Subquery(q) => q.select.first().map_or(Affinity::Text, |s| infer_affinity(&s.expr)),
        Expr::IsNull { .. }
        | Expr::InList { .. }
        | Expr::InSubquery { .. }
        | Expr::Between { .. }
        | Expr::Like { .. }
        | Expr::Exists { .. } => Affinity::Boolean,
        Expr::Wildcard { .. } => Affinity::Text,
    }
}
