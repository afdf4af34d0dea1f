//! Canonical printer: upper-case keywords, single spaces, no trailing
//! semicolon. Parentheses are emitted only where precedence requires them,
//! so `parse(print(ast)) == ast` for every parsed tree.

use std::fmt::Write;

use super::ast::*;

pub fn print_sql(ast: &SqlAst) -> String {
    let mut out = String::new();
    write_query(&mut out, ast);
    out
}

pub fn print_expr(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, expr, 0);
    out
}

fn write_query(out: &mut String, ast: &SqlAst) {
    out.push_str("SELECT ");
    if ast.distinct {
        out.push_str("DISTINCT ");
    }
    for (i, item) in ast.select.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, &item.expr, 0);
        if let Some(a) = &item.alias {
            let _ = write!(out, " AS {a}");
        }
    }
    if !ast.from.is_empty() {
        out.push_str(" FROM ");
        for (i, twj) in ast.from.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write_factor(out, &twj.relation);
            for j in &twj.joins {
                out.push_str(match j.kind {
                    JoinKind::Inner => " JOIN ",
                    JoinKind::Left => " LEFT JOIN ",
                    JoinKind::Cross => " CROSS JOIN ",
                });
                write_factor(out, &j.relation);
                if let Some(on) = &j.on {
                    out.push_str(" ON ");
                    write_expr(out, on, 0);
                }
            }
        }
    }
    if let Some(w) = &ast.where_clause {
        out.push_str(" WHERE ");
        write_expr(out, w, 0);
    }
    if !ast.group_by.is_empty() {
        out.push_str(" GROUP BY ");
        write_list(out, &ast.group_by);
    }
    if let Some(h) = &ast.having {
        out.push_str(" HAVING ");
        write_expr(out, h, 0);
    }
    if !ast.order_by.is_empty() {
        out.push_str(" ORDER BY ");
        for (i, o) in ast.order_by.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write_expr(out, &o.expr, 0);
            match (o.direction, o.explicit) {
                (Direction::Desc, _) => out.push_str(" DESC"),
                (Direction::Asc, true) => out.push_str(" ASC"),
                (Direction::Asc, false) => {}
            }
        }
    }
    if let Some(l) = &ast.limit {
        let _ = write!(out, " LIMIT {}", l.count);
        if let Some(off) = l.offset {
            let _ = write!(out, " OFFSET {off}");
        }
    }
    if let Some(so) = &ast.set_op {
        let _ = write!(out, " {} ", so.op.keyword());
        write_query(out, &so.operand);
    }
}

fn write_factor(out: &mut String, f: &TableFactor) {
    match f {
        TableFactor::Table { name, alias } => {
            let _ = write!(out, "{name}");
            if let Some(a) = alias {
                let _ = write!(out, " AS {a}");
            }
        }
        TableFactor::Derived { subquery, alias } => {
            out.push('(');
            write_query(out, subquery);
            out.push(')');
            if let Some(a) = alias {
                let _ = write!(out, " AS {a}");
            }
        }
    }
}

fn write_list(out: &mut String, exprs: &[Expr]) {
    for (i, e) in exprs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, e, 0);
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { op: UnaryOp::Not, .. } => NOT_PRECEDENCE,
        Expr::IsNull { .. } | Expr::InList { .. } | Expr::InSubquery { .. } | Expr::Between { .. } | Expr::Like { .. } => {
            PREDICATE_PRECEDENCE
        }
        Expr::Unary { .. } => UNARY_PRECEDENCE,
        _ => 10,
    }
}

/// Write `e`, parenthesized if it binds looser than `min`.
fn write_expr(out: &mut String, e: &Expr, min: u8) {
    if precedence(e) < min {
        out.push('(');
        write_expr(out, e, 0);
        out.push(')');
        return;
    }
    match e {
        Expr::Column(c) => {
            if let Some(q) = &c.qualifier {
                let _ = write!(out, "{q}.");
            }
            let _ = write!(out, "{}", c.name);
        }
        Expr::Wildcard { qualifier } => {
            if let Some(q) = qualifier {
                let _ = write!(out, "{q}.");
            }
            out.push('*');
        }
        Expr::Literal(l) => write_literal(out, l),
        Expr::Unary { op, expr } => match op {
            UnaryOp::Not => {
                out.push_str("NOT ");
                write_expr(out, expr, NOT_PRECEDENCE);
            }
            UnaryOp::Minus | UnaryOp::Plus => {
                out.push(if *op == UnaryOp::Minus { '-' } else { '+' });
                // keep `- -x` from lexing as a comment
                if matches!(&**expr, Expr::Unary { op: UnaryOp::Minus | UnaryOp::Plus, .. })
                    || matches!(&**expr, Expr::Literal(Literal::Number(n)) if n.starts_with('-'))
                {
                    out.push(' ');
                }
                write_expr(out, expr, UNARY_PRECEDENCE);
            }
        },
        Expr::Binary { left, op, right } => {
            let p = op.precedence();
            write_expr(out, left, p);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, right, p + 1);
        }
        Expr::Function { name, distinct, args } => {
            let _ = write!(out, "{name}(");
            if *distinct {
                out.push_str("DISTINCT ");
            }
            write_list(out, args);
            out.push(')');
        }
        Expr::Cast { expr, data_type } => {
            out.push_str("CAST(");
            write_expr(out, expr, 0);
            let _ = write!(out, " AS {data_type})");
        }
        Expr::Case {
            operand,
            branches,
            else_result,
        } => {
            out.push_str("CASE");
            if let Some(o) = operand {
                out.push(' ');
                write_expr(out, o, 0);
            }
            for (w, t) in branches {
                out.push_str(" WHEN ");
                write_expr(out, w, 0);
                out.push_str(" THEN ");
                write_expr(out, t, 0);
            }
            if let Some(e) = else_result {
                out.push_str(" ELSE ");
                write_expr(out, e, 0);
            }
            out.push_str(" END");
        }
        Expr::IsNull { expr, negated } => {
            write_expr(out, expr, PREDICATE_PRECEDENCE);
            out.push_str(if *negated { " IS NOT NULL" } else { " IS NULL" });
        }
        Expr::InList { expr, list, negated } => {
            write_expr(out, expr, PREDICATE_PRECEDENCE);
            out.push_str(if *negated { " NOT IN (" } else { " IN (" });
            write_list(out, list);
            out.push(')');
        }
        Expr::InSubquery {
            expr,
            subquery,
            negated,
        } => {
            write_expr(out, expr, PREDICATE_PRECEDENCE);
            out.push_str(if *negated { " NOT IN (" } else { " IN (" });
            write_query(out, subquery);
            out.push(')');
        }
        Expr::Between {
            expr,
            low,
            high,
            negated,
        } => {
            write_expr(out, expr, PREDICATE_PRECEDENCE);
            out.push_str(if *negated { " NOT BETWEEN " } else { " BETWEEN " });
            write_expr(out, low, PREDICATE_PRECEDENCE + 1);
            out.push_str(" AND ");
            write_expr(out, high, PREDICATE_PRECEDENCE + 1);
        }
        Expr::Like { expr, pattern, negated } => {
            write_expr(out, expr, PREDICATE_PRECEDENCE);
            out.push_str(if *negated { " NOT LIKE " } else { " LIKE " });
            write_expr(out, pattern, PREDICATE_PRECEDENCE + 1);
        }
        Expr::Exists { subquery, negated } => {
            out.push_str(if *negated { "NOT EXISTS (" } else { "EXISTS (" });
            write_query(out, subquery);
            out.push(')');
        }
        Expr::Subquery(q) => {
            out.push('(');
            write_query(out, q);
            out.push(')');
        }
    }
}

fn write_literal(out: &mut String, l: &Literal) {
    match l {
        Literal::Number(n) => out.push_str(n),
        Literal::String { value, quote } => {
            let q = *quote;
            let escaped = value.replace(q, &format!("{q}{q}"));
            let _ = write!(out, "{q}{escaped}{q}");
        }
        Literal::Null => out.push_str("NULL"),
        Literal::Boolean(b) => out.push_str(if *b { "TRUE" } else { "FALSE" }),
    }
}
