//! Recursive-descent parser for the benchmark SELECT subset.

use super::ast::*;
use super::error::ParseError;
use super::lexer::{tokenize, Token, TokenKind};
use super::Dialect;

/// Words that can never be an implicit alias or a bare identifier.
const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "HAVING", "ORDER", "LIMIT", "OFFSET", "UNION", "INTERSECT", "EXCEPT", "JOIN",
    "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL", "ON", "USING", "AND", "OR", "NOT", "AS", "BY",
    "ASC", "DESC", "IN", "IS", "LIKE", "BETWEEN", "EXISTS", "CASE", "WHEN", "THEN", "ELSE", "END", "DISTINCT", "ALL",
    "NULL", "WITH", "WINDOW", "OVER", "GLOB", "REGEXP", "MATCH", "ESCAPE", "COLLATE",
];

/// Statements outside the read-only subset.
const NON_QUERY_STATEMENTS: &[&str] = &[
    "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER", "REPLACE", "PRAGMA", "ATTACH", "VACUUM", "EXPLAIN",
];

pub fn parse_sql(text: &str, dialect: Dialect) -> Result<SqlAst, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        dialect,
    };
    if let TokenKind::Word(w) = &p.peek().kind {
        let upper = w.to_ascii_uppercase();
        if upper == "WITH" {
            return Err(ParseError::unsupported("WITH (common table expression)", p.peek().offset));
        }
        if NON_QUERY_STATEMENTS.contains(&upper.as_str()) {
            return Err(ParseError::unsupported(&format!("{upper} statement"), p.peek().offset));
        }
    }
    let ast = p.parse_query()?;
    while p.eat_symbol(";") {}
    if p.peek().kind != TokenKind::Eof {
        return Err(p.expected("end of query"));
    }
    Ok(ast)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dialect: Dialect,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, n: usize) -> &Token {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn expected(&self, what: &str) -> ParseError {
        let t = self.peek();
        ParseError::syntax(t.offset, what, &t.describe())
    }

    fn is_keyword_at(&self, n: usize, kw: &str) -> bool {
        matches!(&self.peek_at(n).kind, TokenKind::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn is_keyword(&self, kw: &str) -> bool {
        self.is_keyword_at(0, kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.is_keyword(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.expected(kw))
        }
    }

    fn is_symbol(&self, s: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Symbol(x) if *x == s)
    }

    fn eat_symbol(&mut self, s: &str) -> bool {
        if self.is_symbol(s) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_symbol(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_symbol(s) {
            Ok(())
        } else {
            Err(self.expected(&format!("`{s}`")))
        }
    }

    fn unsupported_here(&self, construct: &str) -> ParseError {
        ParseError::unsupported(construct, self.peek().offset)
    }

    fn reserved(word: &str) -> bool {
        RESERVED.iter().any(|r| r.eq_ignore_ascii_case(word))
    }

    /// Identifier in a name position (table, column, alias).
    fn parse_ident(&mut self) -> Result<Ident, ParseError> {
        match self.peek().kind.clone() {
            TokenKind::Word(w) if !Self::reserved(&w) => {
                self.advance();
                Ok(Ident::new(w))
            }
            TokenKind::QuotedIdent(w, q) => {
                self.advance();
                Ok(Ident::quoted(w, q))
            }
            TokenKind::DoubleQuoted(w) => {
                self.advance();
                Ok(Ident::quoted(w, '"'))
            }
            _ => Err(self.expected("identifier")),
        }
    }

    fn parse_optional_alias(&mut self) -> Result<Option<Ident>, ParseError> {
        if self.eat_keyword("AS") {
            return match self.peek().kind.clone() {
                TokenKind::String(s) => {
                    self.advance();
                    Ok(Some(Ident::quoted(s, '\'')))
                }
                _ => self.parse_ident().map(Some),
            };
        }
        match &self.peek().kind {
            TokenKind::Word(w) if !Self::reserved(w) => self.parse_ident().map(Some),
            TokenKind::QuotedIdent(..) => self.parse_ident().map(Some),
            _ => Ok(None),
        }
    }

    fn parse_query(&mut self) -> Result<SqlAst, ParseError> {
        let mut ast = self.parse_core()?;
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            ast.order_by = self.parse_order_list()?;
        }
        if self.eat_keyword("LIMIT") {
            ast.limit = Some(self.parse_limit()?);
        }
        let op = if self.eat_keyword("UNION") {
            if self.eat_keyword("ALL") {
                Some(SetOperator::UnionAll)
            } else {
                Some(SetOperator::Union)
            }
        } else if self.eat_keyword("INTERSECT") {
            Some(SetOperator::Intersect)
        } else if self.eat_keyword("EXCEPT") {
            Some(SetOperator::Except)
        } else {
            None
        };
        if let Some(op) = op {
            let operand = if self.is_symbol("(") && self.is_keyword_at(1, "SELECT") {
                self.advance();
                let q = self.parse_query()?;
                self.expect_symbol(")")?;
                q
            } else {
                self.parse_query()?
            };
            ast.set_op = Some(SetOperation {
                op,
                operand: Box::new(operand),
            });
        }
        Ok(ast)
    }

    fn parse_limit(&mut self) -> Result<Limit, ParseError> {
        let first = self.parse_unsigned()?;
        if self.eat_keyword("OFFSET") {
            let offset = self.parse_unsigned()?;
            return Ok(Limit {
                count: first,
                offset: Some(offset),
            });
        }
        if self.eat_symbol(",") {
            let count = self.parse_unsigned()?;
            return Ok(Limit {
                count,
                offset: Some(first),
            });
        }
        Ok(Limit {
            count: first,
            offset: None,
        })
    }

    fn parse_unsigned(&mut self) -> Result<u64, ParseError> {
        match self.peek().kind.clone() {
            TokenKind::Number(n) => match n.parse::<u64>() {
                Ok(v) => {
                    self.advance();
                    Ok(v)
                }
                Err(_) => Err(self.expected("non-negative integer")),
            },
            _ => Err(self.expected("non-negative integer")),
        }
    }

    fn parse_core(&mut self) -> Result<SqlAst, ParseError> {
        if self.is_keyword("VALUES") {
            return Err(self.unsupported_here("VALUES"));
        }
        self.expect_keyword("SELECT")?;
        let mut ast = SqlAst::default();
        if self.eat_keyword("DISTINCT") {
            ast.distinct = true;
        } else {
            self.eat_keyword("ALL");
        }
        loop {
            ast.select.push(self.parse_select_item()?);
            if !self.eat_symbol(",") {
                break;
            }
        }
        if self.eat_keyword("FROM") {
            loop {
                ast.from.push(self.parse_table_with_joins()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        if self.eat_keyword("WHERE") {
            ast.where_clause = Some(self.parse_expr()?);
        }
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            loop {
                ast.group_by.push(self.parse_expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        if self.eat_keyword("HAVING") {
            ast.having = Some(self.parse_expr()?);
        }
        if self.is_keyword("WINDOW") {
            return Err(self.unsupported_here("WINDOW clause"));
        }
        Ok(ast)
    }

    fn parse_select_item(&mut self) -> Result<SelectItem, ParseError> {
        if self.eat_symbol("*") {
            return Ok(SelectItem::new(Expr::Wildcard { qualifier: None }, None));
        }
        let expr = self.parse_expr()?;
        let alias = self.parse_optional_alias()?;
        Ok(SelectItem::new(expr, alias))
    }

    fn parse_order_list(&mut self) -> Result<Vec<OrderItem>, ParseError> {
        let mut items = Vec::new();
        loop {
            let expr = self.parse_expr()?;
            if self.is_keyword("COLLATE") {
                return Err(self.unsupported_here("COLLATE"));
            }
            let (direction, explicit) = if self.eat_keyword("DESC") {
                (Direction::Desc, true)
            } else if self.eat_keyword("ASC") {
                (Direction::Asc, true)
            } else {
                (Direction::Asc, false)
            };
            if self.is_keyword("NULLS") {
                return Err(self.unsupported_here("NULLS FIRST/LAST"));
            }
            items.push(OrderItem {
                expr,
                direction,
                explicit,
            });
            if !self.eat_symbol(",") {
                break;
            }
        }
        Ok(items)
    }

    fn parse_table_with_joins(&mut self) -> Result<TableWithJoins, ParseError> {
        let relation = self.parse_table_factor()?;
        let mut joins = Vec::new();
        loop {
            if self.is_keyword("NATURAL") {
                return Err(self.unsupported_here("NATURAL JOIN"));
            }
            if self.is_keyword("RIGHT") || self.is_keyword("FULL") {
                return Err(self.unsupported_here("RIGHT/FULL OUTER JOIN"));
            }
            let kind = if self.eat_keyword("JOIN") {
                JoinKind::Inner
            } else if self.is_keyword("INNER") && self.is_keyword_at(1, "JOIN") {
                self.advance();
                self.advance();
                JoinKind::Inner
            } else if self.is_keyword("CROSS") && self.is_keyword_at(1, "JOIN") {
                self.advance();
                self.advance();
                JoinKind::Cross
            } else if self.is_keyword("LEFT") {
                self.advance();
                self.eat_keyword("OUTER");
                self.expect_keyword("JOIN")?;
                JoinKind::Left
            } else {
                break;
            };
            let relation = self.parse_table_factor()?;
            if self.is_keyword("USING") {
                return Err(self.unsupported_here("JOIN ... USING"));
            }
            let on = if self.eat_keyword("ON") {
                Some(self.parse_expr()?)
            } else {
                None
            };
            joins.push(Join { kind, relation, on });
        }
        Ok(TableWithJoins { relation, joins })
    }

    fn parse_table_factor(&mut self) -> Result<TableFactor, ParseError> {
        if self.is_symbol("(") {
            if self.is_keyword_at(1, "SELECT") {
                self.advance();
                let subquery = self.parse_query()?;
                self.expect_symbol(")")?;
                let alias = self.parse_optional_alias()?;
                return Ok(TableFactor::Derived {
                    subquery: Box::new(subquery),
                    alias,
                });
            }
            return Err(self.unsupported_here("parenthesized join"));
        }
        let name = self.parse_ident()?;
        if self.is_symbol(".") {
            return Err(self.unsupported_here("schema-qualified table name"));
        }
        if self.is_symbol("(") {
            return Err(self.unsupported_here("table-valued function"));
        }
        let alias = self.parse_optional_alias()?;
        Ok(TableFactor::Table { name, alias })
    }

    pub fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        self.parse_binary(1)
    }

    fn binary_op(&self) -> Option<BinaryOp> {
        match &self.peek().kind {
            TokenKind::Word(w) if w.eq_ignore_ascii_case("OR") => Some(BinaryOp::Or),
            TokenKind::Word(w) if w.eq_ignore_ascii_case("AND") => Some(BinaryOp::And),
            TokenKind::Symbol(s) => Some(match *s {
                "=" => BinaryOp::Eq,
                "==" => BinaryOp::DoubleEq,
                "!=" => BinaryOp::NotEq,
                "<>" => BinaryOp::LtGt,
                "<" => BinaryOp::Lt,
                "<=" => BinaryOp::LtEq,
                ">" => BinaryOp::Gt,
                ">=" => BinaryOp::GtEq,
                "+" => BinaryOp::Plus,
                "-" => BinaryOp::Minus,
                "*" => BinaryOp::Multiply,
                "/" => BinaryOp::Divide,
                "%" => BinaryOp::Modulo,
                "||" => BinaryOp::Concat,
                _ => return None,
            }),
            _ => None,
        }
    }

    /// Precedence climbing. Levels follow [`BinaryOp::precedence`]; level 3 is
    /// prefix NOT and level 4 also hosts the postfix predicates.
    fn parse_binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut left = if min_prec <= NOT_PRECEDENCE && self.is_keyword("NOT") && !self.is_keyword_at(1, "EXISTS") {
            self.advance();
            let inner = self.parse_binary(NOT_PRECEDENCE)?;
            Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(inner),
            }
        } else {
            self.parse_unary()?
        };
        loop {
            if min_prec <= PREDICATE_PRECEDENCE {
                if let Some(e) = self.parse_postfix_predicate(&left)? {
                    left = e;
                    continue;
                }
            }
            let Some(op) = self.binary_op() else { break };
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.advance();
            let right = self.parse_binary(prec + 1)?;
            left = Expr::binary(left, op, right);
        }
        Ok(left)
    }

    fn parse_postfix_predicate(&mut self, left: &Expr) -> Result<Option<Expr>, ParseError> {
        let boxed = || Box::new(left.clone());
        if self.is_keyword("IS") {
            self.advance();
            let negated = self.eat_keyword("NOT");
            if self.eat_keyword("NULL") {
                return Ok(Some(Expr::IsNull {
                    expr: boxed(),
                    negated,
                }));
            }
            return Err(self.unsupported_here("IS <expression>"));
        }
        let negated = if self.is_keyword("NOT")
            && (self.is_keyword_at(1, "IN") || self.is_keyword_at(1, "LIKE") || self.is_keyword_at(1, "BETWEEN"))
        {
            self.advance();
            true
        } else {
            false
        };
        if self.eat_keyword("IN") {
            self.expect_symbol("(")?;
            if self.is_keyword("SELECT") {
                let sub = self.parse_query()?;
                self.expect_symbol(")")?;
                return Ok(Some(Expr::InSubquery {
                    expr: boxed(),
                    subquery: Box::new(sub),
                    negated,
                }));
            }
            let mut list = Vec::new();
            if !self.is_symbol(")") {
                loop {
                    list.push(self.parse_expr()?);
                    if !self.eat_symbol(",") {
                        break;
                    }
                }
            }
            self.expect_symbol(")")?;
            return Ok(Some(Expr::InList {
                expr: boxed(),
                list,
                negated,
            }));
        }
        if self.eat_keyword("LIKE") {
            let pattern = self.parse_binary(PREDICATE_PRECEDENCE + 1)?;
            if self.is_keyword("ESCAPE") {
                return Err(self.unsupported_here("LIKE ... ESCAPE"));
            }
            return Ok(Some(Expr::Like {
                expr: boxed(),
                pattern: Box::new(pattern),
                negated,
            }));
        }
        if self.eat_keyword("BETWEEN") {
            let low = self.parse_binary(PREDICATE_PRECEDENCE + 1)?;
            self.expect_keyword("AND")?;
            let high = self.parse_binary(PREDICATE_PRECEDENCE + 1)?;
            return Ok(Some(Expr::Between {
                expr: boxed(),
                low: Box::new(low),
                high: Box::new(high),
                negated,
            }));
        }
        for kw in ["GLOB", "REGEXP", "MATCH"] {
            if self.is_keyword(kw) {
                return Err(self.unsupported_here(kw));
            }
        }
        if self.is_keyword("COLLATE") {
            return Err(self.unsupported_here("COLLATE"));
        }
        Ok(None)
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        let op = if self.eat_symbol("-") {
            Some(UnaryOp::Minus)
        } else if self.eat_symbol("+") {
            Some(UnaryOp::Plus)
        } else {
            None
        };
        match op {
            Some(op) => Ok(Expr::Unary {
                op,
                expr: Box::new(self.parse_unary()?),
            }),
            None => self.parse_primary(),
        }
    }

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        let tok = self.peek().clone();
        match tok.kind {
            TokenKind::Number(n) => {
                self.advance();
                Ok(Expr::Literal(Literal::Number(n)))
            }
            TokenKind::String(s) => {
                self.advance();
                Ok(Expr::Literal(Literal::String { value: s, quote: '\'' }))
            }
            TokenKind::DoubleQuoted(s) => {
                self.advance();
                match self.dialect {
                    Dialect::BenchmarkLenient if !self.is_symbol(".") => {
                        Ok(Expr::Literal(Literal::String { value: s, quote: '"' }))
                    }
                    _ => self.parse_column_tail(Ident::quoted(s, '"')),
                }
            }
            TokenKind::QuotedIdent(w, q) => {
                self.advance();
                self.parse_column_tail(Ident::quoted(w, q))
            }
            TokenKind::Symbol("(") => {
                self.advance();
                if self.is_keyword("SELECT") {
                    let q = self.parse_query()?;
                    self.expect_symbol(")")?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let e = self.parse_expr()?;
                if self.is_symbol(",") {
                    return Err(self.unsupported_here("row value"));
                }
                self.expect_symbol(")")?;
                Ok(e)
            }
            TokenKind::Symbol("*") => Err(self.expected("expression")),
            TokenKind::Word(w) => {
                let upper = w.to_ascii_uppercase();
                match upper.as_str() {
                    "NULL" => {
                        self.advance();
                        Ok(Expr::Literal(Literal::Null))
                    }
                    "TRUE" | "FALSE" if !matches!(self.peek_at(1).kind, TokenKind::Symbol(".")) => {
                        self.advance();
                        Ok(Expr::Literal(Literal::Boolean(upper == "TRUE")))
                    }
                    "NOT" if self.is_keyword_at(1, "EXISTS") => {
                        self.advance();
                        self.advance();
                        self.parse_exists(true)
                    }
                    "EXISTS" => {
                        self.advance();
                        self.parse_exists(false)
                    }
                    "CASE" => {
                        self.advance();
                        self.parse_case()
                    }
                    "CAST" if matches!(self.peek_at(1).kind, TokenKind::Symbol("(")) => {
                        self.advance();
                        self.advance();
                        let expr = self.parse_expr()?;
                        self.expect_keyword("AS")?;
                        let mut parts = Vec::new();
                        while let TokenKind::Word(t) = &self.peek().kind {
                            parts.push(t.to_ascii_uppercase());
                            self.advance();
                        }
                        if parts.is_empty() {
                            return Err(self.expected("type name"));
                        }
                        let mut data_type = parts.join(" ");
                        if self.eat_symbol("(") {
                            let mut args = vec![self.parse_unsigned()?.to_string()];
                            while self.eat_symbol(",") {
                                args.push(self.parse_unsigned()?.to_string());
                            }
                            self.expect_symbol(")")?;
                            data_type = format!("{data_type}({})", args.join(", "));
                        }
                        self.expect_symbol(")")?;
                        Ok(Expr::Cast {
                            expr: Box::new(expr),
                            data_type,
                        })
                    }
                    "SELECT" => Err(self.unsupported_here("unparenthesized subquery")),
                    _ if Self::reserved(&w) => Err(self.expected("expression")),
                    _ => {
                        self.advance();
                        if self.is_symbol("(") {
                            return self.parse_function(upper);
                        }
                        self.parse_column_tail(Ident::new(w))
                    }
                }
            }
            _ => Err(self.expected("expression")),
        }
    }

    fn parse_exists(&mut self, negated: bool) -> Result<Expr, ParseError> {
        self.expect_symbol("(")?;
        let q = self.parse_query()?;
        self.expect_symbol(")")?;
        Ok(Expr::Exists {
            subquery: Box::new(q),
            negated,
        })
    }

    fn parse_case(&mut self) -> Result<Expr, ParseError> {
        let operand = if self.is_keyword("WHEN") {
            None
        } else {
            Some(Box::new(self.parse_expr()?))
        };
        let mut branches = Vec::new();
        while self.eat_keyword("WHEN") {
            let cond = self.parse_expr()?;
            self.expect_keyword("THEN")?;
            let res = self.parse_expr()?;
            branches.push((cond, res));
        }
        if branches.is_empty() {
            return Err(self.expected("WHEN"));
        }
        let else_result = if self.eat_keyword("ELSE") {
            Some(Box::new(self.parse_expr()?))
        } else {
            None
        };
        self.expect_keyword("END")?;
        Ok(Expr::Case {
            operand,
            branches,
            else_result,
        })
    }

    fn parse_function(&mut self, name: String) -> Result<Expr, ParseError> {
        self.expect_symbol("(")?;
        let mut distinct = false;
        let mut args = Vec::new();
        if self.eat_symbol("*") {
            args.push(Expr::Wildcard { qualifier: None });
        } else if !self.is_symbol(")") {
            distinct = self.eat_keyword("DISTINCT");
            loop {
                args.push(self.parse_expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        self.expect_symbol(")")?;
        if self.is_keyword("OVER") {
            return Err(self.unsupported_here("window function"));
        }
        if self.is_keyword("FILTER") && matches!(self.peek_at(1).kind, TokenKind::Symbol("(")) {
            return Err(self.unsupported_here("aggregate FILTER"));
        }
        Ok(Expr::Function { name, distinct, args })
    }

    /// After a first identifier: `name`, `qualifier.name` or `qualifier.*`.
    fn parse_column_tail(&mut self, first: Ident) -> Result<Expr, ParseError> {
        if !self.eat_symbol(".") {
            return Ok(Expr::Column(ColumnRef::new(None, first)));
        }
        if self.eat_symbol("*") {
            return Ok(Expr::Wildcard {
                qualifier: Some(first),
            });
        }
        let name = self.parse_ident()?;
        if self.is_symbol(".") {
            return Err(self.unsupported_here("schema-qualified column"));
        }
        Ok(Expr::Column(ColumnRef::new(Some(first), name)))
    }
}
