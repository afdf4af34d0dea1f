//! Normalized syntax tree for the read-only SELECT subset used by
//! text-to-SQL benchmark gold queries.
//!
//! Keywords are normalized at parse time; identifiers and literals keep the
//! text they were written with so that printing is faithful.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::Affinity;

/// An identifier together with the quote character it was written with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ident {
    pub value: String,
    pub quote: Option<char>,
}

impl Ident {
    pub fn new(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            quote: None,
        }
    }

    pub fn quoted(value: impl Into<String>, quote: char) -> Self {
        Self {
            value: value.into(),
            quote: Some(quote),
        }
    }

    /// Case-insensitive comparison, the way SQLite compares identifiers.
    pub fn matches(&self, other: &str) -> bool {
        self.value.eq_ignore_ascii_case(other)
    }

    pub fn normalized(&self) -> String {
        self.value.to_ascii_lowercase()
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.quote {
            None => f.write_str(&self.value),
            Some('[') => write!(f, "[{}]", self.value),
            Some(q) => {
                let escaped = self.value.replace(q, &format!("{q}{q}"));
                write!(f, "{q}{escaped}{q}")
            }
        }
    }
}

/// One SELECT statement: a query core plus an optional chained set operation.
///
/// For `A UNION B ORDER BY x`, the trailing ORDER BY is stored on `B`, the
/// last operand of the chain; it still applies to the whole compound.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SqlAst {
    pub distinct: bool,
    pub select: Vec<SelectItem>,
    pub from: Vec<TableWithJoins>,
    pub where_clause: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<Limit>,
    pub set_op: Option<SetOperation>,
    /// Database id this tree was resolved against, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectItem {
    pub expr: Expr,
    pub alias: Option<Ident>,
    /// True iff `expr` contains an aggregate call outside nested subqueries.
    pub aggregated: bool,
}

impl SelectItem {
    pub fn new(expr: Expr, alias: Option<Ident>) -> Self {
        let aggregated = expr.contains_aggregate();
        Self {
            expr,
            alias,
            aggregated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableWithJoins {
    pub relation: TableFactor,
    pub joins: Vec<Join>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TableFactor {
    Table { name: Ident, alias: Option<Ident> },
    Derived { subquery: Box<SqlAst>, alias: Option<Ident> },
}

impl TableFactor {
    /// Name the relation is visible under inside the query.
    pub fn binding_name(&self) -> Option<&Ident> {
        match self {
            TableFactor::Table { name, alias } => Some(alias.as_ref().unwrap_or(name)),
            TableFactor::Derived { alias, .. } => alias.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinKind {
    Inner,
    Left,
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Join {
    pub kind: JoinKind,
    pub relation: TableFactor,
    pub on: Option<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderItem {
    pub expr: Expr,
    pub direction: Direction,
    /// Whether ASC was spelled out; kept so printing is faithful.
    pub explicit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limit {
    pub count: u64,
    pub offset: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetOperator {
    Union,
    UnionAll,
    Intersect,
    Except,
}

impl SetOperator {
    pub fn keyword(self) -> &'static str {
        match self {
            SetOperator::Union => "UNION",
            SetOperator::UnionAll => "UNION ALL",
            SetOperator::Intersect => "INTERSECT",
            SetOperator::Except => "EXCEPT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetOperation {
    pub op: SetOperator,
    pub operand: Box<SqlAst>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRef {
    pub qualifier: Option<Ident>,
    pub name: Ident,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<Resolution>,
}

impl ColumnRef {
    pub fn new(qualifier: Option<Ident>, name: Ident) -> Self {
        Self {
            qualifier,
            name,
            resolved: None,
        }
    }

    pub fn resolved_column(&self) -> Option<&ResolvedColumn> {
        match &self.resolved {
            Some(Resolution::Column(c)) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Resolution {
    Column(ResolvedColumn),
    /// Reference to an output column alias of the enclosing SELECT list.
    SelectAlias { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolvedColumn {
    /// Base table name, or the derived-table alias for subquery columns.
    pub table: String,
    pub column: String,
    pub affinity: Affinity,
    /// Number of query scopes between the reference and its binding; 0 for
    /// a local column, > 0 for a correlated outer reference.
    pub outer_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    /// Numeric literal as written.
    Number(String),
    /// String literal content (unescaped) and its quote character.
    String { value: String, quote: char },
    Null,
    Boolean(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Not,
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    /// SQLite's `==` spelling of equality.
    DoubleEq,
    NotEq,
    /// `<>` spelling of inequality.
    LtGt,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Plus,
    Minus,
    Multiply,
    Divide,
    Modulo,
    Concat,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::DoubleEq => "==",
            BinaryOp::NotEq => "!=",
            BinaryOp::LtGt => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Plus => "+",
            BinaryOp::Minus => "-",
            BinaryOp::Multiply => "*",
            BinaryOp::Divide => "/",
            BinaryOp::Modulo => "%",
            BinaryOp::Concat => "||",
        }
    }

    /// Binding strength; higher binds tighter. Shared by parser and printer.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq | BinaryOp::DoubleEq | BinaryOp::NotEq | BinaryOp::LtGt => 4,
            BinaryOp::Lt | BinaryOp::LtEq | BinaryOp::Gt | BinaryOp::GtEq => 5,
            BinaryOp::Plus | BinaryOp::Minus => 6,
            BinaryOp::Multiply | BinaryOp::Divide | BinaryOp::Modulo => 7,
            BinaryOp::Concat => 8,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self.precedence(), 4 | 5)
    }
}

/// Precedence of NOT prefix and of the postfix predicates (IS, IN, LIKE,
/// BETWEEN), expressed on the same scale as [`BinaryOp::precedence`].
pub const NOT_PRECEDENCE: u8 = 3;
pub const PREDICATE_PRECEDENCE: u8 = 4;
pub const UNARY_PRECEDENCE: u8 = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Column(ColumnRef),
    /// `*` or `qualifier.*`.
    Wildcard { qualifier: Option<Ident> },
    Literal(Literal),
    Unary { op: UnaryOp, expr: Box<Expr> },
    Binary { left: Box<Expr>, op: BinaryOp, right: Box<Expr> },
    /// Function call; `name` is upper-cased.
    Function { name: String, distinct: bool, args: Vec<Expr> },
    Cast { expr: Box<Expr>, data_type: String },
    Case {
        operand: Option<Box<Expr>>,
        branches: Vec<(Expr, Expr)>,
        else_result: Option<Box<Expr>>,
    },
    IsNull { expr: Box<Expr>, negated: bool },
    InList { expr: Box<Expr>, list: Vec<Expr>, negated: bool },
    InSubquery { expr: Box<Expr>, subquery: Box<SqlAst>, negated: bool },
    Between { expr: Box<Expr>, low: Box<Expr>, high: Box<Expr>, negated: bool },
    Like { expr: Box<Expr>, pattern: Box<Expr>, negated: bool },
    Exists { subquery: Box<SqlAst>, negated: bool },
    Subquery(Box<SqlAst>),
}

pub const AGGREGATE_FUNCTIONS: &[&str] = &["MIN", "MAX", "COUNT", "SUM", "AVG", "TOTAL", "GROUP_CONCAT"];

pub fn is_aggregate_name(name: &str) -> bool {
    AGGREGATE_FUNCTIONS.iter().any(|a| a.eq_ignore_ascii_case(name))
}

/// How a subquery is embedded in its parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubqueryKind {
    Scalar,
    In,
    Exists,
    Derived,
}

impl Expr {
    pub fn column(name: &str) -> Expr {
        Expr::Column(ColumnRef::new(None, Ident::new(name)))
    }

    pub fn binary(left: Expr, op: BinaryOp, right: Expr) -> Expr {
        Expr::Binary {
            left: Box::new(left),
            op,
            right: Box::new(right),
        }
    }

    pub fn function(name: &str, args: Vec<Expr>) -> Expr {
        Expr::Function {
            name: name.to_ascii_uppercase(),
            distinct: false,
            args,
        }
    }

    pub fn and(self, other: Expr) -> Expr {
        Expr::binary(self, BinaryOp::And, other)
    }

    /// Immediate children that are expressions (not descending into subqueries).
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Column(_) | Expr::Wildcard { .. } | Expr::Literal(_) => vec![],
            Expr::Unary { expr, .. } | Expr::Cast { expr, .. } | Expr::IsNull { expr, .. } => vec![expr],
            Expr::Binary { left, right, .. } => vec![left, right],
            Expr::Function { args, .. } => args.iter().collect(),
            Expr::Case {
                operand,
                branches,
                else_result,
            } => {
                let mut out: Vec<&Expr> = Vec::new();
                if let Some(o) = operand {
                    out.push(o);
                }
                for (w, t) in branches {
                    out.push(w);
                    out.push(t);
                }
                if let Some(e) = else_result {
                    out.push(e);
                }
                out
            }
            Expr::InList { expr, list, .. } => {
                let mut out: Vec<&Expr> = vec![expr];
                out.extend(list.iter());
                out
            }
            Expr::InSubquery { expr, .. } => vec![expr],
            Expr::Between { expr, low, high, .. } => vec![expr, low, high],
            Expr::Like { expr, pattern, .. } => vec![expr, pattern],
            Expr::Exists { .. } | Expr::Subquery(_) => vec![],
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Expr> {
        match self {
            Expr::Column(_) | Expr::Wildcard { .. } | Expr::Literal(_) => vec![],
            Expr::Unary { expr, .. } | Expr::Cast { expr, .. } | Expr::IsNull { expr, .. } => vec![expr],
            Expr::Binary { left, right, .. } => vec![left, right],
            Expr::Function { args, .. } => args.iter_mut().collect(),
            Expr::Case {
                operand,
                branches,
                else_result,
            } => {
                let mut out: Vec<&mut Expr> = Vec::new();
                if let Some(o) = operand {
                    out.push(o);
                }
                for (w, t) in branches {
                    out.push(w);
                    out.push(t);
                }
                if let Some(e) = else_result {
                    out.push(e);
                }
                out
            }
            Expr::InList { expr, list, .. } => {
                let mut out: Vec<&mut Expr> = vec![expr];
                out.extend(list.iter_mut());
                out
            }
            Expr::InSubquery { expr, .. } => vec![expr],
            Expr::Between { expr, low, high, .. } => vec![expr, low, high],
            Expr::Like { expr, pattern, .. } => vec![expr, pattern],
            Expr::Exists { .. } | Expr::Subquery(_) => vec![],
        }
    }

    /// Subqueries directly embedded in this expression, in textual order.
    pub fn subqueries(&self) -> Vec<(&SqlAst, SubqueryKind)> {
        let mut out = Vec::new();
        self.collect_subqueries(&mut out);
        out
    }

    fn collect_subqueries<'a>(&'a self, out: &mut Vec<(&'a SqlAst, SubqueryKind)>) {
        match self {
            Expr::InSubquery { expr, subquery, .. } => {
                expr.collect_subqueries(out);
                out.push((subquery, SubqueryKind::In));
            }
            Expr::Exists { subquery, .. } => out.push((subquery, SubqueryKind::Exists)),
            Expr::Subquery(q) => out.push((q, SubqueryKind::Scalar)),
            other => {
                for c in other.children() {
                    c.collect_subqueries(out);
                }
            }
        }
    }

    pub fn subqueries_mut(&mut self) -> Vec<&mut SqlAst> {
        let mut out = Vec::new();
        self.collect_subqueries_mut(&mut out);
        out
    }

    fn collect_subqueries_mut<'a>(&'a mut self, out: &mut Vec<&'a mut SqlAst>) {
        match self {
            Expr::InSubquery { expr, subquery, .. } => {
                expr.collect_subqueries_mut(out);
                out.push(subquery);
            }
            Expr::Exists { subquery, .. } => out.push(subquery),
            Expr::Subquery(q) => out.push(q),
            other => {
                for c in other.children_mut() {
                    c.collect_subqueries_mut(out);
                }
            }
        }
    }

    /// True if an aggregate call appears in this expression (not counting
    /// aggregates inside nested subqueries, which form their own scope).
    pub fn contains_aggregate(&self) -> bool {
        match self {
            Expr::Function { name, .. } if is_aggregate_name(name) => true,
            other => other.children().into_iter().any(Expr::contains_aggregate),
        }
    }

    /// Visit every column reference outside aggregate arguments and outside
    /// subqueries ("bare" columns).
    pub fn bare_columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.collect_bare(&mut out);
        out
    }

    fn collect_bare<'a>(&'a self, out: &mut Vec<&'a ColumnRef>) {
        match self {
            Expr::Column(c) => out.push(c),
            Expr::Function { name, .. } if is_aggregate_name(name) => {}
            other => {
                for c in other.children() {
                    c.collect_bare(out);
                }
            }
        }
    }

    /// All column references outside subqueries, including aggregate args.
    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a ColumnRef>) {
        match self {
            Expr::Column(c) => out.push(c),
            other => {
                for c in other.children() {
                    c.collect_columns(out);
                }
            }
        }
    }

    /// Visit every expression node (pre-order), not descending into subqueries.
    pub fn walk(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        for c in self.children_mut() {
            c.walk_mut(f);
        }
    }

    /// Split a tree of ANDs into its conjuncts.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::Binary {
                left,
                op: BinaryOp::And,
                right,
            } => {
                let mut out = left.conjuncts();
                out.extend(right.conjuncts());
                out
            }
            other => vec![other],
        }
    }
}

/// A clause of a query core; used to address subqueries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Clause {
    Select,
    From,
    Where,
    GroupBy,
    Having,
    OrderBy,
    SetOp,
}

impl Clause {
    pub fn name(self) -> &'static str {
        match self {
            Clause::Select => "select",
            Clause::From => "from",
            Clause::Where => "where",
            Clause::GroupBy => "groupBy",
            Clause::Having => "having",
            Clause::OrderBy => "orderBy",
            Clause::SetOp => "setOp",
        }
    }
}

/// One step from a query node to one of its nested query nodes: the clause
/// and the ordinal of the subquery within that clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathStep {
    pub clause: Clause,
    pub index: usize,
}

/// Location of a query node inside a statement; empty means the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct QueryPath(pub Vec<PathStep>);

impl QueryPath {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn child(&self, clause: Clause, index: usize) -> Self {
        let mut steps = self.0.clone();
        steps.push(PathStep { clause, index });
        Self(steps)
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Depth in query nesting; set-operation operands do not add depth.
    pub fn nesting(&self) -> usize {
        self.0.iter().filter(|s| s.clause != Clause::SetOp).count()
    }
}

impl fmt::Display for QueryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("root")?;
        for s in &self.0 {
            if s.clause == Clause::SetOp {
                f.write_str("/setOp")?;
            } else {
                write!(f, "/{}#{}", s.clause.name(), s.index)?;
            }
        }
        Ok(())
    }
}

impl From<QueryPath> for String {
    fn from(p: QueryPath) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for QueryPath {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        let mut parts = s.split('/');
        if parts.next() != Some("root") {
            return Err(format!("query path must start with root: {s}"));
        }
        let mut steps = Vec::new();
        for part in parts {
            if part == "setOp" {
                steps.push(PathStep {
                    clause: Clause::SetOp,
                    index: 0,
                });
                continue;
            }
            let (name, index) = part.split_once('#').ok_or_else(|| format!("bad path step {part}"))?;
            let clause = [
                Clause::Select,
                Clause::From,
                Clause::Where,
                Clause::GroupBy,
                Clause::Having,
                Clause::OrderBy,
            ]
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| format!("unknown clause {name}"))?;
            let index = index.parse().map_err(|_| format!("bad index in {part}"))?;
            steps.push(PathStep { clause, index });
        }
        Ok(QueryPath(steps))
    }
}

/// How a query node sits in its statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeContext {
    Root,
    /// Right operand of a set operation.
    SetOperand,
    Subquery(SubqueryKind),
}

/// A query node reached by [`SqlAst::nodes`].
#[derive(Debug, Clone)]
pub struct QueryNode<'a> {
    pub path: QueryPath,
    pub ast: &'a SqlAst,
    pub context: NodeContext,
    /// True when this node is the last operand of a compound of two or more
    /// operands, so its ORDER BY / LIMIT bind to the whole compound.
    pub compound_tail: bool,
}

impl SqlAst {
    pub fn is_compound(&self) -> bool {
        self.set_op.is_some()
    }

    /// The query core without its set operation.
    pub fn core(&self) -> SqlAst {
        SqlAst {
            set_op: None,
            ..self.clone()
        }
    }

    /// Subqueries embedded in one clause of this node, in textual order.
    pub fn clause_subqueries(&self, clause: Clause) -> Vec<(&SqlAst, SubqueryKind)> {
        let mut out = Vec::new();
        match clause {
            Clause::Select => {
                for item in &self.select {
                    out.extend(item.expr.subqueries());
                }
            }
            Clause::From => {
                for twj in &self.from {
                    if let TableFactor::Derived { subquery, .. } = &twj.relation {
                        out.push((&**subquery, SubqueryKind::Derived));
                    }
                    for j in &twj.joins {
                        if let TableFactor::Derived { subquery, .. } = &j.relation {
                            out.push((&**subquery, SubqueryKind::Derived));
                        }
                        if let Some(on) = &j.on {
                            out.extend(on.subqueries());
                        }
                    }
                }
            }
            Clause::Where => {
                if let Some(w) = &self.where_clause {
                    out.extend(w.subqueries());
                }
            }
            Clause::GroupBy => {
                for g in &self.group_by {
                    out.extend(g.subqueries());
                }
            }
            Clause::Having => {
                if let Some(h) = &self.having {
                    out.extend(h.subqueries());
                }
            }
            Clause::OrderBy => {
                for o in &self.order_by {
                    out.extend(o.expr.subqueries());
                }
            }
            Clause::SetOp => {}
        }
        out
    }

    pub fn clause_subqueries_mut(&mut self, clause: Clause) -> Vec<&mut SqlAst> {
        let mut out: Vec<&mut SqlAst> = Vec::new();
        match clause {
            Clause::Select => {
                for item in &mut self.select {
                    out.extend(item.expr.subqueries_mut());
                }
            }
            Clause::From => {
                for twj in &mut self.from {
                    if let TableFactor::Derived { subquery, .. } = &mut twj.relation {
                        out.push(subquery);
                    }
                    for j in &mut twj.joins {
                        if let TableFactor::Derived { subquery, .. } = &mut j.relation {
                            out.push(subquery);
                        }
                        if let Some(on) = &mut j.on {
                            out.extend(on.subqueries_mut());
                        }
                    }
                }
            }
            Clause::Where => {
                if let Some(w) = &mut self.where_clause {
                    out.extend(w.subqueries_mut());
                }
            }
            Clause::GroupBy => {
                for g in &mut self.group_by {
                    out.extend(g.subqueries_mut());
                }
            }
            Clause::Having => {
                if let Some(h) = &mut self.having {
                    out.extend(h.subqueries_mut());
                }
            }
            Clause::OrderBy => {
                for o in &mut self.order_by {
                    out.extend(o.expr.subqueries_mut());
                }
            }
            Clause::SetOp => {}
        }
        out
    }

    const SUBQUERY_CLAUSES: [Clause; 6] = [
        Clause::Select,
        Clause::From,
        Clause::Where,
        Clause::GroupBy,
        Clause::Having,
        Clause::OrderBy,
    ];

    /// Every query node of the statement in pre-order: this node, its
    /// subqueries clause by clause, then the set-operation operand.
    pub fn nodes(&self) -> Vec<QueryNode<'_>> {
        let mut out = Vec::new();
        self.collect_nodes(QueryPath::root(), NodeContext::Root, false, &mut out);
        out
    }

    fn collect_nodes<'a>(&'a self, path: QueryPath, context: NodeContext, in_chain: bool, out: &mut Vec<QueryNode<'a>>) {
        out.push(QueryNode {
            path: path.clone(),
            ast: self,
            context,
            compound_tail: in_chain && self.set_op.is_none(),
        });
        for clause in Self::SUBQUERY_CLAUSES {
            for (i, (sub, kind)) in self.clause_subqueries(clause).into_iter().enumerate() {
                sub.collect_nodes(path.child(clause, i), NodeContext::Subquery(kind), false, out);
            }
        }
        if let Some(so) = &self.set_op {
            so.operand
                .collect_nodes(path.child(Clause::SetOp, 0), NodeContext::SetOperand, true, out);
        }
    }

    pub fn node_at(&self, path: &QueryPath) -> Option<&SqlAst> {
        let mut cur = self;
        for step in &path.0 {
            cur = if step.clause == Clause::SetOp {
                &cur.set_op.as_ref()?.operand
            } else {
                cur.clause_subqueries(step.clause).into_iter().nth(step.index)?.0
            };
        }
        Some(cur)
    }

    pub fn node_at_mut(&mut self, path: &QueryPath) -> Option<&mut SqlAst> {
        let mut cur = self;
        for step in &path.0 {
            cur = if step.clause == Clause::SetOp {
                &mut cur.set_op.as_mut()?.operand
            } else {
                cur.clause_subqueries_mut(step.clause).into_iter().nth(step.index)?
            };
        }
        Some(cur)
    }

    /// Every expression owned directly by this node (not by subqueries).
    pub fn local_exprs(&self) -> Vec<&Expr> {
        let mut out: Vec<&Expr> = self.select.iter().map(|s| &s.expr).collect();
        for twj in &self.from {
            for j in &twj.joins {
                if let Some(on) = &j.on {
                    out.push(on);
                }
            }
        }
        out.extend(self.where_clause.iter());
        out.extend(self.group_by.iter());
        out.extend(self.having.iter());
        out.extend(self.order_by.iter().map(|o| &o.expr));
        out
    }

    pub fn local_exprs_mut(&mut self) -> Vec<&mut Expr> {
        let mut out: Vec<&mut Expr> = self.select.iter_mut().map(|s| &mut s.expr).collect();
        for twj in &mut self.from {
            for j in &mut twj.joins {
                if let Some(on) = &mut j.on {
                    out.push(on);
                }
            }
        }
        out.extend(self.where_clause.iter_mut());
        out.extend(self.group_by.iter_mut());
        out.extend(self.having.iter_mut());
        out.extend(self.order_by.iter_mut().map(|o| &mut o.expr));
        out
    }

    /// Recompute the aggregated flag of every select item in the statement.
    pub fn refresh_aggregate_flags(&mut self) {
        for item in &mut self.select {
            item.aggregated = item.expr.contains_aggregate();
        }
        for clause in Self::SUBQUERY_CLAUSES {
            for sub in self.clause_subqueries_mut(clause) {
                sub.refresh_aggregate_flags();
            }
        }
        if let Some(so) = &mut self.set_op {
            so.operand.refresh_aggregate_flags();
        }
    }

    /// Base tables referenced in this node's FROM clause (not subqueries).
    pub fn base_tables(&self) -> Vec<(&Ident, Option<&Ident>)> {
        let mut out = Vec::new();
        for twj in &self.from {
            let factors = std::iter::once(&twj.relation).chain(twj.joins.iter().map(|j| &j.relation));
            for f in factors {
                if let TableFactor::Table { name, alias } = f {
                    out.push((name, alias.as_ref()));
                }
            }
        }
        out
    }

    /// True if this node has a (resolved) column reference that binds
    /// outside the node, i.e. the node is correlated with an enclosing query.
    /// Unresolved references are reported as potentially escaping.
    pub fn references_outer_scope(&self) -> bool {
        self.escapes(0)
    }

    fn escapes(&self, level: usize) -> bool {
        let local = self.local_exprs().into_iter().any(|e| {
            let mut found = false;
            e.walk(&mut |x| {
                if let Expr::Column(c) = x {
                    match &c.resolved {
                        Some(Resolution::Column(r)) if r.outer_depth > level => found = true,
                        None => found = true,
                        _ => {}
                    }
                }
            });
            found
        });
        if local {
            return true;
        }
        for clause in Self::SUBQUERY_CLAUSES {
            for (sub, _) in self.clause_subqueries(clause) {
                if sub.escapes(level + 1) {
                    return true;
                }
            }
        }
        match &self.set_op {
            Some(so) => so.operand.escapes(level),
            None => false,
        }
    }

    /// The select expression an ORDER BY / GROUP BY term designates, following
    /// ordinal positions (`ORDER BY 2`) and output aliases.
    pub fn designated_select_item(&self, expr: &Expr) -> Option<usize> {
        match expr {
            Expr::Literal(Literal::Number(n)) => {
                let pos: usize = n.parse().ok()?;
                (pos >= 1 && pos <= self.select.len()).then(|| pos - 1)
            }
            Expr::Column(c) => match &c.resolved {
                Some(Resolution::SelectAlias { index }) => Some(*index),
                None if c.qualifier.is_none() => self.select.iter().position(|s| {
                    s.alias.as_ref().is_some_and(|a| a.matches(&c.name.value))
                        && !matches!(&s.expr, Expr::Column(inner) if inner.name.matches(&c.name.value))
                }),
                _ => None,
            },
            _ => None,
        }
    }

    /// Expand an ORDER BY / GROUP BY term to the expression it denotes.
    pub fn expand_term(&self, expr: &Expr) -> Expr {
        match self.designated_select_item(expr) {
            Some(i) => self.select[i].expr.clone(),
            None => expr.clone(),
        }
    }
}
