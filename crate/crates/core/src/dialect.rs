//! Portability audit: constructs a strict standard-SQL engine rejects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::exec::BackendError;
use crate::sql::{
    infer_affinity, parse_sql, resolve_columns, Affinity, BinaryOp, Clause, ColumnRef, DbSchema, Dialect, Expr, Ident, Literal,
    QueryPath, ResolveError, SqlAst,
};
use crate::tie_audit::{audit_query, TieCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCategory {
    SyntaxErr,
    UndefinedFunction,
    UndefinedColumn,
    OrderBy,
    GroupBy,
}

impl ViolationCategory {
    pub const ALL: [ViolationCategory; 5] = [
        ViolationCategory::SyntaxErr,
        ViolationCategory::UndefinedFunction,
        ViolationCategory::UndefinedColumn,
        ViolationCategory::OrderBy,
        ViolationCategory::GroupBy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ViolationCategory::SyntaxErr => "SyntaxErr",
            ViolationCategory::UndefinedFunction => "UndFunc",
            ViolationCategory::UndefinedColumn => "UndCol",
            ViolationCategory::OrderBy => "Order By",
            ViolationCategory::GroupBy => "Group By",
        }
    }
}

impl fmt::Display for ViolationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationSource {
    Static,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrictViolation {
    pub category: ViolationCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
    pub detail: String,
    pub source: ViolationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<QueryPath>,
}

/// Findings that strict engines treat differently but that are not
/// counted as violations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrictNote {
    pub kind: NoteKind,
    pub detail: String,
    pub location: QueryPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoteKind {
    /// Integer compared with text.
    TypeMismatch,
    /// A double-quoted literal that happens to name a column, so a strict
    /// engine silently reads the column instead.
    QuotedLiteralIsColumn,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StrictCheck {
    pub violations: Vec<StrictViolation>,
    pub notes: Vec<StrictNote>,
}

/// Functions a strict standard-SQL engine provides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCatalog {
    pub allowed: BTreeSet<String>,
}

impl Default for FunctionCatalog {
    fn default() -> Self {
        const STANDARD: &[&str] = &[
            "ABS", "AVG", "CEIL", "CEILING", "COALESCE", "CONCAT", "COUNT", "FLOOR", "LENGTH", "LOWER", "LTRIM", "MAX",
            "MIN", "MOD", "NULLIF", "POWER", "REPLACE", "ROUND", "RTRIM", "SQRT", "SUBSTR", "SUBSTRING", "SUM", "TRIM",
            "UPPER",
        ];
        Self {
            allowed: STANDARD.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FunctionCatalog {
    /// Read an allowlist: a JSON array of names, or one name per line.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let names: Vec<String> = match serde_json::from_str::<Vec<String>>(&text) {
            Ok(v) => v,
            Err(_) => text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        };
        Ok(Self {
            allowed: names.into_iter().map(|n| n.to_ascii_uppercase()).collect(),
        })
    }

    pub fn allows(&self, name: &str) -> bool {
        self.allowed.contains(&name.to_ascii_uppercase())
    }
}

fn statics(category: ViolationCategory, detail: String, location: Option<QueryPath>) -> StrictViolation {
    StrictViolation {
        category,
        example_id: None,
        detail,
        source: ViolationSource::Static,
        location,
    }
}

/// Statically find the violations a strict engine would raise for a query
/// written in the lenient benchmark dialect.
///
/// `ast` is the lenient parse; it may be unresolved, in which case it is
/// resolved here and resolution failures become UndefinedColumn.
pub fn static_strict_check(ast: &SqlAst, schema: &DbSchema, catalog: &FunctionCatalog) -> StrictCheck {
    let mut out = StrictCheck::default();
    let resolved = match resolve_columns(ast, schema) {
        Ok(r) => Some(r),
        Err(e) => {
            let category = match e {
                ResolveError::UnresolvedColumn(_) | ResolveError::UnknownTable(_) | ResolveError::SchemaMismatch { .. } => {
                    ViolationCategory::UndefinedColumn
                }
                ResolveError::AmbiguousColumn(_) => ViolationCategory::SyntaxErr,
            };
            out.violations.push(statics(category, e.to_string(), None));
            None
        }
    };
    let tree = resolved.as_ref().unwrap_or(ast);

    // Double-quoted literals become identifiers under strict rules.
    let mut quoted = ast.clone();
    let mut converted = Vec::new();
    convert_quoted_literals(&mut quoted, &mut converted);
    if !converted.is_empty() && resolved.is_some() {
        match resolve_columns(&quoted, schema) {
            Err(_) => {
                out.violations.push(statics(
                    ViolationCategory::UndefinedColumn,
                    format!("double-quoted literal(s) {} read as column names", converted.join(", ")),
                    None,
                ));
            }
            Ok(_) => out.notes.push(StrictNote {
                kind: NoteKind::QuotedLiteralIsColumn,
                detail: format!("double-quoted literal(s) {} name existing columns", converted.join(", ")),
                location: QueryPath::root(),
            }),
        }
    }

    let mut syntax = BTreeSet::new();
    let mut functions = BTreeSet::new();
    for node in tree.nodes() {
        for e in node.ast.local_exprs() {
            e.walk(&mut |x| match x {
                Expr::Column(c) => {
                    for ident in c.qualifier.iter().chain(std::iter::once(&c.name)) {
                        if matches!(ident.quote, Some('`') | Some('[')) {
                            syntax.insert((node.path.clone(), format!("non-standard quoted identifier {ident}")));
                        }
                    }
                }
                Expr::Function { name, .. } if !catalog.allows(name) => {
                    functions.insert((node.path.clone(), format!("function {} does not exist", name.to_ascii_lowercase())));
                }
                Expr::Binary {
                    op: BinaryOp::DoubleEq, ..
                } => {
                    functions.insert((node.path.clone(), "operator == does not exist".into()));
                }
                Expr::Binary { left, op, right } if op.is_comparison() => {
                    let (l, r) = (infer_affinity(left), infer_affinity(right));
                    let text = |a: Affinity| a == Affinity::Text;
                    let int = |a: Affinity| matches!(a, Affinity::Integer | Affinity::Real);
                    if (text(l) && int(r)) || (int(l) && text(r)) {
                        out.notes.push(StrictNote {
                            kind: NoteKind::TypeMismatch,
                            detail: format!("{l} compared with {r}"),
                            location: node.path.clone(),
                        });
                    }
                }
                _ => {}
            });
        }
        for (name, alias) in node.ast.base_tables() {
            for ident in std::iter::once(name).chain(alias) {
                if matches!(ident.quote, Some('`') | Some('[')) {
                    syntax.insert((node.path.clone(), format!("non-standard quoted identifier {ident}")));
                }
            }
        }
    }
    for (path, detail) in syntax {
        out.violations.push(statics(ViolationCategory::SyntaxErr, detail, Some(path)));
    }
    for (path, detail) in functions {
        out.violations.push(statics(ViolationCategory::UndefinedFunction, detail, Some(path)));
    }

    for f in audit_query(tree, schema) {
        let category = match f.category {
            TieCategory::GroupByMisuse => ViolationCategory::GroupBy,
            TieCategory::OrderByDistinct => ViolationCategory::OrderBy,
            _ => continue,
        };
        out.violations.push(statics(category, f.explanation, Some(f.location)));
    }
    out
}

fn convert_quoted_literals(q: &mut SqlAst, converted: &mut Vec<String>) {
    q.schema_id = None;
    for e in q.local_exprs_mut() {
        e.walk_mut(&mut |x| {
            if let Expr::Literal(Literal::String { value, quote: '"' }) = x {
                converted.push(format!("\"{value}\""));
                *x = Expr::Column(ColumnRef::new(None, Ident::quoted(value.clone(), '"')));
            }
        });
    }
    for clause in [Clause::Select, Clause::From, Clause::Where, Clause::GroupBy, Clause::Having, Clause::OrderBy] {
        for sub in q.clause_subqueries_mut(clause) {
            convert_quoted_literals(sub, converted);
        }
    }
    if let Some(so) = &mut q.set_op {
        convert_quoted_literals(&mut so.operand, converted);
    }
}

/// Map a strict backend's error to a category: SQLSTATE first, then
/// message patterns; anything unrecognized is a syntax error.
pub fn classify_backend_error(code: &str, message: &str) -> ViolationCategory {
    match code {
        "42601" => return ViolationCategory::SyntaxErr,
        "42883" => return ViolationCategory::UndefinedFunction,
        "42703" | "42P01" => return ViolationCategory::UndefinedColumn,
        "42803" => return ViolationCategory::GroupBy,
        "42P10" => return ViolationCategory::OrderBy,
        _ => {}
    }
    let m = message.to_ascii_lowercase();
    if m.contains("must appear in the group by clause") || m.contains("used in an aggregate function") {
        ViolationCategory::GroupBy
    } else if m.contains("order by expressions must appear in select list") {
        ViolationCategory::OrderBy
    } else if (m.contains("function") || m.contains("operator")) && m.contains("does not exist")
        || m.contains("no such function")
    {
        ViolationCategory::UndefinedFunction
    } else if (m.contains("column") || m.contains("relation")) && m.contains("does not exist")
        || m.contains("no such column")
        || m.contains("no such table")
    {
        ViolationCategory::UndefinedColumn
    } else {
        ViolationCategory::SyntaxErr
    }
}

/// A strict engine the audit can run gold queries against.
pub trait StrictBackend: Sync {
    fn check(&self, database_id: &str, sql: &str) -> Result<(), BackendError>;
}

/// Whether an error means the backend was unreachable rather than that it
/// rejected the query (SQLSTATE class 08).
pub fn is_connection_failure(e: &BackendError) -> bool {
    e.code.starts_with("08") || e.code == "CONNECTION"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// A query counts once in every category it violates.
    #[default]
    All,
    /// A query counts once, under its first category.
    Once,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub example_id: String,
    pub static_categories: Vec<ViolationCategory>,
    pub backend: Option<BackendError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortabilityReport {
    pub corpus_size: usize,
    pub unparsed: usize,
    pub mode: CountMode,
    pub counts: BTreeMap<ViolationCategory, usize>,
    pub violations: Vec<StrictViolation>,
    pub notes: BTreeMap<String, Vec<StrictNote>>,
    pub discrepancies: Vec<Discrepancy>,
    pub backend_failures: Vec<(String, String)>,
}

impl PortabilityReport {
    /// Aligned plain-text table.
    pub fn render(&self, name: &str) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}", "");
        for c in ViolationCategory::ALL {
            let _ = write!(s, "{:>10}", c.label());
        }
        s.push('\n');
        let _ = write!(s, "{name:<12}");
        for c in ViolationCategory::ALL {
            let _ = write!(s, "{:>10}", self.counts.get(&c).copied().unwrap_or(0));
        }
        s.push('\n');
        s
    }
}

/// Per-category violation counts over a corpus, optionally reconciled with
/// a strict backend: when attached, a rejection adds the backend's category
/// and an acceptance clears the static findings; both disagreements are
/// kept as discrepancy records.
pub fn portability_report(
    corpus: &Corpus,
    backend: Option<&dyn StrictBackend>,
    catalog: &FunctionCatalog,
    mode: CountMode,
) -> PortabilityReport {
    use rayon::prelude::*;

    struct PerQuery {
        id: String,
        parsed: bool,
        check: StrictCheck,
        backend: Option<Result<(), BackendError>>,
    }
    let per: Vec<PerQuery> = corpus
        .examples
        .par_iter()
        .map(|ex| {
            let Some(schema) = corpus.schemas.get(&ex.database_id) else {
                return PerQuery {
                    id: ex.example_id.clone(),
                    parsed: false,
                    check: StrictCheck::default(),
                    backend: None,
                };
            };
            match parse_sql(&ex.gold_sql, Dialect::BenchmarkLenient) {
                Err(_) => PerQuery {
                    id: ex.example_id.clone(),
                    parsed: false,
                    check: StrictCheck::default(),
                    backend: None,
                },
                Ok(ast) => PerQuery {
                    id: ex.example_id.clone(),
                    parsed: true,
                    check: static_strict_check(&ast, schema, catalog),
                    backend: backend.map(|b| b.check(&ex.database_id, &ex.gold_sql)),
                },
            }
        })
        .collect();

    let mut report = PortabilityReport {
        corpus_size: corpus.examples.len(),
        unparsed: 0,
        mode,
        counts: ViolationCategory::ALL.iter().map(|c| (*c, 0)).collect(),
        violations: Vec::new(),
        notes: BTreeMap::new(),
        discrepancies: Vec::new(),
        backend_failures: Vec::new(),
    };
    for q in per {
        if !q.parsed {
            report.unparsed += 1;
            continue;
        }
        let mut violations: Vec<StrictViolation> = q
            .check
            .violations
            .into_iter()
            .map(|mut v| {
                v.example_id = Some(q.id.clone());
                v
            })
            .collect();
        let static_categories: Vec<ViolationCategory> = {
            let set: BTreeSet<_> = violations.iter().map(|v| v.category).collect();
            set.into_iter().collect()
        };
        match q.backend {
            Some(Err(e)) if is_connection_failure(&e) => {
                report.backend_failures.push((q.id.clone(), e.to_string()));
            }
            Some(Err(e)) => {
                if !static_categories.contains(&e.category) {
                    report.discrepancies.push(Discrepancy {
                        example_id: q.id.clone(),
                        static_categories: static_categories.clone(),
                        backend: Some(e.clone()),
                    });
                }
                violations.insert(
                    0,
                    StrictViolation {
                        category: e.category,
                        example_id: Some(q.id.clone()),
                        detail: e.to_string(),
                        source: ViolationSource::Backend,
                        location: None,
                    },
                );
            }
            Some(Ok(())) => {
                if !static_categories.is_empty() {
                    report.discrepancies.push(Discrepancy {
                        example_id: q.id.clone(),
                        static_categories: static_categories.clone(),
                        backend: None,
                    });
                }
                violations.clear();
            }
            None => {}
        }
        let mut categories: Vec<ViolationCategory> = Vec::new();
        for v in &violations {
            if !categories.contains(&v.category) {
                categories.push(v.category);
            }
        }
        if mode == CountMode::Once {
            categories.truncate(1);
        }
        for c in categories {
            *report.counts.entry(c).or_default() += 1;
        }
        if !q.check.notes.is_empty() {
            report.notes.insert(q.id.clone(), q.check.notes);
        }
        report.violations.extend(violations);
    }
    report
}
