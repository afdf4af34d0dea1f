//! Benchmark corpus ingestion: examples, schemas, database files and
//! prediction files, plus corpus-level tie statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::instance::{schema_from_sqlite, DbInstance, InstanceError};
use crate::sql::{parse_sql, resolve_columns, Affinity, Column, DbSchema, Dialect, ForeignKey, SqlAst, SqlError, Table};
use crate::tie_audit::{audit_query, TieCategory, TieFinding};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("no schema for database {0}")]
    MissingSchema(String),
    #[error("malformed example at index {index}: {reason}")]
    MalformedExample { index: usize, reason: String },
    #[error("malformed schema file {path}: {reason}")]
    MalformedSchema { path: PathBuf, reason: String },
    #[error("malformed prediction file {path}: {reason}")]
    MalformedPredictions { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkExample {
    pub example_id: String,
    pub question: String,
    pub database_id: String,
    pub gold_sql: String,
}

/// Which JSON fields of an examples file hold each example attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    /// Field holding a stable id; when absent the array index is used.
    pub id: Option<String>,
    pub question: String,
    pub sql: String,
    pub database_id: String,
}

impl FieldMapping {
    pub fn spider() -> Self {
        Self {
            id: None,
            question: "question".into(),
            sql: "query".into(),
            database_id: "db_id".into(),
        }
    }

    pub fn bird() -> Self {
        Self {
            id: Some("question_id".into()),
            question: "question".into(),
            sql: "SQL".into(),
            database_id: "db_id".into(),
        }
    }

    pub fn native() -> Self {
        Self {
            id: Some("example_id".into()),
            question: "question".into(),
            sql: "gold_sql".into(),
            database_id: "database_id".into(),
        }
    }

    /// Pick a preset from the keys of the first example.
    pub fn detect(first: Option<&Json>) -> Self {
        let has = |k: &str| first.and_then(|f| f.get(k)).is_some();
        if has("gold_sql") {
            Self::native()
        } else if has("SQL") {
            Self::bird()
        } else {
            Self::spider()
        }
    }
}

/// Where the rows of a database live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "snake_case")]
pub enum DatabaseSource {
    Sqlite(PathBuf),
    CsvDir(PathBuf),
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub examples: Vec<BenchmarkExample>,
    pub schemas: BTreeMap<String, DbSchema>,
    pub databases: BTreeMap<String, DatabaseSource>,
    pub mapping: Option<FieldMapping>,
    /// Examples as read, for writing revised gold files in the same format.
    pub raw_examples: Vec<Json>,
    /// Non-fatal oddities met while loading (dropped duplicate columns,
    /// dangling foreign keys).
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusPaths {
    pub examples: PathBuf,
    pub schemas: Option<PathBuf>,
    pub databases: Option<PathBuf>,
}

/// Load examples, schemas and database locations.
///
/// Schemas come from the schema file when given (Spider/BIRD `tables.json`
/// or a JSON array of native schemas); databases without an entry there
/// fall back to the catalog of their SQLite file. When a SQLite file exists,
/// column affinities and unique constraints are refined from its catalog.
pub fn load_corpus(paths: &CorpusPaths, mapping: Option<FieldMapping>) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(&paths.examples).map_err(io_err(&paths.examples))?;
    let json: Json = serde_json::from_str(&text).map_err(|e| CorpusError::MalformedExample {
        index: 0,
        reason: format!("not valid JSON: {e}"),
    })?;
    let Json::Array(raw) = json else {
        return Err(CorpusError::MalformedExample {
            index: 0,
            reason: "examples file must be a JSON array".into(),
        });
    };
    let mapping = mapping.unwrap_or_else(|| FieldMapping::detect(raw.first()));
    let mut examples = Vec::with_capacity(raw.len());
    for (index, obj) in raw.iter().enumerate() {
        examples.push(example_from_json(index, obj, &mapping)?);
    }

    let mut corpus = Corpus {
        examples,
        mapping: Some(mapping),
        raw_examples: raw,
        ..Corpus::default()
    };
    if let Some(schemas) = &paths.schemas {
        for schema in load_schemas(schemas, &mut corpus.warnings)? {
            corpus.schemas.insert(schema.database_id.clone(), schema);
        }
    }
    if let Some(dir) = &paths.databases {
        corpus.databases = index_databases(dir)?;
    }
    for (db, source) in &corpus.databases {
        let DatabaseSource::Sqlite(path) = source else { continue };
        match corpus.schemas.get_mut(db) {
            Some(schema) => {
                if let Ok(file_schema) = schema_from_sqlite(path, db) {
                    refine_schema(schema, &file_schema);
                }
            }
            None => {
                let schema = schema_from_sqlite(path, db)?;
                corpus.schemas.insert(db.clone(), schema);
            }
        }
    }
    for ex in &corpus.examples {
        if !corpus.schemas.contains_key(&ex.database_id) {
            return Err(CorpusError::MissingSchema(ex.database_id.clone()));
        }
    }
    Ok(corpus)
}

fn example_from_json(index: usize, obj: &Json, mapping: &FieldMapping) -> Result<BenchmarkExample, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedExample { index, reason };
    if !obj.is_object() {
        return Err(malformed("example is not a JSON object".into()));
    }
    let field = |name: &str| -> Result<String, CorpusError> {
        match obj.get(name) {
            Some(Json::String(s)) => Ok(s.clone()),
            Some(other) => Err(malformed(format!("field {name} is not a string: {other}"))),
            None => Err(malformed(format!("missing field {name}"))),
        }
    };
    let example_id = match &mapping.id {
        None => index.to_string(),
        Some(k) => match obj.get(k) {
            Some(Json::String(s)) => s.clone(),
            Some(Json::Number(n)) => n.to_string(),
            _ => index.to_string(),
        },
    };
    Ok(BenchmarkExample {
        example_id,
        question: field(&mapping.question)?,
        database_id: field(&mapping.database_id)?,
        gold_sql: field(&mapping.sql)?,
    })
}

#[derive(Deserialize)]
struct SpiderSchema {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<Json>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

/// Read a schema file in Spider/BIRD `tables.json` layout or as an array
/// of native schemas.
pub fn load_schemas(path: &Path, warnings: &mut Vec<String>) -> Result<Vec<DbSchema>, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedSchema {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let json: Json = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let Json::Array(items) = &json else {
        return Err(malformed("schema file must be a JSON array".into()));
    };
    let spider_layout = items.first().is_some_and(|f| f.get("column_names_original").is_some());
    let mut out = Vec::new();
    for item in items {
        let mut schema = if spider_layout {
            let raw: SpiderSchema = serde_json::from_value(item.clone()).map_err(|e| malformed(e.to_string()))?;
            schema_from_spider(raw, warnings).map_err(malformed)?
        } else {
            serde_json::from_value::<DbSchema>(item.clone()).map_err(|e| malformed(e.to_string()))?
        };
        let dropped = schema.prune_dangling_foreign_keys();
        if dropped > 0 {
            warnings.push(format!("{}: dropped {dropped} dangling foreign key(s)", schema.database_id));
        }
        schema
            .validate()
            .map_err(|e| malformed(format!("{}: {e}", schema.database_id)))?;
        out.push(schema);
    }
    Ok(out)
}

fn schema_from_spider(raw: SpiderSchema, warnings: &mut Vec<String>) -> Result<DbSchema, String> {
    let mut tables: Vec<Table> = raw
        .table_names_original
        .iter()
        .map(|n| Table {
            name: n.clone(),
            columns: Vec::new(),
            primary_key: Vec::new(),
            unique_constraints: Vec::new(),
            foreign_keys: Vec::new(),
        })
        .collect();
    // Column index -> (table index, column name); index 0 is the `*` entry.
    let mut columns: Vec<Option<(usize, String)>> = Vec::with_capacity(raw.column_names_original.len());
    for (i, (t, name)) in raw.column_names_original.iter().enumerate() {
        if *t < 0 {
            columns.push(None);
            continue;
        }
        let t = *t as usize;
        let table = tables.get_mut(t).ok_or_else(|| format!("{}: column {name} in unknown table {t}", raw.db_id))?;
        if table.column(name).is_some() {
            warnings.push(format!("{}: duplicate column {}.{name} dropped", raw.db_id, table.name));
            columns.push(Some((t, name.clone())));
            continue;
        }
        let declared = raw.column_types.get(i).map(String::as_str).unwrap_or("text");
        table.columns.push(Column {
            name: name.clone(),
            affinity: Affinity::from_declared(declared),
        });
        columns.push(Some((t, name.clone())));
    }
    let col = |i: usize| columns.get(i).cloned().flatten();
    let mut pk_indices = Vec::new();
    for pk in &raw.primary_keys {
        match pk {
            Json::Number(n) => pk_indices.extend(n.as_u64().map(|v| v as usize)),
            Json::Array(a) => pk_indices.extend(a.iter().filter_map(Json::as_u64).map(|v| v as usize)),
            _ => {}
        }
    }
    // Key columns listed separately for one table form a composite key.
    for i in pk_indices {
        if let Some((t, name)) = col(i) {
            if !tables[t].primary_key.contains(&name) {
                tables[t].primary_key.push(name);
            }
        }
    }
    for (from, to) in &raw.foreign_keys {
        let (Some((ft, fcol)), Some((tt, tcol))) = (col(*from), col(*to)) else {
            continue;
        };
        let foreign_table = tables[tt].name.clone();
        tables[ft].foreign_keys.push(ForeignKey {
            columns: vec![fcol],
            foreign_table,
            foreign_columns: vec![tcol],
        });
    }
    Ok(DbSchema {
        database_id: raw.db_id,
        tables,
    })
}

/// Take affinities and unique constraints from the database file's catalog.
fn refine_schema(schema: &mut DbSchema, file: &DbSchema) {
    for table in &mut schema.tables {
        let Some(ft) = file.table(&table.name) else { continue };
        for c in &mut table.columns {
            if let Some(fc) = ft.column(&c.name) {
                c.affinity = fc.affinity;
            }
        }
        for u in &ft.unique_constraints {
            if u.iter().all(|c| table.column(c).is_some()) && !table.unique_constraints.contains(u) {
                table.unique_constraints.push(u.clone());
            }
        }
    }
}

/// Find database files: `<dir>/<db>/<db>.sqlite`, `<dir>/<db>.sqlite`, or a
/// directory of CSV files `<dir>/<db>/*.csv`.
pub fn index_databases(dir: &Path) -> Result<BTreeMap<String, DatabaseSource>, CorpusError> {
    let mut out = BTreeMap::new();
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        if path.is_dir() {
            let candidates = ["sqlite", "db", "sqlite3"].map(|ext| path.join(format!("{stem}.{ext}")));
            if let Some(file) = candidates.into_iter().find(|c| c.is_file()) {
                out.insert(stem, DatabaseSource::Sqlite(file));
            } else if fs::read_dir(&path)
                .map_err(io_err(&path))?
                .filter_map(Result::ok)
                .any(|e| e.path().extension().is_some_and(|x| x == "csv"))
            {
                out.insert(stem, DatabaseSource::CsvDir(path));
            }
        } else if path.extension().is_some_and(|x| x == "sqlite" || x == "db" || x == "sqlite3") {
            out.entry(stem).or_insert(DatabaseSource::Sqlite(path));
        }
    }
    Ok(out)
}

impl Corpus {
    pub fn example(&self, id: &str) -> Option<&BenchmarkExample> {
        self.examples.iter().find(|e| e.example_id == id)
    }

    pub fn schema_for(&self, ex: &BenchmarkExample) -> &DbSchema {
        &self.schemas[&ex.database_id]
    }

    /// The loaded database of `database_id`, if its file was indexed.
    pub fn instance(&self, database_id: &str) -> Result<Option<DbInstance>, CorpusError> {
        let Some(schema) = self.schemas.get(database_id) else {
            return Err(CorpusError::MissingSchema(database_id.to_string()));
        };
        Ok(match self.databases.get(database_id) {
            None => None,
            Some(DatabaseSource::Sqlite(path)) => Some(DbInstance::from_sqlite_file(schema.clone(), path)),
            Some(DatabaseSource::CsvDir(dir)) => Some(DbInstance::from_csv_dir(schema.clone(), dir)?),
        })
    }

    /// Parse and resolve every gold query, in corpus order.
    pub fn parse_gold(&self) -> Vec<ParsedExample> {
        self.examples
            .par_iter()
            .map(|ex| {
                let schema = self.schema_for(ex);
                ParsedExample {
                    example_id: ex.example_id.clone(),
                    result: parse_gold_sql(&ex.gold_sql, schema),
                }
            })
            .collect()
    }

    /// Examples re-serialized in the input format with some gold queries
    /// replaced.
    pub fn export_examples(&self, replacements: &BTreeMap<String, String>) -> Json {
        let mapping = self.mapping.clone().unwrap_or_else(FieldMapping::native);
        let items = self
            .examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut obj = self.raw_examples.get(i).cloned().unwrap_or_else(|| {
                    serde_json::to_value(ex).expect("examples serialize")
                });
                if let Some(sql) = replacements.get(&ex.example_id) {
                    obj[mapping.sql.as_str()] = Json::String(sql.clone());
                }
                obj
            })
            .collect();
        Json::Array(items)
    }
}

/// Outcome of parsing one gold query.
#[derive(Debug, Clone)]
pub enum GoldParse {
    Resolved(SqlAst),
    /// Parsed, but columns did not resolve; kept unresolved.
    Unresolved(SqlAst, SqlError),
    Unsupported(SqlError),
    Unparseable(SqlError),
}

impl GoldParse {
    pub fn ast(&self) -> Option<&SqlAst> {
        match self {
            GoldParse::Resolved(a) | GoldParse::Unresolved(a, _) => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedExample {
    pub example_id: String,
    pub result: GoldParse,
}

pub fn parse_gold_sql(sql: &str, schema: &DbSchema) -> GoldParse {
    match parse_sql(sql, Dialect::BenchmarkLenient) {
        Err(e) if e.is_unsupported() => GoldParse::Unsupported(e.into()),
        Err(e) => GoldParse::Unparseable(e.into()),
        Ok(ast) => match resolve_columns(&ast, schema) {
            Ok(r) => GoldParse::Resolved(r),
            Err(e) => GoldParse::Unresolved(ast, e.into()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Every example in the corpus.
    #[default]
    Full,
    /// Only examples whose gold query parsed.
    Parsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    /// Category order used when an example shows several patterns.
    pub priority: Vec<TieCategory>,
    /// Count findings inside nested subqueries.
    pub scan_subqueries: bool,
    pub denominator: Denominator,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            priority: TieCategory::ALL.to_vec(),
            scan_subqueries: true,
            denominator: Denominator::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: TieCategory,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleCategory {
    pub example_id: String,
    pub category: Option<TieCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub corpus_size: usize,
    pub denominator: usize,
    pub categories: Vec<CategoryCount>,
    pub total: usize,
    pub total_percent: f64,
    /// Parsed examples; includes `unresolved`.
    pub counted: usize,
    pub unparsed: Vec<String>,
    pub unsupported: Vec<String>,
    /// Parsed examples whose columns did not resolve; audited by name.
    pub unresolved: Vec<String>,
    pub assignments: Vec<ExampleCategory>,
}

impl CorpusStats {
    pub fn count(&self, c: TieCategory) -> usize {
        self.categories.iter().find(|x| x.category == c).map_or(0, |x| x.count)
    }

    /// One-row table in the layout of a corpus statistics table.
    pub fn render(&self, name: &str) -> String {
        let mut head = format!("{:<10}", "");
        let mut row = format!("{name:<10}");
        for c in &self.categories {
            head += &format!("{:>16}", c.category.label());
            row += &format!("{:>16}", format!("{} ({:.2}%)", c.count, c.percent));
        }
        head += &format!("{:>16}", "Total");
        row += &format!("{:>16}", format!("{} ({:.2}%)", self.total, self.total_percent));
        format!("{head}\n{row}\n")
    }
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        (n as f64 * 10000.0 / d as f64).round() / 100.0
    }
}

/// Assign each example at most one tie category and tabulate.
pub fn corpus_stats(corpus: &Corpus, config: &StatsConfig) -> CorpusStats {
    let parsed = corpus.parse_gold();
    let findings: Vec<Option<Vec<TieFinding>>> = parsed
        .par_iter()
        .zip(&corpus.examples)
        .map(|(p, ex)| p.result.ast().map(|ast| audit_query(ast, corpus.schema_for(ex))))
        .collect();
    stats_from_findings(&parsed, &findings, config)
}

/// Tabulate precomputed findings (`None` = gold did not parse).
pub fn stats_from_findings(
    parsed: &[ParsedExample],
    findings: &[Option<Vec<TieFinding>>],
    config: &StatsConfig,
) -> CorpusStats {
    let mut unparsed = Vec::new();
    let mut unsupported = Vec::new();
    let mut unresolved = Vec::new();
    let mut assignments = Vec::new();
    let mut counts: BTreeMap<TieCategory, usize> = BTreeMap::new();
    for (p, f) in parsed.iter().zip(findings) {
        match &p.result {
            GoldParse::Unparseable(_) => unparsed.push(p.example_id.clone()),
            GoldParse::Unsupported(_) => unsupported.push(p.example_id.clone()),
            GoldParse::Unresolved(..) => unresolved.push(p.example_id.clone()),
            GoldParse::Resolved(_) => {}
        }
        let Some(f) = f else { continue };
        let present: Vec<TieCategory> = f
            .iter()
            .filter(|x| config.scan_subqueries || x.location.nesting() == 0)
            .map(|x| x.category)
            .collect();
        let category = config.priority.iter().copied().find(|c| present.contains(c));
        if let Some(c) = category {
            *counts.entry(c).or_default() += 1;
        }
        assignments.push(ExampleCategory {
            example_id: p.example_id.clone(),
            category,
        });
    }
    let corpus_size = parsed.len();
    let counted = assignments.len();
    let denominator = match config.denominator {
        Denominator::Full => corpus_size,
        Denominator::Parsed => counted,
    };
    let categories: Vec<CategoryCount> = TieCategory::ALL
        .iter()
        .map(|c| {
            let count = counts.get(c).copied().unwrap_or(0);
            CategoryCount {
                category: *c,
                count,
                percent: percent(count, denominator),
            }
        })
        .collect();
    let total = categories.iter().map(|c| c.count).sum();
    CorpusStats {
        corpus_size,
        denominator,
        categories,
        total,
        total_percent: percent(total, denominator),
        counted,
        unparsed,
        unsupported,
        unresolved,
        assignments,
    }
}

/// Predicted SQL per example for one system.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    pub system_name: String,
    pub entries: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PredictionJson {
    Full(PredictionSet),
    Map(BTreeMap<String, String>),
    List(Vec<PredictionEntry>),
}

#[derive(Deserialize)]
struct PredictionEntry {
    example_id: Json,
    sql: String,
}

impl PredictionSet {
    /// Read a prediction file: JSON (a `{system_name, entries}` object, an
    /// id→SQL map, or a list of `{example_id, sql}`), or otherwise one line
    /// per example in corpus order, `SQL<TAB>database_id`.
    pub fn load(path: &Path, corpus: &Corpus, system_name: Option<&str>) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let default_name = system_name
            .map(str::to_string)
            .or_else(|| path.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .unwrap_or_default();
        let trimmed = text.trim_start();
        let set = if trimmed.starts_with('{') || trimmed.starts_with('[') {
            let parsed: PredictionJson = serde_json::from_str(&text).map_err(|e| CorpusError::MalformedPredictions {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
            match parsed {
                PredictionJson::Full(mut p) => {
                    if let Some(n) = system_name {
                        p.system_name = n.to_string();
                    }
                    p
                }
                PredictionJson::Map(entries) => PredictionSet {
                    system_name: default_name,
                    entries,
                },
                PredictionJson::List(items) => PredictionSet {
                    system_name: default_name,
                    entries: items
                        .into_iter()
                        .map(|e| {
                            let id = match e.example_id {
                                Json::String(s) => s,
                                other => other.to_string(),
                            };
                            (id, e.sql)
                        })
                        .collect(),
                },
            }
        } else {
            Self::from_tsv(&text, corpus, default_name).map_err(|reason| CorpusError::MalformedPredictions {
                path: path.to_path_buf(),
                reason,
            })?
        };
        set.check_against(corpus).map_err(|reason| CorpusError::MalformedPredictions {
            path: path.to_path_buf(),
            reason,
        })?;
        Ok(set)
    }

    fn from_tsv(text: &str, corpus: &Corpus, system_name: String) -> Result<Self, String> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() > corpus.examples.len() {
            // Tolerate trailing blank lines only.
            if lines[corpus.examples.len()..].iter().any(|l| !l.trim().is_empty()) {
                return Err(format!("{} lines for {} examples", lines.len(), corpus.examples.len()));
            }
        }
        let mut entries = BTreeMap::new();
        for (i, (line, ex)) in lines.iter().zip(&corpus.examples).enumerate() {
            let (sql, db) = match line.rsplit_once('\t') {
                Some((s, d)) => (s, Some(d.trim())),
                None => (*line, None),
            };
            if let Some(db) = db {
                if !db.is_empty() && db != ex.database_id {
                    return Err(format!("line {}: database {db} but example {} uses {}", i + 1, ex.example_id, ex.database_id));
                }
            }
            entries.insert(ex.example_id.clone(), sql.trim().to_string());
        }
        Ok(Self { system_name, entries })
    }

    fn check_against(&self, corpus: &Corpus) -> Result<(), String> {
        match self.entries.keys().find(|id| corpus.example(id).is_none()) {
            Some(id) => Err(format!("prediction for unknown example {id}")),
            None => Ok(()),
        }
    }

    /// Predictions in corpus order as `SQL<TAB>database_id` lines.
    pub fn to_tsv(&self, corpus: &Corpus) -> String {
        corpus
            .examples
            .iter()
            .map(|ex| {
                let sql = self.entries.get(&ex.example_id).map(String::as_str).unwrap_or("");
                format!("{sql}\t{}\n", ex.database_id)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const TABLES: &str = r#"[{
        "db_id": "shop",
        "table_names_original": ["maker", "model"],
        "table_names": ["maker", "model"],
        "column_names_original": [[-1, "*"], [0, "id"], [0, "name"], [1, "id"], [1, "maker"], [1, "price"]],
        "column_names": [[-1, "*"], [0, "id"], [0, "name"], [1, "id"], [1, "maker"], [1, "price"]],
        "column_types": ["text", "number", "text", "number", "number", "number"],
        "primary_keys": [1, 3],
        "foreign_keys": [[4, 1]]
    }]"#;

    #[test]
    fn loads_spider_layout() {
        let dir = tempfile::tempdir().unwrap();
        let ex = write(
            dir.path(),
            "dev.json",
            r#"[{"db_id": "shop", "query": "SELECT name FROM maker", "question": "Names?"}]"#,
        );
        let tables = write(dir.path(), "tables.json", TABLES);
        let c = load_corpus(
            &CorpusPaths {
                examples: ex,
                schemas: Some(tables),
                databases: None,
            },
            None,
        )
        .unwrap();
        assert_eq!(c.examples.len(), 1);
        assert_eq!(c.examples[0].example_id, "0");
        let s = &c.schemas["shop"];
        assert_eq!(s.tables[1].primary_key, vec!["id".to_string()]);
        assert_eq!(s.tables[1].foreign_keys[0].foreign_table, "maker");
    }

    #[test]
    fn empty_and_missing_schema() {
        let dir = tempfile::tempdir().unwrap();
        let tables = write(dir.path(), "tables.json", TABLES);
        let empty = write(dir.path(), "empty.json", "[]");
        let c = load_corpus(
            &CorpusPaths {
                examples: empty,
                schemas: Some(tables.clone()),
                databases: None,
            },
            None,
        )
        .unwrap();
        assert!(c.examples.is_empty());
        let bad = write(dir.path(), "bad.json", r#"[{"db_id": "nope", "query": "SELECT 1", "question": "?"}]"#);
        let err = load_corpus(
            &CorpusPaths {
                examples: bad,
                schemas: Some(tables.clone()),
                databases: None,
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::MissingSchema(db) if db == "nope"));
        let malformed = write(dir.path(), "m.json", r#"[{"db_id": "shop", "question": "?"}]"#);
        let err = load_corpus(
            &CorpusPaths {
                examples: malformed,
                schemas: Some(tables),
                databases: None,
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::MalformedExample { index: 0, .. }));
    }

    #[test]
    fn bird_layout_and_database_schema_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let dbdir = dir.path().join("dbs/shop");
        fs::create_dir_all(&dbdir).unwrap();
        let conn = rusqlite::Connection::open(dbdir.join("shop.sqlite")).unwrap();
        conn.execute_batch("CREATE TABLE maker (id INTEGER PRIMARY KEY, name TEXT); INSERT INTO maker VALUES (1, 'a');")
            .unwrap();
        drop(conn);
        let ex = write(
            dir.path(),
            "dev.json",
            r#"[{"question_id": 7, "db_id": "shop", "question": "?", "evidence": "", "SQL": "SELECT name FROM maker"}]"#,
        );
        let c = load_corpus(
            &CorpusPaths {
                examples: ex,
                schemas: None,
                databases: Some(dir.path().join("dbs")),
            },
            None,
        )
        .unwrap();
        assert_eq!(c.examples[0].example_id, "7");
        assert_eq!(c.schemas["shop"].tables[0].primary_key, vec!["id".to_string()]);
        let mut inst = c.instance("shop").unwrap().unwrap();
        inst.materialize().unwrap();
        assert_eq!(inst.rows("maker").len(), 1);
    }

    #[test]
    fn prediction_formats() {
        let dir = tempfile::tempdir().unwrap();
        let ex = write(
            dir.path(),
            "dev.json",
            r#"[{"db_id": "shop", "query": "SELECT name FROM maker", "question": "?"},
                {"db_id": "shop", "query": "SELECT id FROM maker", "question": "?"}]"#,
        );
        let tables = write(dir.path(), "tables.json", TABLES);
        let c = load_corpus(
            &CorpusPaths {
                examples: ex,
                schemas: Some(tables),
                databases: None,
            },
            None,
        )
        .unwrap();
        let tsv = write(dir.path(), "pred.txt", "SELECT name FROM maker\tshop\n");
        let p = PredictionSet::load(&tsv, &c, None).unwrap();
        assert_eq!(p.system_name, "pred");
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.to_tsv(&c), "SELECT name FROM maker\tshop\n\tshop\n");
        let json = write(dir.path(), "p.json", r#"{"1": "SELECT 1"}"#);
        assert_eq!(PredictionSet::load(&json, &c, Some("x")).unwrap().entries["1"], "SELECT 1");
        let unknown = write(dir.path(), "u.json", r#"{"9": "SELECT 1"}"#);
        assert!(PredictionSet::load(&unknown, &c, None).is_err());
        let wrong_db = write(dir.path(), "w.txt", "SELECT 1\tother\n");
        assert!(PredictionSet::load(&wrong_db, &c, None).is_err());
    }
}
