//! Execution backend adapter contract and the SQLite reference adapter.

use std::cmp::Ordering;
use std::fmt;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::dialect::{classify_backend_error, ViolationCategory};
use crate::instance::DbInstance;

/// A single cell value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    fn type_rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
        }
    }

    /// Total order following SQLite's sort order: NULL < numbers < text.
    pub fn sqlite_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) if a.type_rank() == 1 && b.type_rank() == 1 => {
                let (x, y) = (a.as_f64().unwrap_or(0.0), b.as_f64().unwrap_or(0.0));
                x.partial_cmp(&y).unwrap_or(Ordering::Equal)
            }
            (a, b) => a.type_rank().cmp(&b.type_rank()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl rusqlite::ToSql for Value {
    fn to_sql(&self) -> rusqlite::Result<rusqlite::types::ToSqlOutput<'_>> {
        use rusqlite::types::{ToSqlOutput, Value as V};
        Ok(ToSqlOutput::Owned(match self {
            Value::Null => V::Null,
            Value::Integer(i) => V::Integer(*i),
            Value::Real(r) => V::Real(*r),
            Value::Text(s) => V::Text(s.clone()),
        }))
    }
}

impl From<ValueRef<'_>> for Value {
    fn from(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Integer(i),
            ValueRef::Real(r) => Value::Real(r),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => {
                let hex: String = b.iter().map(|x| format!("{x:02x}")).collect();
                Value::Text(format!("x'{hex}'"))
            }
        }
    }
}

/// Materialized query result; rows keep the order the backend returned.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Structured backend failure with its portability pre-classification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct BackendError {
    pub code: String,
    pub message: String,
    pub category: ViolationCategory,
}

impl BackendError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        let code = code.into();
        let message = message.into();
        let category = classify_backend_error(&code, &message);
        Self {
            code,
            message,
            category,
        }
    }
}

/// Adapter contract: `open(instance) -> handle`, `run(handle, sql) -> table`.
pub trait ExecutionBackend {
    type Handle;

    fn open(&self, instance: &DbInstance) -> Result<Self::Handle, BackendError>;

    fn run(&self, handle: &mut Self::Handle, sql: &str) -> Result<ResultTable, BackendError>;

    /// Open a fresh handle, run one query, drop the handle.
    fn execute_once(&self, instance: &DbInstance, sql: &str) -> Result<ResultTable, BackendError> {
        let mut h = self.open(instance)?;
        self.run(&mut h, sql)
    }
}

/// Reference adapter over SQLite, the benchmarks' native engine.
#[derive(Debug, Clone)]
pub struct SqliteBackend {
    /// Wall-clock budget per query.
    pub timeout: Duration,
}

impl Default for SqliteBackend {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
        }
    }
}

pub struct SqliteHandle {
    conn: Connection,
}

impl SqliteHandle {
    pub fn connection(&self) -> &Connection {
        &self.conn
    }
}

pub(crate) fn sqlite_error(e: rusqlite::Error) -> BackendError {
    match &e {
        rusqlite::Error::SqliteFailure(err, msg) => BackendError::new(
            format!("SQLITE_{}", err.extended_code),
            msg.clone().unwrap_or_else(|| err.to_string()),
        ),
        other => BackendError::new("SQLITE", other.to_string()),
    }
}

impl ExecutionBackend for SqliteBackend {
    type Handle = SqliteHandle;

    fn open(&self, instance: &DbInstance) -> Result<SqliteHandle, BackendError> {
        let conn = match &instance.source_file {
            Some(path) if instance.tables.is_empty() => {
                Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
                    .map_err(sqlite_error)?
            }
            _ => {
                let conn = Connection::open_in_memory().map_err(sqlite_error)?;
                instance.load_into(&conn).map_err(sqlite_error)?;
                conn
            }
        };
        Ok(SqliteHandle { conn })
    }

    fn run(&self, handle: &mut SqliteHandle, sql: &str) -> Result<ResultTable, BackendError> {
        let deadline = Instant::now() + self.timeout;
        handle.conn.progress_handler(10_000, Some(move || Instant::now() > deadline));
        let result = run_query(&handle.conn, sql);
        handle.conn.progress_handler(0, None::<fn() -> bool>);
        result.map_err(|e| {
            let err = sqlite_error(e);
            if err.code == "SQLITE_9" {
                BackendError::new("TIMEOUT", format!("query exceeded {:?}", self.timeout))
            } else {
                err
            }
        })
    }
}

fn run_query(conn: &Connection, sql: &str) -> rusqlite::Result<ResultTable> {
    let mut stmt = conn.prepare(sql)?;
    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
    let n = columns.len();
    let mut rows = Vec::new();
    let mut q = stmt.query([])?;
    while let Some(row) = q.next()? {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(Value::from(row.get_ref(i)?));
        }
        rows.push(out);
    }
    Ok(ResultTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{DbInstance, Provenance};
    use crate::sql::{Affinity, Column, DbSchema, Table};

    fn instance() -> DbInstance {
        let schema = DbSchema {
            database_id: "t".into(),
            tables: vec![Table {
                name: "t".into(),
                columns: vec![
                    Column {
                        name: "a".into(),
                        affinity: Affinity::Integer,
                    },
                    Column {
                        name: "b".into(),
                        affinity: Affinity::Text,
                    },
                ],
                primary_key: vec!["a".into()],
                unique_constraints: vec![],
                foreign_keys: vec![],
            }],
        };
        let mut inst = DbInstance::empty(schema, Provenance::Loaded);
        inst.tables.insert(
            "t".into(),
            vec![
                vec![Value::Integer(1), Value::Text("x".into())],
                vec![Value::Integer(2), Value::Null],
            ],
        );
        inst
    }

    #[test]
    fn runs_queries_on_materialized_instance() {
        let b = SqliteBackend::default();
        let r = b.execute_once(&instance(), "SELECT a, b FROM t ORDER BY a").unwrap();
        assert_eq!(r.columns, vec!["a", "b"]);
        assert_eq!(r.rows, vec![vec![Value::Integer(1), Value::Text("x".into())], vec![Value::Integer(2), Value::Null]]);
    }

    #[test]
    fn aggregates_over_empty_input() {
        let b = SqliteBackend::default();
        let mut inst = instance();
        inst.tables.insert("t".into(), vec![]);
        assert!(b.execute_once(&inst, "SELECT a FROM t").unwrap().is_empty());
        let r = b.execute_once(&inst, "SELECT count(*), max(a) FROM t").unwrap();
        assert_eq!(r.rows, vec![vec![Value::Integer(0), Value::Null]]);
    }

    #[test]
    fn missing_column_is_classified() {
        let err = SqliteBackend::default().execute_once(&instance(), "SELECT nothere FROM t").unwrap_err();
        assert_eq!(err.category, ViolationCategory::UndefinedColumn);
        let err = SqliteBackend::default().execute_once(&instance(), "SELECT strftimez(a) FROM t").unwrap_err();
        assert_eq!(err.category, ViolationCategory::UndefinedFunction);
    }

    #[test]
    fn runaway_queries_time_out() {
        let b = SqliteBackend {
            timeout: Duration::from_millis(50),
        };
        let err = b
            .execute_once(
                &instance(),
                "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c",
            )
            .unwrap_err();
        assert_eq!(err.code, "TIMEOUT");
    }

    #[test]
    fn sqlite_sort_order() {
        let mut v = vec![Value::Text("a".into()), Value::Real(1.5), Value::Null, Value::Integer(1)];
        v.sort_by(Value::sqlite_cmp);
        assert_eq!(v, vec![Value::Null, Value::Integer(1), Value::Real(1.5), Value::Text("a".into())]);
    }
}
