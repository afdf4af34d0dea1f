//! Database instances: a schema plus concrete rows.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::{params_from_iter, Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::exec::Value;
use crate::sql::{Affinity, Column, DbSchema, ForeignKey, Table};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Loaded,
    Random { seed: u64 },
    TieForged { target: String, seed: u64 },
    TieFree { target: String, seed: u64 },
}

#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sqlite error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("table {table}: {reason}")]
    Invalid { table: String, reason: String },
}

/// A schema with concrete rows.
///
/// Instances loaded from an on-disk SQLite file may stay lazy: `tables` is
/// empty and `source_file` points at the file, which backends open directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbInstance {
    pub instance_id: String,
    pub schema: DbSchema,
    pub tables: BTreeMap<String, Vec<Vec<Value>>>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_file: Option<PathBuf>,
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

impl DbInstance {
    /// Instance with every table present and empty.
    pub fn empty(schema: DbSchema, provenance: Provenance) -> Self {
        let tables = schema.tables.iter().map(|t| (t.name.clone(), Vec::new())).collect();
        Self {
            instance_id: schema.database_id.clone(),
            schema,
            tables,
            provenance,
            source_file: None,
        }
    }

    /// Lazy handle on an existing SQLite database file.
    pub fn from_sqlite_file(schema: DbSchema, path: impl Into<PathBuf>) -> Self {
        Self {
            instance_id: schema.database_id.clone(),
            schema,
            tables: BTreeMap::new(),
            provenance: Provenance::Loaded,
            source_file: Some(path.into()),
        }
    }

    pub fn rows(&self, table: &str) -> &[Vec<Value>] {
        self.tables
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(table))
            .map(|(_, v)| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn row_count(&self) -> usize {
        self.tables.values().map(Vec::len).sum()
    }

    /// Read the rows of a lazy file-backed instance into memory.
    pub fn materialize(&mut self) -> Result<(), InstanceError> {
        let Some(path) = self.source_file.clone() else {
            return Ok(());
        };
        if !self.tables.is_empty() {
            return Ok(());
        }
        let conn = Connection::open_with_flags(&path, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
        for table in &self.schema.tables {
            let cols: Vec<String> = table.columns.iter().map(|c| quote_ident(&c.name)).collect();
            let sql = format!("SELECT {} FROM {}", cols.join(", "), quote_ident(&table.name));
            let mut stmt = conn.prepare(&sql)?;
            let n = cols.len();
            let rows = stmt
                .query_map([], |r| (0..n).map(|i| r.get_ref(i).map(Value::from)).collect::<Result<Vec<_>, _>>())?
                .collect::<Result<Vec<_>, _>>()?;
            self.tables.insert(table.name.clone(), rows);
        }
        Ok(())
    }

    /// Create the schema's tables in `conn` and insert this instance's rows.
    pub fn load_into(&self, conn: &Connection) -> rusqlite::Result<()> {
        conn.execute_batch("BEGIN")?;
        for table in &self.schema.tables {
            let cols: Vec<String> = table
                .columns
                .iter()
                .map(|c| format!("{} {}", quote_ident(&c.name), c.affinity.sql_type()))
                .collect();
            conn.execute_batch(&format!("CREATE TABLE {} ({})", quote_ident(&table.name), cols.join(", ")))?;
            let placeholders = vec!["?"; table.columns.len()].join(", ");
            let mut stmt = conn.prepare(&format!("INSERT INTO {} VALUES ({placeholders})", quote_ident(&table.name)))?;
            for row in self.rows(&table.name) {
                stmt.execute(params_from_iter(row.iter()))?;
            }
        }
        conn.execute_batch("COMMIT")
    }

    /// Write the instance as a SQLite database file.
    pub fn write_sqlite(&self, path: &Path) -> Result<(), InstanceError> {
        if path.exists() {
            fs::remove_file(path).map_err(|source| InstanceError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
        let conn = Connection::open(path)?;
        self.load_into(&conn)?;
        Ok(())
    }

    /// Write one `<table>.csv` per table, header row = column names.
    /// NULL is written as an empty field.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<(), InstanceError> {
        fs::create_dir_all(dir).map_err(|source| InstanceError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for table in &self.schema.tables {
            let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", table.name)))?;
            w.write_record(table.columns.iter().map(|c| c.name.as_str()))?;
            for row in self.rows(&table.name) {
                w.write_record(row.iter().map(|v| match v {
                    Value::Null => String::new(),
                    other => other.to_string(),
                }))?;
            }
            w.flush().map_err(|source| InstanceError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        Ok(())
    }

    /// Read a CSV directory written by [`write_csv_dir`](Self::write_csv_dir)
    /// or any directory with one headed CSV file per table. Missing files
    /// yield empty tables; fields are typed by column affinity.
    pub fn from_csv_dir(schema: DbSchema, dir: &Path) -> Result<Self, InstanceError> {
        let mut inst = DbInstance::empty(schema, Provenance::Loaded);
        for table in &inst.schema.tables {
            let path = dir.join(format!("{}.csv", table.name));
            if !path.exists() {
                continue;
            }
            let mut r = csv::Reader::from_path(&path)?;
            let headers = r.headers()?.clone();
            let positions: Vec<Option<usize>> = table
                .columns
                .iter()
                .map(|c| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(&c.name)))
                .collect();
            let mut rows = Vec::new();
            for rec in r.records() {
                let rec = rec?;
                let row = table
                    .columns
                    .iter()
                    .zip(&positions)
                    .map(|(col, pos)| match pos.and_then(|p| rec.get(p)) {
                        Some(field) => parse_field(field, col.affinity),
                        None => Value::Null,
                    })
                    .collect();
                rows.push(row);
            }
            inst.tables.insert(table.name.clone(), rows);
        }
        Ok(inst)
    }

    /// Same rows, every table in reverse order: a second evaluation order
    /// for observing order-dependent results.
    pub fn with_reversed_rows(&self) -> DbInstance {
        let mut out = self.clone();
        for rows in out.tables.values_mut() {
            rows.reverse();
        }
        out.instance_id = format!("{}~reversed", self.instance_id);
        out
    }

    /// Check arity, affinity, key uniqueness and foreign-key containment.
    /// Forged instances pass too: ties are placed on non-key columns only.
    pub fn validate(&self) -> Result<(), InstanceError> {
        for table in &self.schema.tables {
            let rows = self.rows(&table.name);
            let invalid = |reason: String| InstanceError::Invalid {
                table: table.name.clone(),
                reason,
            };
            for (i, row) in rows.iter().enumerate() {
                if row.len() != table.columns.len() {
                    return Err(invalid(format!("row {i} has arity {} not {}", row.len(), table.columns.len())));
                }
                for (v, c) in row.iter().zip(&table.columns) {
                    if !conforms(v, c.affinity) {
                        return Err(invalid(format!("row {i} column {}: {v:?} is not {}", c.name, c.affinity)));
                    }
                }
            }
            for key in table.keys() {
                let idx: Vec<usize> = key.iter().filter_map(|k| table.column_index(k)).collect();
                let mut seen = HashSet::new();
                for row in rows {
                    let vals: Vec<String> = idx.iter().map(|&i| format!("{:?}", row[i])).collect();
                    if idx.iter().any(|&i| row[i].is_null()) {
                        continue;
                    }
                    if !seen.insert(vals) {
                        return Err(invalid(format!("duplicate key ({})", key.join(", "))));
                    }
                }
            }
            for fk in &table.foreign_keys {
                check_foreign_key(self, table, fk).map_err(invalid)?;
            }
        }
        Ok(())
    }
}

fn check_foreign_key(inst: &DbInstance, table: &Table, fk: &ForeignKey) -> Result<(), String> {
    let Some(parent) = inst.schema.table(&fk.foreign_table) else {
        return Ok(());
    };
    let local: Vec<usize> = fk.columns.iter().filter_map(|c| table.column_index(c)).collect();
    let remote: Vec<usize> = fk.foreign_columns.iter().filter_map(|c| parent.column_index(c)).collect();
    let present: HashSet<Vec<String>> = inst
        .rows(&parent.name)
        .iter()
        .map(|r| remote.iter().map(|&i| r[i].to_string()).collect())
        .collect();
    for row in inst.rows(&table.name) {
        if local.iter().any(|&i| row[i].is_null()) {
            continue;
        }
        let key: Vec<String> = local.iter().map(|&i| row[i].to_string()).collect();
        if !present.contains(&key) {
            return Err(format!("foreign key ({}) value {key:?} missing in {}", fk.columns.join(", "), parent.name));
        }
    }
    Ok(())
}

fn conforms(v: &Value, affinity: Affinity) -> bool {
    match (v, affinity) {
        (Value::Null, _) => true,
        (Value::Integer(_), Affinity::Integer | Affinity::Boolean | Affinity::Real) => true,
        (Value::Real(_), Affinity::Real) => true,
        (Value::Text(_), Affinity::Text | Affinity::Date | Affinity::Blob) => true,
        _ => false,
    }
}

fn parse_field(field: &str, affinity: Affinity) -> Value {
    if field.is_empty() && affinity != Affinity::Text {
        return Value::Null;
    }
    match affinity {
        Affinity::Integer | Affinity::Boolean => field
            .trim()
            .parse::<i64>()
            .map(Value::Integer)
            .unwrap_or_else(|_| Value::Text(field.to_string())),
        Affinity::Real => {
            let t = field.trim();
            t.parse::<i64>()
                .map(Value::Integer)
                .or_else(|_| t.parse::<f64>().map(Value::Real))
                .unwrap_or_else(|_| Value::Text(field.to_string()))
        }
        _ => Value::Text(field.to_string()),
    }
}

/// Read a schema out of a SQLite database file's catalog.
pub fn schema_from_sqlite(path: &Path, database_id: &str) -> Result<DbSchema, InstanceError> {
    let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let names: Vec<String> = conn
        .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid")?
        .query_map([], |r| r.get(0))?
        .collect::<Result<_, _>>()?;
    let mut tables = Vec::new();
    for name in &names {
        let q = quote_ident(name);
        let mut pk: Vec<(i64, String)> = Vec::new();
        let mut columns = Vec::new();
        let mut stmt = conn.prepare(&format!("PRAGMA table_info({q})"))?;
        let mut rows = stmt.query([])?;
        while let Some(r) = rows.next()? {
            let col: String = r.get(1)?;
            let decl: String = r.get::<_, Option<String>>(2)?.unwrap_or_default();
            let pk_pos: i64 = r.get(5)?;
            if pk_pos > 0 {
                pk.push((pk_pos, col.clone()));
            }
            columns.push(Column {
                name: col,
                affinity: Affinity::from_declared(&decl),
            });
        }
        pk.sort();
        let primary_key: Vec<String> = pk.into_iter().map(|(_, c)| c).collect();

        let mut unique_constraints = Vec::new();
        let indexes: Vec<(String, bool, String)> = conn
            .prepare(&format!("PRAGMA index_list({q})"))?
            .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, bool>(2)?, r.get::<_, String>(3)?)))?
            .collect::<Result<_, _>>()?;
        for (idx, unique, origin) in indexes {
            if !unique || origin == "pk" {
                continue;
            }
            let cols: Vec<String> = conn
                .prepare(&format!("PRAGMA index_info({})", quote_ident(&idx)))?
                .query_map([], |r| r.get::<_, Option<String>>(2))?
                .filter_map(|c| c.transpose())
                .collect::<Result<_, _>>()?;
            if !cols.is_empty() {
                unique_constraints.push(cols);
            }
        }

        let mut fks: BTreeMap<i64, ForeignKey> = BTreeMap::new();
        let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list({q})"))?;
        let mut rows = stmt.query([])?;
        while let Some(r) = rows.next()? {
            let id: i64 = r.get(0)?;
            let parent: String = r.get(2)?;
            let from: String = r.get(3)?;
            let to: Option<String> = r.get(4)?;
            let entry = fks.entry(id).or_insert_with(|| ForeignKey {
                columns: Vec::new(),
                foreign_table: parent,
                foreign_columns: Vec::new(),
            });
            entry.columns.push(from);
            entry.foreign_columns.extend(to);
        }
        tables.push(Table {
            name: name.clone(),
            columns,
            primary_key,
            unique_constraints,
            foreign_keys: fks.into_values().collect(),
        });
    }
    // FKs whose target column was omitted point at the parent's primary key.
    let snapshot = tables.clone();
    for t in &mut tables {
        for fk in &mut t.foreign_keys {
            if fk.foreign_columns.is_empty() {
                if let Some(p) = snapshot.iter().find(|p| p.name.eq_ignore_ascii_case(&fk.foreign_table)) {
                    fk.foreign_columns = p.primary_key.clone();
                }
            }
        }
    }
    let mut schema = DbSchema {
        database_id: database_id.to_string(),
        tables,
    };
    schema.prune_dangling_foreign_keys();
    Ok(schema)
}
