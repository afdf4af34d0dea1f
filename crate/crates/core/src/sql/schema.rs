use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affinity {
    Integer,
    Real,
    Text,
    Blob,
    Boolean,
    Date,
}

impl Affinity {
    /// Map a declared column type (SQLite DDL or benchmark schema files) to
    /// an affinity, following SQLite's substring rules where they apply.
    pub fn from_declared(decl: &str) -> Affinity {
        let d = decl.to_ascii_lowercase();
        if d.contains("bool") {
            Affinity::Boolean
        } else if d.contains("date") || d.contains("time") {
            Affinity::Date
        } else if d.contains("int") {
            Affinity::Integer
        } else if d.contains("char") || d.contains("clob") || d.contains("text") {
            Affinity::Text
        } else if d.contains("blob") {
            Affinity::Blob
        } else if d.contains("real") || d.contains("floa") || d.contains("doub") || d.contains("num") || d.contains("dec")
        {
            Affinity::Real
        } else {
            Affinity::Text
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, Affinity::Integer | Affinity::Real | Affinity::Boolean)
    }

    pub fn sql_type(self) -> &'static str {
        match self {
            Affinity::Integer => "INTEGER",
            Affinity::Real => "REAL",
            Affinity::Text => "TEXT",
            Affinity::Blob => "BLOB",
            Affinity::Boolean => "BOOLEAN",
            Affinity::Date => "DATE",
        }
    }
}

impl fmt::Display for Affinity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.sql_type().to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub affinity: Affinity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub columns: Vec<String>,
    pub foreign_table: String,
    pub foreign_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default)]
    pub primary_key: Vec<String>,
    #[serde(default)]
    pub unique_constraints: Vec<Vec<String>>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Column sets whose values identify a row: the primary key and every
    /// unique constraint.
    pub fn keys(&self) -> Vec<&[String]> {
        let mut out: Vec<&[String]> = Vec::new();
        if !self.primary_key.is_empty() {
            out.push(&self.primary_key);
        }
        out.extend(self.unique_constraints.iter().map(Vec::as_slice));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbSchema {
    pub database_id: String,
    pub tables: Vec<Table>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{table}.{column}`")]
    DuplicateColumn { table: String, column: String },
    #[error("key of `{table}` names unknown column `{column}`")]
    UnknownKeyColumn { table: String, column: String },
    #[error("foreign key of `{table}` references unknown `{target}`")]
    DanglingForeignKey { table: String, target: String },
}

impl DbSchema {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Check the uniqueness and referential invariants of the schema.
    pub fn validate(&self) -> Result<(), SchemaError> {
        for (i, t) in self.tables.iter().enumerate() {
            if self.tables[..i].iter().any(|o| o.name.eq_ignore_ascii_case(&t.name)) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            for (j, c) in t.columns.iter().enumerate() {
                if t.columns[..j].iter().any(|o| o.name.eq_ignore_ascii_case(&c.name)) {
                    return Err(SchemaError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
            }
            for key in t.keys() {
                for k in key {
                    if t.column(k).is_none() {
                        return Err(SchemaError::UnknownKeyColumn {
                            table: t.name.clone(),
                            column: k.clone(),
                        });
                    }
                }
            }
            for fk in &t.foreign_keys {
                let dangling = || SchemaError::DanglingForeignKey {
                    table: t.name.clone(),
                    target: format!("{}({})", fk.foreign_table, fk.foreign_columns.join(", ")),
                };
                let target = self.table(&fk.foreign_table).ok_or_else(dangling)?;
                if fk.columns.len() != fk.foreign_columns.len()
                    || fk.foreign_columns.iter().any(|c| target.column(c).is_none())
                    || fk.columns.iter().any(|c| t.column(c).is_none())
                {
                    return Err(dangling());
                }
            }
        }
        Ok(())
    }

    /// Drop foreign keys that do not satisfy the referential invariant.
    /// Public benchmark schema files contain a handful of these.
    pub fn prune_dangling_foreign_keys(&mut self) -> usize {
        let snapshot = self.clone();
        let mut dropped = 0;
        for t in &mut self.tables {
            let before = t.foreign_keys.len();
            let cols = t.columns.clone();
            t.foreign_keys.retain(|fk| {
                snapshot.table(&fk.foreign_table).is_some_and(|target| {
                    fk.columns.len() == fk.foreign_columns.len()
                        && fk.foreign_columns.iter().all(|c| target.column(c).is_some())
                        && fk.columns.iter().all(|c| cols.iter().any(|x| x.name.eq_ignore_ascii_case(c)))
                })
            });
            dropped += before - t.foreign_keys.len();
        }
        dropped
    }

    /// Compact human-readable summary: one line per table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let cols: Vec<String> = t
                .columns
                .iter()
                .map(|c| {
                    let pk = if t.primary_key.iter().any(|k| k.eq_ignore_ascii_case(&c.name)) {
                        " pk"
                    } else {
                        ""
                    };
                    format!("{} {}{}", c.name, c.affinity, pk)
                })
                .collect();
            out.push_str(&format!("{}({})\n", t.name, cols.join(", ")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(name: &str, cols: &[&str]) -> Table {
        Table {
            name: name.into(),
            columns: cols
                .iter()
                .map(|c| Column {
                    name: (*c).into(),
                    affinity: Affinity::Integer,
                })
                .collect(),
            primary_key: vec![cols[0].into()],
            unique_constraints: vec![],
            foreign_keys: vec![],
        }
    }

    #[test]
    fn rejects_duplicate_names() {
        let s = DbSchema {
            database_id: "d".into(),
            tables: vec![table("a", &["x"]), table("A", &["y"])],
        };
        assert_eq!(s.validate(), Err(SchemaError::DuplicateTable("A".into())));
        let s = DbSchema {
            database_id: "d".into(),
            tables: vec![table("a", &["x", "X"])],
        };
        assert!(matches!(s.validate(), Err(SchemaError::DuplicateColumn { .. })));
    }

    #[test]
    fn dangling_foreign_keys_are_detected_and_pruned() {
        let mut child = table("child", &["id", "parent_id"]);
        child.foreign_keys.push(ForeignKey {
            columns: vec!["parent_id".into()],
            foreign_table: "parent".into(),
            foreign_columns: vec!["nope".into()],
        });
        let mut s = DbSchema {
            database_id: "d".into(),
            tables: vec![table("parent", &["id"]), child],
        };
        assert!(matches!(s.validate(), Err(SchemaError::DanglingForeignKey { .. })));
        assert_eq!(s.prune_dangling_foreign_keys(), 1);
        assert_eq!(s.validate(), Ok(()));
    }

    #[test]
    fn declared_types_map_to_affinities() {
        assert_eq!(Affinity::from_declared("INTEGER"), Affinity::Integer);
        assert_eq!(Affinity::from_declared("varchar(20)"), Affinity::Text);
        assert_eq!(Affinity::from_declared("number"), Affinity::Real);
        assert_eq!(Affinity::from_declared("datetime"), Affinity::Date);
        assert_eq!(Affinity::from_declared("bool"), Affinity::Boolean);
        assert_eq!(Affinity::from_declared("others"), Affinity::Text);
    }
}
