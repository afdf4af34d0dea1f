//! End-to-end runs over a corpus: rewriting the gold set, scoring a
//! prediction set, intersecting failure sets and tallying error taxonomies.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GoldParse, PredictionSet};
use crate::exec::SqliteBackend;
use crate::forge::{forge_tie_instance, random_instance, ForgeOptions};
use crate::instance::DbInstance;
use crate::metrics::{
    exact_set_match, execution_accuracy_sql, has_top_level_order, CompareOptions, ExecOutcome, MatchResult, OrderPolicy,
};
use crate::rewrite::{rewrite_query, RewriteRule};
use crate::sql::{parse_sql, print_sql, resolve_columns, Dialect, SqlAst};
use crate::tie_audit::{audit_query, Severity, TieCategory, TieFinding};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error("no reports given")]
    NoReports,
    #[error("reports cover different corpora: {0}")]
    CorpusMismatch(String),
    #[error("label refers to unknown example {0}")]
    UnknownExample(String),
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        (n as f64 * 10000.0 / d as f64).round() / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub example_id: String,
    pub original_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_sql: Option<String>,
    pub rules: Vec<RewriteRule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnrewritableCase {
    pub example_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteReport {
    pub corpus_size: usize,
    /// Examples whose gold query was changed by at least one rule.
    pub affected: usize,
    pub affected_percent: f64,
    pub per_rule: BTreeMap<RewriteRule, usize>,
    /// Examples with at least one tie finding of normal severity.
    pub tie_prone: usize,
    pub tie_prone_percent: f64,
    pub unrewritable: Vec<UnrewritableCase>,
    /// Gold queries that could not be parsed and resolved.
    pub unparsed: Vec<String>,
    pub records: Vec<RewriteRecord>,
}

impl RewriteReport {
    /// Rewritten gold SQL by example id, for exporting a revised corpus.
    pub fn replacements(&self) -> BTreeMap<String, String> {
        self.records
            .iter()
            .filter_map(|r| r.rewritten_sql.clone().map(|s| (r.example_id.clone(), s)))
            .collect()
    }

    pub fn affected_ids(&self) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| r.rewritten_sql.is_some())
            .map(|r| r.example_id.clone())
            .collect()
    }

    pub fn render(&self, name: &str) -> String {
        format!(
            "{name}: {} of {} gold queries rewritten ({:.2}%); {} tie-prone ({:.2}%); {} unrewritable; {} unparsed\n",
            self.affected,
            self.corpus_size,
            self.affected_percent,
            self.tie_prone,
            self.tie_prone_percent,
            self.unrewritable.len(),
            self.unparsed.len()
        )
    }
}

/// Apply GROUP BY completion and the LIMIT 1 rewrite to every gold query.
pub fn rewrite_corpus(corpus: &Corpus) -> RewriteReport {
    let parsed = corpus.parse_gold();
    struct Row {
        record: RewriteRecord,
        tie_prone: bool,
        unrewritable: Vec<String>,
        unparsed: bool,
    }
    let rows: Vec<Row> = parsed
        .par_iter()
        .zip(&corpus.examples)
        .map(|(p, ex)| {
            let mut record = RewriteRecord {
                example_id: ex.example_id.clone(),
                original_sql: ex.gold_sql.clone(),
                rewritten_sql: None,
                rules: Vec::new(),
                notes: Vec::new(),
            };
            let GoldParse::Resolved(ast) = &p.result else {
                return Row {
                    record,
                    tie_prone: false,
                    unrewritable: Vec::new(),
                    unparsed: true,
                };
            };
            let schema = corpus.schema_for(ex);
            let tie_prone = audit_query(ast, schema).iter().any(|f| f.severity == Severity::Normal);
            let combined = rewrite_query(ast, schema);
            record.rewritten_sql = combined.rewritten.as_ref().map(print_sql);
            record.rules = combined.rules_applied;
            record.notes = combined.notes;
            Row {
                record,
                tie_prone,
                unrewritable: combined.unrewritable,
                unparsed: false,
            }
        })
        .collect();

    let corpus_size = corpus.examples.len();
    let mut per_rule = BTreeMap::new();
    let mut unrewritable = Vec::new();
    let mut unparsed = Vec::new();
    let mut tie_prone = 0;
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        for rule in &row.record.rules {
            *per_rule.entry(*rule).or_insert(0) += 1;
        }
        for reason in row.unrewritable {
            unrewritable.push(UnrewritableCase {
                example_id: row.record.example_id.clone(),
                reason,
            });
        }
        if row.unparsed {
            unparsed.push(row.record.example_id.clone());
        }
        tie_prone += row.tie_prone as usize;
        records.push(row.record);
    }
    let affected = records.iter().filter(|r| r.rewritten_sql.is_some()).count();
    RewriteReport {
        corpus_size,
        affected,
        affected_percent: percent(affected, corpus_size),
        per_rule,
        tie_prone,
        tie_prone_percent: percent(tie_prone, corpus_size),
        unrewritable,
        unparsed,
        records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    pub compare: CompareOptions,
    /// Score against the corpus database of each example when one is indexed.
    pub use_loaded: bool,
    pub forge_attempts: usize,
    /// Rows per table for random instances used when no other instance exists.
    pub random_rows: usize,
    pub timeout_secs: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            compare: CompareOptions::default(),
            use_loaded: true,
            forge_attempts: 200,
            random_rows: 5,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub example_id: String,
    pub database_id: String,
    /// Exact set match ignoring literal values; absent if either side failed
    /// to parse.
    pub set_match: Option<MatchResult>,
    pub set_match_with_values: Option<MatchResult>,
    pub exec: ExecOutcome,
    pub findings: Vec<TieFinding>,
    pub missing_prediction: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl ExampleRecord {
    pub fn set_matched(&self) -> bool {
        self.set_match.as_ref().is_some_and(|m| m.matched)
    }

    pub fn set_matched_with_values(&self) -> bool {
        self.set_match_with_values.as_ref().is_some_and(|m| m.matched)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregates {
    pub evaluated: usize,
    pub exec_correct: usize,
    pub set_match_correct: usize,
    pub set_match_with_values_correct: usize,
    pub missing_predictions: usize,
    pub execution_accuracy: f64,
    pub set_match_accuracy: f64,
    pub set_match_with_values_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system_name: String,
    pub instances_per_example: usize,
    pub config: EvalConfig,
    pub aggregates: EvalAggregates,
    pub records: Vec<ExampleRecord>,
}

impl EvalReport {
    /// Example ids whose execution verdict is false, in corpus order.
    pub fn exec_failures(&self) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| !r.exec.overall)
            .map(|r| r.example_id.clone())
            .collect()
    }

    pub fn render(&self) -> String {
        let a = &self.aggregates;
        format!(
            "{:<16}{:>12}{:>16}\n{:<16}{:>12.2}{:>16.2}\n",
            "",
            "Exec Acc",
            "Set Match Acc",
            self.system_name,
            a.execution_accuracy,
            a.set_match_accuracy
        )
    }
}

fn resolve_text(sql: &str, schema: &crate::sql::DbSchema) -> Result<SqlAst, String> {
    let ast = parse_sql(sql, Dialect::BenchmarkLenient).map_err(|e| e.to_string())?;
    resolve_columns(&ast, schema).map_err(|e| e.to_string())
}

/// Score a prediction set against the corpus gold queries.
///
/// Each example is executed on its corpus database (when indexed and
/// `use_loaded`) plus `instances_per_example` forged instances: tie-forged
/// for gold queries with a forgeable tie, seeded random otherwise. An
/// example with no instance at all is scored on one random instance.
/// Accuracies use the full corpus as denominator.
pub fn evaluate_corpus(
    predictions: &PredictionSet,
    corpus: &Corpus,
    instances_per_example: usize,
    config: &EvalConfig,
) -> EvalReport {
    let backend = SqliteBackend {
        timeout: Duration::from_secs(config.timeout_secs.max(1)),
    };
    let records: Vec<ExampleRecord> = corpus
        .examples
        .par_iter()
        .enumerate()
        .map(|(index, ex)| {
            let schema = corpus.schema_for(ex);
            let mut errors = Vec::new();
            let gold = resolve_text(&ex.gold_sql, schema);
            if let Err(e) = &gold {
                errors.push(format!("gold: {e}"));
            }
            let findings = gold.as_ref().map(|g| audit_query(g, schema)).unwrap_or_default();
            let pred_text = predictions.entries.get(&ex.example_id);
            let missing_prediction = pred_text.is_none();
            let pred = pred_text.map(|p| resolve_text(p, schema));
            if let Some(Err(e)) = &pred {
                errors.push(format!("prediction: {e}"));
            }
            let (set_match, set_match_with_values) = match (&pred, &gold) {
                (Some(Ok(p)), Ok(g)) => {
                    let mut m = |values| match exact_set_match(p, g, values) {
                        Ok(m) => Some(m),
                        Err(e) => {
                            errors.push(e.to_string());
                            None
                        }
                    };
                    let without = m(false);
                    (without, m(true))
                }
                _ => (None, None),
            };

            let example_seed = config.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut instances: Vec<DbInstance> = Vec::new();
            if config.use_loaded {
                match corpus.instance(&ex.database_id) {
                    Ok(Some(inst)) => instances.push(inst),
                    Ok(None) => {}
                    Err(e) => errors.push(e.to_string()),
                }
            }
            for k in 0..instances_per_example {
                let seed = example_seed.wrapping_add(k as u64);
                let forged = gold.as_ref().ok().and_then(|g| {
                    let opts = ForgeOptions {
                        seed,
                        target_id: ex.example_id.clone(),
                        max_attempts: config.forge_attempts,
                    };
                    forge_tie_instance(schema, g, &opts).ok()
                });
                match forged.map(Ok).unwrap_or_else(|| random_instance(schema, seed, config.random_rows)) {
                    Ok(inst) => instances.push(inst),
                    Err(e) => errors.push(e.to_string()),
                }
            }
            if instances.is_empty() {
                match random_instance(schema, example_seed, config.random_rows) {
                    Ok(inst) => instances.push(inst),
                    Err(e) => errors.push(e.to_string()),
                }
            }

            let exec = match pred_text {
                None => ExecOutcome {
                    verdicts: Vec::new(),
                    overall: false,
                },
                Some(p) => {
                    let ordered = match config.compare.order {
                        OrderPolicy::GoldOrderBy => match &gold {
                            Ok(g) => has_top_level_order(g),
                            Err(_) => ex.gold_sql.to_ascii_uppercase().contains("ORDER BY"),
                        },
                        OrderPolicy::Never => false,
                        OrderPolicy::Always => true,
                    };
                    let mut outcome = execution_accuracy_sql(&backend, p, &ex.gold_sql, ordered, &instances, &config.compare);
                    outcome.overall &= !outcome.verdicts.is_empty();
                    outcome
                }
            };
            ExampleRecord {
                example_id: ex.example_id.clone(),
                database_id: ex.database_id.clone(),
                set_match,
                set_match_with_values,
                exec,
                findings,
                missing_prediction,
                errors,
            }
        })
        .collect();

    let evaluated = corpus.examples.len();
    let exec_correct = records.iter().filter(|r| r.exec.overall).count();
    let set_match_correct = records.iter().filter(|r| r.set_matched()).count();
    let set_match_with_values_correct = records.iter().filter(|r| r.set_matched_with_values()).count();
    let missing_predictions = records.iter().filter(|r| r.missing_prediction).count();
    EvalReport {
        system_name: predictions.system_name.clone(),
        instances_per_example,
        config: config.clone(),
        aggregates: EvalAggregates {
            evaluated,
            exec_correct,
            set_match_correct,
            set_match_with_values_correct,
            missing_predictions,
            execution_accuracy: percent(exec_correct, evaluated),
            set_match_accuracy: percent(set_match_correct, evaluated),
            set_match_with_values_accuracy: percent(set_match_with_values_correct, evaluated),
        },
        records,
    }
}

/// Examples every report scores as an execution failure, in corpus order.
pub fn failure_set(reports: &[EvalReport]) -> Result<Vec<String>, HarnessError> {
    let first = reports.first().ok_or(HarnessError::NoReports)?;
    let ids: Vec<&str> = first.records.iter().map(|r| r.example_id.as_str()).collect();
    for r in &reports[1..] {
        let other: Vec<&str> = r.records.iter().map(|r| r.example_id.as_str()).collect();
        if other != ids {
            return Err(HarnessError::CorpusMismatch(format!(
                "{} has {} examples, {} has {}",
                first.system_name,
                ids.len(),
                r.system_name,
                other.len()
            )));
        }
    }
    let failed: Vec<BTreeSet<String>> = reports.iter().map(|r| r.exec_failures().into_iter().collect()).collect();
    Ok(first
        .exec_failures()
        .into_iter()
        .filter(|id| failed.iter().all(|f| f.contains(id)))
        .collect())
}

/// Error groups for wrong queries found in human review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorGroup {
    Schema,
    Condition,
    Nested,
    GroupBy,
    Limit,
}

impl ErrorGroup {
    pub const ALL: [ErrorGroup; 5] = [
        ErrorGroup::Schema,
        ErrorGroup::Condition,
        ErrorGroup::Nested,
        ErrorGroup::GroupBy,
        ErrorGroup::Limit,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ErrorGroup::Schema => "Schema",
            ErrorGroup::Condition => "Condition",
            ErrorGroup::Nested => "Nested",
            ErrorGroup::GroupBy => "GROUP BY",
            ErrorGroup::Limit => "LIMIT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyLabel {
    pub example_id: String,
    /// The system (or gold set) whose query the label describes.
    pub source: String,
    pub group: ErrorGroup,
    /// True for labels proposed from tie findings rather than assigned by a
    /// person.
    #[serde(default)]
    pub suggested: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyReport {
    pub per_source: BTreeMap<String, BTreeMap<ErrorGroup, usize>>,
    pub totals: BTreeMap<ErrorGroup, usize>,
    pub total: usize,
}

impl TaxonomyReport {
    pub fn render(&self) -> String {
        let mut out = format!("{:<12}", "");
        for g in ErrorGroup::ALL {
            out += &format!("{:>11}", g.label());
        }
        out += "\n";
        let total = "Total".to_string();
        let rows = self.per_source.iter().chain(std::iter::once((&total, &self.totals)));
        for (source, hist) in rows {
            out += &format!("{source:<12}");
            for g in ErrorGroup::ALL {
                out += &format!("{:>11}", hist.get(&g).copied().unwrap_or(0));
            }
            out += "\n";
        }
        out
    }
}

fn zero_histogram() -> BTreeMap<ErrorGroup, usize> {
    ErrorGroup::ALL.iter().map(|g| (*g, 0)).collect()
}

/// Histogram of labels per source over the five groups, plus totals.
pub fn taxonomy_report(labels: &[TaxonomyLabel], corpus: &Corpus) -> Result<TaxonomyReport, HarnessError> {
    let known: BTreeSet<&str> = corpus.examples.iter().map(|e| e.example_id.as_str()).collect();
    let mut per_source: BTreeMap<String, BTreeMap<ErrorGroup, usize>> = BTreeMap::new();
    let mut totals = zero_histogram();
    for l in labels {
        if !known.contains(l.example_id.as_str()) {
            return Err(HarnessError::UnknownExample(l.example_id.clone()));
        }
        *per_source.entry(l.source.clone()).or_insert_with(zero_histogram).entry(l.group).or_insert(0) += 1;
        *totals.entry(l.group).or_insert(0) += 1;
    }
    Ok(TaxonomyReport {
        per_source,
        totals,
        total: labels.len(),
    })
}

/// Proposed GROUP BY / LIMIT labels for the gold queries of `examples`,
/// derived from tie findings of normal severity.
pub fn suggest_labels(corpus: &Corpus, examples: &[String], source: &str) -> Vec<TaxonomyLabel> {
    let wanted: BTreeSet<&str> = examples.iter().map(String::as_str).collect();
    let parsed = corpus.parse_gold();
    let mut out = Vec::new();
    for (p, ex) in parsed.iter().zip(&corpus.examples) {
        if !wanted.contains(ex.example_id.as_str()) {
            continue;
        }
        let Some(ast) = p.result.ast() else { continue };
        let groups: BTreeSet<ErrorGroup> = audit_query(ast, corpus.schema_for(ex))
            .iter()
            .filter(|f| f.severity == Severity::Normal)
            .filter_map(|f| match f.category {
                TieCategory::GroupByMisuse => Some(ErrorGroup::GroupBy),
                TieCategory::Limit1 | TieCategory::LimitN => Some(ErrorGroup::Limit),
                TieCategory::OrderByDistinct => None,
            })
            .collect();
        out.extend(groups.into_iter().map(|group| TaxonomyLabel {
            example_id: ex.example_id.clone(),
            source: source.to_string(),
            group,
            suggested: true,
        }));
    }
    out
}
