//! Blind two-round labeling protocol, kept as an event-sourced state machine.
//!
//! A [`Session`] is only ever changed by applying an [`Event`]. Every
//! mutating operation is split into a fallible `plan_*`/`check_*` step that
//! produces the event and an infallible [`Session::apply`], so the event log
//! replays to the same state.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sqlaudit_core::sql::{Affinity, DbSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Round {
    One,
    Two,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnView {
    pub name: String,
    #[serde(rename = "type")]
    pub affinity: Affinity,
    pub primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKeyView {
    pub columns: Vec<String>,
    pub references_table: String,
    pub references_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableView {
    pub name: String,
    pub columns: Vec<ColumnView>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKeyView>,
}

/// Schema summary shown to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchemaView {
    pub database_id: String,
    pub tables: Vec<TableView>,
}

impl From<&DbSchema> for SchemaView {
    fn from(s: &DbSchema) -> Self {
        SchemaView {
            database_id: s.database_id.clone(),
            tables: s
                .tables
                .iter()
                .map(|t| TableView {
                    name: t.name.clone(),
                    columns: t
                        .columns
                        .iter()
                        .map(|c| ColumnView {
                            name: c.name.clone(),
                            affinity: c.affinity,
                            primary_key: t.primary_key.iter().any(|k| k.eq_ignore_ascii_case(&c.name)),
                        })
                        .collect(),
                    foreign_keys: t
                        .foreign_keys
                        .iter()
                        .map(|fk| ForeignKeyView {
                            columns: fk.columns.clone(),
                            references_table: fk.foreign_table.clone(),
                            references_columns: fk.foreign_columns.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub sql: String,
    pub hidden_source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub example_id: String,
    pub question: String,
    pub schema_view: SchemaView,
    pub candidates: Vec<Candidate>,
}

/// Inputs for one task before shuffling: source name to SQL text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInput {
    pub example_id: String,
    pub question: String,
    #[serde(default)]
    pub schema_view: SchemaView,
    pub candidates: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session_id: String,
    pub annotators: Vec<String>,
    pub seed: u64,
    pub tasks: Vec<AnnotationTask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub task_id: String,
    pub annotator_id: String,
    pub candidate_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub round: Round,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        spec: SessionSpec,
        tokens: BTreeMap<String, String>,
    },
    Labeled {
        session_id: String,
        record: LabelRecord,
    },
    Advanced {
        session_id: String,
        disagreements: BTreeMap<String, BTreeSet<String>>,
    },
    Finalized {
        session_id: String,
        skipped_missing: bool,
    },
}

impl Event {
    pub fn session_id(&self) -> &str {
        match self {
            Event::Created { spec, .. } => &spec.session_id,
            Event::Labeled { session_id, .. } | Event::Advanced { session_id, .. } | Event::Finalized { session_id, .. } => {
                session_id
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("a session needs at least two annotators")]
    TooFewAnnotators,
    #[error("annotator ids must be distinct and non-empty")]
    BadAnnotators,
    #[error("example {0} has no candidates")]
    EmptyTask(String),
    #[error("session {0} already exists")]
    DuplicateSession(String),
    #[error("unknown example {0}")]
    UnknownExample(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("{0} is not an annotator of this session")]
    NotAMember(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("session is finalized")]
    SessionFinalized,
    #[error("task {0} had no round-one disagreement")]
    NotDisagreementTask(String),
    #[error("round-two labels need an explanation")]
    MissingExplanation,
    #[error("round incomplete; {} label(s) missing", .missing.len())]
    RoundIncomplete { missing: Vec<String> },
    #[error("operation needs round {expected:?}, session is in {actual:?}")]
    WrongRound { expected: Round, actual: Round },
    #[error("report is available once the session is finalized")]
    NotFinalized,
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::TooFewAnnotators => "TooFewAnnotators",
            ProtocolError::BadAnnotators => "BadAnnotators",
            ProtocolError::EmptyTask(_) => "EmptyTask",
            ProtocolError::DuplicateSession(_) => "DuplicateSession",
            ProtocolError::UnknownExample(_) => "UnknownExample",
            ProtocolError::UnknownSession(_) => "UnknownSession",
            ProtocolError::NotAMember(_) => "NotAMember",
            ProtocolError::UnknownTask(_) => "UnknownTask",
            ProtocolError::UnknownCandidate(_) => "UnknownCandidate",
            ProtocolError::SessionFinalized => "SessionFinalized",
            ProtocolError::NotDisagreementTask(_) => "NotDisagreementTask",
            ProtocolError::MissingExplanation => "MissingExplanation",
            ProtocolError::RoundIncomplete { .. } => "RoundIncomplete",
            ProtocolError::WrongRound { .. } => "WrongRound",
            ProtocolError::NotFinalized => "NotFinalized",
        }
    }
}

/// Build tasks with candidates shuffled per task under `seed`. Candidate ids
/// are assigned after shuffling, so they carry no trace of the source.
pub fn build_spec(session_id: &str, annotators: Vec<String>, seed: u64, inputs: Vec<TaskInput>) -> Result<SessionSpec, ProtocolError> {
    if annotators.len() < 2 {
        return Err(ProtocolError::TooFewAnnotators);
    }
    let distinct: BTreeSet<&String> = annotators.iter().collect();
    if distinct.len() != annotators.len() || annotators.iter().any(|a| a.trim().is_empty()) {
        return Err(ProtocolError::BadAnnotators);
    }
    let mut tasks = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.into_iter().enumerate() {
        if input.candidates.is_empty() {
            return Err(ProtocolError::EmptyTask(input.example_id));
        }
        let mut pairs: Vec<(String, String)> = input.candidates.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        pairs.shuffle(&mut rng);
        tasks.push(AnnotationTask {
            task_id: format!("{session_id}.t{}", i + 1),
            example_id: input.example_id,
            question: input.question,
            schema_view: input.schema_view,
            candidates: pairs
                .into_iter()
                .enumerate()
                .map(|(j, (source, sql))| Candidate {
                    candidate_id: format!("c{}", j + 1),
                    sql,
                    hidden_source: source,
                })
                .collect(),
        });
    }
    Ok(SessionSpec {
        session_id: session_id.to_string(),
        annotators,
        seed,
        tasks,
    })
}

/// Annotator-facing label submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub annotator: String,
    pub task_id: String,
    pub candidate_id: String,
    pub label: Label,
    #[serde(default)]
    pub explanation: Option<String>,
}

type LabelKey = (String, String, String, Round);

#[derive(Debug, Clone)]
pub struct Session {
    pub spec: SessionSpec,
    pub tokens: BTreeMap<String, String>,
    pub round: Round,
    pub skipped_missing: bool,
    /// Every label ever submitted, in order.
    pub history: Vec<LabelRecord>,
    live: BTreeMap<LabelKey, usize>,
    /// Round-one disagreements: task id to disagreeing candidate ids.
    pub disagreements: BTreeMap<String, BTreeSet<String>>,
    task_index: BTreeMap<String, usize>,
}

// Views ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MyLabel {
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub round: Round,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateView {
    pub candidate_id: String,
    pub sql: String,
    pub my_label: Option<MyLabel>,
    /// Number of labels this annotator has submitted for the candidate.
    pub history: usize,
    pub disagreement: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub peer_explanations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub session_id: String,
    pub task_id: String,
    pub example_id: String,
    pub question: String,
    pub schema: SchemaView,
    pub round: Round,
    pub disagreement: bool,
    pub candidates: Vec<CandidateView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub question: String,
    pub labeled: usize,
    pub candidates: usize,
    pub disagreement: bool,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskQueue {
    pub session_id: String,
    pub annotator: String,
    pub round: Round,
    pub completed: usize,
    pub total: usize,
    pub tasks: Vec<TaskSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAccuracy {
    pub correct: usize,
    pub resolved: usize,
    /// Percentage over resolved tasks; absent when none resolved.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub session_id: String,
    pub total_tasks: usize,
    pub sources: BTreeMap<String, SourceAccuracy>,
    pub inconsistent_count: usize,
    pub inconsistent_tasks: Vec<String>,
    /// (task, candidate) pairs still labeled differently.
    pub inconsistent_pairs: usize,
    pub skipped_missing: bool,
}

impl AccuracyReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let names: Vec<&String> = self.sources.keys().collect();
        out.push_str(&format!("{:<24}", "Source"));
        out.push_str(&format!("{:>10}{:>10}{:>10}\n", "Accuracy", "Correct", "Resolved"));
        for n in names {
            let s = &self.sources[n];
            let acc = s.accuracy.map_or("-".to_string(), |a| format!("{a:.1}"));
            out.push_str(&format!("{n:<24}{acc:>10}{:>10}{:>10}\n", s.correct, s.resolved));
        }
        out.push_str(&format!("Incon: {} of {} tasks\n", self.inconsistent_count, self.total_tasks));
        out
    }
}

impl Session {
    pub fn new(spec: SessionSpec, tokens: BTreeMap<String, String>) -> Self {
        let task_index = spec.tasks.iter().enumerate().map(|(i, t)| (t.task_id.clone(), i)).collect();
        Session {
            spec,
            tokens,
            round: Round::One,
            skipped_missing: false,
            history: Vec::new(),
            live: BTreeMap::new(),
            disagreements: BTreeMap::new(),
            task_index,
        }
    }

    pub fn id(&self) -> &str {
        &self.spec.session_id
    }

    pub fn is_member(&self, annotator: &str) -> bool {
        self.spec.annotators.iter().any(|a| a == annotator)
    }

    pub fn task(&self, task_id: &str) -> Result<&AnnotationTask, ProtocolError> {
        self.task_index
            .get(task_id)
            .map(|&i| &self.spec.tasks[i])
            .ok_or_else(|| ProtocolError::UnknownTask(task_id.to_string()))
    }

    pub fn apply(&mut self, event: Event) {
        match event {
            Event::Created { .. } => {}
            Event::Labeled { record, .. } => {
                let key = (
                    record.task_id.clone(),
                    record.annotator_id.clone(),
                    record.candidate_id.clone(),
                    record.round,
                );
                self.live.insert(key, self.history.len());
                self.history.push(record);
            }
            Event::Advanced { disagreements, .. } => {
                self.disagreements = disagreements;
                self.round = Round::Two;
            }
            Event::Finalized { skipped_missing, .. } => {
                self.skipped_missing = skipped_missing;
                self.round = Round::Finalized;
            }
        }
    }

    fn live_label(&self, task: &str, annotator: &str, candidate: &str, round: Round) -> Option<&LabelRecord> {
        self.live
            .get(&(task.to_string(), annotator.to_string(), candidate.to_string(), round))
            .map(|&i| &self.history[i])
    }

    /// Label in force: the round-two revision if any, else the round-one label.
    fn effective(&self, task: &str, annotator: &str, candidate: &str) -> Option<&LabelRecord> {
        self.live_label(task, annotator, candidate, Round::Two)
            .or_else(|| self.live_label(task, annotator, candidate, Round::One))
    }

    fn ensure_member(&self, annotator: &str) -> Result<(), ProtocolError> {
        if self.is_member(annotator) {
            Ok(())
        } else {
            Err(ProtocolError::NotAMember(annotator.to_string()))
        }
    }

    /// Validate a submission and turn it into the event to persist.
    pub fn check_label(&self, sub: LabelSubmission, timestamp: u64) -> Result<Event, ProtocolError> {
        if self.round == Round::Finalized {
            return Err(ProtocolError::SessionFinalized);
        }
        self.ensure_member(&sub.annotator)?;
        let task = self.task(&sub.task_id)?;
        if !task.candidates.iter().any(|c| c.candidate_id == sub.candidate_id) {
            return Err(ProtocolError::UnknownCandidate(sub.candidate_id));
        }
        let explanation = sub.explanation.filter(|e| !e.trim().is_empty());
        if self.round == Round::Two {
            if !self.disagreements.contains_key(&sub.task_id) {
                return Err(ProtocolError::NotDisagreementTask(sub.task_id));
            }
            if explanation.is_none() {
                return Err(ProtocolError::MissingExplanation);
            }
        }
        Ok(Event::Labeled {
            session_id: self.id().to_string(),
            record: LabelRecord {
                task_id: sub.task_id,
                annotator_id: sub.annotator,
                candidate_id: sub.candidate_id,
                label: sub.label,
                explanation,
                round: self.round,
                timestamp,
            },
        })
    }

    fn missing_labels(&self, round: Round, pairs: &[(String, String)]) -> Vec<String> {
        let mut missing = Vec::new();
        for (task, cand) in pairs {
            for a in &self.spec.annotators {
                if self.live_label(task, a, cand, round).is_none() {
                    missing.push(format!("{task}/{cand}/{a}"));
                }
            }
        }
        missing
    }

    fn all_pairs(&self) -> Vec<(String, String)> {
        self.spec
            .tasks
            .iter()
            .flat_map(|t| t.candidates.iter().map(move |c| (t.task_id.clone(), c.candidate_id.clone())))
            .collect()
    }

    /// (task, candidate) pairs whose labels in force differ across annotators.
    pub fn current_disagreements(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (task, cand) in self.all_pairs() {
            let labels: BTreeSet<Option<Label>> = self
                .spec
                .annotators
                .iter()
                .map(|a| self.effective(&task, a, &cand).map(|r| r.label))
                .collect();
            if labels.len() > 1 {
                out.entry(task).or_default().insert(cand);
            }
        }
        out
    }

    pub fn plan_advance(&self) -> Result<Event, ProtocolError> {
        if self.round != Round::One {
            return Err(if self.round == Round::Finalized {
                ProtocolError::SessionFinalized
            } else {
                ProtocolError::WrongRound {
                    expected: Round::One,
                    actual: self.round,
                }
            });
        }
        let missing = self.missing_labels(Round::One, &self.all_pairs());
        if !missing.is_empty() {
            return Err(ProtocolError::RoundIncomplete { missing });
        }
        Ok(Event::Advanced {
            session_id: self.id().to_string(),
            disagreements: self.current_disagreements(),
        })
    }

    pub fn plan_finalize(&self, skip_missing: bool) -> Result<Event, ProtocolError> {
        match self.round {
            Round::Finalized => return Err(ProtocolError::SessionFinalized),
            Round::One => {
                return Err(ProtocolError::WrongRound {
                    expected: Round::Two,
                    actual: Round::One,
                })
            }
            Round::Two => {}
        }
        let pairs: Vec<(String, String)> = self
            .disagreements
            .iter()
            .flat_map(|(t, cs)| cs.iter().map(move |c| (t.clone(), c.clone())))
            .collect();
        let missing = self.missing_labels(Round::Two, &pairs);
        if !missing.is_empty() && !skip_missing {
            return Err(ProtocolError::RoundIncomplete { missing });
        }
        Ok(Event::Finalized {
            session_id: self.id().to_string(),
            skipped_missing: !missing.is_empty(),
        })
    }

    /// Per-source accuracy over tasks on which all annotators agree for
    /// every candidate; the rest are counted as inconsistent.
    pub fn compute_report(&self) -> AccuracyReport {
        let open = self.current_disagreements();
        let mut sources: BTreeMap<String, SourceAccuracy> = BTreeMap::new();
        for t in &self.spec.tasks {
            for c in &t.candidates {
                sources.entry(c.hidden_source.clone()).or_insert(SourceAccuracy {
                    correct: 0,
                    resolved: 0,
                    accuracy: None,
                });
            }
            if open.contains_key(&t.task_id) {
                continue;
            }
            for c in &t.candidates {
                let first = &self.spec.annotators[0];
                let Some(r) = self.effective(&t.task_id, first, &c.candidate_id) else { continue };
                let s = sources.get_mut(&c.hidden_source).expect("inserted above");
                s.resolved += 1;
                if r.label == Label::Correct {
                    s.correct += 1;
                }
            }
        }
        for s in sources.values_mut() {
            s.accuracy = (s.resolved > 0).then(|| 100.0 * s.correct as f64 / s.resolved as f64);
        }
        AccuracyReport {
            session_id: self.id().to_string(),
            total_tasks: self.spec.tasks.len(),
            sources,
            inconsistent_count: open.len(),
            inconsistent_pairs: open.values().map(BTreeSet::len).sum(),
            inconsistent_tasks: open.into_keys().collect(),
            skipped_missing: self.skipped_missing,
        }
    }

    pub fn report(&self) -> Result<AccuracyReport, ProtocolError> {
        if self.round != Round::Finalized {
            return Err(ProtocolError::NotFinalized);
        }
        Ok(self.compute_report())
    }

    pub fn task_view(&self, annotator: &str, task_id: &str) -> Result<TaskView, ProtocolError> {
        self.ensure_member(annotator)?;
        let task = self.task(task_id)?;
        let disputed = self.disagreements.get(task_id);
        let in_review = self.round != Round::One && disputed.is_some();
        let candidates = task
            .candidates
            .iter()
            .map(|c| {
                let mine = self.effective(task_id, annotator, &c.candidate_id);
                let history = self
                    .history
                    .iter()
                    .filter(|r| r.task_id == task_id && r.annotator_id == annotator && r.candidate_id == c.candidate_id)
                    .count();
                let peer_explanations = if in_review {
                    self.spec
                        .annotators
                        .iter()
                        .filter(|a| *a != annotator)
                        .filter_map(|a| {
                            self.history
                                .iter()
                                .rev()
                                .find(|r| {
                                    r.task_id == task_id && r.annotator_id == *a && r.candidate_id == c.candidate_id && r.explanation.is_some()
                                })
                                .and_then(|r| r.explanation.clone())
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                CandidateView {
                    candidate_id: c.candidate_id.clone(),
                    sql: c.sql.clone(),
                    my_label: mine.map(|r| MyLabel {
                        label: r.label,
                        explanation: r.explanation.clone(),
                        round: r.round,
                    }),
                    history,
                    disagreement: in_review && disputed.is_some_and(|d| d.contains(&c.candidate_id)),
                    peer_explanations,
                }
            })
            .collect();
        Ok(TaskView {
            session_id: self.id().to_string(),
            task_id: task.task_id.clone(),
            example_id: task.example_id.clone(),
            question: task.question.clone(),
            schema: task.schema_view.clone(),
            round: self.round,
            disagreement: in_review,
            candidates,
        })
    }

    pub fn task_queue(&self, annotator: &str) -> Result<TaskQueue, ProtocolError> {
        self.ensure_member(annotator)?;
        let round = if self.round == Round::Two { Round::Two } else { Round::One };
        let tasks: Vec<TaskSummary> = self
            .spec
            .tasks
            .iter()
            .map(|t| {
                let disagreement = self.round != Round::One && self.disagreements.contains_key(&t.task_id);
                let labeled = t
                    .candidates
                    .iter()
                    .filter(|c| self.live_label(&t.task_id, annotator, &c.candidate_id, round).is_some())
                    .count();
                let complete = if round == Round::Two {
                    let needed = self.disagreements.get(&t.task_id);
                    needed.is_none_or(|cs| {
                        cs.iter().all(|c| self.live_label(&t.task_id, annotator, c, Round::Two).is_some())
                    })
                } else {
                    labeled == t.candidates.len()
                };
                TaskSummary {
                    task_id: t.task_id.clone(),
                    question: t.question.clone(),
                    labeled,
                    candidates: t.candidates.len(),
                    disagreement,
                    complete,
                }
            })
            .collect();
        Ok(TaskQueue {
            session_id: self.id().to_string(),
            annotator: annotator.to_string(),
            round: self.round,
            completed: tasks.iter().filter(|t| t.complete).count(),
            total: tasks.len(),
            tasks,
        })
    }
}
