use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sqlaudit_annotate::{Service, ServiceConfig};
use sqlaudit_core::corpus::{corpus_stats, load_corpus, Corpus, CorpusPaths, FieldMapping, PredictionSet, StatsConfig};
use sqlaudit_core::dialect::{portability_report, CountMode, FunctionCatalog};
use sqlaudit_core::forge::{forge_tie_free_instance, forge_tie_instance, random_instance, ForgeOptions};
use sqlaudit_core::harness::{evaluate_corpus, failure_set, rewrite_corpus, EvalConfig, EvalReport};
use sqlaudit_core::sql::parse_and_resolve;
use sqlaudit_core::tie_audit::{audit_query, FindingRecord};

#[derive(Parser)]
#[command(name = "sqlaudit", version, about = "Audit text-to-SQL benchmarks for tie ambiguity and evaluation artifacts")]
struct Cli {
    /// Benchmark examples file (Spider/BIRD JSON or the native format).
    #[arg(long, global = true)]
    examples: Option<PathBuf>,
    /// Schema file (Spider-style tables.json or a list of schemas).
    #[arg(long, global = true)]
    schemas: Option<PathBuf>,
    /// Directory of databases: <db>/<db>.sqlite, <db>.sqlite or CSV folders.
    #[arg(long, global = true)]
    databases: Option<PathBuf>,
    /// Field layout of the examples file; detected when omitted.
    #[arg(long, global = true, value_enum)]
    format: Option<Layout>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the main result here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Emit JSON instead of a plain-text table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Spider,
    Bird,
    Native,
}

#[derive(Clone, Copy, ValueEnum)]
enum ForgeKind {
    Tie,
    TieFree,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Count tie-prone gold queries per category.
    Stats {
        /// Only inspect the outermost query.
        #[arg(long)]
        top_level_only: bool,
        /// Display name for the table row.
        #[arg(long, default_value = "corpus")]
        name: String,
    },
    /// List every tie finding with its location.
    Audit,
    /// Rewrite tie-prone gold queries and report what changed.
    Rewrite {
        /// Write the revised examples file here.
        #[arg(long)]
        revised: Option<PathBuf>,
        #[arg(long, default_value = "corpus")]
        name: String,
    },
    /// Score a prediction file against the gold queries.
    Eval {
        /// Predictions (JSON or SQL<TAB>db_id lines).
        #[arg(long, conflicts_with = "gold_set")]
        predictions: Option<PathBuf>,
        /// Use the gold queries of another examples file as predictions.
        #[arg(long)]
        gold_set: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// Forged instances per example, on top of the corpus database.
        #[arg(long, default_value_t = 0)]
        instances: usize,
    },
    /// Count constructs a strict SQL engine would reject.
    Portability {
        /// Function allowlist (JSON array or one name per line).
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Count each query once, under its first violation.
        #[arg(long)]
        once: bool,
        #[arg(long, default_value = "corpus")]
        name: String,
    },
    /// Generate a database instance for one example's gold query.
    Forge {
        #[arg(long)]
        example: String,
        #[arg(long, value_enum, default_value = "tie")]
        kind: ForgeKind,
        /// Rows per table for random instances.
        #[arg(long, default_value_t = 5)]
        rows: usize,
        /// Write CSV files into the output directory instead of SQLite.
        #[arg(long)]
        csv: bool,
    },
    /// Examples that every given evaluation report scores as wrong.
    Failures {
        /// EvalReport JSON files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Run the annotation service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Event log file for sessions and labels.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, env = "SQLAUDIT_ADMIN_TOKEN")]
        admin_token: Option<String>,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    stats: StatsConfig,
    eval: EvalConfig,
    catalog: Option<PathBuf>,
    count_mode: Option<CountMode>,
}

/// Failure classes, mapped to exit codes 1 and 2.
enum Failure {
    Usage(anyhow::Error),
    Input(anyhow::Error),
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            report(&e);
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            report(&e);
            ExitCode::from(2)
        }
    }
}

/// Print the error chain, skipping causes already spelled out by their parent.
fn report(e: &anyhow::Error) {
    let mut line = String::from("error");
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            line.push_str(": ");
            line.push_str(&msg);
        }
        prev = msg;
    }
    eprintln!("{line}");
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    let Some(p) = path else { return Ok(Config::default()) };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", p.display()))
        .map_err(Failure::Usage)
}

fn corpus(cli: &Cli) -> Result<Corpus, Failure> {
    let examples = cli.examples.clone().ok_or_else(|| usage("--examples is required for this command"))?;
    let mapping = cli.format.map(|l| match l {
        Layout::Spider => FieldMapping::spider(),
        Layout::Bird => FieldMapping::bird(),
        Layout::Native => FieldMapping::native(),
    });
    let c = load_corpus(
        &CorpusPaths {
            examples,
            schemas: cli.schemas.clone(),
            databases: cli.databases.clone(),
        },
        mapping,
    )
    .context("loading corpus")?;
    for w in &c.warnings {
        eprintln!("warning: {w}");
    }
    Ok(c)
}

fn emit(cli: &Cli, text: &str) -> Result<(), Failure> {
    match &cli.output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).context("writing stdout")?;
            if !text.ends_with('\n') {
                out.write_all(b"\n").context("writing stdout")?;
            }
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize")
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(config.eval.seed);
    match &cli.command {
        Command::Stats { top_level_only, name } => {
            let c = corpus(&cli)?;
            let mut sc = config.stats.clone();
            if *top_level_only {
                sc.scan_subqueries = false;
            }
            let stats = corpus_stats(&c, &sc);
            for id in &stats.unparsed {
                eprintln!("unparsed: {id}");
            }
            emit(&cli, &if cli.json { to_json(&stats) } else { stats.render(name) })
        }
        Command::Audit => {
            let c = corpus(&cli)?;
            let parsed = c.parse_gold();
            let mut records: Vec<FindingRecord> = Vec::new();
            let mut lines = String::new();
            for (p, ex) in parsed.iter().zip(&c.examples) {
                let Some(ast) = p.result.ast() else {
                    lines.push_str(&format!("{}\tunparsed\n", ex.example_id));
                    continue;
                };
                for f in audit_query(ast, c.schema_for(ex)) {
                    lines.push_str(&format!(
                        "{}\t{}\t{:?}\t{}\t{}\n",
                        ex.example_id,
                        f.category.label(),
                        f.severity,
                        f.location,
                        f.explanation
                    ));
                    records.push(FindingRecord {
                        example_id: ex.example_id.clone(),
                        finding: f,
                    });
                }
            }
            emit(&cli, &if cli.json { to_json(&records) } else { lines })
        }
        Command::Rewrite { revised, name } => {
            let c = corpus(&cli)?;
            let report = rewrite_corpus(&c);
            if let Some(path) = revised {
                let out = c.export_examples(&report.replacements());
                fs::write(path, to_json(&out)).with_context(|| format!("writing {}", path.display()))?;
            }
            emit(&cli, &if cli.json { to_json(&report) } else { report.render(name) })
        }
        Command::Eval {
            predictions,
            gold_set,
            name,
            instances,
        } => {
            let c = corpus(&cli)?;
            let preds = match (predictions, gold_set) {
                (Some(p), None) => PredictionSet::load(p, &c, name.as_deref()).context("loading predictions")?,
                (None, Some(g)) => {
                    let other = load_corpus(
                        &CorpusPaths {
                            examples: g.clone(),
                            schemas: cli.schemas.clone(),
                            databases: None,
                        },
                        None,
                    )
                    .context("loading gold set")?;
                    PredictionSet {
                        system_name: name.clone().unwrap_or_else(|| "gold-set".into()),
                        entries: other.examples.into_iter().map(|e| (e.example_id, e.gold_sql)).collect(),
                    }
                }
                _ => return Err(usage("eval needs --predictions or --gold-set")),
            };
            let mut ec = config.eval.clone();
            ec.seed = seed;
            let report = evaluate_corpus(&preds, &c, *instances, &ec);
            if cli.json || cli.output.is_some() {
                emit(&cli, &to_json(&report))?;
                if cli.output.is_some() {
                    eprint!("{}", report.render());
                }
                Ok(())
            } else {
                emit(&cli, &report.render())
            }
        }
        Command::Portability { catalog, once, name } => {
            let c = corpus(&cli)?;
            let cat = match catalog.as_ref().or(config.catalog.as_ref()) {
                Some(p) => FunctionCatalog::from_file(p).with_context(|| format!("reading {}", p.display()))?,
                None => FunctionCatalog::default(),
            };
            let mode = if *once { CountMode::Once } else { config.count_mode.unwrap_or_default() };
            let report = portability_report(&c, None, &cat, mode);
            emit(&cli, &if cli.json { to_json(&report) } else { report.render(name) })
        }
        Command::Forge { example, kind, rows, csv } => {
            let c = corpus(&cli)?;
            let out = cli.output.clone().ok_or_else(|| usage("forge needs --output"))?;
            let ex = c.example(example).ok_or_else(|| usage(format!("unknown example {example}")))?;
            let schema = c.schema_for(ex);
            let opts = ForgeOptions {
                seed,
                target_id: ex.example_id.clone(),
                ..ForgeOptions::default()
            };
            let inst = match kind {
                ForgeKind::Random => random_instance(schema, seed, *rows),
                ForgeKind::Tie | ForgeKind::TieFree => {
                    let ast = parse_and_resolve(&ex.gold_sql, schema).context("parsing gold query")?;
                    if matches!(kind, ForgeKind::Tie) {
                        forge_tie_instance(schema, &ast, &opts)
                    } else {
                        forge_tie_free_instance(schema, &ast, &opts)
                    }
                }
            }
            .context("forging instance")?;
            if *csv {
                inst.write_csv_dir(&out)
            } else {
                inst.write_sqlite(&out)
            }
            .with_context(|| format!("writing {}", out.display()))?;
            let counts: BTreeMap<&String, usize> = inst.tables.iter().map(|(t, r)| (t, r.len())).collect();
            eprintln!("{}: {}", inst.instance_id, to_json(&counts).replace('\n', " "));
            Ok(())
        }
        Command::Failures { reports } => {
            let loaded: Vec<EvalReport> = reports
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<anyhow::Result<_>>()?;
            let ids = failure_set(&loaded).context("intersecting failures")?;
            emit(&cli, &if cli.json { to_json(&ids) } else { ids.join("\n") })
        }
        Command::Serve { bind, store, admin_token } => {
            let corpus = match &cli.examples {
                Some(_) => Some(corpus(&cli)?),
                None => None,
            };
            let svc = Service::open(ServiceConfig {
                store: store.clone(),
                admin_token: admin_token.clone(),
                corpus,
                query_timeout: None,
            })
            .context("opening session store")?;
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(bind.as_str())
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                eprintln!("listening on {}", listener.local_addr()?);
                sqlaudit_annotate::serve(listener, svc).await?;
                anyhow::Ok(())
            })?;
            Ok(())
        }
    }
}
