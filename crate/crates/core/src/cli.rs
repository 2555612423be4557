//! The `trustledger` command line.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 usage or configuration
//! error, 3 a feedback without a supporting interaction was found after a
//! run, 4 chain verification failed.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::evidence::{build_evidence_map, InteractionSet};
use crate::ledger::{Chain, EventPayload, LedgerConfig};
use crate::scoring::{
    sigma_service, sigma_service_linear, Context, Mechanism, ScoringError, ScoringMechanism, DEFAULT_EMPTY_VALUE,
};
use crate::selection::EvidenceSelection;
use crate::sim::bench::{bench_throughput, parse_kind, DEFAULT_WORKLOADS};
use crate::sim::{replay_fixture, run_scenario, ScenarioConfig, SimError};
use crate::Service;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNBACKED: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "trustledger",
    version,
    about = "Evidence-based trust scores on a simulated ledger"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Summary,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write metrics, summary and the chain dump.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed and TRUSTLEDGER_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure simulated throughput for a list of batch sizes.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WORKLOADS.to_vec())]
        workloads: Vec<usize>,
        /// access, review, query, update, register or transfer.
        #[arg(long, default_value = "review")]
        kind: String,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the recommendation score of a service from a chain dump.
    Score {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        service: String,
        #[arg(long, default_value = "average")]
        mechanism: String,
        #[arg(long, default_value = "uniform")]
        selection: String,
        /// Comma-separated interaction uids; all of the service's otherwise.
        #[arg(long, value_delimiter = ',')]
        context: Option<Vec<u64>>,
        #[arg(long, default_value_t = DEFAULT_EMPTY_VALUE)]
        empty_value: f64,
    },
    /// Check a chain dump's hash links, timestamps and uid uniqueness.
    Verify {
        #[arg(long)]
        chain: PathBuf,
    },
    /// Write a built-in fixture chain.
    Fixture {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a chain dump as an event table or a summary.
    Export {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Process entry point.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Runs one command with explicit streams; returns the exit code.
pub fn run(
    args: impl IntoIterator<Item = impl Into<OsString> + Clone>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

struct Failure(i32, String);

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure(EXIT_FAILURE, format!("{}: {e}", path.display()))
}

fn write_output(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(io_err(p)),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure(EXIT_FAILURE, e.to_string())),
    }
}

fn load_chain(path: &Path) -> Result<Chain, Failure> {
    let f = File::open(path).map_err(io_err(path))?;
    Chain::read_jsonl(BufReader::new(f)).map_err(|e| Failure(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn load_verified(path: &Path) -> Result<Chain, Failure> {
    let chain = load_chain(path)?;
    chain
        .verify()
        .map_err(|v| Failure(EXIT_VERIFY, format!("chain verification failed: {v}")))?;
    Ok(chain)
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        Command::Run { config, seed, out: dir } => cmd_run(&config, seed, &dir, out),
        Command::Bench {
            workloads,
            kind,
            format,
            out: path,
        } => {
            let kind =
                parse_kind(&kind).ok_or_else(|| Failure(EXIT_CONFIG, format!("unknown transaction kind {kind:?}")))?;
            if workloads.contains(&0) {
                return Err(Failure(EXIT_CONFIG, "workloads must be positive".into()));
            }
            let rows = bench_throughput(&workloads, kind, LedgerConfig::default());
            let text = match format {
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    for r in &rows {
                        w.serialize(r).map_err(|e| Failure(EXIT_FAILURE, e.to_string()))?;
                    }
                    String::from_utf8(w.into_inner().map_err(|e| Failure(EXIT_FAILURE, e.to_string()))?)
                        .expect("csv is utf-8")
                }
                Format::Summary => serde_json::to_string_pretty(&rows).expect("plain data") + "\n",
            };
            write_output(out, path.as_deref(), &text)?;
            Ok(EXIT_OK)
        }
        Command::Score {
            chain,
            service,
            mechanism,
            selection,
            context,
            empty_value,
        } => {
            let mechanism: Mechanism = mechanism
                .parse()
                .map_err(|e: ScoringError| Failure(EXIT_CONFIG, e.to_string()))?;
            let selection: EvidenceSelection = selection
                .parse()
                .map_err(|e: crate::selection::SelectionError| Failure(EXIT_CONFIG, e.to_string()))?;
            let chain = load_verified(&chain)?;
            let m = build_evidence_map(chain.events()).map_err(|e| Failure(EXIT_FAILURE, e.to_string()))?;
            let ctx = match context {
                Some(uids) => Context::Set(uids.into_iter().collect::<InteractionSet>()),
                None => Context::All,
            };
            let mu = ScoringMechanism::new(mechanism).with_empty_value(empty_value);
            let y = Service::from(service.as_str());
            let r = match sigma_service(&m, &y, &ctx, &mu, &selection) {
                Err(ScoringError::EnumerationCapExceeded { count, .. }) => {
                    let _ = writeln!(
                        err,
                        "note: {count} traces exceed the enumeration cap; using the closed form"
                    );
                    sigma_service_linear(&m, &y, &ctx, &mu, &selection)
                }
                r => r,
            }
            .map_err(|e| Failure(EXIT_FAILURE, e.to_string()))?;
            writeln!(out, "{:.6}", r.value).map_err(|e| Failure(EXIT_FAILURE, e.to_string()))?;
            Ok(EXIT_OK)
        }
        Command::Verify { chain } => {
            let c = load_chain(&chain)?;
            match c.verify() {
                Ok(()) => {
                    let head = c.head().expect("verified chains are non-empty");
                    let _ = writeln!(out, "ok: {} blocks, head {}", c.len(), head.hash.to_hex());
                    Ok(EXIT_OK)
                }
                Err(v) => {
                    let _ = writeln!(out, "violation: {v}");
                    Ok(EXIT_VERIFY)
                }
            }
        }
        Command::Fixture { name, out: path } => {
            let (ledger, info) = replay_fixture(&name).map_err(|e| Failure(EXIT_CONFIG, e.to_string()))?;
            let f = File::create(&path).map_err(io_err(&path))?;
            ledger
                .chain()
                .write_jsonl(std::io::BufWriter::new(f))
                .map_err(io_err(&path))?;
            let _ = writeln!(
                out,
                "{}: {} blocks, {} interactions, {} feedbacks, {} rejected reviews",
                info.name,
                ledger.chain().len(),
                info.interactions,
                info.feedbacks,
                info.rejected_reviews
            );
            Ok(EXIT_OK)
        }
        Command::Export {
            chain,
            format,
            out: path,
        } => {
            let c = load_chain(&chain)?;
            let text = match format {
                Format::Csv => events_csv(&c)?,
                Format::Summary => chain_summary(&c),
            };
            write_output(out, path.as_deref(), &text)?;
            Ok(EXIT_OK)
        }
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, dir: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut cfg = ScenarioConfig::load(config).map_err(|e| Failure(EXIT_CONFIG, e.to_string()))?;
    cfg.apply_env_seed().map_err(|e| Failure(EXIT_CONFIG, e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let run = run_scenario(&cfg).map_err(|e| match e {
        SimError::Config(_) | SimError::Fixture(_) => Failure(EXIT_CONFIG, e.to_string()),
        other => Failure(EXIT_FAILURE, other.to_string()),
    })?;
    run.metrics.write_dir(dir).map_err(io_err(dir))?;
    let dump = dir.join("chain.jsonl");
    let f = File::create(&dump).map_err(io_err(&dump))?;
    run.ledger
        .chain()
        .write_jsonl(std::io::BufWriter::new(f))
        .map_err(io_err(&dump))?;

    let s = &run.metrics.summary;
    let _ = writeln!(
        out,
        "{} (seed {}): {} blocks, head {}",
        s.name, s.seed, s.blocks, s.head_hash
    );
    for (p, scores) in &s.final_scores {
        for (svc, v) in scores {
            let _ = writeln!(out, "  {p} {svc} {v:.6}");
        }
    }
    if s.unbacked_feedbacks > 0 {
        return Err(Failure(
            EXIT_UNBACKED,
            format!("{} feedback events lack a supporting interaction", s.unbacked_feedbacks),
        ));
    }
    if !s.chain_valid {
        return Err(Failure(EXIT_VERIFY, "produced chain does not verify".into()));
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EventRow<'a> {
    block: u64,
    index: u32,
    kind: &'static str,
    account: &'a str,
    counterparty: &'a str,
    uid: Option<u64>,
    rating: Option<u8>,
    score: Option<f64>,
}

fn events_csv(c: &Chain) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for ev in c.events() {
        let row = match &ev.payload {
            EventPayload::Interaction { user, resource, uid } => EventRow {
                block: ev.block_number,
                index: ev.index_in_block,
                kind: "interaction",
                account: user.as_str(),
                counterparty: resource.as_str(),
                uid: Some(*uid),
                rating: None,
                score: None,
            },
            EventPayload::Feedback {
                submitter,
                delegator,
                rating,
                uid,
            } => EventRow {
                block: ev.block_number,
                index: ev.index_in_block,
                kind: "feedback",
                account: submitter.as_str(),
                counterparty: delegator.as_str(),
                uid: Some(*uid),
                rating: Some(*rating),
                score: None,
            },
            EventPayload::ScoreUpdate {
                provider,
                service,
                score,
            } => EventRow {
                block: ev.block_number,
                index: ev.index_in_block,
                kind: "score-update",
                account: provider.as_str(),
                counterparty: service.0.as_str(),
                uid: None,
                rating: None,
                score: Some(*score),
            },
            EventPayload::ScoreResponse {
                provider,
                recipient,
                score,
                ..
            } => EventRow {
                block: ev.block_number,
                index: ev.index_in_block,
                kind: "score-response",
                account: provider.as_str(),
                counterparty: recipient.as_str(),
                uid: None,
                rating: None,
                score: Some(*score),
            },
        };
        w.serialize(row).map_err(|e| Failure(EXIT_FAILURE, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure(EXIT_FAILURE, e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn chain_summary(c: &Chain) -> String {
    #[derive(Serialize)]
    struct Summary {
        blocks: usize,
        transactions: usize,
        interactions: usize,
        feedbacks: usize,
        score_updates: usize,
        score_responses: usize,
        services: Vec<String>,
        head_hash: Option<String>,
        valid: bool,
    }
    let mut s = Summary {
        blocks: c.len(),
        transactions: c.blocks().iter().map(|b| b.transactions.len()).sum(),
        interactions: 0,
        feedbacks: 0,
        score_updates: 0,
        score_responses: 0,
        services: Vec::new(),
        head_hash: c.head().map(|h| h.hash.to_hex()),
        valid: c.verify().is_ok(),
    };
    let mut services = std::collections::BTreeSet::new();
    for ev in c.events() {
        match &ev.payload {
            EventPayload::Interaction { resource, .. } => {
                s.interactions += 1;
                services.insert(resource.to_string());
            }
            EventPayload::Feedback { .. } => s.feedbacks += 1,
            EventPayload::ScoreUpdate { .. } => s.score_updates += 1,
            EventPayload::ScoreResponse { .. } => s.score_responses += 1,
        }
    }
    s.services = services.into_iter().collect();
    serde_json::to_string_pretty(&s).expect("plain data") + "\n"
}
