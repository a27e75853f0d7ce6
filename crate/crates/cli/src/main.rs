//! `citeqa` command-line tool.
//!
//! Every subcommand prints plain text by default and JSON with `--json`.
//! Exit codes: 0 on success, 1 on error, 2 when `verify` finds a claim that
//! is not supported.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use citeqa_core::claims::parse_text;
use citeqa_core::config::Config;
use citeqa_core::corpus::{ingest_files, Corpus, DocumentLookup};
use citeqa_core::engine::{build_index, BuildOptions, ClaimReport, Engine};
use citeqa_core::feedback::{export, replay, ExportFormat, FeedbackKind, FeedbackStore, FEEDBACK_FILE};
use citeqa_core::prompt::{bundle_from_ids, PromptBundle, PromptTemplate, MAX_DOCS};
use citeqa_core::scifact::{self, NliExample, RawClaimEntry};
use citeqa_core::verify::{verify_parsed, VerdictAggregate, VerifyOptions};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "citeqa", version, about = "Referenced question answering over scientific abstracts")]
struct Cli {
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for indexing and verification (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML configuration file.
    #[arg(long, global = true, env = "CITEQA_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read JSONL abstracts into a corpus directory.
    Ingest {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the lexical and vector indexes for a corpus.
    Index {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Store full-precision vectors.
        #[arg(long)]
        no_quantize: bool,
    },
    /// Hybrid search.
    Search {
        #[command(flatten)]
        loc: IndexLocation,
        #[arg(long)]
        query: String,
        #[arg(long)]
        k: Option<usize>,
        /// Weight of the lexical arm; the semantic arm gets the rest.
        #[arg(long)]
        w_lex: Option<f64>,
    },
    /// Answer a question with citations and verify each claim.
    Ask {
        #[command(flatten)]
        loc: IndexLocation,
        #[arg(long)]
        question: String,
        #[arg(long, default_value_t = MAX_DOCS)]
        k: usize,
        /// Write the prompt bundle (JSON) for later `parse` / `verify`.
        #[arg(long)]
        bundle_out: Option<PathBuf>,
        /// Write the raw answer text.
        #[arg(long)]
        answer_out: Option<PathBuf>,
    },
    /// Split an answer into claims and resolve its citations.
    Parse {
        #[arg(long)]
        answer: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Verify each claim of an answer against the abstracts it cites.
    Verify {
        #[arg(long)]
        answer: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// SciFact-derived NLI dataset preparation and evaluation.
    Scifact {
        #[command(subcommand)]
        command: ScifactCommand,
    },
    /// Feedback log tools.
    Feedback {
        #[command(subcommand)]
        command: FeedbackCommand,
    },
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        loc: IndexLocation,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        feedback_log: Option<PathBuf>,
    },
}

#[derive(Args)]
struct IndexLocation {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ScifactCommand {
    /// Split multi-document entries, drop uncited ones and deduplicate.
    Clean {
        /// Entries as `{claim, label, docs: [{doc_id, title, abstract}]}` lines.
        #[arg(long, conflicts_with_all = ["claims", "scifact_corpus"])]
        input: Option<PathBuf>,
        /// Native SciFact claims file (used with `--scifact-corpus`).
        #[arg(long, requires = "scifact_corpus")]
        claims: Option<PathBuf>,
        #[arg(long)]
        scifact_corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified 80/10/10 split into train/validation/test files.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = scifact::DEFAULT_SEED)]
        seed: u64,
    },
    /// Score the configured NLI backend on a test file.
    Eval {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum FeedbackCommand {
    /// Export training examples from the feedback log.
    Export {
        /// `label_override` or `answer_edit`.
        #[arg(long)]
        kind: FeedbackKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

/// Distinguishes "ran fine, but claims failed" from errors.
enum Outcome {
    Ok,
    Unsupported,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Unsupported) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let config = Config::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let out = Output { json: cli.json };
    match cli.command {
        Command::Ingest { input, out: dir } => ingest(&out, &input, &dir),
        Command::Index {
            corpus,
            out: dir,
            no_quantize,
        } => index(&out, &config, corpus, dir, no_quantize),
        Command::Search { loc, query, k, w_lex } => {
            let mut config = config;
            if let Some(w) = w_lex {
                config.fusion = config.fusion.with_lexical_weight(w);
                config.validate()?;
            }
            let engine = open_engine(&config, &loc)?;
            let k = k.unwrap_or(config.fusion.final_k);
            let hits = engine.search(&query, k)?;
            out.emit(&hits, || {
                hits.iter()
                    .map(|h| format!("{}\t{:.6}\t{:.6}\t{:.6}", h.doc_id, h.fused, h.lex_norm, h.sem_norm))
                    .collect()
            })
        }
        Command::Ask {
            loc,
            question,
            k,
            bundle_out,
            answer_out,
        } => ask(&out, &config, &loc, &question, k, bundle_out, answer_out),
        Command::Parse { answer, bundle } => {
            let (text, bundle) = read_answer(&answer, &bundle)?;
            let parsed = parse_text(&text, &bundle);
            out.emit(&parsed, || {
                let mut lines: Vec<String> = parsed
                    .claims
                    .iter()
                    .map(|c| format!("{}\t{}\t{}", c.claim_id, c.refs.join(","), c.text))
                    .collect();
                lines.extend(
                    parsed
                        .dangling
                        .iter()
                        .map(|d| format!("dangling\tclaim {}\t[{}]", d.claim_id, d.local_index)),
                );
                lines
            })
        }
        Command::Verify { answer, bundle } => verify(&out, &config, &answer, &bundle),
        Command::Scifact { command } => scifact_cmd(&out, &config, command),
        Command::Feedback {
            command: FeedbackCommand::Export { kind, out: dest, log, corpus },
        } => {
            let log = log
                .or_else(|| config.paths.feedback_log.clone())
                .or_else(|| config.paths.index.as_ref().map(|i| i.join(FEEDBACK_FILE)))
                .context("no feedback log given (--log or paths.feedback_log)")?;
            let corpus = load_corpus(&config, corpus.as_deref())?;
            let events = replay(&log)?;
            let mut w = BufWriter::new(File::create(&dest).with_context(|| format!("creating {}", dest.display()))?);
            let n = export(&events, kind, ExportFormat::Jsonl, &corpus, &mut w)?;
            w.flush()?;
            #[derive(Serialize)]
            struct Exported<'a> {
                events: usize,
                exported: usize,
                out: &'a Path,
            }
            let report = Exported {
                events: events.len(),
                exported: n,
                out: &dest,
            };
            out.emit(&report, || vec![format!("exported {n} of {} events to {}", events.len(), dest.display())])
        }
        Command::Serve { loc, addr, feedback_log } => serve(&config, &loc, addr, feedback_log),
    }
}

struct Output {
    json: bool,
}

impl Output {
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> Vec<String>) -> Result<Outcome> {
        let stdout = io::stdout();
        let mut w = stdout.lock();
        if self.json {
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        } else {
            for line in text() {
                writeln!(w, "{line}")?;
            }
        }
        Ok(Outcome::Ok)
    }
}

fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .with_context(|| format!("no {what} directory given (--{what} or paths.{what})"))
}

fn load_corpus(config: &Config, dir: Option<&Path>) -> Result<Corpus> {
    let dir = pick(dir.map(Path::to_path_buf), &config.paths.corpus, "corpus")?;
    if !dir.is_dir() {
        bail!("corpus directory {} does not exist", dir.display());
    }
    Corpus::load(&dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn open_engine(config: &Config, loc: &IndexLocation) -> Result<Engine> {
    let index = pick(loc.index.clone(), &config.paths.index, "index")?;
    let corpus = load_corpus(config, loc.corpus.as_deref())?;
    let backends = config.build_backends()?;
    let engine = Engine::open(&index, corpus, backends)
        .with_context(|| format!("opening index {}", index.display()))?
        .with_fusion(config.fusion.clone())
        .with_verify_options(VerifyOptions {
            evidence_sentences: config.verify.evidence_sentences,
        });
    Ok(engine)
}

fn ingest(out: &Output, input: &[PathBuf], dir: &Path) -> Result<Outcome> {
    let (docs, stats) = ingest_files(input)?;
    let corpus = Corpus::new(docs)?;
    corpus.save(dir, &stats)?;
    out.emit(&stats, || {
        vec![
            format!("total_seen: {}", stats.total_seen),
            format!("kept: {}", stats.kept),
            format!("excluded_no_abstract: {}", stats.excluded_no_abstract),
            format!("kept_fraction: {:.4}", stats.kept_fraction),
        ]
    })
}

fn index(out: &Output, config: &Config, corpus: Option<PathBuf>, dir: Option<PathBuf>, no_quantize: bool) -> Result<Outcome> {
    let corpus = load_corpus(config, corpus.as_deref())?;
    let dir = pick(dir, &config.paths.index, "index")?;
    let backends = config.build_backends()?;
    let opts = BuildOptions {
        segment: config.segment.clone(),
        bm25: config.index.bm25.clone(),
        quantize: config.index.quantize && !no_quantize,
    };
    let report = build_index(&corpus, &backends, &opts, &dir)?;
    out.emit(&report, || {
        vec![
            format!("documents: {}", report.docs),
            format!("segments: {}", report.segments),
        ]
    })
}

fn ask(
    out: &Output,
    config: &Config,
    loc: &IndexLocation,
    question: &str,
    k: usize,
    bundle_out: Option<PathBuf>,
    answer_out: Option<PathBuf>,
) -> Result<Outcome> {
    let engine = open_engine(config, loc)?;
    let resp = engine.ask(question, k, false)?;
    if let Some(path) = bundle_out {
        let ids: Vec<&str> = resp.bundle.iter().map(|b| b.doc_id.as_str()).collect();
        let bundle = bundle_from_ids(PromptTemplate::Serving, question, &ids, engine.corpus() as &dyn DocumentLookup)?;
        fs::write(&path, serde_json::to_string_pretty(&bundle)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = answer_out {
        fs::write(&path, &resp.answer).with_context(|| format!("writing {}", path.display()))?;
    }
    out.emit(&resp, || {
        let mut lines = vec![resp.answer.clone(), String::new()];
        lines.extend(resp.bundle.iter().map(|b| format!("[{}] {}\t{}", b.local_index, b.doc_id, b.title)));
        lines.push(String::new());
        lines.extend(resp.claims.iter().map(|c| format!("claim {}\t{}\t{}", c.claim_id, verdict_name(c.aggregate), c.text)));
        lines
    })
}

fn read_answer(answer: &Path, bundle: &Path) -> Result<(String, PromptBundle)> {
    let text = fs::read_to_string(answer).with_context(|| format!("reading {}", answer.display()))?;
    let raw = fs::read_to_string(bundle).with_context(|| format!("reading {}", bundle.display()))?;
    let bundle: PromptBundle =
        serde_json::from_str(&raw).with_context(|| format!("parsing bundle {}", bundle.display()))?;
    Ok((text, bundle))
}

fn verdict_name(v: VerdictAggregate) -> &'static str {
    match v {
        VerdictAggregate::Supported => "SUPPORTED",
        VerdictAggregate::Contradicted => "CONTRADICTED",
        VerdictAggregate::Unsupported => "UNSUPPORTED",
        VerdictAggregate::Unreferenced => "UNREFERENCED",
    }
}

fn verify(out: &Output, config: &Config, answer: &Path, bundle: &Path) -> Result<Outcome> {
    let (text, bundle) = read_answer(answer, bundle)?;
    let backends = config.build_backends()?;
    let parsed = parse_text(&text, &bundle);
    let docs = bundle.documents();
    let verdicts = verify_parsed(
        &parsed,
        &docs,
        backends.nli.as_ref(),
        backends.embedder.as_ref(),
        VerifyOptions {
            evidence_sentences: config.verify.evidence_sentences,
        },
    );
    let reports: Vec<ClaimReport> = parsed.claims.into_iter().zip(verdicts).map(|(c, v)| ClaimReport::new(c, v)).collect();
    out.emit(&reports, || {
        reports
            .iter()
            .map(|r| {
                let labels: Vec<String> = r.per_ref.iter().map(|p| format!("{}={}", p.doc_id, p.label.value)).collect();
                format!("{}\t{}\t{}\t{}", r.claim_id, verdict_name(r.aggregate), labels.join(","), r.text)
            })
            .collect()
    })?;
    let all_supported = reports.iter().all(|r| r.aggregate == VerdictAggregate::Supported);
    Ok(if all_supported { Outcome::Ok } else { Outcome::Unsupported })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(items)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// `clean` input line: a raw multi-document entry or an already cleaned
/// example, so that cleaning can be re-applied to its own output.
#[derive(serde::Deserialize)]
#[serde(untagged)]
enum CleanInput {
    Raw(RawClaimEntry),
    Example(NliExample),
}

impl CleanInput {
    fn into_raw(self) -> RawClaimEntry {
        match self {
            CleanInput::Raw(r) => r,
            CleanInput::Example(e) => RawClaimEntry {
                claim: e.claim,
                label: e.label,
                docs: vec![e.evidence_doc],
            },
        }
    }
}

fn scifact_cmd(out: &Output, config: &Config, command: ScifactCommand) -> Result<Outcome> {
    match command {
        ScifactCommand::Clean {
            input,
            claims,
            scifact_corpus,
            out: dest,
        } => {
            let raw: Vec<RawClaimEntry> = match (input, claims, scifact_corpus) {
                (Some(input), _, _) => read_jsonl::<CleanInput>(&input)?
                    .into_iter()
                    .map(CleanInput::into_raw)
                    .collect(),
                (None, Some(claims), Some(corpus)) => scifact::from_scifact(
                    BufReader::new(File::open(&claims).with_context(|| format!("opening {}", claims.display()))?),
                    BufReader::new(File::open(&corpus).with_context(|| format!("opening {}", corpus.display()))?),
                )?,
                _ => bail!("give --input, or --claims with --scifact-corpus"),
            };
            let (examples, report) = scifact::clean(&raw);
            write_jsonl(&dest, &examples)?;
            out.emit(&report, || {
                vec![
                    format!("input_entries: {}", report.input_entries),
                    format!("dropped_no_citation: {}", report.dropped_no_citation),
                    format!("duplicates_removed: {}", report.duplicates_removed),
                    format!("output_examples: {}", report.output_examples),
                ]
            })
        }
        ScifactCommand::Split { input, out: dir, seed } => {
            let examples: Vec<NliExample> = read_jsonl(&input)?;
            let (split, report) = scifact::split_and_report(&examples, seed);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            write_jsonl(&dir.join("train.jsonl"), &split.train)?;
            write_jsonl(&dir.join("validation.jsonl"), &split.validation)?;
            write_jsonl(&dir.join("test.jsonl"), &split.test)?;
            out.emit(&report, || report.to_string().lines().map(str::to_string).collect())
        }
        ScifactCommand::Eval { input } => {
            let test: Vec<NliExample> = read_jsonl(&input)?;
            let backends = config.build_backends()?;
            let metrics = scifact::evaluate_nli(backends.nli.as_ref(), &test)?;
            out.emit(&metrics, || metrics.to_string().lines().map(str::to_string).collect())
        }
    }
}

fn serve(config: &Config, loc: &IndexLocation, addr: Option<String>, feedback_log: Option<PathBuf>) -> Result<Outcome> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info,tower_http=info".into()),
        )
        .with_writer(io::stderr)
        .init();

    // HTTP backends use blocking clients, which must be created and dropped
    // outside the async runtime.
    let engine = Arc::new(open_engine(config, loc)?);
    let index = pick(loc.index.clone(), &config.paths.index, "index")?;
    let log = feedback_log
        .or_else(|| config.paths.feedback_log.clone())
        .unwrap_or_else(|| index.join(FEEDBACK_FILE));
    let feedback = Arc::new(FeedbackStore::open(&log).with_context(|| format!("opening {}", log.display()))?);
    let addr = addr.unwrap_or_else(|| config.server.addr.clone());
    let state = citeqa_server::AppState {
        engine: Arc::clone(&engine),
        feedback,
    };
    let app = citeqa_server::router(state, &config.server.cors_origins);

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        citeqa_server::serve(listener, app, citeqa_server::shutdown_signal()).await?;
        anyhow::Ok(())
    })?;
    drop(runtime);
    drop(engine);
    Ok(Outcome::Ok)
}
