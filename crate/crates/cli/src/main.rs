//! `adlcoach`: command-line entry points for every pipeline stage.
//!
//! Exit status is 0 on success, 1 for invalid input or usage, 2 for I/O
//! failures.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adlcoach_core::classifier::{
    evaluate, repeat_experiment, train, BowClassifier, ExperimentSummary, Target, TrainConfig,
};
use adlcoach_core::config::AppConfig;
use adlcoach_core::corpus::{load_corpus, parse_survey_file, read_survey_records};
use adlcoach_core::dialogue::{handle_query, start_session, DialogueEngine, TurnSource};
use adlcoach_core::domains::LabelSet;
use adlcoach_core::evalharness::{
    auto_consistency_check, load_ratings_csv, replay_script, ssa_report, QuestionScript,
};
use adlcoach_core::generation::export_finetune;
use adlcoach_core::parallel::ExecMode;
use adlcoach_core::profiles::{load_functioning_map, load_store, FunctioningMap};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adlcoach", version, about = "Simulated assessment participant toolkit")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scrub a survey JSONL file into a labeled utterance corpus.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a bag-of-words classifier and write it as JSON.
    Train {
        #[arg(long, value_enum)]
        target: TargetArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Repeated split/train/evaluate runs with mean and (min-max) per metric.
    EvalClassifier {
        #[arg(long)]
        corpus: PathBuf,
        /// Also score this model on the whole corpus; its target and
        /// training settings become the defaults for the repeated runs.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Write the full metrics JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run repetitions one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Turn survey dialogues into context/input/output JSONL.
    ExportFinetune {
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Profile store directory (defaults to the config's store_dir).
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        functioning_map: Option<PathBuf>,
    },
    /// Talk to a simulated participant on stdin/stdout.
    Chat {
        #[arg(long)]
        profile: String,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Ask a fixed question script and print the transcript JSON.
    Replay {
        /// `bathing`, `dressing`, or a script JSON file.
        #[arg(long)]
        script: String,
        #[arg(long)]
        profile: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Aggregate a ratings CSV into an SSA table.
    SsaReport {
        #[arg(long)]
        ratings: PathBuf,
        /// JSON object mapping conversation ids to system labels.
        #[arg(long)]
        group_by: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Domain,
    Intent,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Domain => Target::Domain,
            TargetArg::Intent => Target::Intent,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
}

impl TrainArgs {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.learning_rate = self.learning_rate.unwrap_or(cfg.learning_rate);
        cfg.l2 = self.l2.unwrap_or(cfg.l2);
        cfg
    }
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    domain_model: Option<PathBuf>,
    #[arg(long)]
    intent_model: Option<PathBuf>,
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    /// Routing threshold in [0, 1].
    #[arg(long)]
    threshold: Option<f64>,
    /// Completions endpoint; without one a canned mock reply is used.
    #[arg(long)]
    llm_url: Option<String>,
}

impl EngineArgs {
    fn apply(&self, cfg: &mut AppConfig) {
        if let Some(p) = &self.store {
            cfg.store_dir = p.clone();
        }
        if let Some(p) = &self.domain_model {
            cfg.domain_model = Some(p.clone());
        }
        if let Some(p) = &self.intent_model {
            cfg.intent_model = Some(p.clone());
        }
        if let Some(p) = &self.train_corpus {
            cfg.train_corpus = Some(p.clone());
        }
        if let Some(t) = self.threshold {
            cfg.routing.threshold = t;
        }
        if let Some(u) = &self.llm_url {
            cfg.llm.url = Some(u.clone());
        }
    }
}

/// Config file (or defaults), then environment, then flags.
fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    let mut cfg = match path {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    cfg.llm.apply_env();
    Ok(cfg)
}

fn engine(cfg: &AppConfig) -> Result<DialogueEngine> {
    Ok(cfg.build_engine()?)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Ingest { input, out } => {
            let corpus = parse_survey_file(&input, &LabelSet::default())?.scrubbed();
            corpus.write_jsonl(&out)?;
            eprintln!(
                "{} utterances, {} domain labels, {} intent labels",
                corpus.len(),
                corpus.domain_labels.len(),
                corpus.intent_labels.len()
            );
        }
        Command::Train {
            target,
            corpus,
            out,
            train: args,
        } => {
            let base = load_config(config_path)?.train;
            let corpus = load_corpus(&corpus, &LabelSet::default())?;
            let model = train(&corpus, target.into(), &args.apply(base))?;
            model.save(&out)?;
            eprintln!("{} labels, {} features", model.labels.len(), model.vocabulary.len());
        }
        Command::EvalClassifier {
            corpus,
            model,
            target,
            runs,
            train: args,
            format,
            out,
            sequential,
        } => {
            let corpus = load_corpus(&corpus, &LabelSet::default())?;
            let model = model.as_deref().map(BowClassifier::load).transpose()?;
            let (target, base) = match &model {
                Some(m) => (target.map_or(m.target, Target::from), m.config),
                None => (
                    target.map_or(Target::Domain, Target::from),
                    load_config(config_path)?.train,
                ),
            };
            let mode = if sequential {
                ExecMode::Sequential
            } else {
                ExecMode::Parallel
            };
            let experiment = repeat_experiment(&corpus, target, &args.apply(base), runs, mode)?;
            let model_report = model.as_ref().map(|m| evaluate(m, &corpus));
            let json = serde_json::json!({ "experiment": experiment, "model": model_report });
            let json = serde_json::to_string_pretty(&json)? + "\n";
            if let Some(p) = &out {
                write_output(Some(p), &json)?;
            }
            match format {
                Format::Json => write_output(None, &json)?,
                Format::Table => {
                    let name = match target {
                        Target::Domain => "bow-lr domain",
                        Target::Intent => "bow-lr intent",
                    };
                    let mut table = format!(
                        "{}\n{}\n",
                        ExperimentSummary::table_header(),
                        experiment.table_row(name)
                    );
                    if let Some(r) = &model_report {
                        table.push_str(&format!(
                            "model on corpus | {:.3} | {:.3} | {:.3} | {:.3}\n",
                            r.accuracy, r.f1_weighted, r.f1_micro, r.f1_macro
                        ));
                    }
                    write_output(None, &table)?;
                }
            }
        }
        Command::ExportFinetune {
            dialogues,
            out,
            store,
            functioning_map,
        } => {
            let store_dir = match store {
                Some(s) => s,
                None => load_config(config_path)?.store_dir,
            };
            let store = load_store(&store_dir)?;
            let map: FunctioningMap = match functioning_map {
                Some(p) => FunctioningMap::load(&p)?,
                None => load_functioning_map(&store_dir)?,
            };
            let dialogues = read_survey_records(&dialogues)?;
            let report = export_finetune(&store, &map, &dialogues, &out)
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{}", serde_json::to_string(&report)?);
            if report.written == 0 && !report.issues.is_empty() {
                bail!("no dialogue could be exported");
            }
        }
        Command::Chat { profile, engine: args } => {
            let mut cfg = load_config(config_path)?;
            args.apply(&mut cfg);
            let engine = engine(&cfg)?;
            let mut session = start_session(&engine.store, &profile)?;
            eprintln!("session {} with profile {profile}; empty line or /quit to stop", session.id);
            let stdin = io::stdin();
            let mut stdout = io::stdout().lock();
            for line in stdin.lock().lines() {
                let line = line?;
                let q = line.trim();
                if q.is_empty() || q == "/quit" {
                    break;
                }
                let turn = handle_query(&mut session, q, &engine)?;
                let tag = match turn.source {
                    Some(TurnSource::KnowledgeBase) => "kb",
                    Some(TurnSource::Llm) => "llm",
                    Some(TurnSource::Scripted) | None => "scripted",
                };
                writeln!(stdout, "[{tag}] {}", turn.text)?;
                stdout.flush()?;
            }
        }
        Command::Replay {
            script,
            profile,
            out,
            engine: args,
        } => {
            let script = QuestionScript::resolve(&script)?;
            let mut cfg = load_config(config_path)?;
            args.apply(&mut cfg);
            let engine = engine(&cfg)?;
            let transcript = replay_script(&script, &engine, &profile)?;
            let ledger = auto_consistency_check(&transcript, &engine.store);
            eprintln!(
                "{} turns, {} from the knowledge base, {} knowledge / {} history contradictions",
                transcript.turns.len(),
                transcript.count_source(TurnSource::KnowledgeBase),
                ledger.against_knowledge,
                ledger.against_history
            );
            write_output(out.as_deref(), &(serde_json::to_string_pretty(&transcript)? + "\n"))?;
        }
        Command::Serve {
            bind,
            data_dir,
            engine: args,
        } => {
            let mut cfg = load_config(config_path)?;
            args.apply(&mut cfg);
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if data_dir.is_some() {
                cfg.data_dir = data_dir;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(adlcoach_server::serve(&cfg))?;
        }
        Command::SsaReport {
            ratings,
            group_by,
            format,
        } => {
            let ratings = load_ratings_csv(&ratings)?;
            let group: BTreeMap<String, String> = match group_by {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => BTreeMap::new(),
            };
            let report = ssa_report(&ratings, &group)?;
            let text = match format {
                Format::Table => report.to_table(),
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
            };
            write_output(None, &text)?;
        }
    }
    Ok(())
}

/// 2 when any cause in the chain is an I/O error, else 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<io::Error>()) {
        2
    } else {
        1
    }
}

/// The error chain joined by `: `, skipping causes whose text an outer
/// message already includes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
