//! Command-line interface. Every subcommand prints its primary result
//! to stdout and newline-delimited JSON progress lines to stderr; a
//! failure prints one JSON error line to stderr and exits with the
//! error's code (2 for internal invariant violations, 1 otherwise).

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conll::{read_corpus, write_corpus};
use crate::data::{Sentence, SrlGraph};
use crate::decoder::{decode_corpus, DecodeConfig};
use crate::embeddings::{read_context_vectors, read_pretrained};
use crate::error::{Error, Result};
use crate::eval::{bench_decode, evaluate, render_text};
use crate::oracle::{self, OracleOptions};
use crate::scorer::{ModelConfig, SrlModel};
use crate::trainer::{self, TrainConfig};
use crate::transition::{format_trace, ParsingOrder};

#[derive(Debug, Parser)]
#[command(
    name = "tsrl",
    version,
    about = "Transition-based semantic role labeling: train, decode, evaluate"
)]
pub struct Cli {
    /// Worker threads for corpus-level decoding (1 = fully serial).
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrderArg {
    /// Attach arguments nearest the predicate first (default).
    CloseFirst,
    /// Exhaust the left stack, then the right.
    LeftToRight,
    /// Exhaust the right stack, then the left.
    RightToLeft,
}

impl From<OrderArg> for ParsingOrder {
    fn from(o: OrderArg) -> ParsingOrder {
        match o {
            OrderArg::CloseFirst => ParsingOrder::CloseFirst,
            OrderArg::LeftToRight => ParsingOrder::LeftToRight,
            OrderArg::RightToLeft => ParsingOrder::RightToLeft,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify that oracle action sequences reproduce every gold graph.
    OracleCheck {
        /// Corpus file (.conll/.conllu or .json).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = OrderArg::CloseFirst)]
        order: OrderArg,
        /// Spell out NO-ARC for leftover stack entries instead of
        /// shifting early.
        #[arg(long)]
        trailing_no_arcs: bool,
    },
    /// Train a model and write the best checkpoint plus metrics.
    Train {
        /// JSON file with `{"train": {...}, "model": {...}}`; missing
        /// keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Output directory for the checkpoint and metrics.ndjson.
        #[arg(long)]
        out: PathBuf,
        /// Pretrained word embeddings (text: word v1 v2 ...).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Per-sentence context vectors (JSON: id -> [[...], ...]).
        #[arg(long)]
        context: Option<PathBuf>,
        /// Override the config's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Override the config's epoch cap.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Override the config's batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the config's early-stopping patience.
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Decode a corpus with a trained model.
    Decode {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Where to write the predicted corpus (format by extension).
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 32)]
        beam: usize,
        /// Expand one hypothesis per role at arc steps.
        #[arg(long)]
        expand_roles: bool,
        /// Print each sentence's action trace to stdout.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        context: Option<PathBuf>,
    },
    /// Score a predicted corpus against gold.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        report: ReportFormat,
    },
    /// Measure decoding throughput (median tokens/second).
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 32)]
        beam: usize,
        /// Timed repetitions (at least 3; one extra warm-up pass runs
        /// untimed).
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        context: Option<PathBuf>,
    },
    /// Print the oracle action trace for one gold sentence.
    Trace {
        #[arg(long)]
        input: PathBuf,
        /// Zero-based sentence index.
        #[arg(long, default_value_t = 0)]
        sentence: usize,
        #[arg(long, value_enum, default_value_t = OrderArg::CloseFirst)]
        order: OrderArg,
        #[arg(long)]
        trailing_no_arcs: bool,
    },
}

/// Combined training configuration file: optimization settings plus
/// model architecture, each falling back to its defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

fn log(value: serde_json::Value) {
    eprintln!("{value}");
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
        Error::Input(_) => "input",
        Error::Config(_) => "config",
        Error::Shape { .. } => "shape",
        Error::Contract(_) => "contract",
    }
}

/// Parses arguments, runs the chosen subcommand, and returns the
/// process exit code. Usage errors exit 1; help and version exit 0.
pub fn try_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log(json!({ "error": e.to_string(), "kind": error_kind(&e) }));
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::OracleCheck { input, order, trailing_no_arcs } => {
            let corpus = read_corpus(&input, false)?;
            let opts = OracleOptions { order: order.into(), trailing_no_arcs };
            let report = oracle::roundtrip_check(&corpus, &opts);
            println!(
                "{}",
                json!({
                    "checked": report.checked,
                    "actions": report.actions,
                    "failures": report.failures.len(),
                })
            );
            if report.ok() {
                Ok(())
            } else {
                for failure in &report.failures {
                    log(json!({ "event": "roundtrip_failure", "detail": failure }));
                }
                Err(Error::Input(format!(
                    "{} of {} sentences failed the oracle round trip",
                    report.failures.len(),
                    report.checked
                )))
            }
        }

        Command::Train {
            config,
            train,
            dev,
            out,
            embeddings,
            context,
            seed,
            lr,
            max_epochs,
            batch_size,
            patience,
        } => {
            let mut full = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| Error::io(path, e))?;
                    serde_json::from_str::<FullConfig>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                None => FullConfig::default(),
            };
            if let Some(v) = seed {
                full.train.seed = v;
            }
            if let Some(v) = lr {
                full.train.lr = v;
            }
            if let Some(v) = max_epochs {
                full.train.max_epochs = v;
            }
            if let Some(v) = batch_size {
                full.train.batch_size = v;
            }
            if let Some(v) = patience {
                full.train.patience = v;
            }

            let train_data = read_corpus(&train, false)?;
            let dev_data = read_corpus(&dev, false)?;
            let pretrained = embeddings.as_deref().map(read_pretrained).transpose()?;
            let ctx = context.as_deref().map(read_context_vectors).transpose()?;

            log(json!({ "event": "config", "train": full.train, "model": full.model }));
            let outcome = trainer::train(
                &full.model,
                &full.train,
                &train_data,
                &dev_data,
                pretrained.as_ref(),
                ctx.as_ref(),
                &out,
            )?;
            log(json!({ "event": "train_done", "epochs_run": outcome.epochs_run }));
            println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
            Ok(())
        }

        Command::Decode { model, input, output, beam, expand_roles, trace, context } => {
            let model = SrlModel::load(&model)?;
            let pairs = read_corpus(&input, false)?;
            let sents: Vec<Sentence> = pairs.into_iter().map(|(s, _)| s).collect();
            let ctx = context.as_deref().map(read_context_vectors).transpose()?;
            let cfg = DecodeConfig { beam, expand_roles };
            let outcomes = decode_corpus(&model, &sents, ctx.as_ref(), cfg, workers)?;
            if trace {
                for (sent, out) in sents.iter().zip(&outcomes) {
                    let forms: Vec<String> =
                        sent.tokens.iter().map(|t| t.form.clone()).collect();
                    println!("# {}", sent.id);
                    print!("{}", format_trace(&out.trace, &forms));
                }
            }
            let pred: Vec<(Sentence, SrlGraph)> = sents
                .into_iter()
                .zip(outcomes.into_iter().map(|o| o.graph))
                .collect();
            write_corpus(&output, &pred)?;
            log(json!({
                "event": "decode_done",
                "sentences": pred.len(),
                "beam": beam,
                "output": output.display().to_string(),
            }));
            Ok(())
        }

        Command::Eval { gold, pred, report } => {
            let gold = read_corpus(&gold, false)?;
            let pred = read_corpus(&pred, false)?;
            let result = evaluate(&gold, &pred)?;
            match report {
                ReportFormat::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&result).expect("report serializes")
                ),
                ReportFormat::Text => print!("{}", render_text(&result)),
            }
            Ok(())
        }

        Command::Bench { model, input, beam, reps, context } => {
            let model = SrlModel::load(&model)?;
            let pairs = read_corpus(&input, false)?;
            let sents: Vec<Sentence> = pairs.into_iter().map(|(s, _)| s).collect();
            let ctx = context.as_deref().map(read_context_vectors).transpose()?;
            let tokens: usize = sents.iter().map(|s| s.len()).sum();
            let rate = bench_decode(&model, &sents, ctx.as_ref(), beam, reps, workers)?;
            println!(
                "{}",
                json!({
                    "beam": beam,
                    "reps": reps.max(3),
                    "sentences": sents.len(),
                    "tokens": tokens,
                    "tokens_per_second": rate,
                })
            );
            Ok(())
        }

        Command::Trace { input, sentence, order, trailing_no_arcs } => {
            let corpus = read_corpus(&input, false)?;
            let (sent, gold) = corpus.get(sentence).ok_or_else(|| {
                Error::Input(format!(
                    "sentence index {sentence} out of range: corpus has {} sentences",
                    corpus.len()
                ))
            })?;
            let opts = OracleOptions { order: order.into(), trailing_no_arcs };
            let steps = oracle::trace(sent, gold, &opts)?;
            let forms: Vec<String> = sent.tokens.iter().map(|t| t.form.clone()).collect();
            print!("{}", format_trace(&steps, &forms));
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_defaults_and_rejects_unknown_sections() {
        let full: FullConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(full.train.batch_size, 16);
        assert!(full.model.hidden > 0);

        let full: FullConfig =
            serde_json::from_str(r#"{"train": {"lr": 0.01}, "model": {"hidden": 24}}"#)
                .unwrap();
        assert_eq!(full.train.lr, 0.01);
        assert_eq!(full.model.hidden, 24);

        assert!(serde_json::from_str::<FullConfig>(r#"{"optimizer": {}}"#).is_err());
    }

    #[test]
    fn cli_parses_a_decode_invocation() {
        let cli = Cli::try_parse_from([
            "tsrl", "decode", "--model", "m", "--input", "i.conll", "--output", "o.conll",
            "--beam", "4", "--trace",
        ])
        .unwrap();
        assert_eq!(cli.workers, 1);
        match cli.command {
            Command::Decode { beam, trace, expand_roles, .. } => {
                assert_eq!(beam, 4);
                assert!(trace);
                assert!(!expand_roles);
            }
            other => panic!("parsed wrong command: {other:?}"),
        }
    }

    #[test]
    fn missing_required_flags_fail_parsing() {
        assert!(Cli::try_parse_from(["tsrl", "decode", "--input", "i"]).is_err());
        assert!(Cli::try_parse_from(["tsrl", "no-such-command"]).is_err());
        assert!(Cli::try_parse_from(["tsrl", "eval", "--gold", "g", "--pred", "p", "--bogus"])
            .is_err());
    }

    #[test]
    fn order_values_map_to_parsing_orders() {
        let cli = Cli::try_parse_from([
            "tsrl", "trace", "--input", "x.json", "--order", "left-to-right",
        ])
        .unwrap();
        match cli.command {
            Command::Trace { order, sentence, .. } => {
                assert!(matches!(ParsingOrder::from(order), ParsingOrder::LeftToRight));
                assert_eq!(sentence, 0);
            }
            other => panic!("parsed wrong command: {other:?}"),
        }
    }
}
