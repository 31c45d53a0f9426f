use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use lexcrf::check::{run_property_suite, CheckConfig};
use lexcrf::data::{load_jsonl, write_jsonl, write_records};
use lexcrf::decode::viterbi_lexicalized;
use lexcrf::eval::metrics_f1;
use lexcrf::marginals::logz_marginals;
use lexcrf::mask::SpanMode;
use lexcrf::model::Structure;
use lexcrf::model_io::{load_model, save_model};
use lexcrf::synth::generate_splits;
use lexcrf::train::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "lexcrf",
    version,
    about = "Nested NER as lexicalized constituency parsing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Where to write the model file.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Where to write per-epoch metrics (JSON lines).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Predict entities and heads for a JSONL corpus.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Decode-time penalty on entity heads that govern further spans.
        #[arg(long)]
        decode_penalty: Option<f64>,
    },
    /// Compare predictions against gold annotations.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Print log Z, marginals, head distributions and the best tree for one sentence.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        /// Whitespace-separated tokens.
        #[arg(long)]
        sentence: String,
    },
    /// Write a synthetic nested-entity corpus.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        dev: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
    },
    /// Check the charts against brute-force enumeration on random fixtures.
    OracleCheck {
        #[arg(long, default_value_t = 2)]
        n_min: usize,
        #[arg(long, default_value_t = 5)]
        n_max: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    writeln!(
        std::io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(value)?
    )?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            train: train_path,
            dev,
            model,
            metrics,
        } => {
            let mut cfg = TrainConfig::load(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            cfg.train_path = train_path.or(cfg.train_path);
            cfg.dev_path = dev.or(cfg.dev_path);
            cfg.model_path = model.or(cfg.model_path);
            cfg.metrics_path = metrics.or(cfg.metrics_path);
            cfg.verbose = true;
            let Some(train_path) = cfg.train_path.clone() else {
                bail!("no training corpus given (--train or train = ...)");
            };
            let train_set = load_jsonl(&train_path)?;
            let dev_set = match &cfg.dev_path {
                Some(p) => load_jsonl(p)?,
                None => Vec::new(),
            };
            let outcome = train(&cfg, &train_set, &dev_set)?;
            if let Some(p) = &cfg.model_path {
                save_model(p, &outcome.best)?;
            }
            print_json(&json!({
                "best_epoch": outcome.best.epoch,
                "dev_f1": outcome.best.dev_f1,
                "model": cfg.model_path,
            }))?;
        }
        Command::Predict {
            model,
            input,
            output,
            decode_penalty,
        } => {
            let mut ck = load_model(&model)?;
            if let Some(c) = decode_penalty {
                ck.model.variant.decode_penalty = c;
                ck.model.variant.validate()?;
            }
            let records = load_jsonl(&input)?;
            let preds = records
                .iter()
                .map(|r| ck.model.predict_record(&r.tokens))
                .collect::<lexcrf::Result<Vec<_>>>()?;
            match output {
                Some(p) => write_jsonl(&p, &preds)?,
                None => {
                    let stdout = std::io::stdout();
                    let mut w = BufWriter::new(stdout.lock());
                    write_records(&mut w, &preds)?;
                    w.flush()?;
                }
            }
        }
        Command::Evaluate { gold, pred } => {
            let g = load_jsonl(&gold)?;
            let p = load_jsonl(&pred)?;
            print_json(&metrics_f1(&p, &g)?)?;
        }
        Command::Inspect { model, sentence } => {
            let ck = load_model(&model)?;
            let tokens: Vec<String> = sentence.split_whitespace().map(String::from).collect();
            let m = &ck.model;
            let fw = m.scorer.forward(&m.ids(&tokens))?;
            let scores = fw.scores();
            let prediction = m.decode_forward(&fw)?;
            let entities: Vec<_> = prediction
                .entities
                .iter()
                .map(|e| {
                    json!({
                        "start": e.start,
                        "end": e.end,
                        "labels": e.labels.iter().map(|&l| m.labels.name(l)).collect::<Vec<_>>(),
                        "head": e.head,
                    })
                })
                .collect();
            let mut report = json!({ "tokens": tokens, "entities": entities });
            if m.variant.structure == Structure::Lexicalized {
                let (log_z, marg, _) = logz_marginals(&scores, SpanMode::Free, None)?;
                let n = tokens.len();
                let mut spans = Vec::new();
                for i in 0..n {
                    for j in i..n {
                        spans.push(json!({
                            "start": i,
                            "end": j,
                            "occurrence": marg.occurrence(i, j),
                            "channels": (0..scores.channels()).map(|c| marg.span(i, j, c)).collect::<Vec<_>>(),
                            "head_alpha": marg.head_alpha(i, j),
                        }));
                    }
                }
                let tree = viterbi_lexicalized(&scores, None)?;
                let constituents: Vec<_> = tree
                    .constituents()
                    .iter()
                    .map(|c| json!({"start": c.start, "end": c.end, "head": c.head, "label": c.label}))
                    .collect();
                report["log_z"] = json!(log_z);
                report["spans"] = json!(spans);
                report["viterbi"] = json!({
                    "score": tree.score(),
                    "constituents": constituents,
                    "arcs": tree.arcs(),
                });
            } else {
                report["log_z"] = json!(lexcrf::cyk::inside_cyk(&scores, SpanMode::Free)?);
            }
            print_json(&report)?;
        }
        Command::Synth {
            out_dir,
            seed,
            train,
            dev,
            test,
        } => {
            std::fs::create_dir_all(&out_dir)?;
            let (a, b, c) = generate_splits(seed, train, dev, test)?;
            for (name, set) in [("train", a), ("dev", b), ("test", c)] {
                write_jsonl(&out_dir.join(format!("{name}.jsonl")), &set)?;
            }
        }
        Command::OracleCheck {
            n_min,
            n_max,
            trials,
            seed,
        } => {
            let results = run_property_suite(&CheckConfig {
                n_min,
                n_max,
                trials,
                seed,
            })?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed;
                writeln!(
                    std::io::stdout().lock(),
                    "{} {:<30} cases={:<6} worst={:.3e} tol={:.0e}{}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.cases,
                    r.worst,
                    r.tolerance,
                    r.failure
                        .as_ref()
                        .map(|f| format!("  {f}"))
                        .unwrap_or_default()
                )?;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

/// A closed downstream pipe (`| head`) ends output quietly.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>().map(|io| io.kind()) == Some(std::io::ErrorKind::BrokenPipe)
            || matches!(c.downcast_ref::<lexcrf::Error>(), Some(lexcrf::Error::Io(io)) if io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
