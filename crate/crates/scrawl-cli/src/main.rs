//! scrawl: train, sample, evaluate and render LSTM sequence models.
//!
//! Exit codes: 0 success, 2 usage errors (unknown flags, missing files,
//! inconsistent arguments), 1 runtime failures. Failures print a single
//! machine-readable JSON line to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use scrawl_core::data::{
    load_strokes, load_text_corpus, make_toy_glyph_corpus, stroke_line_json, write_strokes,
    Alphabet, NormStats, SplitManifest, StrokeSeq,
};
use scrawl_core::error::Error as CoreError;
use scrawl_core::lstm::Architecture;
use scrawl_core::mdn;
use scrawl_core::model::{load_checkpoint, save_checkpoint, Head, Model};
use scrawl_core::render::{
    render_density_heatmap, render_strokes_svg, render_window_heatmap, RenderSpec,
};
use scrawl_core::sample::{
    primed_sample, sample_handwriting, sample_text, synth_sample, PhiTrace, SampleConfig, StopMode,
};
use scrawl_core::softmax::classification_error;
use scrawl_core::train::{
    dynamic_evaluate, eval_text, train_loop, OptimizerKind, RmspropHyper, RunConfig, Task,
    TrainConfig, TrainData,
};

#[derive(Parser)]
#[command(name = "scrawl", version, about = "LSTM sequence generation: text, handwriting, synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Text,
    Handwriting,
    Synth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VizKind {
    Strokes,
    Density,
    Window,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a key=value config file
    Train {
        /// Path to the run config (see README for the key reference)
        config: PathBuf,
    },
    /// Generate from a trained checkpoint
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Text to write (synth mode)
        #[arg(long)]
        text: Option<String>,
        /// Probability bias b >= 0; 0 is unbiased
        #[arg(long, default_value_t = 0.0)]
        bias: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        /// Symbols to generate (text mode)
        #[arg(long, default_value_t = 500)]
        length: usize,
        /// Steps to generate (handwriting mode)
        #[arg(long, default_value_t = 700)]
        steps: usize,
        /// Step cap for synth mode; defaults to 60·U + 300
        #[arg(long)]
        max_steps: Option<usize>,
        /// Take the argmax instead of sampling (text mode)
        #[arg(long)]
        greedy: bool,
        /// Clamped priming text (text and synth modes)
        #[arg(long)]
        prime_text: Option<String>,
        /// JSON-lines stroke file whose first sequence primes synth mode
        #[arg(long)]
        prime_strokes: Option<PathBuf>,
        /// Write the window trace (synth mode) to this JSON file
        #[arg(long)]
        phi_out: Option<PathBuf>,
        /// Run synth mode to the step cap instead of the stop heuristic
        #[arg(long)]
        fixed_length: bool,
    },
    /// Evaluate a checkpoint on a corpus
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also run dynamic evaluation (weights adapt during the single pass)
        #[arg(long)]
        dynamic: bool,
        #[arg(long, default_value_t = 100)]
        seq_len: usize,
        /// Optimizer for the dynamic pass: sgd or rmsprop
        #[arg(long, default_value = "sgd")]
        optimizer: String,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.99)]
        momentum: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Oversized-step repair threshold for stroke data
        #[arg(long)]
        step_threshold: Option<f64>,
    },
    /// Render an SVG from strokes, a density map, or a window trace
    Viz {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: VizKind,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint (required for --kind density)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which sequence of a JSON-lines file to render
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 900.0)]
        width: f64,
        #[arg(long, default_value_t = 300.0)]
        height: f64,
    },
    /// Generate the deterministic toy glyph corpus as a stroke file
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        symbols: usize,
        #[arg(long, default_value_t = 10)]
        motif_len: usize,
        #[arg(long, default_value_t = 2000)]
        sequences: usize,
        #[arg(long, default_value_t = 0.05)]
        noise_std: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

/// Usage-level failures exit 2, everything else 1.
fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        CoreError::Config(_) | CoreError::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code_for(&err);
            eprintln!("{}", serde_json::json!({ "error": err.to_string() }));
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CoreError> {
    match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Sample {
            checkpoint,
            mode,
            text,
            bias,
            seed,
            out,
            length,
            steps,
            max_steps,
            greedy,
            prime_text,
            prime_strokes,
            phi_out,
            fixed_length,
        } => cmd_sample(SampleArgs {
            checkpoint,
            mode,
            text,
            bias,
            seed,
            out,
            length,
            steps,
            max_steps,
            greedy,
            prime_text,
            prime_strokes,
            phi_out,
            fixed_length,
        }),
        Command::Eval {
            checkpoint,
            data,
            dynamic,
            seq_len,
            optimizer,
            learning_rate,
            momentum,
            seed,
            step_threshold,
        } => cmd_eval(
            &checkpoint,
            &data,
            dynamic,
            seq_len,
            &optimizer,
            learning_rate,
            momentum,
            seed,
            step_threshold,
        ),
        Command::Viz {
            input,
            kind,
            out,
            checkpoint,
            index,
            width,
            height,
        } => cmd_viz(&input, kind, &out, checkpoint.as_deref(), index, width, height),
        Command::MakeToy {
            out,
            symbols,
            motif_len,
            sequences,
            noise_std,
            seed,
        } => {
            let corpus = make_toy_glyph_corpus(symbols, motif_len, sequences, noise_std, seed)?;
            write_strokes(&out, &corpus.sequences)?;
            println!(
                "{}",
                serde_json::json!({
                    "sequences": corpus.sequences.len(),
                    "alphabet": corpus.alphabet.size(),
                    "out": out.display().to_string(),
                })
            );
            Ok(())
        }
    }
}

fn split_strokes(
    seqs: Vec<StrokeSeq>,
    val_fraction: f64,
    val_manifest: Option<&Path>,
) -> Result<(Vec<StrokeSeq>, Vec<StrokeSeq>), CoreError> {
    let splits = match val_manifest {
        Some(path) => {
            let val = SplitManifest::read_indices(path)?;
            let val_set: std::collections::BTreeSet<usize> = val.iter().copied().collect();
            SplitManifest {
                train: (0..seqs.len()).filter(|i| !val_set.contains(i)).collect(),
                val,
            }
        }
        None => SplitManifest::tail_fraction(seqs.len(), val_fraction),
    };
    let train = splits.train.iter().map(|&i| seqs[i].clone()).collect();
    let val = splits.val.iter().map(|&i| seqs[i].clone()).collect();
    Ok((train, val))
}

fn cmd_train(config_path: &Path) -> Result<(), CoreError> {
    let cfg = RunConfig::from_file(config_path)?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let (mut model, data) = match cfg.task {
        Task::Text => {
            let corpus = load_text_corpus(
                &cfg.data,
                cfg.granularity,
                cfg.vocab_limit,
                cfg.seq_len,
                cfg.val_fraction,
            )?;
            let (train, val) = match &cfg.val_manifest {
                Some(path) => {
                    let val_idx = SplitManifest::read_indices(path)?;
                    let val_set: std::collections::BTreeSet<usize> =
                        val_idx.iter().copied().collect();
                    let train = (0..corpus.sequences.len())
                        .filter(|i| !val_set.contains(i))
                        .map(|i| corpus.sequences[i].clone())
                        .collect();
                    let val = val_idx.iter().map(|&i| corpus.sequences[i].clone()).collect();
                    (train, val)
                }
                None => (corpus.train_sequences(), corpus.val_sequences()),
            };
            let k = corpus.vocab.size();
            let arch = Architecture::new(k, cfg.layers.clone(), k);
            let model = Model::init(
                arch,
                Head::Softmax {
                    vocab: corpus.vocab,
                },
                cfg.train.seed,
                cfg.init_scale,
            )?;
            (model, TrainData::Text { train, val })
        }
        Task::Handwriting => {
            let seqs = load_strokes(&cfg.data, cfg.step_threshold)?;
            let (mut train, mut val) =
                split_strokes(seqs, cfg.val_fraction, cfg.val_manifest.as_deref())?;
            let norm = NormStats::compute(&train)?;
            norm.apply(&mut train);
            norm.apply(&mut val);
            let arch = Architecture::new(3, cfg.layers.clone(), mdn::output_len(cfg.mixtures));
            let model = Model::init(
                arch,
                Head::Mdn {
                    components: cfg.mixtures,
                    norm: Some(norm),
                    alphabet: None,
                },
                cfg.train.seed,
                cfg.init_scale,
            )?;
            (model, TrainData::Strokes { train, val })
        }
        Task::Synthesis => {
            let seqs = load_strokes(&cfg.data, cfg.step_threshold)?;
            if seqs.iter().any(|s| s.text.is_none()) {
                return Err(CoreError::InvalidArgument(
                    "synthesis training needs a transcript on every stroke line".into(),
                ));
            }
            let (mut train, mut val) =
                split_strokes(seqs, cfg.val_fraction, cfg.val_manifest.as_deref())?;
            let norm = NormStats::compute(&train)?;
            norm.apply(&mut train);
            norm.apply(&mut val);
            let alphabet = Alphabet::from_texts(
                train.iter().map(|s| s.text.as_deref().unwrap()),
            );
            let encode_all = |seqs: Vec<StrokeSeq>| -> Result<Vec<_>, CoreError> {
                seqs.into_iter()
                    .map(|s| {
                        let chars = alphabet.encode(s.text.as_deref().unwrap())?;
                        Ok((s, chars))
                    })
                    .collect()
            };
            let train = encode_all(train)?;
            let val = encode_all(val)?;
            let arch = Architecture::new(3, cfg.layers.clone(), mdn::output_len(cfg.mixtures))
                .with_window(cfg.window_mixtures, alphabet.size());
            let mut model = Model::init(
                arch,
                Head::Mdn {
                    components: cfg.mixtures,
                    norm: Some(norm),
                    alphabet: Some(alphabet),
                },
                cfg.train.seed,
                cfg.init_scale,
            )?;
            if cfg.window_offset_bias != 0.0 {
                model.params.set_window_offset_bias(cfg.window_offset_bias)?;
            }
            (model, TrainData::Synthesis { train, val })
        }
    };

    let metrics_path = cfg.out_dir.join("metrics.jsonl");
    let mut metrics_file = std::fs::File::create(&metrics_path)?;
    let out_dir = cfg.out_dir.clone();
    let outcome = train_loop(&mut model, &data, &cfg.train, |m, opt, em| {
        use std::io::Write;
        let line = serde_json::to_string(em)?;
        writeln!(metrics_file, "{}", line)?;
        println!("{}", line);
        save_checkpoint(
            &out_dir.join(format!("epoch_{:03}.ckpt.json", em.epoch)),
            m,
            Some(&opt.to_ser()),
        )?;
        Ok(())
    })?;

    // the model ends at the best-validation weights
    save_checkpoint(&cfg.out_dir.join("best.ckpt.json"), &model, None)?;
    println!(
        "{}",
        serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "best_val_loss": outcome.best_val_loss,
            "stopped_early": outcome.stopped_early,
            "aborted": outcome.aborted,
            "checkpoint": cfg.out_dir.join("best.ckpt.json").display().to_string(),
        })
    );
    if let Some(reason) = outcome.aborted {
        return Err(CoreError::TrainingAborted { reason });
    }
    Ok(())
}

struct SampleArgs {
    checkpoint: PathBuf,
    mode: Mode,
    text: Option<String>,
    bias: f64,
    seed: u64,
    out: Option<PathBuf>,
    length: usize,
    steps: usize,
    max_steps: Option<usize>,
    greedy: bool,
    prime_text: Option<String>,
    prime_strokes: Option<PathBuf>,
    phi_out: Option<PathBuf>,
    fixed_length: bool,
}

fn write_or_stdout(out: Option<&Path>, bytes: &[u8]) -> Result<(), CoreError> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
        }
    }
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<(), CoreError> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    match args.mode {
        Mode::Text => {
            let indices = sample_text(
                &model,
                args.length,
                args.seed,
                args.prime_text.as_deref(),
                args.greedy,
            )?;
            let vocab = match &model.head {
                Head::Softmax { vocab } => vocab,
                _ => unreachable!("sample_text checked the head"),
            };
            let mut bytes = vocab.decode_bytes(&indices);
            bytes.push(b'\n');
            write_or_stdout(args.out.as_deref(), &bytes)
        }
        Mode::Handwriting => {
            let seq = sample_handwriting(&model, args.steps, args.seed, args.bias)?;
            let line = format!("{}\n", stroke_line_json(&seq)?);
            write_or_stdout(args.out.as_deref(), line.as_bytes())
        }
        Mode::Synth => {
            let text = args.text.ok_or_else(|| {
                CoreError::InvalidArgument("synth mode needs --text".into())
            })?;
            let u_len = text.chars().count();
            let cfg = SampleConfig {
                max_steps: args
                    .max_steps
                    .unwrap_or_else(|| SampleConfig::default_max_steps(u_len)),
                bias: args.bias,
                seed: args.seed,
                stop_mode: if args.fixed_length {
                    StopMode::FixedLength
                } else {
                    StopMode::Heuristic
                },
            };
            let output = match (&args.prime_strokes, &args.prime_text) {
                (Some(strokes_path), Some(prime_text)) => {
                    let primes = load_strokes(strokes_path, None)?;
                    primed_sample(&model, Some((&primes[0], prime_text)), &text, &cfg)?
                }
                (None, None) => synth_sample(&model, &text, &cfg)?,
                _ => {
                    return Err(CoreError::InvalidArgument(
                        "priming needs both --prime-strokes and --prime-text".into(),
                    ))
                }
            };
            if let Some(phi_path) = &args.phi_out {
                let trace = PhiTrace::from_rows(&output.phi)?;
                std::fs::write(phi_path, serde_json::to_string(&trace)?)?;
            }
            let line = format!("{}\n", stroke_line_json(&output.strokes)?);
            write_or_stdout(args.out.as_deref(), line.as_bytes())?;
            eprintln!(
                "{}",
                serde_json::json!({
                    "steps": output.strokes.points.len(),
                    "truncated": output.truncated,
                })
            );
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    dynamic: bool,
    seq_len: usize,
    optimizer: &str,
    learning_rate: f64,
    momentum: f64,
    seed: u64,
    step_threshold: Option<f64>,
) -> Result<(), CoreError> {
    let (model, _) = load_checkpoint(checkpoint)?;
    match &model.head {
        Head::Softmax { vocab } => {
            let raw = std::fs::read(data)?;
            if raw.is_empty() {
                return Err(CoreError::InvalidArgument("empty evaluation corpus".into()));
            }
            let tokens = tokens_for_vocab(vocab, &raw, data)?;
            let seqs: Vec<Vec<usize>> = tokens.chunks(seq_len).map(|c| c.to_vec()).collect();

            let (static_nats, units) = eval_text(&model.params, &seqs)?;
            let static_bpc = scrawl_core::softmax::bpc(static_nats, units.max(1));
            let err_pct = classification_error_over(&model, &seqs)?;

            let mut report = serde_json::json!({
                "static_bpc": static_bpc,
                "symbols": units,
                "classification_error_pct": err_pct,
            });
            if dynamic {
                let kind = match optimizer {
                    "sgd" => OptimizerKind::Momentum {
                        lr: learning_rate,
                        momentum,
                    },
                    "rmsprop" => OptimizerKind::Rmsprop(RmspropHyper {
                        lr: learning_rate,
                        ..RmspropHyper::default()
                    }),
                    other => {
                        return Err(CoreError::Config(format!("unknown optimizer '{}'", other)))
                    }
                };
                let tc = TrainConfig {
                    seed,
                    ..TrainConfig::default()
                };
                let result = dynamic_evaluate(&model, &seqs, &kind, &tc)?;
                report["dynamic_bpc"] = serde_json::json!(result.dynamic_bpc);
            }
            println!("{}", report);
            Ok(())
        }
        Head::Mdn {
            components,
            norm,
            alphabet,
        } => {
            let mut seqs = load_strokes(data, step_threshold)?;
            if let Some(n) = norm {
                n.apply(&mut seqs);
            }
            let mut nats = 0.0;
            let mut points = 0usize;
            for seq in &seqs {
                let n = match alphabet {
                    Some(a) => {
                        let text = seq.text.as_deref().ok_or_else(|| {
                            CoreError::InvalidArgument(
                                "synthesis evaluation needs transcripts".into(),
                            )
                        })?;
                        let chars = a.encode(text)?;
                        scrawl_core::train::synth_sequence_loss(
                            &model.params,
                            *components,
                            &seq.points,
                            &chars,
                        )?
                        .1
                    }
                    None => {
                        scrawl_core::train::stroke_sequence_loss(
                            &model.params,
                            *components,
                            &seq.points,
                        )?
                        .1
                    }
                };
                nats += n;
                points += seq.points.len();
            }
            println!(
                "{}",
                serde_json::json!({
                    "loss_nats_per_point": nats / points.max(1) as f64,
                    "loss_nats_per_seq": nats / seqs.len().max(1) as f64,
                    "sequences": seqs.len(),
                    "points": points,
                })
            );
            Ok(())
        }
    }
}

fn tokens_for_vocab(
    vocab: &scrawl_core::softmax::Vocab,
    raw: &[u8],
    path: &Path,
) -> Result<Vec<usize>, CoreError> {
    use scrawl_core::softmax::Token;
    let tokens: Vec<Token> = match vocab.symbols().first() {
        Some(Token::Byte(_)) => raw.iter().map(|&b| Token::Byte(b)).collect(),
        Some(Token::Char(_)) => {
            let text = std::str::from_utf8(raw).map_err(|e| CoreError::Format {
                path: path.display().to_string(),
                line: 0,
                msg: format!("not valid UTF-8: {}", e),
            })?;
            text.chars().map(Token::Char).collect()
        }
        Some(Token::Word(_)) => {
            let text = std::str::from_utf8(raw).map_err(|e| CoreError::Format {
                path: path.display().to_string(),
                line: 0,
                msg: format!("not valid UTF-8: {}", e),
            })?;
            text.split_whitespace()
                .map(|w| Token::Word(w.to_string()))
                .collect()
        }
        None => return Err(CoreError::InvalidArgument("empty vocabulary".into())),
    };
    tokens
        .iter()
        .map(|t| {
            vocab.lookup(t).ok_or_else(|| {
                CoreError::InvalidArgument(format!(
                    "symbol {:?} is not in the checkpoint vocabulary and it has no unknown bucket",
                    t
                ))
            })
        })
        .collect()
}

fn classification_error_over(model: &Model, seqs: &[Vec<usize>]) -> Result<f64, CoreError> {
    use scrawl_core::train::{text_sequence_loss, TextCarry};
    let mut carry = TextCarry::fresh(&model.params);
    let mut yhat_all = Vec::new();
    let mut targets = Vec::new();
    for tokens in seqs {
        let (fwd, _, _) = text_sequence_loss(&model.params, tokens, &carry)?;
        yhat_all.extend(fwd.yhat.iter().cloned());
        targets.extend(tokens.iter().copied());
        carry.states = fwd.final_states;
        carry.prev = tokens.last().copied();
    }
    Ok(classification_error(&yhat_all, &targets))
}

fn cmd_viz(
    input: &Path,
    kind: VizKind,
    out: &Path,
    checkpoint: Option<&Path>,
    index: usize,
    width: f64,
    height: f64,
) -> Result<(), CoreError> {
    let spec = RenderSpec {
        width,
        height,
        ..RenderSpec::default()
    };
    let svg = match kind {
        VizKind::Strokes => {
            let seqs = load_strokes(input, None)?;
            let seq = seqs.get(index).ok_or_else(|| {
                CoreError::InvalidArgument(format!(
                    "index {} out of range ({} sequences)",
                    index,
                    seqs.len()
                ))
            })?;
            render_strokes_svg(seq, &spec)
        }
        VizKind::Density => {
            let ckpt = checkpoint.ok_or_else(|| {
                CoreError::InvalidArgument("--kind density needs --checkpoint".into())
            })?;
            let (model, _) = load_checkpoint(ckpt)?;
            let seqs = load_strokes(input, None)?;
            let seq = seqs.get(index).ok_or_else(|| {
                CoreError::InvalidArgument(format!(
                    "index {} out of range ({} sequences)",
                    index,
                    seqs.len()
                ))
            })?;
            render_density_heatmap(&model, seq, &spec)?
        }
        VizKind::Window => {
            let text = std::fs::read_to_string(input)?;
            let trace: PhiTrace = serde_json::from_str(&text)?;
            render_window_heatmap(&trace.to_rows()?, &spec)
        }
    };
    std::fs::write(out, svg)?;
    Ok(())
}
