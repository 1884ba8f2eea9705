//! The `timbrelab` command line.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error. With
//! `--json` every invocation prints exactly one JSON document on stdout,
//! and errors go to stderr as a single JSON line.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::chroma::{ChromaAnalyzer, PitchClass};
use crate::corpus::{build_corpus, load_corpus, read_manifest, save_corpus, Augmentation, BuildOptions, ClipSpec, Split};
use crate::explore::{embed_corpus, export_embedding, reconstruction_accuracy, sampling_report};
use crate::model::{build_model, load_model, read_model_header, save_model, ModelConfig};
use crate::nn::Activation;
use crate::synth::{
    render_to_wav, run_stream, serve_control, snapshot_channel, Automation, ControlHub, ControlState, Sink, StreamConfig,
};
use crate::synthetic::SyntheticSpec;
use crate::train::{evaluate_mse, train_with_progress, TrainConfig};
use crate::wav::write_wav;
use crate::{Error, Result, FFT_SIZE, SAMPLE_RATE};

#[derive(Debug, Parser)]
#[command(name = "timbrelab", version, about = "Chroma-conditioned autoencoder timbre synthesis")]
pub struct Cli {
    /// Print one JSON document on stdout; errors as JSON on stderr.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct SeedArg {
    /// Seed for every random choice the command makes.
    #[arg(long, env = "TIMBRELAB_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, generate or inspect frame corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train an autoencoder on a corpus.
    Train(TrainArgs),
    /// Reconstruction MSE of a model on a corpus.
    Eval(EvalArgs),
    /// Exhaustive latent mesh sampling of a bounded skip model.
    Mesh(MeshArgs),
    /// Export the latent embedding of a corpus.
    Embed(EmbedArgs),
    /// Stream audio and serve the WebSocket control endpoint.
    Synth(SynthArgs),
    /// Render an automation script to a WAV file.
    Render(RenderArgs),
    /// Print a model's configuration and training metadata.
    ModelInspect(ModelInspectArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Analyze the WAV clips listed in a manifest.
    Build(CorpusBuildArgs),
    /// Generate the synthetic C-major corpus of harmonic tones.
    Synthetic(CorpusSyntheticArgs),
    /// Print a corpus file's header.
    Inspect {
        corpus: PathBuf,
    },
    /// Print the bin-to-note table used for chroma analysis as CSV.
    NoteTable,
}

#[derive(Debug, Args)]
pub struct CorpusBuildArgs {
    /// JSON array of {path, split, clip_id}.
    #[arg(long)]
    pub clips: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// none, chroma or first_order_diff.
    #[arg(long, default_value = "chroma")]
    pub augment: Augmentation,
    #[arg(long)]
    pub drop_silent: bool,
    /// Linearly resample clips that are not 44.1 kHz instead of failing.
    #[arg(long)]
    pub resample: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct CorpusSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "chroma")]
    pub augment: Augmentation,
    /// Seconds per clip.
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
    /// Also write every clip as WAV plus a manifest.json into this
    /// directory.
    #[arg(long)]
    pub wav_dir: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Bottleneck width.
    #[arg(long, default_value_t = 2)]
    pub bottleneck: usize,
    /// sigmoid or lrelu.
    #[arg(long, default_value = "sigmoid")]
    pub bn_act: Activation,
    /// Route the chroma vector around the encoder to the bottleneck.
    #[arg(long)]
    pub skip: bool,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub l2: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Drop silent frames before training.
    #[arg(long)]
    pub drop_silent: bool,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Final model.
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the lowest-validation-MSE checkpoint here.
    #[arg(long)]
    pub best_out: Option<PathBuf>,
    /// Per-epoch CSV history.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Evaluate one split; all non-empty splits by default.
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Grid points per latent dimension.
    #[arg(long, default_value_t = 350)]
    pub mesh_length: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Sample every class present in this corpus's training split instead
    /// of the classes recorded in the model.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// train, validation or test; all splits by default.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out: PathBuf,
    /// Scatter plot (2-dimensional embeddings only).
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Control port; 0 picks a free one.
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Output device: null or wav:PATH.
    #[arg(long, env = "TIMBRELAB_DEVICE", default_value = "null")]
    pub device: String,
    /// Linear latent glide in milliseconds (off by default).
    #[arg(long)]
    pub smooth: Option<f64>,
    /// Directory served at `/` (a placeholder page otherwise).
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON array of {time, latent?, chroma?, gain?} keyframes.
    #[arg(long)]
    pub automation: PathBuf,
    #[arg(long)]
    pub seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct ModelInspectArgs {
    pub model: PathBuf,
}

/// Human-readable text or a JSON document, depending on `--json`.
struct Output {
    json: bool,
}

impl Output {
    fn progress(&self, line: &str) {
        if !self.json {
            eprintln!("{line}");
        }
    }

    fn done(&self, text: String, doc: Value) {
        if self.json {
            println!("{doc}");
        } else {
            println!("{text}");
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::InvalidFrame(_) => "invalid_frame",
        Error::EmptyCorpus(_) => "empty_corpus",
        Error::Shape(_) => "shape",
        Error::Config(_) => "config",
        Error::Corrupt(_) => "corrupt",
        Error::UnsupportedVersion { .. } => "unsupported_version",
        Error::UnsupportedModel(_) => "unsupported_model",
        Error::Diverged { .. } => "diverged",
        Error::Device(_) => "device",
        Error::Clip { .. } => "clip",
        Error::Wav(_) => "wav",
        Error::Json(_) => "json",
        Error::Io(_) => "io",
    }
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    ExitCode::from(run(cli))
}

/// Runs a parsed command and returns the exit code.
pub fn run(cli: Cli) -> u8 {
    let out = Output { json: cli.json };
    match dispatch(cli.command, &out) {
        Ok(()) => 0,
        Err(e) => {
            if out.json {
                eprintln!("{}", json!({"error": e.to_string(), "kind": error_kind(&e)}));
            } else {
                eprintln!("error: {e}");
            }
            1
        }
    }
}

fn dispatch(cmd: Command, out: &Output) -> Result<()> {
    match cmd {
        Command::Corpus(c) => corpus(c, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Mesh(a) => mesh(a, out),
        Command::Embed(a) => embed(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Render(a) => render(a, out),
        Command::ModelInspect(a) => model_inspect(a, out),
    }
}

fn corpus_summary(c: &crate::corpus::Corpus, path: &Path) -> (String, Value) {
    let counts: Vec<(Split, usize)> = Split::ALL.iter().map(|&s| (s, c.indices(s).len())).collect();
    let text = format!(
        "{}: {} frames ({}), {} silent, augmentation {:?}",
        path.display(),
        c.len(),
        counts.iter().map(|(s, n)| format!("{s} {n}")).collect::<Vec<_>>().join(", "),
        c.metadata().silent_frames,
        c.augmentation()
    );
    let doc = json!({
        "path": path,
        "frames": c.len(),
        "splits": counts.iter().map(|(s, n)| (s.name().to_string(), json!(n))).collect::<serde_json::Map<_, _>>(),
        "silent_frames": c.metadata().silent_frames,
        "augmentation": c.augmentation(),
        "classes": c.classes_present(Split::Train).iter().map(|p| p.index()).collect::<Vec<_>>(),
        "hash": c.content_hash(),
    });
    (text, doc)
}

fn corpus(cmd: CorpusCommand, out: &Output) -> Result<()> {
    match cmd {
        CorpusCommand::Build(a) => {
            let clips = read_manifest(&a.clips)?;
            let opts = BuildOptions { augmentation: a.augment, drop_silent: a.drop_silent, seed: a.seed.seed, resample: a.resample };
            let c = build_corpus(&clips, opts)?;
            save_corpus(&c, &a.out)?;
            let (text, doc) = corpus_summary(&c, &a.out);
            out.done(text, doc);
        }
        CorpusCommand::Synthetic(a) => {
            let mut spec = SyntheticSpec::c_major(a.seed.seed);
            spec.seconds = a.seconds;
            if let Some(dir) = &a.wav_dir {
                std::fs::create_dir_all(dir)?;
                let mut manifest = Vec::new();
                for clip in spec.clips()? {
                    let name = format!("{}.wav", clip.clip_id);
                    write_wav(&dir.join(&name), clip.audio.samples(), SAMPLE_RATE)?;
                    manifest.push(ClipSpec { path: name.into(), split: clip.split, clip_id: clip.clip_id });
                }
                std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
            }
            let c = spec.build(a.augment)?;
            save_corpus(&c, &a.out)?;
            let (text, doc) = corpus_summary(&c, &a.out);
            out.done(text, doc);
        }
        CorpusCommand::Inspect { corpus } => {
            let c = load_corpus(&corpus)?;
            let (text, doc) = corpus_summary(&c, &corpus);
            out.done(text, doc);
        }
        CorpusCommand::NoteTable => {
            let mut csv = Vec::new();
            ChromaAnalyzer::new(SAMPLE_RATE, FFT_SIZE).write_table_csv(&mut csv)?;
            let csv = String::from_utf8(csv).expect("CSV is ASCII");
            let doc = json!({ "csv": csv });
            out.done(csv.trim_end().to_string(), doc);
        }
    }
    Ok(())
}

fn train(a: TrainArgs, out: &Output) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let cfg = ModelConfig::new(a.bottleneck, a.bn_act, corpus.augmentation(), a.skip);
    let model = build_model(cfg, a.seed.seed)?;
    let tc = TrainConfig { epochs: a.epochs, lr: a.lr, l2: a.l2, batch_size: a.batch, seed: a.seed.seed, drop_silent: a.drop_silent };
    let started = Instant::now();
    let outcome = train_with_progress(model, &corpus, &tc, |r| {
        out.progress(&format!(
            "epoch {}/{}  train {:.4e}  val {:.4e}  {:.2}s",
            r.epoch, tc.epochs, r.train_mse, r.val_mse, r.seconds
        ))
    })?;
    save_model(&outcome.final_model, &a.out)?;
    if let Some(p) = &a.best_out {
        save_model(&outcome.best_model, p)?;
    }
    if let Some(p) = &a.history {
        outcome.history.write_csv(std::io::BufWriter::new(std::fs::File::create(p)?))?;
    }
    let h = &outcome.history;
    let last = h.final_record().expect("at least one epoch");
    let first = &h.epochs[0];
    let text = format!(
        "saved {}: val MSE {:.4e} (epoch 1: {:.4e}), best {:.4e} at epoch {}, {:.1}s",
        a.out.display(),
        last.val_mse,
        first.val_mse,
        h.best_val_mse,
        h.best_epoch,
        started.elapsed().as_secs_f64()
    );
    let doc = json!({
        "model": a.out,
        "epochs": tc.epochs,
        "first_val_mse": first.val_mse,
        "final_train_mse": last.train_mse,
        "final_val_mse": last.val_mse,
        "best_val_mse": h.best_val_mse,
        "best_epoch": h.best_epoch,
        "final_test_mse": h.final_test_mse,
        "best_test_mse": h.best_test_mse,
        "seconds": started.elapsed().as_secs_f64(),
    });
    out.done(text, doc);
    Ok(())
}

fn eval(a: EvalArgs, out: &Output) -> Result<()> {
    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let splits: Vec<Split> = match a.split {
        Some(s) => vec![s],
        None => Split::ALL.iter().copied().filter(|&s| !corpus.indices(s).is_empty()).collect(),
    };
    let mut lines = Vec::new();
    let mut doc = serde_json::Map::new();
    for s in splits {
        let mse = evaluate_mse(&model, &corpus, s)?;
        let acc = if model.config().chroma_skip { Some(reconstruction_accuracy(&model, &corpus, s)?) } else { None };
        lines.push(match acc {
            Some(acc) => format!("{s}: MSE {mse:.4e}, chroma match {acc:.3}"),
            None => format!("{s}: MSE {mse:.4e}"),
        });
        doc.insert(s.name().into(), json!({ "mse": mse, "chroma_match": acc }));
    }
    out.done(lines.join("\n"), Value::Object(doc));
    Ok(())
}

fn mesh(a: MeshArgs, out: &Output) -> Result<()> {
    let model = load_model(&a.model)?;
    let classes = match &a.corpus {
        Some(p) => load_corpus(p)?.classes_present(Split::Train),
        None if !model.metadata.trained_classes.is_empty() => model.metadata.trained_classes.iter().copied().collect(),
        None => PitchClass::all().collect(),
    };
    let started = Instant::now();
    let report = sampling_report(&model, &classes, a.mesh_length)?;
    report.write_csv(std::io::BufWriter::new(std::fs::File::create(&a.out)?))?;
    let text = report
        .present()
        .map(|(c, f)| format!("{:<2} {f:.3}", c.name()))
        .chain([format!("{} points per class, {:.1}s", report.samples_per_class, started.elapsed().as_secs_f64())])
        .collect::<Vec<_>>()
        .join("\n");
    let doc = json!({
        "report": a.out,
        "mesh_length": report.mesh_length,
        "samples_per_class": report.samples_per_class,
        "fractions": report.present().map(|(c, f)| (c.name().to_string(), json!(f))).collect::<serde_json::Map<_, _>>(),
        "seconds": started.elapsed().as_secs_f64(),
    });
    out.done(text, doc);
    Ok(())
}

fn embed(a: EmbedArgs, out: &Output) -> Result<()> {
    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let set = embed_corpus(&model, &corpus, a.split)?;
    let wrote_svg = export_embedding(&set, &a.out, a.svg.as_deref())?;
    if a.svg.is_some() && !wrote_svg {
        out.progress(&format!("no plot written: the embedding has {} dimensions", set.dim));
    }
    let text = format!("{} points in {} dimensions written to {}", set.len(), set.dim, a.out.display());
    let doc = json!({
        "csv": a.out,
        "svg": if wrote_svg { a.svg.as_ref().map(|p| json!(p)) } else { None },
        "points": set.len(),
        "dim": set.dim,
        "bounds": set.bounds,
    });
    out.done(text, doc);
    Ok(())
}

fn synth(a: SynthArgs, out: &Output) -> Result<()> {
    let model = Arc::new(load_model(&a.model)?);
    let sink: Sink = a.device.parse()?;
    let initial = ControlState::initial(&model);
    let (writer, reader) = snapshot_channel(initial.clone());
    let config = StreamConfig { sink, phase_seed: a.seed.seed, smooth_ms: a.smooth, ..Default::default() };
    let stream = run_stream(model.clone(), config, reader)?;
    let hub = Arc::new(ControlHub::new(model, initial, writer, stream.stats().clone(), a.seed.seed));
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let addr = SocketAddr::new(a.host, a.port);
    let duration = a.duration;
    let served = runtime.block_on(async move {
        let shutdown = async move {
            match duration {
                Some(s) => tokio::time::sleep(Duration::from_secs_f64(s.max(0.0))).await,
                None => {
                    let _ = tokio::signal::ctrl_c().await;
                }
            }
        };
        serve_control(
            hub,
            addr,
            a.ui_dir,
            |bound| {
                eprintln!("listening on http://{bound} (control at ws://{bound}/ws)");
                let _ = std::io::stderr().flush();
            },
            shutdown,
        )
        .await
    });
    let stats = stream.stop()?;
    served?;
    let text = format!(
        "played {} frames, {} underruns, {} clipped samples, render {:.3} ms mean / {:.3} ms max",
        stats.frames_played, stats.underruns, stats.clipped, stats.render_ms_mean, stats.render_ms_max
    );
    out.done(text, serde_json::to_value(&stats)?);
    Ok(())
}

fn render(a: RenderArgs, out: &Output) -> Result<()> {
    let model = Arc::new(load_model(&a.model)?);
    let automation = Automation::load(&a.automation)?;
    let samples = render_to_wav(model, &automation, a.seconds, a.seed.seed, &a.out)?;
    let text = format!("wrote {} samples to {}", samples, a.out.display());
    out.done(text, json!({ "wav": a.out, "samples": samples, "sample_rate": SAMPLE_RATE }));
    Ok(())
}

fn model_inspect(a: ModelInspectArgs, out: &Output) -> Result<()> {
    let (config, metadata) = read_model_header(&a.model)?;
    let doc = json!({ "config": config, "metadata": metadata });
    out.done(serde_json::to_string_pretty(&doc)?, doc);
    Ok(())
}
