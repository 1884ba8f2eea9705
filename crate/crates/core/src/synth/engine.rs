//! The live stream: a render thread that decodes the newest control
//! snapshot each hop and a paced output thread that plays finished hops.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_queue::ArrayQueue;
use serde::Serialize;

use super::render::{synthesis_bank, FrameRenderer, SPECTRUM_BANDS};
use super::state::{ControlState, SnapshotReader};
use crate::model::Autoencoder;
use crate::wav::quantize_i16;
use crate::{Error, Result, FFT_SIZE, HOP_SIZE, SAMPLE_RATE};

/// Where finished audio goes.
#[derive(Debug, Clone, PartialEq)]
pub enum Sink {
    /// Discards samples at the real-time rate.
    Null,
    /// Records 16-bit PCM at the real-time rate.
    Wav(PathBuf),
}

impl FromStr for Sink {
    type Err = Error;

    /// `null` or `wav:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" | "default" => Ok(Sink::Null),
            _ => match s.strip_prefix("wav:") {
                Some(p) if !p.is_empty() => Ok(Sink::Wav(PathBuf::from(p))),
                _ => Err(Error::Device(format!("unknown output device {s:?} (available: null, wav:PATH)"))),
            },
        }
    }
}

impl fmt::Display for Sink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sink::Null => f.write_str("null"),
            Sink::Wav(p) => write!(f, "wav:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub sink: Sink,
    pub phase_seed: u64,
    /// Linear latent glide length in milliseconds; `None` switches
    /// abruptly.
    pub smooth_ms: Option<f64>,
    /// Rendered hops buffered ahead of the output.
    pub queue_frames: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            fft_size: FFT_SIZE,
            hop: HOP_SIZE,
            sink: Sink::Null,
            phase_seed: 0,
            smooth_ms: None,
            queue_frames: 3,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.fft_size % self.hop != 0 {
            return Err(Error::Config(format!("hop {} must divide the FFT size {}", self.hop, self.fft_size)));
        }
        if (self.sample_rate, self.fft_size, self.hop) != (SAMPLE_RATE, FFT_SIZE, HOP_SIZE) {
            return Err(Error::Config(format!(
                "the engine runs at {SAMPLE_RATE} Hz with FFT {FFT_SIZE} and hop {HOP_SIZE}, got {} Hz, {}, {}",
                self.sample_rate, self.fft_size, self.hop
            )));
        }
        if self.queue_frames == 0 {
            return Err(Error::Config("queue must hold at least one frame".into()));
        }
        if let Some(ms) = self.smooth_ms {
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(Error::Config(format!("smoothing time must be >= 0 ms, got {ms}")));
            }
        }
        Ok(())
    }

    /// Time budget for rendering one hop.
    pub fn frame_period(&self) -> Duration {
        Duration::from_secs_f64(self.hop as f64 / self.sample_rate as f64)
    }
}

/// Counters shared between the stream threads and observers.
#[derive(Debug)]
pub struct StreamStats {
    underruns: AtomicU64,
    clipped: AtomicU64,
    rendered: AtomicU64,
    played: AtomicU64,
    render_ns_max: AtomicU64,
    render_ns_total: AtomicU64,
    spectrum: [AtomicU32; SPECTRUM_BANDS],
}

impl Default for StreamStats {
    fn default() -> Self {
        Self {
            underruns: AtomicU64::new(0),
            clipped: AtomicU64::new(0),
            rendered: AtomicU64::new(0),
            played: AtomicU64::new(0),
            render_ns_max: AtomicU64::new(0),
            render_ns_total: AtomicU64::new(0),
            spectrum: std::array::from_fn(|_| AtomicU32::new(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSnapshot {
    pub underruns: u64,
    pub clipped: u64,
    pub frames_rendered: u64,
    pub frames_played: u64,
    pub render_ms_mean: f64,
    pub render_ms_max: f64,
    pub spectrum: Vec<f32>,
}

impl StreamStats {
    pub fn underruns(&self) -> u64 {
        self.underruns.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let rendered = self.rendered.load(Ordering::Relaxed);
        StatsSnapshot {
            underruns: self.underruns(),
            clipped: self.clipped.load(Ordering::Relaxed),
            frames_rendered: rendered,
            frames_played: self.played.load(Ordering::Relaxed),
            render_ms_mean: self.render_ns_total.load(Ordering::Relaxed) as f64 / rendered.max(1) as f64 / 1e6,
            render_ms_max: self.render_ns_max.load(Ordering::Relaxed) as f64 / 1e6,
            spectrum: self.spectrum.iter().map(|a| f32::from_bits(a.load(Ordering::Relaxed))).collect(),
        }
    }
}

/// Linear glide of the latent toward the newest target.
struct Glide {
    frames: usize,
    from: Vec<f32>,
    to: Vec<f32>,
    step: usize,
    generation: u64,
}

impl Glide {
    fn new(frames: usize, initial: &ControlState) -> Self {
        Self { frames, from: initial.latent.clone(), to: initial.latent.clone(), step: frames, generation: initial.generation }
    }

    /// Writes the glided state for this frame into `work`.
    fn apply(&mut self, target: &ControlState, work: &mut ControlState) {
        if target.generation != self.generation {
            self.generation = target.generation;
            if target.latent != self.to {
                // Restart from wherever the previous glide had got to.
                self.from.copy_from_slice(&work.latent);
                self.to.copy_from_slice(&target.latent);
                self.step = 0;
            }
        }
        work.chroma = target.chroma;
        work.gain = target.gain;
        work.generation = target.generation;
        self.step = (self.step + 1).min(self.frames);
        let t = self.step as f32 / self.frames as f32;
        for ((w, &a), &b) in work.latent.iter_mut().zip(&self.from).zip(&self.to) {
            *w = a + (b - a) * t;
        }
    }
}

enum Output {
    Null,
    Wav(hound::WavWriter<BufWriter<File>>),
}

impl Output {
    fn open(sink: &Sink) -> Result<Self> {
        match sink {
            Sink::Null => Ok(Output::Null),
            Sink::Wav(path) => {
                let spec = hound::WavSpec {
                    channels: 1,
                    sample_rate: SAMPLE_RATE,
                    bits_per_sample: 16,
                    sample_format: hound::SampleFormat::Int,
                };
                hound::WavWriter::create(path, spec)
                    .map(Output::Wav)
                    .map_err(|e| Error::Device(format!("cannot open {}: {e}", path.display())))
            }
        }
    }

    fn write(&mut self, samples: &[f32]) -> Result<()> {
        if let Output::Wav(w) = self {
            for &s in samples {
                w.write_sample(quantize_i16(s))?;
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Output::Wav(w) = self {
            w.finalize()?;
        }
        Ok(())
    }
}

/// A running stream. Dropping it without [`Stream::stop`] detaches the
/// threads after signalling them to stop.
pub struct Stream {
    stop: Arc<AtomicBool>,
    stats: Arc<StreamStats>,
    threads: Vec<JoinHandle<Result<()>>>,
    phase_seed: u64,
}

impl Stream {
    pub fn stats(&self) -> &Arc<StreamStats> {
        &self.stats
    }

    pub fn phase_seed(&self) -> u64 {
        self.phase_seed
    }

    /// Stops both threads, finalizes the sink and returns the final
    /// counters.
    pub fn stop(mut self) -> Result<StatsSnapshot> {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            t.thread().unpark();
            t.join().map_err(|_| Error::Device("stream thread panicked".into()))??;
        }
        Ok(self.stats.snapshot())
    }
}

impl Drop for Stream {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Starts streaming `model` driven by `control`.
///
/// Errors (bad configuration, invalid initial state, unavailable sink)
/// are reported here; after startup neither thread allocates or waits on
/// the control side.
pub fn run_stream(model: Arc<Autoencoder>, config: StreamConfig, mut control: SnapshotReader) -> Result<Stream> {
    config.validate()?;
    control.latest().validate(&model)?;
    let mut output = Output::open(&config.sink)?;
    let mut renderer = FrameRenderer::new(model, Arc::new(synthesis_bank(config.phase_seed)?))?;
    let stats = Arc::new(StreamStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let period = config.frame_period();

    let depth = config.queue_frames;
    let filled: Arc<ArrayQueue<Box<[f32]>>> = Arc::new(ArrayQueue::new(depth));
    let free: Arc<ArrayQueue<Box<[f32]>>> = Arc::new(ArrayQueue::new(depth + 1));
    for _ in 0..=depth {
        let _ = free.push(vec![0.0f32; HOP_SIZE].into_boxed_slice());
    }

    let glide_frames = config.smooth_ms.map(|ms| ((ms / 1e3 / period.as_secs_f64()).round() as usize).max(1));
    let mut glide = glide_frames.map(|n| Glide::new(n, control.latest()));
    let mut work = control.latest().clone();
    let mut spectrum = [0.0f32; SPECTRUM_BANDS];

    let mut render_one = {
        let stats = stats.clone();
        move |renderer: &mut FrameRenderer, control: &mut SnapshotReader, buf: &mut [f32]| -> Result<()> {
            let start = Instant::now();
            let target = control.latest();
            let state = match glide.as_mut() {
                Some(g) => {
                    g.apply(target, &mut work);
                    &work
                }
                None => target,
            };
            buf.copy_from_slice(renderer.render_frame(state)?);
            renderer.write_spectrum(state.gain, &mut spectrum);
            let ns = start.elapsed().as_nanos() as u64;
            for (a, v) in stats.spectrum.iter().zip(&spectrum) {
                a.store(v.to_bits(), Ordering::Relaxed);
            }
            stats.clipped.store(renderer.clipped_samples(), Ordering::Relaxed);
            stats.render_ns_total.fetch_add(ns, Ordering::Relaxed);
            stats.render_ns_max.fetch_max(ns, Ordering::Relaxed);
            stats.rendered.fetch_add(1, Ordering::Relaxed);
            Ok(())
        }
    };

    // Prefill so the output starts with a full queue.
    for _ in 0..depth {
        let mut buf = free.pop().expect("pool holds depth + 1 buffers");
        render_one(&mut renderer, &mut control, &mut buf)?;
        let _ = filled.push(buf);
    }

    let render = {
        let (stop, filled, free) = (stop.clone(), filled.clone(), free.clone());
        std::thread::Builder::new().name("timbrelab-render".into()).spawn(move || -> Result<()> {
            while !stop.load(Ordering::Relaxed) {
                if filled.is_full() {
                    std::thread::park_timeout(period / 4);
                    continue;
                }
                let Some(mut buf) = free.pop() else {
                    std::thread::park_timeout(period / 4);
                    continue;
                };
                render_one(&mut renderer, &mut control, &mut buf)?;
                if let Err(buf) = filled.push(buf) {
                    let _ = free.push(buf);
                }
            }
            Ok(())
        })?
    };

    let out = {
        let (stop, stats) = (stop.clone(), stats.clone());
        let render_thread = render.thread().clone();
        std::thread::Builder::new().name("timbrelab-output".into()).spawn(move || -> Result<()> {
            let mut last = vec![0.0f32; HOP_SIZE];
            let t0 = Instant::now();
            let mut n: u32 = 0;
            while !stop.load(Ordering::Relaxed) {
                let deadline = t0 + period * n;
                let now = Instant::now();
                if deadline > now {
                    std::thread::sleep(deadline - now);
                }
                match filled.pop() {
                    Some(buf) => {
                        last.copy_from_slice(&buf);
                        let _ = free.push(buf);
                        render_thread.unpark();
                    }
                    None => {
                        stats.underruns.fetch_add(1, Ordering::Relaxed);
                    }
                }
                output.write(&last)?;
                stats.played.fetch_add(1, Ordering::Relaxed);
                n += 1;
            }
            output.finish()
        })?
    };

    Ok(Stream { stop, stats, threads: vec![render, out], phase_seed: config.phase_seed })
}
