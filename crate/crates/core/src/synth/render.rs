//! Per-hop decoding and noise-phase inversion, shared by the live stream
//! and offline rendering.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::state::{validate_gain, validate_latent, ControlState};
use crate::chroma::PitchClass;
use crate::dsp::{noise_phase_bank, FrameSynthesizer, PhaseBank, ENVELOPE_FLOOR};
use crate::model::{Autoencoder, DecodeScratch};
use crate::wav::write_wav;
use crate::{Error, Result, FFT_SIZE, HOP_SIZE, NUM_BINS, NUM_CLASSES, SAMPLE_RATE};

/// Frames in the synthesis phase bank, cycled.
pub const PHASE_BANK_FRAMES: usize = 256;

/// Magnitude of a unit-amplitude sinusoid's peak bin under the Hann
/// window; decoded frames have peak 1, so this maps them to roughly unit
/// amplitude before `gain`.
pub const MAGNITUDE_SCALE: f64 = FFT_SIZE as f64 / 4.0;

/// Bands in the display spectrum.
pub const SPECTRUM_BANDS: usize = 64;

pub fn synthesis_bank(seed: u64) -> Result<PhaseBank> {
    noise_phase_bank(PHASE_BANK_FRAMES, seed)
}

/// Streaming inverse: decodes one frame per call and returns the next
/// `HOP_SIZE` finished output samples.
///
/// Each call overlap-adds the new windowed frame into the retained tail of
/// the previous three and normalizes the finished hop by the accumulated
/// squared-window envelope, so the output equals offline overlap-add of the
/// same frames sample for sample.
pub struct FrameRenderer {
    model: Arc<Autoencoder>,
    bank: Arc<PhaseBank>,
    synth: FrameSynthesizer,
    scratch: DecodeScratch,
    chroma: [f32; NUM_CLASSES],
    window_sq: Vec<f64>,
    acc: Vec<f64>,
    envelope: Vec<f64>,
    out: Vec<f32>,
    magnitudes: Vec<f32>,
    frame_index: usize,
    clipped: u64,
}

impl FrameRenderer {
    pub fn new(model: Arc<Autoencoder>, bank: Arc<PhaseBank>) -> Result<Self> {
        if model.config().frame_bins != NUM_BINS {
            return Err(Error::UnsupportedModel(format!(
                "model decodes {} bins, synthesis needs {NUM_BINS}",
                model.config().frame_bins
            )));
        }
        if bank.is_empty() {
            return Err(Error::InvalidArgument("empty phase bank".into()));
        }
        let synth = FrameSynthesizer::new();
        let window_sq = synth.window().iter().map(|w| w * w).collect();
        let mut r = Self {
            model,
            bank,
            synth,
            window_sq,
            scratch: DecodeScratch::default(),
            chroma: [0.0; NUM_CLASSES],
            acc: vec![0.0; FFT_SIZE],
            envelope: vec![0.0; FFT_SIZE],
            out: vec![0.0; HOP_SIZE],
            magnitudes: vec![0.0; NUM_BINS],
            frame_index: 0,
            clipped: 0,
        };
        // Size the decode scratch so steady-state calls never allocate.
        let warm = vec![0.0f32; r.model.bottleneck_width()];
        r.model.decode_rows_with(&warm, &r.chroma, 1, &mut r.scratch)?;
        Ok(r)
    }

    pub fn model(&self) -> &Autoencoder {
        &self.model
    }

    pub fn bank(&self) -> &PhaseBank {
        &self.bank
    }

    /// Index of the next frame to render.
    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    /// Output samples hard-clipped to `[-1, 1]` so far.
    pub fn clipped_samples(&self) -> u64 {
        self.clipped
    }

    /// Magnitudes decoded by the last call, before gain.
    pub fn last_magnitudes(&self) -> &[f32] {
        &self.magnitudes
    }

    /// Decodes `state`, inverts it with bank frame `frame_index mod len`
    /// and returns the next hop of output.
    pub fn render_frame(&mut self, state: &ControlState) -> Result<&[f32]> {
        validate_latent(&self.model, &state.latent)?;
        validate_gain(state.gain)?;
        self.chroma = state.chroma_vector().onehot();
        let decoded = self.model.decode_rows_with(&state.latent, &self.chroma, 1, &mut self.scratch)?;
        self.magnitudes.copy_from_slice(decoded);
        let phases = self.bank.frame(self.frame_index % self.bank.len());
        let frame = self.synth.synthesize(&self.magnitudes, phases, state.gain as f64 * MAGNITUDE_SCALE);
        for k in 0..FFT_SIZE {
            self.acc[k] += frame[k];
            self.envelope[k] += self.window_sq[k];
        }
        for (o, (&a, &e)) in self.out.iter_mut().zip(self.acc.iter().zip(&self.envelope)) {
            let v = (a / e.max(ENVELOPE_FLOOR)) as f32;
            if v.abs() > 1.0 {
                self.clipped += 1;
            }
            *o = v.clamp(-1.0, 1.0);
        }
        self.acc.copy_within(HOP_SIZE.., 0);
        self.acc[FFT_SIZE - HOP_SIZE..].fill(0.0);
        self.envelope.copy_within(HOP_SIZE.., 0);
        self.envelope[FFT_SIZE - HOP_SIZE..].fill(0.0);
        self.frame_index += 1;
        Ok(&self.out)
    }

    /// Band means of the last decoded magnitudes times gain.
    pub fn write_spectrum(&self, gain: f32, out: &mut [f32; SPECTRUM_BANDS]) {
        for (b, o) in out.iter_mut().enumerate() {
            let lo = b * NUM_BINS / SPECTRUM_BANDS;
            let hi = ((b + 1) * NUM_BINS / SPECTRUM_BANDS).max(lo + 1);
            let band = &self.magnitudes[lo..hi];
            *o = gain * band.iter().sum::<f32>() / band.len() as f32;
        }
    }
}

/// One automation keyframe. Unset fields keep their previous value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomationEvent {
    /// Seconds from the start of the render.
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f32>>,
    /// Pitch class 0-11, or `null` to clear; absent keeps the previous.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "explicit_null")]
    pub chroma: Option<Option<PitchClass>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f32>,
}

/// Distinguishes an absent field from an explicit `null`.
mod explicit_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::chroma::PitchClass;

    pub fn serialize<S: Serializer>(v: &Option<Option<PitchClass>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|c| c.map(|c| c.index() as u8)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<PitchClass>>, D::Error> {
        let raw: Option<u8> = Option::deserialize(d)?;
        raw.map(PitchClass::try_from).transpose().map(Some).map_err(serde::de::Error::custom)
    }
}

/// A sorted list of keyframes; the state of frame `f` is the result of
/// applying every event with `time <= f * HOP_SIZE / SAMPLE_RATE`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Automation(pub Vec<AutomationEvent>);

impl Automation {
    pub fn from_json(text: &str) -> Result<Self> {
        let a: Automation = serde_json::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.0.iter().enumerate() {
            if !(e.time.is_finite() && e.time >= 0.0) {
                return Err(Error::InvalidArgument(format!("automation event {i}: time {} is not a finite non-negative number", e.time)));
            }
            if i > 0 && e.time < self.0[i - 1].time {
                return Err(Error::InvalidArgument(format!("automation event {i}: times must be sorted")));
            }
        }
        Ok(())
    }

    /// Per-frame states for `frames` frames starting from `initial`.
    /// Generations count the events applied so far.
    pub fn states(&self, model: &Autoencoder, initial: &ControlState, frames: usize) -> Result<Vec<ControlState>> {
        self.validate()?;
        let mut state = initial.clone();
        let mut next = 0;
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let t = (f * HOP_SIZE) as f64 / SAMPLE_RATE as f64;
            while next < self.0.len() && self.0[next].time <= t {
                let e = &self.0[next];
                if let Some(l) = &e.latent {
                    validate_latent(model, l).map_err(|err| Error::InvalidArgument(format!("automation event {next}: {err}")))?;
                    state.latent.clone_from(l);
                }
                if let Some(c) = e.chroma {
                    state.chroma = c;
                }
                if let Some(g) = e.gain {
                    validate_gain(g).map_err(|err| Error::InvalidArgument(format!("automation event {next}: {err}")))?;
                    state.gain = g;
                }
                state.generation += 1;
                next += 1;
            }
            out.push(state.clone());
        }
        Ok(out)
    }
}

/// Samples in a render of `seconds`.
pub fn render_length(seconds: f64) -> Result<usize> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {seconds}")));
    }
    Ok((seconds * SAMPLE_RATE as f64).round() as usize)
}

/// Renders `seconds` of audio: whole frames through [`FrameRenderer`],
/// truncated to exactly `round(seconds * SAMPLE_RATE)` samples.
pub fn render_samples(model: Arc<Autoencoder>, automation: &Automation, seconds: f64, seed: u64) -> Result<Vec<f32>> {
    let len = render_length(seconds)?;
    let frames = len.div_ceil(HOP_SIZE);
    let initial = ControlState::initial(&model);
    let states = automation.states(&model, &initial, frames)?;
    let mut r = FrameRenderer::new(model, Arc::new(synthesis_bank(seed)?))?;
    let mut out = Vec::with_capacity(frames * HOP_SIZE);
    for s in &states {
        out.extend_from_slice(r.render_frame(s)?);
    }
    out.truncate(len);
    Ok(out)
}

/// [`render_samples`] written as 16-bit PCM.
pub fn render_to_wav(model: Arc<Autoencoder>, automation: &Automation, seconds: f64, seed: u64, path: &Path) -> Result<usize> {
    let samples = render_samples(model, automation, seconds, seed)?;
    write_wav(path, &samples, SAMPLE_RATE)?;
    Ok(samples.len())
}
