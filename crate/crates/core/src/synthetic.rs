//! Seeded harmonic test tones standing in for recorded instrument corpora.
//!
//! Each "patch" is a distinct synthetic timbre (spectral rolloff, odd/even
//! balance, brightness decay, attack). A corpus plays every patch over the
//! one-octave C-major scale C4..B4, one clip per (patch, note), and assigns
//! whole patches to splits so no timbre crosses splits.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::chroma::PitchClass;
use crate::corpus::{build_corpus_from_audio, Augmentation, BuildOptions, ClipAudio, Corpus, Split};
use crate::dsp::AudioBuffer;
use crate::{Result, SAMPLE_RATE};

/// MIDI note numbers of C4, D4, E4, F4, G4, A4, B4.
pub const C_MAJOR_OCTAVE: [u8; 7] = [60, 62, 64, 65, 67, 69, 71];

const NOTE_NAMES: [&str; 12] = ["C", "Cs", "D", "Ds", "E", "F", "Fs", "G", "Gs", "A", "As", "B"];

/// Timbre parameters of one synthetic instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    /// Harmonic `k` has amplitude `k^-rolloff` before other shaping.
    pub rolloff: f64,
    /// Extra gain on even harmonics.
    pub even_gain: f64,
    /// Per-second exponential decay of upper harmonics.
    pub brightness_decay: f64,
    /// Linear attack time in seconds.
    pub attack: f64,
    /// Vibrato depth as a frequency ratio.
    pub vibrato_depth: f64,
    pub vibrato_rate: f64,
    pub harmonics: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub notes: Vec<u8>,
    pub train: Vec<Patch>,
    pub validation: Vec<Patch>,
    pub test: Vec<Patch>,
    pub seconds: f64,
    pub amplitude: f64,
    pub seed: u64,
}

fn patch(rolloff: f64, even_gain: f64, brightness_decay: f64, attack: f64) -> Patch {
    Patch {
        rolloff,
        even_gain,
        brightness_decay,
        attack,
        vibrato_depth: 0.002,
        vibrato_rate: 5.0,
        harmonics: 40,
    }
}

impl SyntheticSpec {
    /// Seven C-major notes, five training timbres, one validation and one
    /// test timbre interpolating the training ones; one second per clip.
    pub fn c_major(seed: u64) -> Self {
        Self {
            notes: C_MAJOR_OCTAVE.to_vec(),
            train: vec![
                patch(0.6, 1.0, 0.0, 0.01),
                patch(1.0, 0.3, 0.5, 0.03),
                patch(1.5, 1.0, 1.0, 0.05),
                patch(2.0, 0.6, 0.0, 0.02),
                patch(2.5, 0.8, 2.0, 0.08),
            ],
            validation: vec![patch(1.25, 0.7, 0.7, 0.04)],
            test: vec![patch(1.75, 0.9, 0.3, 0.03)],
            seconds: 1.0,
            amplitude: 0.5,
            seed,
        }
    }

    /// Same layout restricted to the given MIDI notes.
    pub fn with_notes(mut self, notes: &[u8]) -> Self {
        self.notes = notes.to_vec();
        self
    }

    fn patches(&self) -> impl Iterator<Item = (Split, usize, &Patch)> {
        [(Split::Train, &self.train), (Split::Validation, &self.validation), (Split::Test, &self.test)]
            .into_iter()
            .flat_map(|(split, v)| v.iter().enumerate().map(move |(i, p)| (split, i, p)))
    }

    /// Every clip of the corpus, in deterministic order.
    pub fn clips(&self) -> Result<Vec<ClipAudio>> {
        let mut clips = Vec::new();
        for (split, i, p) in self.patches() {
            for &note in &self.notes {
                let seed = self.seed ^ ((split as u64) << 40) ^ ((i as u64) << 20) ^ note as u64;
                let audio = render_tone(p, note, self.seconds, self.amplitude, seed)?;
                clips.push(ClipAudio {
                    clip_id: clip_id(split, i, note),
                    split,
                    audio,
                    source: None,
                });
            }
        }
        Ok(clips)
    }

    pub fn build(&self, augmentation: Augmentation) -> Result<Corpus> {
        build_corpus_from_audio(
            self.clips()?,
            BuildOptions { augmentation, seed: self.seed, ..Default::default() },
        )
    }
}

pub fn midi_frequency(note: u8) -> f64 {
    440.0 * 2f64.powf((note as f64 - 69.0) / 12.0)
}

pub fn midi_class(note: u8) -> PitchClass {
    PitchClass::new(note as usize % 12).expect("mod 12")
}

pub fn clip_id(split: Split, patch: usize, note: u8) -> String {
    let octave = note as i32 / 12 - 1;
    format!("{}{patch}-{}{octave}", split.name(), NOTE_NAMES[note as usize % 12])
}

/// Renders one note of `patch`. Harmonic phases are drawn from `seed`;
/// harmonics above Nyquist are omitted.
pub fn render_tone(patch: &Patch, note: u8, seconds: f64, amplitude: f64, seed: u64) -> Result<AudioBuffer> {
    let sr = SAMPLE_RATE as f64;
    let len = (seconds * sr).round() as usize;
    let f0 = midi_frequency(note);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let vib_phase: f64 = rng.random_range(0.0..2.0 * PI);
    let partials: Vec<(f64, f64, f64)> = (1..=patch.harmonics)
        .filter(|&k| (k as f64) * f0 * (1.0 + patch.vibrato_depth) < sr / 2.0)
        .map(|k| {
            let kf = k as f64;
            let mut a = kf.powf(-patch.rolloff);
            if k % 2 == 0 {
                a *= patch.even_gain;
            }
            (kf, a, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let norm: f64 = partials.iter().map(|p| p.1).sum();
    let release = 0.05f64.min(seconds / 4.0);

    let mut out = Vec::with_capacity(len);
    let mut phase = 0.0f64;
    for n in 0..len {
        let t = n as f64 / sr;
        let f = f0 * (1.0 + patch.vibrato_depth * (2.0 * PI * patch.vibrato_rate * t + vib_phase).sin());
        phase += 2.0 * PI * f / sr;
        let env = (t / patch.attack.max(1e-6)).min(1.0) * ((seconds - t) / release).clamp(0.0, 1.0);
        let mut s = 0.0;
        for &(k, a, ph) in &partials {
            let decay = (-patch.brightness_decay * (k - 1.0) * t / 8.0).exp();
            s += a * decay * (k * phase + ph).sin();
        }
        out.push((amplitude * env * s / norm) as f32);
    }
    AudioBuffer::new(out, SAMPLE_RATE)
}
