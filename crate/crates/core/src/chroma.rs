//! Per-frame chromagrams and one-hot pitch-class vectors.
//!
//! Each FFT bin is assigned to the piano note (A0..C8) whose ±50 cent band
//! contains the bin's center frequency, if any. Note energies are the sums
//! of squared magnitudes over their bins, folded into 12 pitch classes.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, NUM_CLASSES};

/// Number of piano keys, A0 through C8.
pub const NUM_NOTES: usize = 88;
const A0_HZ: f64 = 27.5;
/// Pitch class of A0 (C = 0).
const A0_CLASS: usize = 9;

pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// A pitch class, 0 = C through 11 = B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PitchClass(u8);

impl PitchClass {
    pub const C: PitchClass = PitchClass(0);
    pub const A: PitchClass = PitchClass(9);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_CLASSES {
            Ok(Self(index as u8))
        } else {
            Err(Error::InvalidArgument(format!("pitch class {index} outside 0..12")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = PitchClass> {
        (0..NUM_CLASSES as u8).map(PitchClass)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        CLASS_NAMES.iter().position(|n| n.eq_ignore_ascii_case(name)).map(|i| Self(i as u8))
    }
}

impl TryFrom<u8> for PitchClass {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v as usize)
    }
}

impl From<PitchClass> for u8 {
    fn from(p: PitchClass) -> u8 {
        p.0
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Energy per pitch class, C first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Chromagram(pub [f64; NUM_CLASSES]);

/// A one-hot pitch-class indicator; `None` marks a silent frame and
/// encodes as all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ChromaVector(pub Option<PitchClass>);

impl ChromaVector {
    pub fn silent() -> Self {
        Self(None)
    }

    pub fn class(&self) -> Option<PitchClass> {
        self.0
    }

    pub fn is_silent(&self) -> bool {
        self.0.is_none()
    }

    pub fn onehot(&self) -> [f32; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        if let Some(c) = self.0 {
            v[c.index()] = 1.0;
        }
        v
    }

    /// Writes the one-hot encoding into `out[..12]`.
    pub fn write_onehot<T: From<u8> + Copy>(&self, out: &mut [T]) {
        for (i, o) in out.iter_mut().take(NUM_CLASSES).enumerate() {
            *o = T::from((self.0.map(|c| c.index()) == Some(i)) as u8);
        }
    }
}

impl From<PitchClass> for ChromaVector {
    fn from(c: PitchClass) -> Self {
        Self(Some(c))
    }
}

/// Equal-tempered piano note frequencies, `27.5 * 2^(k/12)`.
pub fn note_frequencies() -> [f64; NUM_NOTES] {
    std::array::from_fn(|k| A0_HZ * 2f64.powf(k as f64 / 12.0))
}

pub fn note_class(note: usize) -> PitchClass {
    PitchClass(((note + A0_CLASS) % NUM_CLASSES) as u8)
}

/// Precomputed bin-to-note assignment for one sample rate and FFT size.
#[derive(Debug, Clone)]
pub struct ChromaAnalyzer {
    sample_rate: u32,
    fft_size: usize,
    bin_note: Vec<Option<u8>>,
}

impl ChromaAnalyzer {
    pub fn new(sample_rate: u32, fft_size: usize) -> Self {
        let bins = fft_size / 2 + 1;
        let bin_note = (0..bins)
            .map(|b| {
                let f = b as f64 * sample_rate as f64 / fft_size as f64;
                if f <= 0.0 {
                    return None;
                }
                // Rounding at exactly +50 cents goes up, so bands are
                // half-open [-50, +50) around each note.
                let k = (12.0 * (f / A0_HZ).log2()).round();
                (0.0..NUM_NOTES as f64).contains(&k).then_some(k as u8)
            })
            .collect();
        Self { sample_rate, fft_size, bin_note }
    }

    pub fn num_bins(&self) -> usize {
        self.bin_note.len()
    }

    /// Note index (0 = A0) of a bin, or `None` outside every band.
    pub fn bin_note(&self, bin: usize) -> Option<usize> {
        self.bin_note.get(bin).copied().flatten().map(usize::from)
    }

    pub fn chromagram<T: Copy + Into<f64>>(&self, frame: &[T]) -> Result<Chromagram> {
        if frame.len() != self.bin_note.len() {
            return Err(Error::InvalidFrame(format!(
                "expected {} bins, got {}",
                self.bin_note.len(),
                frame.len()
            )));
        }
        let mut notes = [0.0f64; NUM_NOTES];
        for (&m, note) in frame.iter().zip(&self.bin_note) {
            if let Some(k) = note {
                let m: f64 = m.into();
                notes[*k as usize] += m * m;
            }
        }
        let mut chroma = [0.0f64; NUM_CLASSES];
        for (k, e) in notes.iter().enumerate() {
            chroma[note_class(k).index()] += e;
        }
        Ok(Chromagram(chroma))
    }

    /// Chromagram followed by one-hot encoding.
    pub fn classify<T: Copy + Into<f64>>(&self, frame: &[T]) -> Result<ChromaVector> {
        Ok(one_hot_chroma(&self.chromagram(frame)?))
    }

    /// Writes `bin,frequency_hz,note,note_name,class` rows.
    pub fn write_table_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin,frequency_hz,note,note_name,class")?;
        for (b, note) in self.bin_note.iter().enumerate() {
            let f = b as f64 * self.sample_rate as f64 / self.fft_size as f64;
            match note {
                Some(k) => {
                    let k = *k as usize;
                    let class = note_class(k);
                    let octave = (k + A0_CLASS) / NUM_CLASSES;
                    writeln!(out, "{b},{f:.4},{k},{}{octave},{}", class.name(), class.index())?;
                }
                None => writeln!(out, "{b},{f:.4},,,")?,
            }
        }
        Ok(())
    }
}

/// Chromagram of one magnitude frame.
pub fn frame_chromagram<T: Copy + Into<f64>>(frame: &[T], sample_rate: u32, fft_size: usize) -> Result<Chromagram> {
    ChromaAnalyzer::new(sample_rate, fft_size).chromagram(frame)
}

/// Sets the largest class to one; ties go to the lowest index and an
/// all-zero chromagram yields a silent vector.
pub fn one_hot_chroma(c: &Chromagram) -> ChromaVector {
    let mut best: Option<(usize, f64)> = None;
    for (i, &e) in c.0.iter().enumerate() {
        if e > 0.0 && best.is_none_or(|(_, b)| e > b) {
            best = Some((i, e));
        }
    }
    ChromaVector(best.map(|(i, _)| PitchClass(i as u8)))
}
