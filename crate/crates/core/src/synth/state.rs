//! Control state and its lock-free handoff to the render thread.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chroma::{ChromaVector, PitchClass};
use crate::model::Autoencoder;
use crate::{Error, Result};

/// Everything the renderer needs to produce a frame.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub latent: Vec<f32>,
    pub chroma: Option<PitchClass>,
    pub gain: f32,
    /// Incremented by every accepted update.
    pub generation: u64,
}

impl Clone for ControlState {
    fn clone(&self) -> Self {
        Self { latent: self.latent.clone(), chroma: self.chroma, gain: self.gain, generation: self.generation }
    }

    /// Reuses the latent buffer; no allocation when lengths match.
    fn clone_from(&mut self, source: &Self) {
        self.latent.clone_from(&source.latent);
        self.chroma = source.chroma;
        self.gain = source.gain;
        self.generation = source.generation;
    }
}

pub const DEFAULT_GAIN: f32 = 0.25;

impl ControlState {
    /// Center of the model's latent ranges, the first trained class and
    /// [`DEFAULT_GAIN`].
    pub fn initial(model: &Autoencoder) -> Self {
        Self {
            latent: model.latent_ranges().iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
            chroma: model.metadata.trained_classes.first().copied(),
            gain: DEFAULT_GAIN,
            generation: 0,
        }
    }

    pub fn chroma_vector(&self) -> ChromaVector {
        ChromaVector(self.chroma)
    }

    /// Checks the state against `model`: latent length and, for bounded
    /// models, range; finite non-negative gain.
    pub fn validate(&self, model: &Autoencoder) -> Result<()> {
        validate_latent(model, &self.latent)?;
        validate_gain(self.gain)
    }
}

pub fn validate_latent(model: &Autoencoder, latent: &[f32]) -> Result<()> {
    let d = model.bottleneck_width();
    if latent.len() != d {
        return Err(Error::Shape(format!("latent must have {d} values (model bottleneck width), got {}", latent.len())));
    }
    if let Some(v) = latent.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("latent value {v} is not finite")));
    }
    if model.config().is_bounded() {
        if let Some(v) = latent.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("latent value {v} is outside [0, 1]")));
        }
    }
    Ok(())
}

pub fn validate_gain(gain: f32) -> Result<()> {
    if gain.is_finite() && gain >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gain must be finite and >= 0, got {gain}")))
    }
}

const INDEX_MASK: u8 = 0b11;
const FRESH: u8 = 0b100;

/// Triple buffer: the writer fills a private slot and publishes it with a
/// single atomic swap; the reader takes the newest published slot with
/// another. Neither side waits or allocates once slot capacities settle.
struct Shared {
    slots: [UnsafeCell<ControlState>; 3],
    /// Index of the published slot, plus [`FRESH`] when the reader has not
    /// taken it yet.
    middle: AtomicU8,
}

// SAFETY: each slot index is owned by exactly one of writer, reader or
// `middle` at any time; ownership moves only through `middle` swaps with
// acquire/release ordering.
unsafe impl Sync for Shared {}

pub struct SnapshotWriter {
    shared: Arc<Shared>,
    back: u8,
}

pub struct SnapshotReader {
    shared: Arc<Shared>,
    front: u8,
}

/// Creates a connected writer/reader pair whose reader starts at `initial`.
pub fn snapshot_channel(initial: ControlState) -> (SnapshotWriter, SnapshotReader) {
    let shared = Arc::new(Shared {
        slots: [UnsafeCell::new(initial.clone()), UnsafeCell::new(initial.clone()), UnsafeCell::new(initial)],
        middle: AtomicU8::new(1),
    });
    (SnapshotWriter { shared: shared.clone(), back: 2 }, SnapshotReader { shared, front: 0 })
}

impl SnapshotWriter {
    /// Publishes a copy of `state`, replacing any snapshot not yet read.
    pub fn publish(&mut self, state: &ControlState) {
        // SAFETY: `back` is owned by the writer.
        let slot = unsafe { &mut *self.shared.slots[self.back as usize].get() };
        slot.clone_from(state);
        let prev = self.shared.middle.swap(self.back | FRESH, Ordering::AcqRel);
        self.back = prev & INDEX_MASK;
    }
}

impl SnapshotReader {
    /// The newest published state. Never blocks.
    pub fn latest(&mut self) -> &ControlState {
        if self.shared.middle.load(Ordering::Relaxed) & FRESH != 0 {
            let prev = self.shared.middle.swap(self.front, Ordering::AcqRel);
            self.front = prev & INDEX_MASK;
        }
        // SAFETY: `front` is owned by the reader.
        unsafe { &*self.shared.slots[self.front as usize].get() }
    }
}
