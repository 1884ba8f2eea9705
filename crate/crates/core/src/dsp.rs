//! STFT analysis, per-frame normalization and noise-phase resynthesis.
//!
//! All transforms run in `f64`; normalized frames are stored as `f32`.
//! Frames start at sample 0 with no centering pad, and the Hann window is
//! the periodic form so that a hop of a quarter window sums to a constant.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result, FFT_SIZE, HOP_SIZE, NUM_BINS};

/// Floor applied to the squared-window envelope during overlap-add.
pub const ENVELOPE_FLOOR: f64 = 1e-12;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// One normalized magnitude frame: `NUM_BINS` values in `[0, 1]` plus the
/// maximum that was divided out.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    magnitudes: Vec<f32>,
    peak: f32,
}

impl SpectralFrame {
    /// Rebuilds a frame from stored parts, checking the normalization
    /// invariants.
    pub fn from_parts(magnitudes: Vec<f32>, peak: f32) -> Result<Self> {
        if magnitudes.len() != NUM_BINS {
            return Err(Error::InvalidFrame(format!(
                "expected {NUM_BINS} magnitudes, got {}",
                magnitudes.len()
            )));
        }
        if !(peak.is_finite() && peak >= 0.0) {
            return Err(Error::InvalidFrame(format!("peak {peak} is not a finite value >= 0")));
        }
        let mut max = 0.0f32;
        for &m in &magnitudes {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::InvalidFrame(format!("magnitude {m} outside [0, 1]")));
            }
            max = max.max(m);
        }
        if peak > 0.0 && max != 1.0 {
            return Err(Error::InvalidFrame(format!("frame with peak {peak} has maximum {max}, not 1")));
        }
        if peak == 0.0 && max != 0.0 {
            return Err(Error::InvalidFrame("silent frame has nonzero magnitudes".into()));
        }
        Ok(Self { magnitudes, peak })
    }

    pub fn silent() -> Self {
        Self { magnitudes: vec![0.0; NUM_BINS], peak: 0.0 }
    }

    pub fn magnitudes(&self) -> &[f32] {
        &self.magnitudes
    }

    pub fn peak(&self) -> f32 {
        self.peak
    }

    pub fn is_silent(&self) -> bool {
        self.peak == 0.0
    }
}

/// Phase angles taken from the STFT of seeded white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBank {
    phases: Vec<f64>,
    num_frames: usize,
    seed: u64,
}

impl PhaseBank {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.num_frames
    }

    pub fn is_empty(&self) -> bool {
        self.num_frames == 0
    }

    /// Phases for `frame_index`, wrapping around the bank.
    pub fn frame(&self, frame_index: usize) -> &[f64] {
        let i = frame_index % self.num_frames;
        &self.phases[i * NUM_BINS..(i + 1) * NUM_BINS]
    }
}

/// Magnitude and phase of one analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StftFrame {
    pub magnitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

/// Periodic Hann window, `0.5 * (1 - cos(2πk/n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("window length {n} < 2")));
    }
    Ok((0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()))
        .collect())
}

/// Number of full frames that fit in `len` samples.
pub fn frame_count(len: usize, fft_size: usize, hop: usize) -> usize {
    if len < fft_size {
        0
    } else {
        (len - fft_size) / hop + 1
    }
}

/// Magnitude/phase STFT of `audio` with a periodic Hann window.
pub fn stft(audio: &AudioBuffer, fft_size: usize, hop: usize) -> Result<Vec<StftFrame>> {
    if hop == 0 || hop > fft_size {
        return Err(Error::InvalidArgument(format!("hop {hop} must be in 1..={fft_size}")));
    }
    let samples = audio.samples();
    if samples.len() < fft_size {
        return Err(Error::EmptyCorpus(format!(
            "audio has {} samples, fewer than one {fft_size}-point frame",
            samples.len()
        )));
    }
    let window = hann_window(fft_size)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); fft_size];
    let bins = fft_size / 2 + 1;

    let count = frame_count(samples.len(), fft_size, hop);
    let mut frames = Vec::with_capacity(count);
    for f in 0..count {
        let start = f * hop;
        for (k, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(samples[start + k] as f64 * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let magnitudes = buf[..bins].iter().map(|c| c.norm()).collect();
        let phases = buf[..bins].iter().map(|c| wrap_phase(c.arg())).collect();
        frames.push(StftFrame { magnitudes, phases });
    }
    Ok(frames)
}

// atan2 may return -π exactly; the bank contract is (-π, π].
fn wrap_phase(p: f64) -> f64 {
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// Divides a magnitude frame by its maximum. Silent input stays all-zero
/// with a peak of zero.
pub fn normalize_frame<T: Copy + Into<f64>>(magnitudes: &[T]) -> Result<SpectralFrame> {
    if magnitudes.len() != NUM_BINS {
        return Err(Error::InvalidFrame(format!(
            "expected {NUM_BINS} magnitudes, got {}",
            magnitudes.len()
        )));
    }
    let mut peak = 0.0f64;
    for (i, &m) in magnitudes.iter().enumerate() {
        let m: f64 = m.into();
        if !m.is_finite() || m < 0.0 {
            return Err(Error::InvalidFrame(format!("bin {i} holds {m}; magnitudes must be finite and >= 0")));
        }
        peak = peak.max(m);
    }
    if peak == 0.0 {
        return Ok(SpectralFrame::silent());
    }
    let magnitudes = magnitudes
        .iter()
        .map(|&m| (m.into() / peak) as f32)
        .collect();
    Ok(SpectralFrame { magnitudes, peak: peak as f32 })
}

/// Phases of the STFT of `num_frames` frames of uniform white noise on
/// `[-1, 1]` drawn from a seeded xoshiro256++ generator.
pub fn noise_phase_bank(num_frames: usize, seed: u64) -> Result<PhaseBank> {
    if num_frames == 0 {
        return Err(Error::InvalidArgument("phase bank needs at least one frame".into()));
    }
    let len = FFT_SIZE + (num_frames - 1) * HOP_SIZE;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let noise: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    let audio = AudioBuffer::new(noise, crate::SAMPLE_RATE)?;
    let frames = stft(&audio, FFT_SIZE, HOP_SIZE)?;
    debug_assert_eq!(frames.len(), num_frames);
    let mut phases = Vec::with_capacity(num_frames * NUM_BINS);
    for f in frames {
        phases.extend_from_slice(&f.phases);
    }
    Ok(PhaseBank { phases, num_frames, seed })
}

/// Inverse real FFT of a half spectrum followed by the synthesis window.
///
/// Holds its own plan and scratch so that per-frame use never allocates.
pub struct FrameSynthesizer {
    ifft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    frame: Vec<f64>,
}

impl FrameSynthesizer {
    pub fn new() -> Self {
        let ifft = FftPlanner::<f64>::new().plan_fft_inverse(FFT_SIZE);
        let scratch = vec![Complex::default(); ifft.get_inplace_scratch_len()];
        Self {
            ifft,
            window: hann_window(FFT_SIZE).expect("FFT_SIZE >= 2"),
            buf: vec![Complex::default(); FFT_SIZE],
            scratch,
            frame: vec![0.0; FFT_SIZE],
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Builds `scale * |X| e^{iφ}` for the non-redundant bins, mirrors it
    /// with conjugate symmetry and returns the windowed time frame.
    ///
    /// DC and Nyquist are projected onto the real axis so the inverse is
    /// exactly real.
    pub fn synthesize<M: Copy + Into<f64>>(&mut self, magnitudes: &[M], phases: &[f64], scale: f64) -> &[f64] {
        debug_assert_eq!(magnitudes.len(), NUM_BINS);
        debug_assert_eq!(phases.len(), NUM_BINS);
        let n = FFT_SIZE;
        for k in 0..NUM_BINS {
            let m = scale * magnitudes[k].into();
            self.buf[k] = Complex::from_polar(m, phases[k]);
        }
        self.buf[0].im = 0.0;
        self.buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            self.buf[n - k] = self.buf[k].conj();
        }
        self.ifft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let inv_n = 1.0 / n as f64;
        for ((out, c), w) in self.frame.iter_mut().zip(&self.buf).zip(&self.window) {
            *out = c.re * inv_n * w;
        }
        &self.frame
    }

    /// Largest imaginary residual of the last inverse transform, relative
    /// to the largest real magnitude.
    pub fn last_imaginary_residual(&self) -> f64 {
        let re = self.buf.iter().fold(0.0f64, |a, c| a.max(c.re.abs()));
        let im = self.buf.iter().fold(0.0f64, |a, c| a.max(c.im.abs()));
        if re == 0.0 {
            im
        } else {
            im / re
        }
    }
}

impl Default for FrameSynthesizer {
    fn default() -> Self {
        Self::new()
    }
}

/// Squared-window overlap-add of windowed frames, normalized by the
/// summed squared-window envelope.
fn overlap_add(frames: impl ExactSizeIterator<Item = Vec<f64>>, window: &[f64]) -> Vec<f64> {
    let count = frames.len();
    if count == 0 {
        return Vec::new();
    }
    let len = FFT_SIZE + (count - 1) * HOP_SIZE;
    let mut out = vec![0.0f64; len];
    let mut envelope = vec![0.0f64; len];
    for (f, frame) in frames.enumerate() {
        let start = f * HOP_SIZE;
        for k in 0..FFT_SIZE {
            out[start + k] += frame[k];
            envelope[start + k] += window[k] * window[k];
        }
    }
    for (o, e) in out.iter_mut().zip(&envelope) {
        *o /= e.max(ENVELOPE_FLOOR);
    }
    out
}

/// Inverts normalized frames using phases from `bank` (cycled), scaling
/// each frame by `gain` times its stored peak.
pub fn istft_overlap_add(frames: &[SpectralFrame], bank: &PhaseBank, gain: f64) -> Result<AudioBuffer> {
    if bank.is_empty() {
        return Err(Error::InvalidArgument("empty phase bank".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.magnitudes.len() != NUM_BINS {
            return Err(Error::InvalidFrame(format!(
                "frame {i} has {} bins, expected {NUM_BINS}",
                f.magnitudes.len()
            )));
        }
    }
    let mut synth = FrameSynthesizer::new();
    let windowed: Vec<Vec<f64>> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| synth.synthesize(f.magnitudes(), bank.frame(i), gain * f.peak() as f64).to_vec())
        .collect();
    let window = synth.window().to_vec();
    let samples = overlap_add(windowed.into_iter(), &window);
    AudioBuffer::new(samples.into_iter().map(|s| s as f32).collect(), crate::SAMPLE_RATE)
}

/// Inverts un-normalized STFT frames with their own phases.
pub fn istft(frames: &[StftFrame]) -> Vec<f64> {
    let mut synth = FrameSynthesizer::new();
    let windowed: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| synth.synthesize(&f.magnitudes, &f.phases, 1.0).to_vec())
        .collect();
    let window = synth.window().to_vec();
    overlap_add(windowed.into_iter(), &window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, len: usize) -> AudioBuffer {
        let s = (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / 44100.0).sin() as f32)
            .collect();
        AudioBuffer::new(s, 44100).unwrap()
    }

    #[test]
    fn hann_closed_forms() {
        let w = hann_window(4).unwrap();
        for (a, b) in w.iter().zip([0.0, 0.5, 1.0, 0.5]) {
            assert!((a - b).abs() < 1e-15, "{w:?}");
        }
        let w = hann_window(2).unwrap();
        assert_eq!(w[0], 0.0);
        assert_eq!(w[1], 1.0);
        assert_eq!(hann_window(4096).unwrap()[2048], 1.0);
        assert!(matches!(hann_window(1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hann_sums_to_constant_at_quarter_hop() {
        let w = hann_window(FFT_SIZE).unwrap();
        for n in 0..HOP_SIZE {
            let s: f64 = (0..4).map(|j| w[n + j * HOP_SIZE].powi(2)).sum();
            assert!((s - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_counts() {
        assert_eq!(stft(&sine(440.0, 44100), FFT_SIZE, HOP_SIZE).unwrap().len(), 40);
        assert_eq!(stft(&sine(440.0, 4096), FFT_SIZE, HOP_SIZE).unwrap().len(), 1);
        assert!(matches!(
            stft(&sine(440.0, 4095), FFT_SIZE, HOP_SIZE),
            Err(Error::EmptyCorpus(_))
        ));
    }

    // Direct O(N^2) DFT of the windowed segment, independent of rustfft.
    fn direct_dft_magnitudes(x: &[f32], window: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, (&s, &w)) in x.iter().zip(window).enumerate() {
                    let a = -2.0 * PI * (k * t % n) as f64 / n as f64;
                    re += s as f64 * w * a.cos();
                    im += s as f64 * w * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn sine_peak_bin_matches_direct_dft() {
        let audio = sine(1000.0, FFT_SIZE);
        let frame = &stft(&audio, FFT_SIZE, HOP_SIZE).unwrap()[0];
        let oracle = direct_dft_magnitudes(audio.samples(), &hann_window(FFT_SIZE).unwrap());
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&oracle), 93);
        assert_eq!(argmax(&frame.magnitudes), 93);
        for (a, b) in frame.magnitudes.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8 * oracle[93]);
        }
    }

    #[test]
    fn normalize_examples() {
        let mut x = vec![0.0f64; NUM_BINS];
        x[1] = 2.0;
        x[2] = 4.0;
        let f = normalize_frame(&x).unwrap();
        assert_eq!(f.peak(), 4.0);
        assert_eq!(&f.magnitudes()[..3], &[0.0, 0.5, 1.0]);

        let z = normalize_frame(&vec![0.0f32; NUM_BINS]).unwrap();
        assert!(z.is_silent());
        assert!(z.magnitudes().iter().all(|&m| m == 0.0));

        let again = normalize_frame(f.magnitudes()).unwrap();
        assert_eq!(again.magnitudes(), f.magnitudes());
        assert_eq!(again.peak(), 1.0);
    }

    #[test]
    fn normalize_rejects_bad_input() {
        let mut x = vec![0.0f32; NUM_BINS];
        x[5] = -1.0;
        assert!(matches!(normalize_frame(&x), Err(Error::InvalidFrame(_))));
        x[5] = f32::NAN;
        assert!(matches!(normalize_frame(&x), Err(Error::InvalidFrame(_))));
        assert!(matches!(normalize_frame(&[1.0f32; 10]), Err(Error::InvalidFrame(_))));
    }

    #[test]
    fn phase_bank_determinism_and_range() {
        let a = noise_phase_bank(1, 42).unwrap();
        let b = noise_phase_bank(1, 42).unwrap();
        assert_eq!(a, b);
        let c = noise_phase_bank(10, 1).unwrap();
        let d = noise_phase_bank(10, 2).unwrap();
        assert_ne!(c, d);
        assert_eq!(c.len(), 10);
        for i in 0..10 {
            assert!(c.frame(i).iter().all(|&p| p > -PI && p <= PI));
        }
        assert_eq!(c.frame(3), c.frame(13));
    }

    #[test]
    fn istft_lengths_and_silence() {
        let bank = noise_phase_bank(4, 7).unwrap();
        let one = istft_overlap_add(&[SpectralFrame::silent()], &bank, 1.0).unwrap();
        assert_eq!(one.len(), FFT_SIZE);
        assert!(one.samples().iter().all(|&s| s == 0.0));
        let five = istft_overlap_add(&vec![SpectralFrame::silent(); 5], &bank, 1.0).unwrap();
        assert_eq!(five.len(), FFT_SIZE + 4 * HOP_SIZE);
    }

    #[test]
    fn mirror_extension_is_real() {
        let bank = noise_phase_bank(1, 3).unwrap();
        let mut synth = FrameSynthesizer::new();
        let mags: Vec<f64> = (0..NUM_BINS).map(|k| 1.0 / (1.0 + k as f64)).collect();
        synth.synthesize(&mags, bank.frame(0), 1.0);
        assert!(synth.last_imaginary_residual() < 1e-9);
    }

    #[test]
    fn true_phase_round_trip() {
        let audio = sine(523.25, 20_000);
        let frames = stft(&audio, FFT_SIZE, HOP_SIZE).unwrap();
        let y = istft(&frames);
        let end = frames.len() * HOP_SIZE;
        for n in 3 * HOP_SIZE..end {
            assert!((y[n] - audio.samples()[n] as f64).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 4096usize..60_000) {
            let audio = AudioBuffer::new(vec![0.1; len], 44100).unwrap();
            let frames = stft(&audio, FFT_SIZE, HOP_SIZE).unwrap();
            prop_assert_eq!(frames.len(), (len - FFT_SIZE) / HOP_SIZE + 1);
        }

        #[test]
        fn normalize_is_scale_invariant(
            values in proptest::collection::vec(0.0f64..10.0, NUM_BINS),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(values.iter().any(|&v| v > 0.0));
            let a = normalize_frame(&values).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let b = normalize_frame(&scaled).unwrap();
            for (x, y) in a.magnitudes().iter().zip(b.magnitudes()) {
                prop_assert!((x - y).abs() <= f32::EPSILON);
            }
            let again = normalize_frame(a.magnitudes()).unwrap();
            prop_assert_eq!(again.magnitudes(), a.magnitudes());
        }
    }
}
