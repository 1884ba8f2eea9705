mod common;

use std::sync::Arc;

use common::{dominant, fixture_model, frame_classes};
use timbrelab::chroma::PitchClass;
use timbrelab::corpus::Augmentation;
use timbrelab::dsp::{istft_overlap_add, noise_phase_bank, normalize_frame, stft, AudioBuffer, FrameSynthesizer, SpectralFrame, ENVELOPE_FLOOR};
use timbrelab::model::{build_model, ModelConfig};
use timbrelab::nn::Activation;
use timbrelab::synth::render::{render_length, MAGNITUDE_SCALE};
use timbrelab::synth::{render_samples, render_to_wav, synthesis_bank, Automation, AutomationEvent, ControlState, FrameRenderer};
use timbrelab::{FFT_SIZE, HOP_SIZE, SAMPLE_RATE};

fn untrained(d: usize) -> Arc<timbrelab::model::Autoencoder> {
    let mut cfg = ModelConfig::new(d, Activation::Sigmoid, Augmentation::Chroma, true);
    cfg.encoder_widths = vec![64, 32];
    Arc::new(build_model(cfg, 2).unwrap())
}

fn state(latent: &[f32], class: Option<usize>, gain: f32) -> ControlState {
    ControlState { latent: latent.to_vec(), chroma: class.map(|c| PitchClass::new(c).unwrap()), gain, generation: 0 }
}

#[test]
fn zero_gain_renders_silence() {
    let mut r = FrameRenderer::new(untrained(2), Arc::new(synthesis_bank(0).unwrap())).unwrap();
    for _ in 0..5 {
        assert!(r.render_frame(&state(&[0.3, 0.6], Some(9), 0.0)).unwrap().iter().all(|&s| s == 0.0));
    }
}

#[test]
fn fixed_state_varies_only_through_phase() {
    let mut r = FrameRenderer::new(untrained(2), Arc::new(synthesis_bank(0).unwrap())).unwrap();
    let s = state(&[0.3, 0.6], Some(4), 0.2);
    let a = r.render_frame(&s).unwrap().to_vec();
    let mags = r.last_magnitudes().to_vec();
    let b = r.render_frame(&s).unwrap().to_vec();
    assert_eq!(r.last_magnitudes(), mags.as_slice());
    assert_ne!(a, b);
    assert_eq!(r.frame_index(), 2);
}

#[test]
fn state_errors_surface_before_rendering() {
    let mut r = FrameRenderer::new(untrained(2), Arc::new(synthesis_bank(0).unwrap())).unwrap();
    assert!(r.render_frame(&state(&[0.3], None, 0.2)).is_err());
    assert!(r.render_frame(&state(&[0.3, 2.0], None, 0.2)).is_err());
    assert!(r.render_frame(&state(&[0.3, 0.2], None, -1.0)).is_err());
    assert_eq!(r.frame_index(), 0);
}

/// Streaming overlap-add against a whole-signal overlap-add of the same
/// decoded frames.
#[test]
fn streaming_matches_batch_overlap_add() {
    let model = untrained(3);
    let bank = Arc::new(synthesis_bank(9).unwrap());
    let mut r = FrameRenderer::new(model.clone(), bank.clone()).unwrap();
    let gain = 0.05f32;
    let frames = 12;
    let mut streamed = Vec::new();
    let mut synth = FrameSynthesizer::new();
    let window = synth.window().to_vec();
    let mut acc = vec![0.0f64; (frames - 1) * HOP_SIZE + FFT_SIZE];
    let mut envelope = acc.clone();
    for f in 0..frames {
        let s = state(&[f as f32 / 12.0, 0.5, 0.2], Some(f % 12), gain);
        streamed.extend_from_slice(r.render_frame(&s).unwrap());
        let mags = model.decode(&s.latent, s.chroma_vector()).unwrap();
        let seg = synth.synthesize(&mags, bank.frame(f), gain as f64 * MAGNITUDE_SCALE);
        for k in 0..FFT_SIZE {
            acc[f * HOP_SIZE + k] += seg[k];
            envelope[f * HOP_SIZE + k] += window[k] * window[k];
        }
    }
    // The renderer clamps; before the first full overlap the partial
    // envelope amplifies window edges, so some start samples do clip.
    let batch: Vec<f32> = acc.iter().zip(&envelope).map(|(a, e)| ((a / e.max(ENVELOPE_FLOOR)) as f32).clamp(-1.0, 1.0)).collect();
    assert_eq!(streamed.as_slice(), &batch[..streamed.len()]);
}

#[test]
fn offline_render_equals_concatenated_frames() {
    let model = untrained(2);
    let automation = Automation(vec![
        AutomationEvent { time: 0.0, latent: Some(vec![0.1, 0.9]), chroma: Some(Some(PitchClass::C)), gain: Some(0.1) },
        AutomationEvent { time: 0.2, latent: Some(vec![0.8, 0.3]), chroma: None, gain: None },
        AutomationEvent { time: 0.45, latent: None, chroma: Some(None), gain: Some(0.05) },
    ]);
    let seconds = 0.7;
    let rendered = render_samples(model.clone(), &automation, seconds, 4).unwrap();
    let len = render_length(seconds).unwrap();
    assert_eq!(rendered.len(), len);

    let frames = len.div_ceil(HOP_SIZE);
    let states = automation.states(&model, &ControlState::initial(&model), frames).unwrap();
    let mut r = FrameRenderer::new(model, Arc::new(synthesis_bank(4).unwrap())).unwrap();
    let mut manual = Vec::new();
    for s in &states {
        manual.extend_from_slice(r.render_frame(s).unwrap());
    }
    manual.truncate(len);
    assert_eq!(rendered, manual);
    // Event at 0.2 s applies from the first frame starting at or after it.
    let switch = (0.2 * SAMPLE_RATE as f64 / HOP_SIZE as f64).ceil() as usize;
    assert_eq!(states[switch - 1].latent, [0.1, 0.9]);
    assert_eq!(states[switch].latent, [0.8, 0.3]);
    assert_eq!(states.last().unwrap().chroma, None);
}

#[test]
fn automation_parsing() {
    let a = Automation::from_json(r#"[{"time":0,"latent":[0.5,0.5],"chroma":9},{"time":1.5,"chroma":null,"gain":0.1}]"#).unwrap();
    assert_eq!(a.0[0].chroma, Some(Some(PitchClass::A)));
    assert_eq!(a.0[1].chroma, Some(None));
    assert_eq!(a.0[1].latent, None);
    assert!(Automation::from_json(r#"[{"time":1},{"time":0.5}]"#).is_err());
    assert!(Automation::from_json(r#"[{"time":0,"chroma":12}]"#).is_err());
    let bad_len = Automation::from_json(r#"[{"time":0,"latent":[0.5]}]"#).unwrap();
    assert!(render_samples(untrained(2), &bad_len, 0.1, 0).is_err());
}

#[test]
fn wav_render_is_exact_length_and_deterministic() {
    let model = Arc::new(fixture_model());
    let automation = Automation(vec![AutomationEvent {
        time: 0.0,
        latent: Some(vec![0.5, 0.5]),
        chroma: Some(Some(PitchClass::A)),
        gain: Some(0.25),
    }]);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    assert_eq!(render_to_wav(model.clone(), &automation, 1.0, 3, &a).unwrap(), 44_100);
    render_to_wav(model, &automation, 1.0, 3, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let mut reader = hound::WavReader::open(&a).unwrap();
    assert_eq!(reader.spec().sample_rate, SAMPLE_RATE);
    assert_eq!(reader.spec().bits_per_sample, 16);
    let samples: Vec<f32> = reader.samples::<i16>().map(|s| s.unwrap() as f32 / i16::MAX as f32).collect();
    assert_eq!(samples.len(), 44_100);
    assert!(samples.iter().any(|&s| s != 0.0));
    assert_eq!(dominant(&frame_classes(&samples)), Some(9));
}

#[test]
fn chroma_switch_changes_output_class() {
    let model = Arc::new(fixture_model());
    let (before, after) = (0usize, 7usize);
    let automation = Automation(vec![
        AutomationEvent { time: 0.0, latent: Some(vec![0.5, 0.5]), chroma: Some(PitchClass::new(before).ok()), gain: Some(0.25) },
        AutomationEvent { time: 1.0, latent: None, chroma: Some(PitchClass::new(after).ok()), gain: None },
    ]);
    let samples = render_samples(model, &automation, 2.0, 0).unwrap();
    let classes = frame_classes(&samples);
    // Analysis frame k covers samples [k*HOP, k*HOP + FFT); skip frames
    // straddling the switch.
    let per_second = SAMPLE_RATE as usize / HOP_SIZE;
    let span = FFT_SIZE / HOP_SIZE;
    let first = &classes[span..per_second - span];
    let second = &classes[per_second + span..];
    // Noise phases smear the partials, so single frames may land on a
    // neighbouring class; the dominant class must follow the switch.
    assert_eq!(dominant(first), Some(before), "{first:?}");
    assert_eq!(dominant(second), Some(after), "{second:?}");
}

/// A 440 Hz tone resynthesized from its normalized magnitudes with noise
/// phases still analyzes as A.
#[test]
fn noise_phase_resynthesis_keeps_pitch_class() {
    let tone: Vec<f32> = (0..SAMPLE_RATE as usize)
        .map(|n| (0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / SAMPLE_RATE as f64).sin()) as f32)
        .collect();
    let frames: Vec<SpectralFrame> = stft(&AudioBuffer::new(tone, SAMPLE_RATE).unwrap(), FFT_SIZE, HOP_SIZE)
        .unwrap()
        .iter()
        .map(|f| normalize_frame(&f.magnitudes).unwrap())
        .collect();
    let out = istft_overlap_add(&frames, &noise_phase_bank(16, 5).unwrap(), 1.0).unwrap();
    let classes = frame_classes(out.samples());
    assert!(classes.iter().all(|&c| c == Some(PitchClass::A.index())), "{classes:?}");
}
