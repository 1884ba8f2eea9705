#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use timbrelab::chroma::ChromaAnalyzer;
use timbrelab::corpus::{Augmentation, Corpus};
use timbrelab::dsp::{stft, AudioBuffer};
use timbrelab::model::{build_model, load_model, save_model, Autoencoder, ModelConfig};
use timbrelab::nn::Activation;
use timbrelab::synthetic::SyntheticSpec;
use timbrelab::train::{train, TrainConfig};
use timbrelab::{FFT_SIZE, HOP_SIZE, SAMPLE_RATE};

/// Half-second clips of the C-major synthetic set.
pub fn small_corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let mut spec = SyntheticSpec::c_major(3);
        spec.seconds = 0.5;
        spec.build(Augmentation::Chroma).unwrap()
    })
}

/// A 2-neuron sigmoid skip model trained briefly on [`small_corpus`],
/// cached across test binaries.
pub fn fixture_model() -> Autoencoder {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("fixture-2s-v2.mann");
    if let Ok(m) = load_model(&path) {
        return m;
    }
    let corpus = small_corpus();
    let model = build_model(ModelConfig::new(2, Activation::Sigmoid, Augmentation::Chroma, true), 1).unwrap();
    let out = train(model, corpus, &TrainConfig { epochs: 25, seed: 1, ..Default::default() }).unwrap();
    let tmp = path.with_extension(format!("{}.tmp", std::process::id()));
    save_model(&out.best_model, &tmp).unwrap();
    std::fs::rename(&tmp, &path).unwrap();
    out.best_model
}

/// Dominant pitch class of each full analysis frame of `samples`.
pub fn frame_classes(samples: &[f32]) -> Vec<Option<usize>> {
    let audio = AudioBuffer::new(samples.to_vec(), SAMPLE_RATE).unwrap();
    let analyzer = ChromaAnalyzer::new(SAMPLE_RATE, FFT_SIZE);
    stft(&audio, FFT_SIZE, HOP_SIZE)
        .unwrap()
        .iter()
        .map(|f| analyzer.classify(&f.magnitudes).unwrap().class().map(|c| c.index()))
        .collect()
}

/// Most frequent class among `classes`.
pub fn dominant(classes: &[Option<usize>]) -> Option<usize> {
    let mut counts = [0usize; 12];
    for c in classes.iter().flatten() {
        counts[*c] += 1;
    }
    (0..12).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).filter(|&c| counts[c] > 0)
}
