//! Dense autoencoder topologies with optional chroma input augmentation and
//! a chroma skip connection into the decoder.
//!
//! Encoder: `input -> encoder_widths (LReLU) -> bottleneck (sigmoid | LReLU)`.
//! Decoder: `[z ‖ chroma] -> reversed encoder_widths (LReLU) -> bins (ReLU)`,
//! where the 12 chroma values are present only when the skip is enabled.

mod io;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::chroma::{ChromaVector, PitchClass};
use crate::corpus::Augmentation;
use crate::dsp::SpectralFrame;
use crate::nn::{mse_loss, Activation, DenseLayer, Gradients, InferScratch, LossValue, Mlp, Scalar};
use crate::{Error, Result, NUM_BINS, NUM_CLASSES};

pub use io::{load_model, read_model_header, save_model, MODEL_MAGIC, MODEL_VERSION};

fn default_bins() -> usize {
    NUM_BINS
}

fn default_widths() -> Vec<usize> {
    vec![512, 256, 128, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub bottleneck_width: usize,
    pub bottleneck_activation: Activation,
    /// What the corpus appends to each frame at the encoder input.
    pub augmentation: Augmentation,
    pub chroma_skip: bool,
    #[serde(default = "default_widths")]
    pub encoder_widths: Vec<usize>,
    /// Spectral bins per frame; 2049 for anything built from audio.
    #[serde(default = "default_bins")]
    pub frame_bins: usize,
}

impl ModelConfig {
    pub fn new(bottleneck_width: usize, bottleneck_activation: Activation, augmentation: Augmentation, chroma_skip: bool) -> Self {
        Self {
            bottleneck_width,
            bottleneck_activation,
            augmentation,
            chroma_skip,
            encoder_widths: default_widths(),
            frame_bins: NUM_BINS,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.frame_bins
            + match self.augmentation {
                Augmentation::None => 0,
                Augmentation::Chroma => NUM_CLASSES,
                Augmentation::FirstOrderDiff => self.frame_bins,
            }
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.bottleneck_width + if self.chroma_skip { NUM_CLASSES } else { 0 }
    }

    /// Bounded latent space, i.e. a sigmoid bottleneck.
    pub fn is_bounded(&self) -> bool {
        self.bottleneck_activation == Activation::Sigmoid
    }

    pub fn validate(&self) -> Result<()> {
        if self.bottleneck_width == 0 {
            return Err(Error::Config("bottleneck width must be at least 1".into()));
        }
        if !matches!(self.bottleneck_activation, Activation::Sigmoid | Activation::LeakyRelu) {
            return Err(Error::Config(format!(
                "bottleneck activation must be sigmoid or lrelu, got {}",
                self.bottleneck_activation
            )));
        }
        if self.encoder_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.frame_bins == 0 {
            return Err(Error::Config("frame_bins must be positive".into()));
        }
        Ok(())
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(&self.encoder_widths);
        d.push(self.bottleneck_width);
        d
    }

    fn decoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.decoder_input_dim()];
        d.extend(self.encoder_widths.iter().rev());
        d.push(self.frame_bins);
        d
    }

    fn encoder_activation(&self, layer: usize) -> Activation {
        if layer == self.encoder_widths.len() {
            self.bottleneck_activation
        } else {
            Activation::LeakyRelu
        }
    }

    fn decoder_activation(&self, layer: usize) -> Activation {
        if layer == self.encoder_widths.len() {
            Activation::Relu
        } else {
            Activation::LeakyRelu
        }
    }
}

/// Provenance and summary figures stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub init_seed: u64,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub final_train_mse: Option<f64>,
    #[serde(default)]
    pub final_val_mse: Option<f64>,
    #[serde(default)]
    pub best_val_mse: Option<f64>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub corpus_hash: Option<String>,
    /// Pitch classes present in the training split.
    #[serde(default)]
    pub trained_classes: Vec<PitchClass>,
    /// Per-dimension `(min, max)` of the training embedding.
    #[serde(default)]
    pub latent_bounds: Option<Vec<(f32, f32)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<T: Scalar = f32> {
    config: ModelConfig,
    encoder: Mlp<T>,
    decoder: Mlp<T>,
    pub metadata: ModelMetadata,
}

/// Caches of one training forward pass.
pub struct AutoencoderCache<T: Scalar> {
    encoder: crate::nn::ForwardCache<T>,
    decoder: crate::nn::ForwardCache<T>,
    encoder_acts: Vec<Activation>,
    decoder_acts: Vec<Activation>,
}

impl<T: Scalar> AutoencoderCache<T> {
    pub fn latent(&self) -> &[T] {
        self.encoder.output()
    }

    pub fn output(&self) -> &[T] {
        self.decoder.output()
    }

    /// Smallest `|z|` over every pre-activation feeding a ReLU or LReLU.
    pub fn min_kink_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for (cache, acts) in [(&self.encoder, &self.encoder_acts), (&self.decoder, &self.decoder_acts)] {
            for (z, act) in cache.pre_activations().iter().zip(acts) {
                if matches!(act, Activation::Relu | Activation::LeakyRelu) {
                    for v in z {
                        min = min.min(v.abs().to_f64().unwrap_or(0.0));
                    }
                }
            }
        }
        min
    }
}

/// Initial bias of the spectral output layer; all other biases start at 0.
pub const OUTPUT_BIAS_INIT: f64 = 0.1;

/// Glorot-initialized model.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<Autoencoder> {
    Autoencoder::new(config, seed)
}

/// Reusable buffers for allocation-free decoding.
#[derive(Debug, Clone, Default)]
pub struct DecodeScratch<T: Scalar = f32> {
    input: Vec<T>,
    infer: InferScratch<T>,
}

impl<T: Scalar> Autoencoder<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let ed = config.encoder_dims();
        let encoder = (0..ed.len() - 1)
            .map(|i| DenseLayer::glorot(ed[i], ed[i + 1], config.encoder_activation(i), &mut rng))
            .collect();
        let dd = config.decoder_dims();
        let mut decoder: Vec<DenseLayer<T>> = (0..dd.len() - 1)
            .map(|i| DenseLayer::glorot(dd[i], dd[i + 1], config.decoder_activation(i), &mut rng))
            .collect();
        // Zero-biased ReLU output units that start negative on every frame
        // never receive gradient again.
        if let Some(out) = decoder.last_mut() {
            out.bias_mut().fill(T::from_f64(OUTPUT_BIAS_INIT));
        }
        Ok(Self {
            encoder: Mlp::new(encoder)?,
            decoder: Mlp::new(decoder)?,
            metadata: ModelMetadata { init_seed: seed, ..Default::default() },
            config,
        })
    }

    /// Assembles a model from explicit layers, checking them against
    /// `config`.
    pub fn from_layers(config: ModelConfig, encoder: Vec<DenseLayer<T>>, decoder: Vec<DenseLayer<T>>, metadata: ModelMetadata) -> Result<Self> {
        config.validate()?;
        for (name, layers, dims) in [("encoder", &encoder, config.encoder_dims()), ("decoder", &decoder, config.decoder_dims())] {
            if layers.len() != dims.len() - 1 {
                return Err(Error::Shape(format!(
                    "{name} has {} layers, config implies {}",
                    layers.len(),
                    dims.len() - 1
                )));
            }
            for (i, l) in layers.iter().enumerate() {
                let act = if name == "encoder" { config.encoder_activation(i) } else { config.decoder_activation(i) };
                if l.inputs() != dims[i] || l.outputs() != dims[i + 1] || l.activation() != act {
                    return Err(Error::Shape(format!(
                        "{name}.{i} is {}x{} {}, config implies {}x{} {act}",
                        l.outputs(),
                        l.inputs(),
                        l.activation(),
                        dims[i + 1],
                        dims[i]
                    )));
                }
            }
        }
        Ok(Self { config, encoder: Mlp::new(encoder)?, decoder: Mlp::new(decoder)?, metadata })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Mlp<T> {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp<T> {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp<T> {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp<T> {
        &mut self.decoder
    }

    pub fn bottleneck_width(&self) -> usize {
        self.config.bottleneck_width
    }

    /// Latent rows for `batch` encoder input rows.
    pub fn encode_rows(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        if x.len() != batch * self.config.input_dim() {
            return Err(Error::Shape(format!(
                "encoder input has {} values, expected {batch} x {}",
                x.len(),
                self.config.input_dim()
            )));
        }
        let mut scratch = InferScratch::default();
        Ok(self.encoder.infer(x, batch, &mut scratch).to_vec())
    }

    /// Builds the decoder input rows `[z ‖ chroma]`. `chroma` holds 12
    /// values per row and is ignored without a skip connection.
    fn decoder_input(&self, latent: &[T], chroma: &[T], batch: usize, clamp: bool, out: &mut Vec<T>) {
        let d = self.config.bottleneck_width;
        let width = self.config.decoder_input_dim();
        out.clear();
        out.resize(batch * width, T::zero());
        for r in 0..batch {
            let row = &mut out[r * width..(r + 1) * width];
            for (dst, &z) in row[..d].iter_mut().zip(&latent[r * d..(r + 1) * d]) {
                *dst = if clamp { z.max(T::zero()).min(T::one()) } else { z };
            }
            if self.config.chroma_skip {
                row[d..].copy_from_slice(&chroma[r * NUM_CLASSES..(r + 1) * NUM_CLASSES]);
            }
        }
    }

    fn check_decode_args(&self, latent: &[T], chroma: &[T], batch: usize) -> Result<()> {
        let d = self.config.bottleneck_width;
        if latent.len() != batch * d {
            return Err(Error::Shape(format!(
                "latent has {} values, expected {batch} x {d}",
                latent.len()
            )));
        }
        if self.config.chroma_skip && chroma.len() != batch * NUM_CLASSES {
            return Err(Error::Shape(format!(
                "chroma has {} values, expected {batch} x {NUM_CLASSES}",
                chroma.len()
            )));
        }
        Ok(())
    }

    /// Decodes externally supplied latent rows. Sigmoid models clamp the
    /// latent to `[0, 1]`; LReLU models take it as is.
    pub fn decode_rows(&self, latent: &[T], chroma: &[T], batch: usize) -> Result<Vec<T>> {
        let mut scratch = DecodeScratch::default();
        Ok(self.decode_rows_with(latent, chroma, batch, &mut scratch)?.to_vec())
    }

    /// [`Self::decode_rows`] with caller-owned buffers; does not allocate
    /// once `scratch` has grown to the batch size.
    pub fn decode_rows_with<'s>(&self, latent: &[T], chroma: &[T], batch: usize, scratch: &'s mut DecodeScratch<T>) -> Result<&'s [T]> {
        self.check_decode_args(latent, chroma, batch)?;
        self.decoder_input(latent, chroma, batch, self.config.is_bounded(), &mut scratch.input);
        Ok(self.decoder.infer(&scratch.input, batch, &mut scratch.infer))
    }

    /// Training forward pass on raw input rows with per-row chroma for the
    /// skip connection. The latent is not clamped.
    pub fn forward(&self, x: &[T], chroma: &[T], batch: usize) -> Result<AutoencoderCache<T>> {
        let encoder = self.encoder.forward(x, batch)?;
        let mut dec_in = Vec::new();
        self.check_decode_args(encoder.output(), chroma, batch)?;
        self.decoder_input(encoder.output(), chroma, batch, false, &mut dec_in);
        let decoder = self.decoder.forward(&dec_in, batch)?;
        Ok(AutoencoderCache {
            encoder,
            decoder,
            encoder_acts: self.encoder.layers().iter().map(|l| l.activation()).collect(),
            decoder_acts: self.decoder.layers().iter().map(|l| l.activation()).collect(),
        })
    }

    /// MSE + L2 loss and gradients for every parameter, encoder first.
    pub fn loss_and_gradients(&self, x: &[T], chroma: &[T], target: &[T], batch: usize, l2: f64) -> Result<(LossValue, Gradients<T>)> {
        let cache = self.forward(x, chroma, batch)?;
        let (mse, d_out) = mse_loss(cache.output(), target)?;
        let (mut dec_grads, d_in) = self.decoder.backward(&cache.decoder, d_out, true);
        let d_in = d_in.expect("requested");
        let d = self.config.bottleneck_width;
        let width = self.config.decoder_input_dim();
        let d_z: Vec<T> = d_in.chunks_exact(width).flat_map(|row| row[..d].iter().copied()).collect();
        let (mut enc_grads, _) = self.encoder.backward(&cache.encoder, d_z, false);
        self.encoder.add_l2_gradient(&mut enc_grads, l2);
        self.decoder.add_l2_gradient(&mut dec_grads, l2);
        enc_grads.0.append(&mut dec_grads.0);
        let penalty = l2 * self.weight_norm_sq();
        Ok((LossValue { mse, total: mse + penalty }, enc_grads))
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.encoder.weight_norm_sq() + self.decoder.weight_norm_sq()
    }

    /// Every parameter in gradient order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn param_lengths(&self) -> Vec<usize> {
        self.encoder
            .layers()
            .iter()
            .chain(self.decoder.layers())
            .flat_map(|l| [l.weights().len(), l.bias().len()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_lengths().iter().sum()
    }
}

impl Autoencoder<f32> {
    fn input_row(&self, frame: &SpectralFrame, chroma: ChromaVector) -> Result<Vec<f32>> {
        if frame.magnitudes().len() != self.config.frame_bins {
            return Err(Error::Shape(format!(
                "frame has {} bins, model expects {}",
                frame.magnitudes().len(),
                self.config.frame_bins
            )));
        }
        let mut x = vec![0.0f32; self.config.input_dim()];
        x[..self.config.frame_bins].copy_from_slice(frame.magnitudes());
        if self.config.augmentation == Augmentation::Chroma {
            chroma.write_onehot(&mut x[self.config.frame_bins..]);
        }
        // A lone frame has no predecessor, so a difference input stays zero.
        Ok(x)
    }

    /// Latent coordinates of one frame.
    pub fn encode(&self, frame: &SpectralFrame, chroma: ChromaVector) -> Result<Vec<f32>> {
        let x = self.input_row(frame, chroma)?;
        self.encode_rows(&x, 1)
    }

    /// Magnitudes decoded from one latent vector.
    pub fn decode(&self, latent: &[f32], chroma: ChromaVector) -> Result<Vec<f32>> {
        self.decode_rows(latent, &chroma.onehot(), 1)
    }

    /// Latent range per dimension for control surfaces: `[0, 1]` for
    /// sigmoid models, otherwise the recorded training bounding box.
    pub fn latent_ranges(&self) -> Vec<(f32, f32)> {
        let d = self.config.bottleneck_width;
        if self.config.is_bounded() {
            return vec![(0.0, 1.0); d];
        }
        self.metadata.latent_bounds.clone().unwrap_or_else(|| vec![(-1.0, 1.0); d])
    }
}

#[cfg(test)]
mod tests;
