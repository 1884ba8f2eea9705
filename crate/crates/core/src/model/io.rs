//! `.mann` model files.
//!
//! ```text
//! "MANN"              magic
//! u16 LE              format version
//! u32 LE              header length
//! [u8]                JSON {"config": ModelConfig, "metadata": ModelMetadata}
//! per layer, encoder then decoder:
//!   u64 LE            float count (outputs*inputs + outputs)
//!   [f32 LE]          W row-major, then b
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Autoencoder, ModelConfig, ModelMetadata};
use crate::nn::{Activation, DenseLayer};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"MANN";
pub const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: ModelMetadata,
}

pub fn save_model(model: &Autoencoder, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_model<W: Write>(model: &Autoencoder, w: &mut W) -> Result<()> {
    let header = serde_json::to_vec(&Header { config: model.config.clone(), metadata: model.metadata.clone() })?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for layer in model.encoder.layers().iter().chain(model.decoder.layers()) {
        let count = (layer.weights().len() + layer.bias().len()) as u64;
        w.write_all(&count.to_le_bytes())?;
        let mut buf = Vec::with_capacity(count as usize * 4);
        for v in layer.weights().iter().chain(layer.bias()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corrupt(format!("model file truncated in {what}")),
        _ => Error::Io(e),
    })
}

fn read_header_from<R: Read>(r: &mut R) -> Result<(ModelConfig, ModelMetadata)> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Corrupt("not a model file (bad magic)".into()));
    }
    let mut version = [0u8; 2];
    read_exact(r, &mut version, "version")?;
    let version = u16::from_le_bytes(version);
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion { found: version.to_string(), expected: MODEL_VERSION.to_string() });
    }
    let mut len = [0u8; 4];
    read_exact(r, &mut len, "header length")?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 16 << 20 {
        return Err(Error::Corrupt(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len];
    read_exact(r, &mut json, "header")?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Corrupt(format!("model header: {e}")))?;
    header.config.validate()?;
    Ok((header.config, header.metadata))
}

/// Reads config and metadata without touching the weight blobs.
pub fn read_model_header(path: &Path) -> Result<(ModelConfig, ModelMetadata)> {
    read_header_from(&mut BufReader::new(File::open(path)?))
}

pub fn load_model(path: &Path) -> Result<Autoencoder> {
    let mut r = BufReader::new(File::open(path)?);
    let (config, metadata) = read_header_from(&mut r)?;
    let mut read_stack = |name: &str, dims: &[usize], act: &dyn Fn(usize) -> Activation| -> Result<Vec<DenseLayer>> {
        (0..dims.len() - 1)
            .map(|i| {
                let (inputs, outputs) = (dims[i], dims[i + 1]);
                let label = format!("layer {name}.{i}");
                let expected = outputs * inputs + outputs;
                let mut count = [0u8; 8];
                read_exact(&mut r, &mut count, &label)?;
                let count = u64::from_le_bytes(count);
                if count != expected as u64 {
                    return Err(Error::Corrupt(format!(
                        "{label}: blob holds {count} floats, config implies {expected} ({}x{} + {})",
                        outputs, inputs, outputs
                    )));
                }
                let mut raw = vec![0u8; expected * 4];
                read_exact(&mut r, &mut raw, &label)?;
                let mut values: Vec<f32> =
                    raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                let bias = values.split_off(outputs * inputs);
                DenseLayer::from_parts(inputs, outputs, values, bias, act(i))
                    .map_err(|e| Error::Corrupt(format!("{label}: {e}")))
            })
            .collect()
    };
    let encoder = read_stack("encoder", &config.encoder_dims(), &|i| config.encoder_activation(i))?;
    let decoder = read_stack("decoder", &config.decoder_dims(), &|i| config.decoder_activation(i))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Corrupt("trailing bytes after the last layer".into()));
    }
    Autoencoder::from_layers(config, encoder, decoder, metadata)
}
