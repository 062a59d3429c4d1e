//! Versioned binary model container: JSON structure header followed by
//! little-endian float32 parameter blobs in parameter order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Autoencoder, ConvAe, DenseAe};

const MAGIC: &[u8; 4] = b"BFAE";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "kebab-case")]
enum ArchMeta {
    Dense {
        input_width: usize,
        widths: Vec<usize>,
        leaky_slope: f64,
    },
    Conv {
        in_channels: usize,
        input_len: usize,
        filters: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    arch: ArchMeta,
    param_shapes: Vec<Vec<usize>>,
    /// Snapshot of the training configuration that produced the params.
    train_config: serde_json::Value,
}

fn dense_slope(model: &DenseAe<f32>) -> f64 {
    match model.encoder[0].activation {
        super::Activation::LeakyRelu(s) => s,
        _ => super::LEAKY_SLOPE,
    }
}

/// Serialize the model with a training-config snapshot.
pub fn save_checkpoint(
    path: &Path,
    model: &Autoencoder<f32>,
    train_config: serde_json::Value,
) -> Result<()> {
    let arch = match model {
        Autoencoder::Dense(m) => ArchMeta::Dense {
            input_width: m.input_width,
            widths: m.widths.clone(),
            leaky_slope: dense_slope(m),
        },
        Autoencoder::Conv(m) => ArchMeta::Conv {
            in_channels: m.in_channels,
            input_len: m.input_len,
            filters: m.filters.clone(),
        },
    };
    let header = Header {
        version: VERSION,
        arch,
        param_shapes: model.param_shapes(),
        train_config,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for view in model.params() {
        for &v in view.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint; returns the model and the stored config snapshot.
pub fn load_checkpoint(path: &Path) -> Result<(Autoencoder<f32>, serde_json::Value)> {
    let file = File::open(path)
        .map_err(|e| Error::format(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a model checkpoint (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    r.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    let mut model = match &header.arch {
        ArchMeta::Dense {
            input_width,
            widths,
            leaky_slope,
        } => Autoencoder::Dense(DenseAe::<f32>::new(*input_width, widths, *leaky_slope, 0)),
        ArchMeta::Conv {
            in_channels,
            input_len,
            filters,
        } => {
            let f: [usize; 3] = filters
                .clone()
                .try_into()
                .map_err(|_| Error::format("conv checkpoint needs exactly 3 filter counts"))?;
            Autoencoder::Conv(ConvAe::<f32>::new(*in_channels, *input_len, &f, 0))
        }
    };
    if model.param_shapes() != header.param_shapes {
        return Err(Error::format("checkpoint parameter shapes do not match"));
    }
    for mut view in model.params_mut() {
        let slice = view
            .as_slice_mut()
            .expect("parameter tensors are contiguous");
        let mut buf = vec![0u8; slice.len() * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format("truncated checkpoint parameter blob"))?;
        for (dst, chunk) in slice.iter_mut().zip(buf.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    Ok((model, header.train_config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_dense_and_conv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({"epochs": 3, "seed": 9});

        let dense = Autoencoder::Dense(DenseAe::<f32>::new(10, &[6, 3], 0.02, 77));
        let path = dir.path().join("dense.ckpt");
        save_checkpoint(&path, &dense, cfg.clone()).unwrap();
        let (loaded, loaded_cfg) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        for (a, b) in dense.params().iter().zip(loaded.params()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x, y);
            }
        }

        let conv = Autoencoder::Conv(ConvAe::<f32>::new(4, 24, &[5, 4, 3], 78));
        let path = dir.path().join("conv.ckpt");
        save_checkpoint(&path, &conv, cfg.clone()).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        match (&conv, &loaded) {
            (Autoencoder::Conv(a), Autoencoder::Conv(b)) => {
                assert_eq!(a.in_channels, b.in_channels);
                assert_eq!(a.input_len, b.input_len);
            }
            _ => panic!("arch mismatch"),
        }
        for (a, b) in conv.params().iter().zip(loaded.params()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
