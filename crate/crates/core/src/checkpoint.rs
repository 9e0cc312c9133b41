//! Network checkpoint file.
//!
//! Layout (all multi-byte integers and floats little-endian):
//!
//! ```text
//! bytes 0..8    magic  b"OUICKPT1"
//! bytes 8..12   u32    length L of the JSON header
//! bytes 12..12+L       header: {"format_version", "seed", "step", "layers"}
//! remainder            f64 parameters, layer by layer: weights row-major,
//!                      then biases
//! ```
//!
//! The header carries the layer specs, so a checkpoint is self-describing
//! and shape-checked on load.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{network_from_parts, Layer, LayerSpec, Network};

const MAGIC: &[u8; 8] = b"OUICKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    seed: u64,
    step: u64,
    layers: Vec<LayerSpec>,
}

pub fn save_checkpoint(net: &Network, step: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let header = Header {
        format_version: FORMAT_VERSION,
        seed: net.seed(),
        step,
        layers: net.specs(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut emit = || -> std::io::Result<()> {
        file.write_all(MAGIC)?;
        file.write_all(&(header_json.len() as u32).to_le_bytes())?;
        file.write_all(&header_json)?;
        for layer in net.layers() {
            for &v in layer.weights.iter() {
                file.write_all(&v.to_le_bytes())?;
            }
            for &v in layer.biases.iter() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        file.flush()
    };
    emit().map_err(|e| Error::io(&display, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, u64)> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(&display, e))?;
    if bytes.len() < 12 || &bytes[0..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{display}: not a checkpoint file (bad magic)"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Checkpoint(format!("{display}: truncated header")));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::Checkpoint(format!("{display}: bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{display}: unsupported format version {}",
            header.format_version
        )));
    }
    let expected_params: usize = header
        .layers
        .iter()
        .map(|s| s.output_dim * s.input_dim + s.output_dim)
        .sum();
    let body = &bytes[12 + header_len..];
    if body.len() != expected_params * 8 {
        return Err(Error::Checkpoint(format!(
            "{display}: {} parameter bytes, expected {}",
            body.len(),
            expected_params * 8
        )));
    }
    let mut offset = 0;
    let mut take = |n: usize| {
        let chunk = &body[offset..offset + n * 8];
        offset += n * 8;
        chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect::<Vec<f64>>()
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        let w = take(spec.output_dim * spec.input_dim);
        let b = take(spec.output_dim);
        layers.push(Layer {
            weights: ndarray::Array2::from_shape_vec((spec.output_dim, spec.input_dim), w)
                .map_err(|e| Error::Checkpoint(e.to_string()))?,
            biases: ndarray::Array1::from_vec(b),
            activation: spec.activation,
        });
    }
    let net = network_from_parts(layers, header.seed)?;
    Ok((net, header.step))
}
