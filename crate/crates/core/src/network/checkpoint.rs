//! Binary checkpoint format: magic, format version, embedded model config,
//! then every parameter tensor in canonical order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::scalar::{cast, up, Scalar};

const MAGIC: &[u8; 8] = b"FSRGCKP\0";
const FORMAT_VERSION: u32 = 1;

/// Write weights plus their config. Scalars are stored as f64 bits so both
/// precisions round-trip losslessly.
pub fn save<T: Scalar>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    weights: &ModelWeights<T>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    let config_json = serde_json::to_vec(config)?;
    out.write_u64::<LittleEndian>(config_json.len() as u64)?;
    out.write_all(&config_json)?;

    let mut names = Vec::new();
    weights.for_each(|name, _| names.push(name));
    out.write_u64::<LittleEndian>(names.len() as u64)?;

    let mut result = Ok(());
    weights.for_each(|name, tensor| {
        if result.is_err() {
            return;
        }
        result = (|| -> Result<()> {
            out.write_u64::<LittleEndian>(name.len() as u64)?;
            out.write_all(name.as_bytes())?;
            out.write_u32::<LittleEndian>(tensor.shape.len() as u32)?;
            for &d in &tensor.shape {
                out.write_u64::<LittleEndian>(d as u64)?;
            }
            for &v in &tensor.data {
                out.write_f64::<LittleEndian>(up(v))?;
            }
            Ok(())
        })();
    });
    result?;
    out.flush()?;
    Ok(())
}

/// Load a checkpoint, validating the format version, the embedded config,
/// and every tensor's shape against what the config implies.
pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelWeights<T>)> {
    let mut input = BufReader::new(File::open(&path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let config_len = input.read_u64::<LittleEndian>()? as usize;
    let mut config_json = vec![0u8; config_len];
    input.read_exact(&mut config_json)?;
    let config: ModelConfig = serde_json::from_slice(&config_json)?;
    config.validate()?;

    // skeleton fixes the expected names, shapes, and order
    let mut weights: ModelWeights<T> = ModelWeights::init(&config, 0);
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    weights.for_each(|name, t| expected.push((name, t.shape.clone())));

    let count = input.read_u64::<LittleEndian>()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} tensors, config implies {}",
            expected.len()
        )));
    }
    for (slot, (name, shape)) in weights.flat_mut().into_iter().zip(expected) {
        let name_len = input.read_u64::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        input.read_exact(&mut name_bytes)?;
        let got_name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        if got_name != name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: expected {name}, found {got_name}"
            )));
        }
        let ndim = input.read_u32::<LittleEndian>()? as usize;
        let mut got_shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            got_shape.push(input.read_u64::<LittleEndian>()? as usize);
        }
        if got_shape != shape {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {got_shape:?} does not match config ({shape:?})"
            )));
        }
        for v in slot.data.iter_mut() {
            *v = cast::<T>(input.read_f64::<LittleEndian>()?);
        }
    }
    Ok((config, weights))
}
