//! Weight file: `b"DFSM"`, u32 LE version, u32 LE header length, JSON header
//! `{config, tensors: [{name, shape}]}`, then every tensor as little-endian
//! f32 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{tensor_layout, DfsmnParams, TensorSpec};
use super::{DfsmnConfig, DfsmnError, DfsmnModel};

const MAGIC: &[u8; 4] = b"DFSM";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: DfsmnConfig,
    tensors: Vec<TensorSpec>,
}

pub fn write_weights<W: Write>(model: &DfsmnModel, mut w: W) -> Result<(), DfsmnError> {
    let header = Header {
        config: model.config().clone(),
        tensors: tensor_layout(model.config()),
    };
    let json = serde_json::to_vec(&header).map_err(|e| DfsmnError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&WEIGHT_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.params().tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), DfsmnError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DfsmnError::Truncated(format!("file ends inside the {what}")),
        _ => DfsmnError::Io(e),
    })
}

pub fn read_weights<R: Read>(mut r: R) -> Result<DfsmnModel, DfsmnError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(DfsmnError::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    read_exact_or(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != WEIGHT_FORMAT_VERSION {
        return Err(DfsmnError::Version {
            found: version,
            expected: WEIGHT_FORMAT_VERSION,
        });
    }
    read_exact_or(&mut r, &mut word, "header length")?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    read_exact_or(&mut r, &mut json, "header")?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| DfsmnError::Format(format!("header: {e}")))?;
    header.config.validate()?;

    let expected = tensor_layout(&header.config);
    if header.tensors != expected {
        return Err(DfsmnError::Shape("tensor list does not match the header config".into()));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 4 != 0 {
        return Err(DfsmnError::Truncated(format!("{} payload bytes is not a whole number of f32", payload.len())));
    }
    let want: usize = expected.iter().map(TensorSpec::len).sum();
    if payload.len() / 4 != want {
        return Err(DfsmnError::Shape(format!(
            "payload holds {} values, header describes {want}",
            payload.len() / 4
        )));
    }

    let mut params = DfsmnParams::<f32>::zeros(&header.config);
    let mut chunks = payload.chunks_exact(4);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f32::from_le_bytes(chunks.next().expect("length checked").try_into().expect("4 bytes"));
        }
    }
    DfsmnModel::from_params(header.config, params)
}

pub fn save_weights(model: &DfsmnModel, path: impl AsRef<Path>) -> Result<(), DfsmnError> {
    write_weights(model, BufWriter::new(File::create(path)?))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<DfsmnModel, DfsmnError> {
    read_weights(BufReader::new(File::open(path)?))
}
