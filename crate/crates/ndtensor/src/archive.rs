//! Single-file parameter archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"NDTARCH1"
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (see `Header`)
//! values       for each tensor in header order: len(tensor) elements
//! moments      if header.optimizer is present, for each trainable tensor
//!              in header order: first moment, then second moment
//! ```
//!
//! Elements are IEEE-754 `f32` when `header.dtype == "f32"`, `f64` otherwise.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamStore, Precision};
use crate::rng::RngSnapshot;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NDTARCH1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: Precision,
    metadata: serde_json::Value,
    rng: Option<RngSnapshot>,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

/// Contents of an archive after reading.
#[derive(Debug)]
pub struct Archive {
    pub metadata: serde_json::Value,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
    pub rng: Option<RngSnapshot>,
}

fn write_values<W: Write>(w: &mut W, values: &[f64], dtype: Precision) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for &v in values {
        match dtype {
            Precision::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_values<R: Read>(r: &mut R, n: usize, dtype: Precision) -> Result<Vec<f64>> {
    let width = match dtype {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut buf = vec![0u8; n * width];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(width)
        .map(|c| match dtype {
            Precision::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            Precision::F64 => f64::from_le_bytes(c.try_into().unwrap()),
        })
        .collect())
}

pub fn write_archive<W: Write>(
    w: &mut W,
    store: &ParamStore,
    optimizer: Option<&Adam>,
    rng: Option<RngSnapshot>,
    metadata: &serde_json::Value,
) -> Result<()> {
    let dtype = store.precision();
    let header = Header {
        dtype,
        metadata: metadata.clone(),
        rng,
        optimizer: optimizer.map(|o| OptimizerHeader {
            config: o.config,
            step: o.step_count(),
        }),
        tensors: store
            .iter()
            .map(|(_, p)| TensorHeader {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| TensorError::Archive(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, p) in store.iter() {
        write_values(w, p.value.data(), dtype)?;
    }
    if let Some(opt) = optimizer {
        for (id, p) in store.iter() {
            if p.trainable {
                write_values(w, opt.first_moment(id.index()), dtype)?;
                write_values(w, opt.second_moment(id.index()), dtype)?;
            }
        }
    }
    Ok(())
}

pub fn read_archive<R: Read>(r: &mut R) -> Result<Archive> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Archive("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| TensorError::Archive(e.to_string()))?;
    let mut params = ParamStore::new(header.dtype);
    for t in &header.tensors {
        let n = t.shape.iter().product();
        let value = Tensor::new(t.shape.clone(), read_values(r, n, header.dtype)?)?;
        if t.trainable {
            params.add(t.name.clone(), value)?;
        } else {
            params.add_buffer(t.name.clone(), value)?;
        }
    }
    let optimizer = match header.optimizer {
        None => None,
        Some(h) => {
            let mut first = Vec::with_capacity(params.len());
            let mut second = Vec::with_capacity(params.len());
            for t in &header.tensors {
                if t.trainable {
                    let n = t.shape.iter().product();
                    first.push(read_values(r, n, header.dtype)?);
                    second.push(read_values(r, n, header.dtype)?);
                } else {
                    first.push(vec![]);
                    second.push(vec![]);
                }
            }
            Some(Adam::from_parts(h.config, h.step, first, second))
        }
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Archive("trailing bytes".into()));
    }
    Ok(Archive {
        metadata: header.metadata,
        params,
        optimizer,
        rng: header.rng,
    })
}
