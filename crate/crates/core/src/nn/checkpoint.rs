//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "FLOWKDCK" | u32 version | u64 header length | JSON header | raw tensor bytes
//! ```
//!
//! The JSON header carries the [`LayerGraph`], the element type and the
//! name/shape of every stored array; arrays follow in header order as raw
//! little-endian floats, so loading reproduces the network bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::LayerGraph;
use super::network::{BnBuffers, Network};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::{width_of, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FLOWKDCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    graph: LayerGraph,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes<T: Scalar>(net: &Network<T>) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    let mut put = |name: String, shape: &[usize], data: &[T]| {
        arrays.push(ArrayEntry { name, shape: shape.to_vec() });
        for &v in data {
            payload.extend_from_slice(&v.to_le_bytes_vec());
        }
    };
    for p in net.params().iter() {
        put(p.name.clone(), p.tensor.shape(), p.tensor.data());
    }
    for b in net.buffers() {
        put(format!("layer{}.running_mean", b.layer), &[b.mean.len()], &b.mean);
        put(format!("layer{}.running_var", b.layer), &[b.var.len()], &b.var);
    }
    let header = serde_json::to_vec(&Header { dtype: T::DTYPE.into(), graph: net.graph().clone(), arrays })?;
    let mut out = Vec::with_capacity(24 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!("checkpoint holds {}, requested {}", header.dtype, T::DTYPE)));
    }
    let w = width_of::<T>();
    let mut offset = 20 + hlen;
    let mut params = ParamStore::new();
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for entry in header.arrays {
        let n: usize = entry.shape.iter().product();
        let raw = bytes.get(offset..offset + n * w).ok_or_else(|| bad("truncated payload"))?;
        offset += n * w;
        let data: Vec<T> = raw.chunks(w).map(T::from_le_slice).collect();
        if let Some(layer) = entry.name.strip_suffix(".running_mean") {
            means.push((layer.to_string(), data));
        } else if let Some(layer) = entry.name.strip_suffix(".running_var") {
            vars.push((layer.to_string(), data));
        } else {
            params.push(entry.name, Tensor::new(&entry.shape, data)?.with_grad());
        }
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after payload"));
    }
    if means.len() != vars.len() {
        return Err(bad("unpaired batchnorm buffers"));
    }
    let buffers = means
        .into_iter()
        .zip(vars)
        .map(|((lm, mean), (lv, var))| {
            let layer = lm
                .strip_prefix("layer")
                .and_then(|s| s.parse().ok())
                .filter(|_| lm == lv)
                .ok_or_else(|| bad("malformed buffer name"))?;
            Ok(BnBuffers { layer, mean, var })
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_parts(header.graph, params, buffers)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Network<T>> {
    from_bytes(&fs::read(path)?)
}
