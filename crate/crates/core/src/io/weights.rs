//! Single-file checkpoint format.
//!
//! ```text
//! "M2UW" | u32 version | u32 count
//! per tensor: u32 name_len | name | zero pad to 4 | u32 rank | rank × u32 dims | f32 data
//! u32 meta_len | JSON metadata | zero pad to 4
//! ```
//!
//! Every tensor record starts and ends on a 4-byte boundary.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{element_count, pad_to, put_f32s, put_u32, Reader};
use super::NamedTensor;
use crate::arch::{GraphSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::ops::{BN_DEFAULT_EPS, BN_DEFAULT_MOMENTUM};
use crate::tensor::Scalar;

pub const WEIGHT_MAGIC: [u8; 4] = *b"M2UW";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMeta {
    pub architecture_hash: String,
    pub graph: GraphSpec,
    pub input_hw: [usize; 2],
    pub t_decoder: Option<f64>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightFile {
    pub tensors: Vec<NamedTensor>,
    pub meta: WeightMeta,
}

impl WeightFile {
    pub fn from_graph<T: Scalar>(
        g: &ModelGraph<T>,
        train_config: Option<serde_json::Value>,
    ) -> Self {
        let (h, w) = g.input_hw();
        let (bn_eps, bn_momentum) = g
            .units()
            .first()
            .map(|u| (u.bn.eps.as_f64(), u.bn.momentum.as_f64()))
            .unwrap_or((BN_DEFAULT_EPS, BN_DEFAULT_MOMENTUM));
        Self {
            tensors: g.named_tensors(),
            meta: WeightMeta {
                architecture_hash: g.architecture_hash(),
                graph: g.spec().clone(),
                input_hw: [h, w],
                t_decoder: g.t_decoder(),
                bn_eps,
                bn_momentum,
                train_config,
            },
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

pub fn encode_weights(file: &WeightFile) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let floats: usize = file.tensors.iter().map(|t| t.data.len()).sum();
    let mut out = Vec::with_capacity(floats * 4 + file.tensors.len() * 64 + 4096);
    out.extend_from_slice(&WEIGHT_MAGIC);
    put_u32(&mut out, WEIGHT_VERSION);
    put_u32(&mut out, file.tensors.len() as u32);
    for t in &file.tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::invalid(format!("duplicate tensor name {}", t.name)));
        }
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::invalid(format!(
                "{}: dims do not match data",
                t.name
            )));
        }
        put_u32(&mut out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        pad_to(&mut out, 4);
        put_u32(&mut out, t.dims.len() as u32);
        for d in &t.dims {
            put_u32(&mut out, *d as u32);
        }
        put_f32s(&mut out, &t.data);
    }
    let meta =
        serde_json::to_vec(&file.meta).map_err(|e| Error::invalid(format!("metadata: {e}")))?;
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    pad_to(&mut out, 4);
    Ok(out)
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<WeightFile> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(r.fail("bad magic, expected M2UW"));
    }
    let version = r.u32()?;
    if version != WEIGHT_VERSION {
        return Err(r.fail(format!("unsupported weight file version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = r.string(len)?;
        r.skip_padding(4)?;
        if !seen.insert(name.clone()) {
            return Err(r.fail(format!("duplicate tensor name {name}")));
        }
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(r.fail(format!("{name}: implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = element_count(&dims, &r)?;
        let data = r.f32s(n)?;
        tensors.push(NamedTensor { name, dims, data });
    }
    let meta_len = r.u32()? as usize;
    let meta_bytes = r.take(meta_len)?;
    let meta: WeightMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| r.fail(format!("metadata is not valid: {e}")))?;
    r.skip_padding(4)?;
    if r.remaining() != 0 {
        return Err(r.fail(format!("{} trailing bytes", r.remaining())));
    }
    if meta.graph.architecture_hash() != meta.architecture_hash {
        return Err(Error::load(
            path,
            "stored architecture does not match its hash",
        ));
    }
    Ok(WeightFile { tensors, meta })
}

/// Writes the graph's weights and buffers. Returns the file size in bytes.
pub fn save_weights<T: Scalar>(
    g: &ModelGraph<T>,
    path: impl AsRef<Path>,
    train_config: Option<serde_json::Value>,
) -> Result<u64> {
    let bytes = encode_weights(&WeightFile::from_graph(g, train_config))?;
    super::write_atomic(path.as_ref(), &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_weights(&bytes, path)
}

fn apply<T: Scalar>(g: &mut ModelGraph<T>, file: &WeightFile, path: &Path) -> Result<()> {
    if file.meta.architecture_hash != g.architecture_hash() {
        return Err(Error::load(
            path,
            format!(
                "architecture hash {} does not match the graph ({})",
                file.meta.architecture_hash,
                g.architecture_hash()
            ),
        ));
    }
    g.install(&file.tensors, |_| true)
        .map_err(|e| Error::load(path, e.to_string()))?;
    for u in g.units_mut() {
        u.bn.eps = T::of(file.meta.bn_eps);
        u.bn.momentum = T::of(file.meta.bn_momentum);
    }
    Ok(())
}

/// Loads a checkpoint into an existing graph. The architecture hash is
/// checked before anything is installed.
pub fn load_into<T: Scalar>(g: &mut ModelGraph<T>, path: impl AsRef<Path>) -> Result<WeightMeta> {
    let path = path.as_ref();
    let file = load_weights(path)?;
    apply(g, &file, path)?;
    Ok(file.meta)
}

/// Rebuilds the stored graph and installs its weights.
pub fn load_graph(path: impl AsRef<Path>) -> Result<(ModelGraph<f32>, WeightMeta)> {
    let path = path.as_ref();
    let file = load_weights(path)?;
    let [h, w] = file.meta.input_hw;
    let mut g = ModelGraph::from_spec(file.meta.graph.clone(), [file.meta.graph.in_channels, h, w])
        .map_err(|e| Error::load(path, e.to_string()))?;
    apply(&mut g, &file, path)?;
    Ok((g, file.meta))
}
