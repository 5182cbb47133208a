//! File formats: weight checkpoints, golden fixtures, images and result
//! artifacts. All multi-byte integers and floats are little-endian.

mod binary;
mod fixture;
mod image;
mod weights;

pub use fixture::{decode_fixture, encode_fixture, read_fixture, write_fixture, FIXTURE_MAGIC};
pub use image::{
    overlay_color, read_image, read_mask, write_image, write_overlay, write_prob_map, ImageFormat,
    OVERLAY_FN, OVERLAY_FP, OVERLAY_TN, OVERLAY_TP,
};
pub use weights::{
    decode_weights, encode_weights, load_graph, load_into, load_weights, save_weights, WeightFile,
    WeightMeta, WEIGHT_MAGIC, WEIGHT_VERSION,
};

/// A named array of `f32` with arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }

    /// Views a rank-4 (or lower, left-padded with 1s) array as a tensor.
    pub fn to_tensor(&self) -> crate::Result<crate::Tensor<f32>> {
        if self.dims.len() > 4 {
            return Err(crate::Error::InvalidInput(format!(
                "{}: rank {} does not fit a 4-D tensor",
                self.name,
                self.dims.len()
            )));
        }
        let mut shape = [1usize; 4];
        shape[4 - self.dims.len()..].copy_from_slice(&self.dims);
        crate::Tensor::new(shape, self.data.clone())
    }

    pub fn from_tensor(name: impl Into<String>, t: &crate::Tensor<f32>) -> Self {
        Self::new(name, t.shape().to_vec(), t.data().to_vec())
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub(crate) fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> crate::Result<()> {
    use std::io::Write;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
