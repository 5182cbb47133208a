use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arch::ModelGraph;
use crate::error::{Error, Result};
use crate::io::load_weights;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Scratch,
    PretrainedEncoder,
}

/// He-normal kernels (`std = √(2 / fan_in)`), identity batch norms.
pub fn init_scratch<T: Scalar>(g: &mut ModelGraph<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for u in g.units_mut() {
        let [_, cin, kh, kw] = u.conv.kernel.shape();
        let std = (2.0 / (cin * kh * kw) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in u.conv.kernel.data_mut() {
            *v = T::of(normal.sample(&mut rng));
        }
        let c = u.bn.channels();
        u.bn.gamma = vec![T::one(); c];
        u.bn.beta = vec![T::zero(); c];
        u.bn.running_mean = vec![T::zero(); c];
        u.bn.running_var = vec![T::one(); c];
    }
}

/// Scratch initialisation, then every encoder tensor from the weight file
/// at `path`. The file must supply each encoder tensor with a matching
/// shape; otherwise nothing is loaded and the error lists the offenders.
pub fn init_pretrained_encoder<T: Scalar>(
    g: &mut ModelGraph<T>,
    path: &Path,
    seed: u64,
) -> Result<usize> {
    let file = load_weights(path)?;
    init_scratch(g, seed);
    g.install(&file.tensors, ModelGraph::<T>::is_encoder_unit)
        .map_err(|e| Error::load(path, e.to_string()))
}
