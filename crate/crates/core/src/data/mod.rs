//! Datasets, preprocessing crops, splits and the augmentation stack.

mod augment;
mod dataset;
mod synthetic;

pub use augment::{apply as apply_draws, augment, sample_stream, AugmentConfig, AugmentDraws};
pub use dataset::{
    crop, make_validation, DatasetDir, DatasetKind, DatasetSpec, Sample, DATA_ROOT_ENV,
};
pub use synthetic::{synthetic_dataset, synthetic_sample};
