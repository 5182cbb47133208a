//! Helpers shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

#[path = "../oracle/mod.rs"]
pub mod oracle;

pub mod fixtures;
pub mod gradcheck;

use std::path::PathBuf;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Runs `f` on a one-thread rayon pool.
pub fn single_thread<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}
