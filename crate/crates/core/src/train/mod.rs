//! Optimisation: AdamW, weight initialisation and the training loop.

mod adamw;
mod init;
mod trainer;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use init::{init_pretrained_encoder, init_scratch, InitMode};
pub use trainer::{
    select_best, train, train_dice, write_history_csv, EpochRecord, TrainConfig, TrainOutcome,
};
