//! Joint training of CompNet, FineNet and the two discriminators.

pub mod config;
pub mod dataset;
pub mod optim;
pub mod synthetic;
pub mod trainer;

pub use config::{DatasetSection, NetworkSection, TrainingConfig};
pub use dataset::{ingest_dataset, Dataset, DatasetItem, ResizeRule};
pub use optim::Adam;
pub use synthetic::{synthetic_dataset, synthetic_scene, write_synthetic_dataset};
pub use trainer::{
    loss_csv, lr_schedule, parse_loss_csv, perceptual_enabled, perceptual_schedule, reconstruct,
    train, train_on, train_step, training_multiple, LossRecord, TrainOutcome, TrainPaths, TrainState,
};
