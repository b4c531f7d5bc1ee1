//! Optimizer, schedules and the three training regimes: adversarial metric
//! learning, nearest-neighbor self-supervision and supervised regression.

mod adam;
mod schedule;
mod steps;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use schedule::{EarlyStopping, PlateauScheduler};
pub use steps::{
    adversarial_step, centered_frames, knn_selfsup_step, supervised_step, triplet_indices, SceneGrads,
    StepSettings, TripletIndices,
};
pub use trainer::{train_loop, train_loop_with, validate, EpochRecord, Method, TrainConfig, TrainLog, TrainOutcome};
