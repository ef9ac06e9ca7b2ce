//! Momentum SGD and the staged training procedure: layerwise decoder
//! pretraining (step 2), stacked decoder finetuning (step 3) and joint
//! finetuning of all pathways (step 4).

mod log;
mod phases;
mod sgd;

pub use self::log::{MetricsLog, MetricsRow, ValidationRow};
pub use phases::{
    balance_gammas, layerwise_store, run_step2_layerwise, run_step3_stacked, run_step4_joint, Observer, Progress,
    Silent, TrainData, TrainPlan,
};
pub use sgd::{sgd_step, sgd_step_scaled, LrSchedule, SgdConfig};
