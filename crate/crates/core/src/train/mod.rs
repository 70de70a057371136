//! The five training losses, the joint update, and the epoch loop with
//! early stopping.

mod config;
mod losses;
mod trainer;

pub use config::{LossWeights, TemperatureSchedule, TrainConfig};
pub use losses::{
    back_transfer_losses, forward_transfer, loss_back_rec, loss_class_btd, loss_class_od,
    loss_class_td, loss_class_td_from, loss_reconstruction, DirectionLosses, LossBreakdown,
    LossOptions,
};
pub use trainer::{
    evaluate_losses, objective, pretrain_step, train, train_step, warmup_step, EpochRecord,
    TrainOutcome,
};
