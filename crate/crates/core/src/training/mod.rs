//! Output-error training with a stability hinge penalty.

pub mod objective;
pub mod penalty;
pub mod rmsprop;
pub mod trainer;

pub use objective::{gradients, loss, loss_and_gradients, simulation_error, Gradients, LossAndGrad, SeqRef};
pub use penalty::{penalty_rho, penalty_slope, PenaltyConfig};
pub use rmsprop::{rmsprop_step, rmsprop_update, RmsPropConfig, RmsPropState};
pub use trainer::{
    init_model, train, train_from, validation_error, EpochRecord, InitState, ModelInitSpec, TrainConfig,
    TrainHistory, HISTORY_HEADER,
};
