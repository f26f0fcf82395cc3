//! Loss assembly, optimization and the training loops.

mod config;
mod log;
mod loss;
mod optim;
mod trainer;

pub use config::{k_for_lambda, train_schedule_presets, CascadeBudget, TeacherPaths, TrainConfig, RBN_LAMBDAS, UNIFIED_LAMBDAS};
pub use log::{ema, LogRow, LossLog, CSV_HEADER};
pub use loss::{rd_loss, rd_loss_terms, RdLossBreakdown, RdTerms, DISTORTION_SCALE};
pub use optim::{Adam, StepSchedule};
pub use trainer::{batch_gradients, batch_loss, load_teachers, train, PhaseLog, Teachers, TrainContext, TrainReport};
