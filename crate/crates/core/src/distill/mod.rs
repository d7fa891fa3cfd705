//! Teacher → auxiliary → student training.

mod losses;
mod plan;
mod teacher;
mod trainer;

pub use losses::{
    combine, contrastive_loss, cross_entropy, distill_loss, distill_loss_against, hint_baseline, softlabel_baseline,
    supervision_loss, within_batch_pairs, KdTerm,
};
pub use plan::{
    alpha_schedule, DistillPlan, Method, Supervision, DEFAULT_ALPHA_INIT, DEFAULT_CONTRASTIVE_WEIGHT, DEFAULT_GAMMA,
    DEFAULT_MARGIN, DEFAULT_TEMPERATURE,
};
pub use teacher::Teacher;
pub use trainer::{
    auxiliary_plan, distill_student, evaluate, fit, metrics_header, train_auxiliary, train_teacher, write_metrics_csv,
    EpochMetrics, TrainConfig, TrainState,
};
