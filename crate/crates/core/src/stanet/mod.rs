//! The space-time multi-scale attention network: a shared four-group
//! backbone over a frame pair, a deformable temporal merge, per-scale
//! spatial attention, top-down fusion, and density, localization and
//! association heads.

mod config;
mod loss;
mod model;
mod train;

pub use config::{LossWeights, ModelConfig, TrainConfig, SCALES};
pub use loss::{
    association_loss, combine_terms, extract_embeddings, map_loss, total_loss, AssociationLoss,
    Embedding, LossTerms,
};
pub use model::{forward, init_params, ForwardOutput};
pub use train::{
    compute_step, make_batch, sample_loss, temporal_pair, train, Batch, EpochLog, Model,
    Prediction, StepResult, TrainOutcome,
};
