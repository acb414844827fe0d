//! Datastore construction, adapter training with retrieval dropout,
//! decoding, scoring and analysis.

mod analysis;
mod build;
mod decode;
mod system;
mod train;

pub use analysis::{contrastive_eval, smoothing_attribution, Attribution, ContrastivePair};
pub use build::build_datastore_from_corpus;
pub use decode::{beam_decode, decode, greedy_decode, DecodeConfig, DecodeMode};
pub use system::{
    retrieve, retrieve_for_training, score_sequence, Retrieval, RetrievalMode, SmoothedStep, System,
};
pub use train::{
    collect_tokens, mean_loss, train_adapter, train_on_tokens, tune_fixed, tune_knnmt, KnnMtTuning, TokenSet, TrainConfig,
    TrainOutcome, TrainingToken, LAMBDA_GRID, TEMPERATURE_FACTORS,
};
