//! Visual and language models, their optimizer, training loops and
//! checkpoints.

mod checkpoint;
mod language;
mod optim;
mod params;
mod train;
mod visual;

pub use checkpoint::Checkpoint;
pub use language::{DecodeMode, Encoded, LanguageConfig, LanguageModel, LanguageOutput, Vocabulary};
pub use optim::{Adam, Plateau};
pub use params::{Linear, ParamSet};
pub use train::{predict_probs, predict_visemes, train_language, train_visual, EpochLog, LanguagePair, TrainConfig, TrainReport};
pub use visual::{decode_visemes, pool_frames, VisualConfig, VisualModel};
