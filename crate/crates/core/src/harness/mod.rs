//! Desk-scale experiment driver: synthetic corpus, feature stub, training
//! with early stopping and top-N averaging, checkpoints and scoring.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod evaluate;
pub mod features;
pub mod gradcheck;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Averaging, TrainConfig};
pub use corpus::{
    generate_corpus, load_corpus, load_split, pad_or_trim, save_corpus, synthesize, Artifact, Corpus, CorpusSpec,
    Split, Utterance,
};
pub use evaluate::{evaluate, score_trials, EvalMode};
pub use features::FeatureExtractor;
pub use optim::{Adam, AdamConfig};
pub use train::{average_params, train, train_on_features, EarlyStopping, FeatureSet, TopN, TrainingLog};
