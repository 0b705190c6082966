//! First stage: predicting the CAU sequence of a song from local music windows.

pub mod generate;
pub mod model;
pub mod train;

pub use generate::{generate, generate_on_grid, generate_with, DecodeOptions, Generation, PredictorSession, StepDecoder};
pub use model::{CauPredictor, ConvSpec, PredictorConfig};
pub use train::{evaluate_loss, song_steps, train_predictor, PredictorTrainer, PredictorTraining, SongSteps, TrainLog};
