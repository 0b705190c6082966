//! Music feature packs, beat grids, the corpus layout and a synthetic corpus generator.

pub mod beats;
pub mod corpus;
pub mod pack;
pub mod synth;

pub use beats::{beat_times, BeatGrid};
pub use corpus::{Corpus, Performance, Song};
pub use pack::{MusicFeaturePack, ACTIVATION_RATE, CHROMA_BINS, CHROMA_RATE, WINDOW_CHANNELS};
pub use synth::{beat_period, generate_synthetic_corpus, SynthConfig};
