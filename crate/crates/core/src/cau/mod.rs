//! CAU vocabulary, annotated sequences and the BLEU-4 sequence metric.

pub mod bleu;
pub mod catalog;
pub mod sequence;

pub use bleu::{bleu4, mean_bleu4};
pub use catalog::{CatalogEntry, CauCatalog, TokenKind, EOD, NIL, SOD, SPECIALS};
pub use sequence::{sequence_duration_beats, strip_specials, CauSequence, SeqItem};
