//! Symbolic-music language modeling toolkit.
//!
//! Pipeline: parse MIDI corpora ([`midi`]), tokenize under two
//! representations ([`encoding`]), arrange token ids for truncated BPTT
//! ([`dataset`]), train a 2-layer LSTM from scratch ([`model`]), generate
//! new sequences and render them back to MIDI ([`generate`]), and produce
//! corpus statistics plus t-SNE projections of the learned embeddings
//! ([`analysis`]).

pub mod analysis;
pub mod dataset;
pub mod encoding;
pub mod generate;
pub mod midi;
pub mod model;

pub use dataset::BatchSet;
pub use encoding::{Token, Vocabulary};
pub use midi::{MidiFile, NoteEvent, NoteKind};
pub use model::{ModelConfig, ModelState, Parameters, Representation};
