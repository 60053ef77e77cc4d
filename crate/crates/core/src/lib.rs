//! End-to-end toolkit for semi-supervised acoustic model training with
//! confidence-based selection, fine-tuning, and output-layer transfer,
//! evaluated on a deterministic synthetic two-domain corpus.
//!
//! The training objective is frame-level cross-entropy over a small
//! feedforward classifier; sequence-discriminative objectives and real
//! corpora are out of scope.

pub mod acoustic;
pub mod corpus;
pub mod decode;
pub mod dsp;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod sst;
