//! Build entity/frame training pairs from time-aligned transcripts, train
//! weakly-supervised recognition and grounding models on precomputed
//! visual features, and evaluate them.
//!
//! The crate is organised bottom-up:
//!
//! * [`ingest`] parses and writes every file format the toolkit touches.
//! * [`dataset`] turns transcripts plus an entity vocabulary into pairs.
//! * [`tensorcore`] is a small dense-layer toolkit with hand-written
//!   gradients, Adam and a finite-difference checker.
//! * [`recognition`] trains the frame classifiers and computes top-k / MAP@k.
//! * [`grounding`] holds the MIL and attention-reconstruction models and
//!   the IoU-based evaluation.
//! * [`synth`] generates planted synthetic corpora and brute-force oracles.
//! * [`verify`] runs finite-difference checks over every trainable model.
//! * [`report`] lays results out as aligned text tables.

pub mod dataset;
pub mod error;
pub mod grounding;
pub mod ingest;
pub mod recognition;
pub mod report;
pub mod synth;
pub mod tensorcore;
pub mod verify;

pub use error::{Error, Result};
pub use ingest::{
    BBox, CtmToken, EmbeddingTable, EntityFramePair, EntityVocabulary, FrameVector, GoldAnnotation,
    Proposal, ProposalFrame,
};
pub use tensorcore::{AdamState, LinearLayer, Rng};
