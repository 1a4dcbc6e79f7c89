//! Readers and writers for every file format the toolkit consumes or emits.
//!
//! Text formats:
//!
//! * CTM transcripts (`utt channel start dur word [conf [pos]]`).
//! * Word vectors in text form with an `N D` header line.
//! * Entity vocabularies, one entity per line.
//!
//! Record formats are line-delimited JSON, one record per line. Feature
//! files (proposal frames and frame vectors) start with a header line that
//! declares the feature dimension, e.g.
//!
//! ```text
//! {"format":"proposal_frames","feature_dim":2048}
//! {"frame_id":"v1_2800","video_id":"v1","entity":"hand","proposals":[{"box":[0,0,10,10],"feature":[...]}]}
//! ```

mod ctm;
mod embeddings;
mod records;
mod vocab;

pub use ctm::{parse_ctm, write_ctm, CtmToken};
pub use embeddings::{parse_embeddings, write_embeddings, EmbeddingTable};
pub use records::{
    read_frame_vectors, read_gold, read_pairs, read_proposal_frames, write_frame_vectors,
    write_gold, write_pairs, write_proposal_frames, BBox, EntityFramePair, FeatureHeader,
    FrameVector, GoldAnnotation, Proposal, ProposalFrame, FRAME_VECTORS_FORMAT,
    PROPOSAL_FRAMES_FORMAT,
};
pub use vocab::{parse_vocabulary, write_vocabulary, EntityVocabulary};
