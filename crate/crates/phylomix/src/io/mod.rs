//! File ingestion and persistence: candidate tree lists, reference
//! posteriors, and model checkpoints. FASTA lives with the alignment type.

pub mod checkpoint;
pub mod reference;
pub mod trees;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, OptState, TrainerState};
pub use reference::ReferencePosterior;
pub use trees::CandidateTreeSet;
