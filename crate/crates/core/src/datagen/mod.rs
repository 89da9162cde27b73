//! Synthetic incomplete multi-modal segmentation corpus.

mod corpus;
mod presence;
mod scene;

pub use corpus::{
    generate_corpus, read_corpus, read_manifest, sample_id, write_corpus, Corpus, Manifest,
    CORPUS_FORMAT, CORPUS_VERSION,
};
pub use presence::{sample_presence, MissingProtocol, PresenceMatrix, TrainingMode};
pub use scene::{
    render_sample, render_with_nesting, standardize, Ellipse, ModalityRenderer, ModalitySample,
    Nesting, NestingPrior, SceneSpec,
};
