//! Meme moderation for the Singapore context.
//!
//! The crate is organised by pipeline stage: [`ocr`] finds text and routes
//! it by script, [`translation`] decides its language and translates it,
//! [`vlm`] builds the classification prompt and calls the model, and
//! [`verdict`] parses the reply and scores it from token weights.
//! [`pipeline`] composes them; [`eval`] measures accuracy and AUROC.
//!
//! The dataset side lives in [`dataset`], [`labeling`], [`wiki_qa`] and
//! [`abbrev`]. Backends are traits with HTTP implementations in [`http`]
//! and deterministic fixtures in [`mock`].

pub mod abbrev;
pub mod backend;
pub mod dataset;
pub mod decision;
pub mod eval;
pub mod http;
pub mod labeling;
pub mod media;
pub mod mock;
pub mod ocr;
pub mod pipeline;
pub mod translation;
pub mod verdict;
pub mod vlm;
pub mod wiki_qa;

pub use backend::{BackendError, BackendErrorKind};
pub use decision::Decision;
pub use media::Image;
pub use pipeline::{Pipeline, PipelineOptions};
pub use verdict::{Harmfulness, Verdict};
