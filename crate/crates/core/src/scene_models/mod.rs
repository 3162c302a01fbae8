//! Desk-scale stand-ins for the vision-language model and the text-to-image
//! model: a synthetic scene world, its renderer, a toy captioner with a tunable
//! language-prior bias, and a caption-to-image synthesizer.

mod captioner;
mod replay;
mod scene;
mod vocab;

use thiserror::Error;

use crate::image::{ImageError, ImageGrid};
use crate::ot::{Distribution, OtError, TokenId};

pub use captioner::{
    default_cooccurrence, default_object_freq, CaptionerParams, ToyCaptioner, CAPTION_FLOOR, DETECTION_THRESHOLD,
};
pub use replay::{LogitsDump, ReplayModel, Source};
pub use scene::{
    parse_caption, pattern_value, render_scene, synthesize_feedback, ParsedCaption, Placement, Scene, CANONICAL_WIDTH,
    COLOR_RGB, OBJECT_PATTERNS,
};
pub use vocab::{CaptionVocab, TokenKind, AND, BOS, COLOR_NAMES, EOS, OBJECT_NAMES, SEP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no views were given")]
    EmptyViews,
    #[error("malformed prefix: {0}")]
    MalformedPrefix(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("scene: {0}")]
    Scene(String),
    #[error("captioner parameters: {0}")]
    Params(String),
    #[error("replay step {step}: {reason}")]
    Replay { step: usize, reason: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Ot(#[from] OtError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// A next-token model conditioned on a list of views, a prompt and the tokens
/// generated so far. Implementations must be deterministic.
pub trait ConditionalModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn bos(&self) -> TokenId {
        BOS
    }

    fn eos(&self) -> TokenId {
        EOS
    }

    fn next_distribution(&self, views: &[ImageGrid], prompt: &[TokenId], prefix: &[TokenId]) -> Result<Distribution>;
}
