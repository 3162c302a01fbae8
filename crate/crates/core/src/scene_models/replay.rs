use crate::image::ImageGrid;
use crate::ot::{Distribution, TokenId};

use super::{ConditionalModel, ModelError, Result};

/// Which conditioning a recorded distribution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Original,
    Coarse,
    Fine,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Original, Source::Coarse, Source::Fine];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Source::Original => "v",
            Source::Coarse => "c",
            Source::Fine => "f",
        }
    }
}

/// Per-step triples of next-token distributions produced elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsDump {
    pub steps: Vec<[Distribution; 3]>,
}

/// Serves one column of a [`LogitsDump`]: step `t` answers any prefix of
/// length `t + 1`, whatever the views.
#[derive(Debug, Clone)]
pub struct ReplayModel {
    dump: LogitsDump,
    source: Source,
    vocab_size: usize,
}

impl ReplayModel {
    pub fn new(dump: LogitsDump, source: Source) -> Result<Self> {
        let first = dump.steps.first().ok_or(ModelError::Replay { step: 0, reason: "dump has no steps".into() })?;
        let vocab_size = first[0].support().last().map_or(0, |&id| id + 1);
        Ok(Self { dump, source, vocab_size })
    }

    pub fn steps(&self) -> usize {
        self.dump.steps.len()
    }
}

impl ConditionalModel for ReplayModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, _views: &[ImageGrid], _prompt: &[TokenId], prefix: &[TokenId]) -> Result<Distribution> {
        let step = prefix.len().saturating_sub(1);
        self.dump
            .steps
            .get(step)
            .map(|triple| triple[self.source.index()].clone())
            .ok_or(ModelError::Replay { step, reason: format!("dump holds only {} steps", self.dump.steps.len()) })
    }
}
