use crate::ot::{build_ground_metric, GroundMetric, MetricKind, TokenId};

use super::{ModelError, Result};

pub const OBJECT_NAMES: [&str; 6] = ["cube", "sphere", "cone", "cylinder", "torus", "pyramid"];
pub const COLOR_NAMES: [&str; 3] = ["red", "green", "blue"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Bos,
    Eos,
    And,
    Sep,
    Color(usize),
    Object(usize),
}

/// Caption tokens and their embeddings.
///
/// Ids are laid out as `BOS EOS AND SEP`, then colors, then objects.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionVocab {
    names: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    n_colors: usize,
    n_objects: usize,
}

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const AND: TokenId = 2;
pub const SEP: TokenId = 3;
const N_STRUCTURAL: usize = 4;

impl CaptionVocab {
    /// Three colors and six objects. Each embedding is a scaled one-hot plus a
    /// group indicator, so tokens of one kind sit closer to each other than to
    /// tokens of another kind.
    pub fn standard() -> Self {
        Self::with_names(&COLOR_NAMES, &OBJECT_NAMES)
    }

    pub fn with_names(colors: &[&str], objects: &[&str]) -> Self {
        let mut names: Vec<String> = ["BOS", "EOS", "AND", "SEP"].iter().map(|s| s.to_string()).collect();
        names.extend(colors.iter().map(|s| s.to_string()));
        names.extend(objects.iter().map(|s| s.to_string()));
        let n = names.len();
        let group = |id: usize| {
            if id < N_STRUCTURAL {
                0
            } else if id < N_STRUCTURAL + colors.len() {
                1
            } else {
                2
            }
        };
        let embeddings = (0..n)
            .map(|id| {
                let mut e = vec![0.0; n + 3];
                e[id] = std::f64::consts::FRAC_1_SQRT_2;
                e[n + group(id)] = 0.5;
                e
            })
            .collect();
        Self { names, embeddings, n_colors: colors.len(), n_objects: objects.len() }
    }

    /// Replaces the embeddings, keeping the token layout.
    pub fn with_embeddings(mut self, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if embeddings.len() != self.names.len() {
            return Err(ModelError::Vocab(format!("expected {} embeddings, got {}", self.names.len(), embeddings.len())));
        }
        let dim = embeddings[0].len();
        if dim == 0 || embeddings.iter().any(|e| e.len() != dim || e.iter().any(|v| !v.is_finite())) {
            return Err(ModelError::Vocab("embeddings must be finite and of equal nonzero dimension".into()));
        }
        self.embeddings = embeddings;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn n_colors(&self) -> usize {
        self.n_colors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: TokenId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<TokenId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn color_token(&self, color: usize) -> TokenId {
        N_STRUCTURAL + color
    }

    pub fn object_token(&self, object: usize) -> TokenId {
        N_STRUCTURAL + self.n_colors + object
    }

    pub fn object_names(&self) -> Vec<&str> {
        (0..self.n_objects).map(|o| self.names[self.object_token(o)].as_str()).collect()
    }

    pub fn color_names(&self) -> Vec<&str> {
        (0..self.n_colors).map(|c| self.names[self.color_token(c)].as_str()).collect()
    }

    pub fn kind(&self, id: TokenId) -> Option<TokenKind> {
        match id {
            BOS => Some(TokenKind::Bos),
            EOS => Some(TokenKind::Eos),
            AND => Some(TokenKind::And),
            SEP => Some(TokenKind::Sep),
            _ if id < N_STRUCTURAL + self.n_colors => Some(TokenKind::Color(id - N_STRUCTURAL)),
            _ if id < self.len() => Some(TokenKind::Object(id - N_STRUCTURAL - self.n_colors)),
            _ => None,
        }
    }

    /// Object index of `id`, if it is an object token.
    pub fn object_of(&self, id: TokenId) -> Option<usize> {
        match self.kind(id) {
            Some(TokenKind::Object(o)) => Some(o),
            _ => None,
        }
    }

    /// Tokens a caption can meaningfully emit: EOS, AND and the objects.
    pub fn emittable(&self) -> Vec<TokenId> {
        let mut ids = vec![EOS, AND];
        ids.extend((0..self.n_objects).map(|o| self.object_token(o)));
        ids
    }

    pub fn ground_metric(&self, kind: MetricKind) -> Result<GroundMetric> {
        Ok(build_ground_metric(&self.embeddings, kind)?)
    }
}
