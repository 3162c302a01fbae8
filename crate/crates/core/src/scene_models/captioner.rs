use std::collections::HashMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::image::ImageGrid;
use crate::ot::{Distribution, TokenId};
use crate::rng::mix_seed;

use super::scene::{pattern_value, COLOR_RGB, OBJECT_PATTERNS};
use super::vocab::{CaptionVocab, TokenKind, AND, BOS, EOS};
use super::{ConditionalModel, ModelError, Result};

/// Mass spread uniformly over the emittable tokens so every one stays possible.
pub const CAPTION_FLOOR: f64 = 1e-3;
/// Template noise scale of the block classifier.
const MATCH_SIGMA: f64 = 0.1;
/// Slope of the posterior-to-strength squashing.
const STRENGTH_SLOPE: f64 = 8.0;
/// Strength at which an object counts as detected.
pub const DETECTION_THRESHOLD: f64 = 0.5;

/// Knobs of the toy captioner.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionerParams {
    /// Weight of the language prior against visual evidence.
    pub bias_beta: f64,
    /// Object-by-object association strengths in `[0, 1]`.
    pub cooccurrence: Vec<Vec<f64>>,
    /// Prior over the first object mentioned.
    pub object_freq: Vec<f64>,
    /// Standard deviation of the per-view logit noise on detection strength.
    pub evidence_noise: f64,
    /// Strength lost per halving of resolution.
    pub resolution_penalty: f64,
    /// Decay of the AND evidence per mention beyond the detected count.
    pub and_decay: f64,
    /// Nominal pixel size of one scene cell.
    pub cell_px: usize,
    pub seed: u64,
}

/// Two strongly coupled pairs, (cube, sphere) and (cone, torus), over a weak
/// uniform background.
pub fn default_cooccurrence() -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.05; 6]; 6];
    for (a, b) in [(0, 1), (2, 4)] {
        c[a][b] = 0.9;
        c[b][a] = 0.9;
    }
    for (i, row) in c.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    c
}

pub fn default_object_freq() -> Vec<f64> {
    vec![0.25, 0.10, 0.20, 0.15, 0.10, 0.20]
}

impl Default for CaptionerParams {
    fn default() -> Self {
        Self {
            bias_beta: 0.4,
            cooccurrence: default_cooccurrence(),
            object_freq: default_object_freq(),
            evidence_noise: 0.5,
            resolution_penalty: 0.1,
            and_decay: 0.5,
            cell_px: 4,
            seed: 0,
        }
    }
}

impl CaptionerParams {
    pub fn validate(&self, n_objects: usize) -> Result<()> {
        let bad = |msg: String| Err(ModelError::Params(msg));
        if !(0.0..=1.0).contains(&self.bias_beta) {
            return bad(format!("bias_beta {} outside [0, 1]", self.bias_beta));
        }
        if !(0.0..=1.0).contains(&self.resolution_penalty) {
            return bad(format!("resolution_penalty {} outside [0, 1]", self.resolution_penalty));
        }
        if !(0.0..=1.0).contains(&self.and_decay) {
            return bad(format!("and_decay {} outside [0, 1]", self.and_decay));
        }
        if !(self.evidence_noise >= 0.0 && self.evidence_noise.is_finite()) {
            return bad(format!("evidence_noise {} must be nonnegative", self.evidence_noise));
        }
        if self.cell_px < 2 {
            return bad(format!("cell_px {} must be at least 2", self.cell_px));
        }
        if self.cooccurrence.len() != n_objects || self.cooccurrence.iter().any(|r| r.len() != n_objects) {
            return bad(format!("cooccurrence must be {n_objects}x{n_objects}"));
        }
        if self.cooccurrence.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("cooccurrence entries must lie in [0, 1]".into());
        }
        if self.cooccurrence.iter().any(|r| r.iter().sum::<f64>() <= 0.0) {
            return bad("every cooccurrence row needs positive mass".into());
        }
        if self.object_freq.len() != n_objects
            || self.object_freq.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            || self.object_freq.iter().sum::<f64>() <= 0.0
        {
            return bad(format!("object_freq must be {n_objects} nonnegative weights with positive sum"));
        }
        Ok(())
    }
}

struct Template {
    /// `None` is the background.
    label: Option<(usize, usize)>,
    pixels: Vec<f64>,
}

/// Templates for one block scale: a nominal cell pooled down to `d` pixels.
struct Scale {
    d: usize,
    /// Multiplier applied to posteriors read at this scale.
    strength: f64,
    templates: Vec<Template>,
}

fn build_scale(cell_px: usize, d: usize, n_objects: usize, n_colors: usize, penalty: f64) -> Scale {
    let f = cell_px / d;
    let block = |object: usize, color: usize| -> Vec<f64> {
        let mut px = Vec::with_capacity(d * d * 3);
        for by in 0..d {
            for bx in 0..d {
                for c in 0..3 {
                    let mut sum = 0.0;
                    for dy in 0..f {
                        for dx in 0..f {
                            sum += pattern_value(object, color, cell_px, bx * f + dx, by * f + dy, c);
                        }
                    }
                    px.push(sum / (f * f) as f64);
                }
            }
        }
        px
    };
    let mut templates = vec![Template { label: None, pixels: vec![0.0; d * d * 3] }];
    for object in 0..n_objects {
        for color in 0..n_colors {
            templates.push(Template { label: Some((object, color)), pixels: block(object, color) });
        }
    }
    let strength = (1.0 - penalty).powf((cell_px as f64 / d as f64).log2());
    Scale { d, strength, templates }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Grammar position implied by a prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    ExpectObject,
    AfterObject,
}

/// A deterministic toy vision-language captioner.
///
/// It reads palette signatures from the views it is given (evidence) and
/// mixes them with object associations learned from language (prior):
/// `(1 - beta) * evidence + beta * prior`. Captions are object lists joined
/// by AND; colors are never emitted. The prompt is accepted for interface
/// compatibility and ignored.
pub struct ToyCaptioner {
    vocab: CaptionVocab,
    params: CaptionerParams,
    scales: Vec<Scale>,
    cache: Mutex<HashMap<u64, Vec<(ImageGrid, Vec<f64>)>>>,
}

impl std::fmt::Debug for ToyCaptioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyCaptioner").field("vocab", &self.vocab).field("params", &self.params).finish()
    }
}

impl ToyCaptioner {
    pub fn new(vocab: CaptionVocab, params: CaptionerParams) -> Result<Self> {
        params.validate(vocab.n_objects())?;
        if vocab.n_objects() > OBJECT_PATTERNS.len() || vocab.n_colors() > COLOR_RGB.len() {
            return Err(ModelError::Vocab("the palette covers six objects and three colors".into()));
        }
        let cell = params.cell_px;
        let scales = (1..=cell)
            .rev()
            .filter(|d| cell % d == 0)
            .map(|d| build_scale(cell, d, vocab.n_objects(), vocab.n_colors(), params.resolution_penalty))
            .collect();
        Ok(Self { vocab, params, scales, cache: Mutex::new(HashMap::new()) })
    }

    pub fn vocab(&self) -> &CaptionVocab {
        &self.vocab
    }

    pub fn params(&self) -> &CaptionerParams {
        &self.params
    }

    /// Per-object detection strength in `(0, 1)` read from one view.
    pub fn view_strengths(&self, view: &ImageGrid) -> Vec<f64> {
        let key = view.fingerprint();
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key).and_then(|bucket| {
            bucket.iter().find(|(img, _)| img == view).map(|(_, s)| s.clone())
        }) {
            return hit;
        }
        let strengths = self.compute_strengths(view, key);
        self.cache.lock().expect("cache lock").entry(key).or_default().push((view.clone(), strengths.clone()));
        strengths
    }

    fn compute_strengths(&self, view: &ImageGrid, key: u64) -> Vec<f64> {
        let n_obj = self.vocab.n_objects();
        let q = self.block_posteriors(view);
        (0..n_obj)
            .map(|o| {
                let z: f64 = if self.params.evidence_noise > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.params.seed, key, o as u64]));
                    StandardNormal.sample(&mut rng)
                } else {
                    0.0
                };
                sigmoid(STRENGTH_SLOPE * (q[o] - 0.5) + self.params.evidence_noise * z)
            })
            .collect()
    }

    /// Best block alignment over scales and offsets, then the per-object
    /// maximum block posterior, scaled by the resolution strength.
    fn block_posteriors(&self, view: &ImageGrid) -> Vec<f64> {
        let n_obj = self.vocab.n_objects();
        if view.channels() != 3 {
            return vec![0.0; n_obj];
        }
        let mut best: Option<(f64, &Scale, Vec<Vec<f64>>)> = None;
        for scale in &self.scales {
            let d = scale.d;
            for oy in 0..d {
                for ox in 0..d {
                    let (nx, ny) = ((view.width().saturating_sub(ox)) / d, (view.height().saturating_sub(oy)) / d);
                    if nx == 0 || ny == 0 {
                        continue;
                    }
                    let mut blocks = Vec::with_capacity(nx * ny);
                    let mut residual = 0.0;
                    for by in 0..ny {
                        for bx in 0..nx {
                            let values: Vec<f64> = (0..d * d * 3)
                                .map(|i| {
                                    let (pix, c) = (i / 3, i % 3);
                                    view.get(ox + bx * d + pix % d, oy + by * d + pix / d, c)
                                })
                                .collect();
                            let sse: Vec<f64> = scale
                                .templates
                                .iter()
                                .map(|t| t.pixels.iter().zip(&values).map(|(a, b)| (a - b) * (a - b)).sum())
                                .collect();
                            residual += sse.iter().copied().fold(f64::INFINITY, f64::min);
                            blocks.push(sse);
                        }
                    }
                    let score = residual / (nx * ny * d * d * 3) as f64;
                    if best.as_ref().map_or(true, |(s, _, _)| score < *s) {
                        best = Some((score, scale, blocks));
                    }
                }
            }
        }
        let mut q = vec![0.0; n_obj];
        let Some((_, scale, blocks)) = best else {
            return q;
        };
        for sse in &blocks {
            let logits: Vec<f64> = sse.iter().map(|e| -e / (2.0 * MATCH_SIGMA * MATCH_SIGMA)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut post = vec![0.0; n_obj];
            for (t, w) in scale.templates.iter().zip(&weights) {
                if let Some((o, _)) = t.label {
                    post[o] += w / total;
                }
            }
            for (qo, p) in q.iter_mut().zip(post) {
                *qo = qo.max(p);
            }
        }
        q.iter().map(|v| v * scale.strength).collect()
    }

    /// Detection strength per object, aggregated over views by maximum.
    pub fn strengths(&self, views: &[ImageGrid]) -> Vec<f64> {
        let mut s = vec![0.0f64; self.vocab.n_objects()];
        for view in views {
            for (acc, v) in s.iter_mut().zip(self.view_strengths(view)) {
                *acc = acc.max(v);
            }
        }
        s
    }

    fn read_prefix(&self, prefix: &[TokenId]) -> Result<(State, Vec<bool>)> {
        if prefix.first() != Some(&BOS) {
            return Err(ModelError::MalformedPrefix("prefix must start with BOS".into()));
        }
        let mut mentioned = vec![false; self.vocab.n_objects()];
        let mut state = State::ExpectObject;
        for (i, &t) in prefix.iter().enumerate().skip(1) {
            match self.vocab.kind(t) {
                None => return Err(ModelError::MalformedPrefix(format!("token {t} at position {i} is not in the vocabulary"))),
                Some(TokenKind::Bos) => return Err(ModelError::MalformedPrefix(format!("BOS repeated at position {i}"))),
                Some(TokenKind::Eos) => return Err(ModelError::MalformedPrefix(format!("EOS inside the prefix at position {i}"))),
                Some(TokenKind::Object(o)) => {
                    mentioned[o] = true;
                    state = State::AfterObject;
                }
                Some(TokenKind::And | TokenKind::Sep | TokenKind::Color(_)) => state = State::ExpectObject,
            }
        }
        Ok((state, mentioned))
    }

    fn evidence(&self, state: State, mentioned: &[bool], s: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.vocab.len()];
        let open = || (0..s.len()).filter(|&o| !mentioned[o]);
        let r = open().map(|o| s[o]).fold(0.0, f64::max);
        match state {
            State::ExpectObject => {
                for o in open() {
                    w[self.vocab.object_token(o)] = s[o];
                }
                w[EOS] = 1.0 - r;
            }
            State::AfterObject => {
                let n_mentioned = mentioned.iter().filter(|&&m| m).count();
                let n_detected = s.iter().filter(|&&v| v >= DETECTION_THRESHOLD).count();
                let surplus = n_mentioned.saturating_sub(n_detected) as i32;
                w[AND] = r * self.params.and_decay.powi(surplus);
                w[EOS] = 1.0 - w[AND];
            }
        }
        normalize(w)
    }

    fn prior(&self, state: State, mentioned: &[bool]) -> Vec<f64> {
        let mut w = vec![0.0; self.vocab.len()];
        let n = mentioned.len();
        let assoc = |o: usize| (0..n).filter(|&m| mentioned[m]).map(|m| self.params.cooccurrence[m][o]).fold(0.0, f64::max);
        let any_mentioned = mentioned.iter().any(|&m| m);
        match state {
            State::ExpectObject => {
                for o in (0..n).filter(|&o| !mentioned[o]) {
                    w[self.vocab.object_token(o)] = if any_mentioned { assoc(o) } else { self.params.object_freq[o] };
                }
                if w.iter().all(|&v| v == 0.0) {
                    w[EOS] = 1.0;
                }
            }
            State::AfterObject => {
                let a = (0..n).filter(|&o| !mentioned[o]).map(assoc).fold(0.0, f64::max);
                w[AND] = a;
                w[EOS] = 1.0 - a;
            }
        }
        normalize(w)
    }
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    w
}

impl ConditionalModel for ToyCaptioner {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_distribution(&self, views: &[ImageGrid], _prompt: &[TokenId], prefix: &[TokenId]) -> Result<Distribution> {
        if views.is_empty() {
            return Err(ModelError::EmptyViews);
        }
        let (state, mentioned) = self.read_prefix(prefix)?;
        let beta = self.params.bias_beta;
        let prior = self.prior(state, &mentioned);
        // A pure-prior model never looks at the views.
        let evidence = if beta < 1.0 {
            self.evidence(state, &mentioned, &self.strengths(views))
        } else {
            vec![0.0; self.vocab.len()]
        };
        let emittable = self.vocab.emittable();
        let floor = CAPTION_FLOOR / emittable.len() as f64;
        let mut probs: Vec<f64> =
            evidence.iter().zip(&prior).map(|(e, p)| (1.0 - CAPTION_FLOOR) * ((1.0 - beta) * e + beta * p)).collect();
        for id in emittable {
            probs[id] += floor;
        }
        Ok(Distribution::from_weights(probs, (0..self.vocab.len()).collect())?)
    }
}
