//! Decoding loops: plain autoregressive decoding and the coarse-to-fine
//! feedback pipeline whose per-step distribution is the barycenter of three
//! differently conditioned predictions.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fusion::{fuse_distributions, FusedStep, FusionConfig};
use crate::image::ImageGrid;
use crate::ot::{Distribution, GroundMetric, SolveStatus, TokenId};
use crate::rng::mix_seed;
use crate::scene_models::{ConditionalModel, LogitsDump};
use crate::views::{decompose, ViewConfig, ViewSet};

/// Default generation budget, as in the captioning setup being emulated.
pub const DEFAULT_MAX_NEW_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Views,
    Responses,
    Feedback,
    Decode,
    Fusion,
    Selection,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Views => "views",
            Stage::Responses => "responses",
            Stage::Feedback => "feedback",
            Stage::Decode => "decode",
            Stage::Fusion => "fusion",
            Stage::Selection => "selection",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeError {
    pub stage: Stage,
    pub step: Option<usize>,
    pub message: String,
}

impl DecodeError {
    fn new(stage: Stage, step: Option<usize>, err: impl fmt::Display) -> Self {
        Self { stage, step, message: err.to_string() }
    }
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(step) => write!(f, "{} stage, step {}: {}", self.stage, step, self.message),
            None => write!(f, "{} stage: {}", self.stage, self.message),
        }
    }
}

impl std::error::Error for DecodeError {}

pub type Result<T> = std::result::Result<T, DecodeError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub max_new_tokens: usize,
    pub selection: Selection,
    pub fusion: FusionConfig,
    pub views: ViewConfig,
    pub feedback_enabled: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            selection: Selection::Greedy,
            fusion: FusionConfig::default(),
            views: ViewConfig::default(),
            feedback_enabled: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be at least 1".into());
        }
        if let Selection::Sample { temperature, .. } = self.selection {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(format!("temperature must be positive, got {temperature}"));
            }
        }
        self.fusion.validate().map_err(|e| e.to_string())
    }
}

/// Greedy picks the most probable id (lowest id on ties). Sampling draws from
/// `p^(1/T)` with a generator seeded by `(seed, step)`.
pub fn select_token(d: &Distribution, selection: Selection, step: usize) -> TokenId {
    match selection {
        Selection::Greedy => d.argmax(),
        Selection::Sample { temperature, seed } => {
            let max = d.probs().iter().copied().filter(|&p| p > 0.0).map(f64::ln).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> =
                d.probs().iter().map(|&p| if p > 0.0 { ((p.ln() - max) / temperature).exp() } else { 0.0 }).collect();
            let total: f64 = weights.iter().sum();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, step as u64]));
            let mut u = rng.gen::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    if u < *w {
                        return d.support()[i];
                    }
                    u -= w;
                }
            }
            // Rounding left u past the last bucket.
            d.support()[weights.iter().rposition(|&w| w > 0.0).expect("a distribution has positive mass")]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStatus {
    /// EOS was emitted.
    Complete,
    /// The token budget ran out first.
    Truncated,
}

/// One emitted token and the distribution it was selected from.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Original, coarse-feedback and fine-feedback predictions; absent in
    /// plain decoding.
    pub sources: Option<[Distribution; 3]>,
    /// The distribution the token was selected from.
    pub fused: Distribution,
    pub per_source_cost: Option<[f64; 3]>,
    pub solver_status: Option<SolveStatus>,
    pub chosen: TokenId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeTrace {
    pub steps: Vec<StepRecord>,
    pub r0: Vec<TokenId>,
    pub rc: Vec<TokenId>,
    pub rf: Vec<TokenId>,
    pub v_c: Option<ImageGrid>,
    pub v_f: Option<ImageGrid>,
    /// The fine view list was empty and `rf` fell back to `r0`.
    pub fine_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// BOS first; EOS last when complete.
    pub tokens: Vec<TokenId>,
    pub status: DecodeStatus,
    pub trace: DecodeTrace,
}

/// Generic autoregressive loop; `next` returns the distribution to select from
/// plus any extra record fields.
fn autoregress<F>(bos: TokenId, eos: TokenId, cfg: &DecodeConfig, mut next: F) -> Result<(Vec<TokenId>, DecodeStatus, Vec<StepRecord>)>
where
    F: FnMut(usize, &[TokenId]) -> Result<StepRecord>,
{
    let mut tokens = vec![bos];
    let mut records = Vec::new();
    for step in 0..cfg.max_new_tokens {
        let mut record = next(step, &tokens)?;
        let chosen = select_token(&record.fused, cfg.selection, step);
        if record.fused.prob_of(chosen) <= 0.0 {
            return Err(DecodeError::new(Stage::Selection, Some(step), format!("token {chosen} has no mass")));
        }
        record.chosen = chosen;
        tokens.push(chosen);
        records.push(record);
        if chosen == eos {
            return Ok((tokens, DecodeStatus::Complete, records));
        }
    }
    Ok((tokens, DecodeStatus::Truncated, records))
}

fn check_config(cfg: &DecodeConfig) -> Result<()> {
    cfg.validate().map_err(|e| DecodeError::new(Stage::Decode, None, e))
}

/// Plain decoding: every token drawn from the model conditioned on `views`.
pub fn regular_decode(model: &dyn ConditionalModel, views: &[ImageGrid], prompt: &[TokenId], cfg: &DecodeConfig) -> Result<Decoded> {
    check_config(cfg)?;
    let (tokens, status, steps) = autoregress(model.bos(), model.eos(), cfg, |step, prefix| {
        let d = model.next_distribution(views, prompt, prefix).map_err(|e| DecodeError::new(Stage::Decode, Some(step), e))?;
        Ok(StepRecord { sources: None, fused: d, per_source_cost: None, solver_status: None, chosen: 0 })
    })?;
    Ok(Decoded { tokens, status, trace: DecodeTrace { steps, ..DecodeTrace::default() } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GranularResponses {
    pub r0: Vec<TokenId>,
    pub rc: Vec<TokenId>,
    pub rf: Vec<TokenId>,
    pub fine_fallback: bool,
}

/// Greedy responses conditioned on the original alone, on the coarse patches
/// and on the fine crops. With no fine crops `rf` repeats `r0`.
pub fn generate_granular_responses(
    model: &dyn ConditionalModel,
    views: &ViewSet,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<GranularResponses> {
    let greedy = DecodeConfig { selection: Selection::Greedy, ..cfg.clone() };
    let run = |images: &[ImageGrid]| {
        regular_decode(model, images, prompt, &greedy).map(|d| d.tokens).map_err(|e| DecodeError { stage: Stage::Responses, ..e })
    };
    let r0 = run(std::slice::from_ref(views.original()))?;
    let rc = run(&views.coarse_images())?;
    let fine = views.fine_images();
    let (rf, fine_fallback) = if fine.is_empty() { (r0.clone(), true) } else { (run(&fine)?, false) };
    Ok(GranularResponses { r0, rc, rf, fine_fallback })
}

/// Turns a caption into an image.
pub trait Synthesizer: Sync {
    fn synthesize(&self, tokens: &[TokenId]) -> std::result::Result<ImageGrid, String>;
}

impl<F> Synthesizer for F
where
    F: Fn(&[TokenId]) -> std::result::Result<ImageGrid, String> + Sync,
{
    fn synthesize(&self, tokens: &[TokenId]) -> std::result::Result<ImageGrid, String> {
        self(tokens)
    }
}

/// The full pipeline: decompose, draft three responses, render the coarse and
/// fine drafts, then decode with the barycenter of the predictions under the
/// original image and the two pseudo-images.
///
/// With `feedback_enabled = false` this is exactly [`regular_decode`] on the
/// original image.
pub fn cofidec_decode(
    model: &dyn ConditionalModel,
    synthesizer: &dyn Synthesizer,
    metric: &GroundMetric,
    image: &ImageGrid,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<Decoded> {
    check_config(cfg)?;
    if !cfg.feedback_enabled {
        return regular_decode(model, std::slice::from_ref(image), prompt, cfg);
    }
    if metric.size() < model.vocab_size() {
        let msg = format!("metric covers {} tokens, vocabulary has {}", metric.size(), model.vocab_size());
        return Err(DecodeError::new(Stage::Fusion, None, msg));
    }
    let (views, _) = decompose(image, &cfg.views).map_err(|e| DecodeError::new(Stage::Views, None, e))?;
    let responses = generate_granular_responses(model, &views, prompt, cfg)?;
    let render = |tokens: &[TokenId]| synthesizer.synthesize(tokens).map_err(|e| DecodeError::new(Stage::Feedback, None, e));
    let v_c = render(&responses.rc)?;
    let v_f = render(&responses.rf)?;

    let conditions = [std::slice::from_ref(image), std::slice::from_ref(&v_c), std::slice::from_ref(&v_f)];
    let (tokens, status, steps) = autoregress(model.bos(), model.eos(), cfg, |step, prefix| {
        let query = |views: &[ImageGrid]| {
            model.next_distribution(views, prompt, prefix).map_err(|e| DecodeError::new(Stage::Decode, Some(step), e))
        };
        let (p_v, (p_c, p_f)) = rayon::join(|| query(conditions[0]), || rayon::join(|| query(conditions[1]), || query(conditions[2])));
        fused_record(step, [p_v?, p_c?, p_f?], metric, &cfg.fusion)
    })?;

    let trace = DecodeTrace {
        steps,
        r0: responses.r0,
        rc: responses.rc,
        rf: responses.rf,
        v_c: Some(v_c),
        v_f: Some(v_f),
        fine_fallback: responses.fine_fallback,
    };
    Ok(Decoded { tokens, status, trace })
}

fn fused_record(step: usize, sources: [Distribution; 3], metric: &GroundMetric, cfg: &FusionConfig) -> Result<StepRecord> {
    let FusedStep { fused, per_source_cost, solver_status, .. } = fuse_distributions(&sources[0], &sources[1], &sources[2], metric, cfg)
        .map_err(|e| DecodeError::new(Stage::Fusion, Some(step), e))?;
    Ok(StepRecord { sources: Some(sources), fused, per_source_cost: Some(per_source_cost), solver_status: Some(solver_status), chosen: 0 })
}

/// Fuses every step of an externally recorded dump and picks the greedy token,
/// without feeding choices back.
pub fn fuse_replay(dump: &LogitsDump, metric: &GroundMetric, cfg: &FusionConfig) -> Result<Vec<StepRecord>> {
    dump.steps
        .iter()
        .enumerate()
        .map(|(step, triple)| {
            let mut record = fused_record(step, triple.clone(), metric, cfg)?;
            record.chosen = select_token(&record.fused, Selection::Greedy, step);
            Ok(record)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_selection() {
        let d = Distribution::dense(vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(select_token(&d, Selection::Greedy, 0), 1);
        let tie = Distribution::dense(vec![0.5, 0.5]).unwrap();
        assert_eq!(select_token(&tie, Selection::Greedy, 0), 0);
    }

    #[test]
    fn sampling_skips_zero_mass_and_is_seeded() {
        let d = Distribution::new(vec![0.0, 0.6, 0.4], vec![3, 5, 9]).unwrap();
        let sel = Selection::Sample { temperature: 1.0, seed: 4 };
        for step in 0..200 {
            let t = select_token(&d, sel, step);
            assert!(t == 5 || t == 9);
            assert_eq!(t, select_token(&d, sel, step));
        }
    }

    #[test]
    fn config_validation() {
        let bad = DecodeConfig { max_new_tokens: 0, ..DecodeConfig::default() };
        assert!(bad.validate().is_err());
        let cold = DecodeConfig { selection: Selection::Sample { temperature: 0.0, seed: 1 }, ..DecodeConfig::default() };
        assert!(cold.validate().is_err());
    }

    #[test]
    fn error_labels() {
        let e = DecodeError::new(Stage::Fusion, Some(3), "boom");
        assert_eq!(e.to_string(), "fusion stage, step 3: boom");
    }
}
