//! Caption hallucination metrics, binary object-presence probing and a
//! seeded runner comparing decoding arms on generated scenes.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::decoding::{cofidec_decode, regular_decode, DecodeConfig};
use crate::ot::{MetricKind, TokenId};
use crate::rng::mix_seed;
use crate::scene_models::{
    render_scene, synthesize_feedback, CaptionVocab, CaptionerParams, ModelError, Placement, Scene, ToyCaptioner, TokenKind,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("{captions} captions for {scenes} scenes")]
    LengthMismatch { captions: usize, scenes: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("caption {caption}: token {token} is not in the vocabulary")]
    UnknownToken { caption: usize, token: TokenId },
    #[error("scene has no objects to ask about")]
    NoPositives,
    #[error("scene holds every object, so no negative exists")]
    NoNegatives,
    #[error("questions per scene must be at least 1")]
    ZeroQuestions,
    #[error("object statistics: {0}")]
    Stats(String),
    #[error("answerer failed on scene {scene}: {reason}")]
    Answerer { scene: usize, reason: String },
    #[error("experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChairReport {
    pub chair_s: f64,
    pub chair_i: f64,
    pub recall: f64,
    pub avg_length: f64,
    pub n_captions: usize,
}

/// Distinct objects a caption mentions, with the content-token count.
fn mentions(caption: &[TokenId], vocab: &CaptionVocab, index: usize) -> Result<(Vec<usize>, usize)> {
    let mut objects = Vec::new();
    let mut content = 0;
    for &t in caption {
        match vocab.kind(t) {
            None => return Err(BenchError::UnknownToken { caption: index, token: t }),
            Some(TokenKind::Object(o)) => {
                content += 1;
                if !objects.contains(&o) {
                    objects.push(o);
                }
            }
            Some(TokenKind::Color(_)) => content += 1,
            Some(_) => {}
        }
    }
    Ok((objects, content))
}

/// Hallucination rates over captions, each object counted once per caption.
///
/// Recall averages over scenes that contain at least one object; it is 0 when
/// no scene does.
pub fn chair_metrics(captions: &[Vec<TokenId>], scenes: &[Scene], vocab: &CaptionVocab) -> Result<ChairReport> {
    if captions.len() != scenes.len() {
        return Err(BenchError::LengthMismatch { captions: captions.len(), scenes: scenes.len() });
    }
    if captions.is_empty() {
        return Err(BenchError::Empty);
    }
    let (mut hallucinated, mut total, mut bad_captions, mut length) = (0usize, 0usize, 0usize, 0usize);
    let (mut recall_sum, mut recall_n) = (0.0, 0usize);
    for (i, (caption, scene)) in captions.iter().zip(scenes).enumerate() {
        let (objects, content) = mentions(caption, vocab, i)?;
        let wrong = objects.iter().filter(|&&o| !scene.contains(o)).count();
        hallucinated += wrong;
        total += objects.len();
        bad_captions += usize::from(wrong > 0);
        length += content;
        let present = scene.objects();
        if !present.is_empty() {
            let hit = present.iter().filter(|o| objects.contains(o)).count();
            recall_sum += hit as f64 / present.len() as f64;
            recall_n += 1;
        }
    }
    let n = captions.len();
    Ok(ChairReport {
        chair_s: bad_captions as f64 / n as f64,
        chair_i: if total == 0 { 0.0 } else { hallucinated as f64 / total as f64 },
        recall: if recall_n == 0 { 0.0 } else { recall_sum / recall_n as f64 },
        avg_length: length as f64 / n as f64,
        n_captions: n,
    })
}

/// How negatives are drawn from the absent objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PopeSetup {
    Random,
    Popular,
    Adversarial,
}

impl PopeSetup {
    pub const ALL: [PopeSetup; 3] = [PopeSetup::Random, PopeSetup::Popular, PopeSetup::Adversarial];
}

impl fmt::Display for PopeSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PopeSetup::Random => "random",
            PopeSetup::Popular => "popular",
            PopeSetup::Adversarial => "adversarial",
        })
    }
}

impl FromStr for PopeSetup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(PopeSetup::Random),
            "popular" => Ok(PopeSetup::Popular),
            "adversarial" => Ok(PopeSetup::Adversarial),
            other => Err(format!("unknown probing setup '{other}'")),
        }
    }
}

/// Global object frequencies and pairwise association strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectStats {
    pub freq: Vec<f64>,
    pub cooccurrence: Vec<Vec<f64>>,
}

impl ObjectStats {
    pub fn validate(&self) -> Result<()> {
        let n = self.freq.len();
        if n == 0 || self.cooccurrence.len() != n || self.cooccurrence.iter().any(|r| r.len() != n) {
            return Err(BenchError::Stats(format!("need {n} frequencies and an {n}x{n} cooccurrence table")));
        }
        if self.freq.iter().chain(self.cooccurrence.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(BenchError::Stats("entries must be finite".into()));
        }
        Ok(())
    }

    pub fn n_objects(&self) -> usize {
        self.freq.len()
    }
}

/// `n` balanced (object, present) questions with
/// `n = min(k, present objects, absent objects)`. Positives come first.
/// Popular ranks absent objects by frequency, adversarial by their strongest
/// association with a present object then by frequency; ties go to the
/// lower object id.
pub fn pope_questions(scene: &Scene, setup: PopeSetup, k: usize, stats: &ObjectStats, seed: u64) -> Result<Vec<(usize, bool)>> {
    stats.validate()?;
    if k == 0 {
        return Err(BenchError::ZeroQuestions);
    }
    let present = scene.objects();
    if present.iter().any(|&o| o >= stats.n_objects()) {
        return Err(BenchError::Stats("scene object outside the statistics table".into()));
    }
    let absent: Vec<usize> = (0..stats.n_objects()).filter(|o| !present.contains(o)).collect();
    if present.is_empty() {
        return Err(BenchError::NoPositives);
    }
    if absent.is_empty() {
        return Err(BenchError::NoNegatives);
    }
    let n = k.min(present.len()).min(absent.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives = present.clone();
    positives.shuffle(&mut rng);
    positives.truncate(n);

    let rank = |key: &dyn Fn(usize) -> (f64, f64)| {
        let mut ranked = absent.clone();
        ranked.sort_by(|&a, &b| {
            let (ka, kb) = (key(a), key(b));
            kb.0.total_cmp(&ka.0).then(kb.1.total_cmp(&ka.1)).then(a.cmp(&b))
        });
        ranked
    };
    let negatives: Vec<usize> = match setup {
        PopeSetup::Random => {
            let mut pool = absent.clone();
            pool.shuffle(&mut rng);
            pool
        }
        PopeSetup::Popular => rank(&|o| (stats.freq[o], 0.0)),
        PopeSetup::Adversarial => {
            rank(&|o| (present.iter().map(|&p| stats.cooccurrence[p][o]).fold(f64::NEG_INFINITY, f64::max), stats.freq[o]))
        }
    };
    let mut questions: Vec<(usize, bool)> = positives.into_iter().map(|o| (o, true)).collect();
    questions.extend(negatives.into_iter().take(n).map(|o| (o, false)));
    Ok(questions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopeReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub setup: PopeSetup,
    pub n_questions: usize,
}

impl PopeReport {
    /// Metrics from a confusion matrix. Undefined ratios are reported as 0.
    pub fn from_counts(setup: PopeSetup, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let n = tp + fp + tn + fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { accuracy: ratio(tp + tn, n), precision, recall, f1, setup, n_questions: n }
    }
}

/// Asks `answerer(scene index, object)` every question of every scene. The
/// question seed of scene `i` is derived from `(seed, i)`.
pub fn pope_eval<A>(mut answerer: A, scenes: &[Scene], setup: PopeSetup, k: usize, stats: &ObjectStats, seed: u64) -> Result<PopeReport>
where
    A: FnMut(usize, usize) -> std::result::Result<bool, String>,
{
    if scenes.is_empty() {
        return Err(BenchError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (i, scene) in scenes.iter().enumerate() {
        for (object, truth) in pope_questions(scene, setup, k, stats, mix_seed(&[seed, i as u64]))? {
            let yes = answerer(i, object).map_err(|reason| BenchError::Answerer { scene: i, reason })?;
            match (yes, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    Ok(PopeReport::from_counts(setup, tp, fp, tn, fn_))
}

/// Random scenes: a uniform object count, objects drawn by frequency without
/// replacement, distinct uniform cells and uniform colors.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGenerator {
    pub grid: (usize, usize),
    pub count_range: (usize, usize),
    pub object_freq: Vec<f64>,
    pub n_colors: usize,
}

impl SceneGenerator {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.count_range;
        let cells = self.grid.0 * self.grid.1;
        let drawable = self.object_freq.iter().filter(|&&f| f > 0.0).count();
        if lo == 0 || lo > hi {
            return Err(BenchError::Spec(format!("object count range {lo}..={hi} is empty or starts at 0")));
        }
        if hi > cells || hi > drawable {
            return Err(BenchError::Spec(format!("{hi} objects do not fit {cells} cells and {drawable} drawable objects")));
        }
        if self.n_colors == 0 || self.object_freq.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(BenchError::Spec("colors and nonnegative object frequencies are required".into()));
        }
        Ok(())
    }

    pub fn generate(&self, vocab: &CaptionVocab, seed: u64) -> Result<Scene> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.gen_range(self.count_range.0..=self.count_range.1);
        let mut weights = self.object_freq.clone();
        let mut cells: Vec<usize> = (0..self.grid.0 * self.grid.1).collect();
        cells.shuffle(&mut rng);
        let mut placements = Vec::with_capacity(count);
        for &cell in cells.iter().take(count) {
            let object = WeightedIndex::new(&weights).expect("validated weights").sample(&mut rng);
            weights[object] = 0.0;
            let color = rng.gen_range(0..self.n_colors);
            placements.push(Placement { x: cell % self.grid.0, y: cell / self.grid.0, object, color });
        }
        Ok(Scene::for_vocab(vocab, self.grid.0, self.grid.1, placements)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmMode {
    Regular,
    CofiDec,
}

impl fmt::Display for ArmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArmMode::Regular => "regular",
            ArmMode::CofiDec => "cofidec",
        })
    }
}

impl FromStr for ArmMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "regular" => Ok(ArmMode::Regular),
            "cofidec" => Ok(ArmMode::CofiDec),
            other => Err(format!("unknown decoding mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub mode: ArmMode,
    pub decode: DecodeConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub n_scenes: usize,
    pub generator: SceneGenerator,
    /// Captioner settings; its `seed` is replaced by each run seed.
    pub captioner: CaptionerParams,
    pub render_noise: f64,
    pub metric: MetricKind,
    pub arms: Vec<Arm>,
    pub pope_setups: Vec<PopeSetup>,
    pub pope_k: usize,
    /// One full run per seed, driving scenes, render noise, evidence noise
    /// and question sampling.
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    /// Regular against CoFi-Dec with exact fusion on the cooccurrence-trap
    /// captioner.
    pub fn standard(n_scenes: usize, seed: u64) -> Self {
        let captioner = CaptionerParams::default();
        let regular = DecodeConfig { feedback_enabled: false, ..DecodeConfig::default() };
        let cofidec = DecodeConfig { fusion: crate::fusion::FusionConfig::exact(8), ..DecodeConfig::default() };
        Self {
            n_scenes,
            generator: SceneGenerator {
                grid: (4, 4),
                count_range: (1, 3),
                object_freq: captioner.object_freq.clone(),
                n_colors: 3,
            },
            captioner,
            render_noise: 0.05,
            metric: MetricKind::SquaredEuclidean,
            arms: vec![
                Arm { name: "regular".into(), mode: ArmMode::Regular, decode: regular },
                Arm { name: "cofidec".into(), mode: ArmMode::CofiDec, decode: cofidec },
            ],
            pope_setups: PopeSetup::ALL.to_vec(),
            pope_k: 3,
            seeds: vec![seed],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(BenchError::Spec("n_scenes must be at least 1".into()));
        }
        if self.arms.is_empty() || self.seeds.is_empty() {
            return Err(BenchError::Spec("at least one arm and one seed are required".into()));
        }
        if self.pope_k == 0 {
            return Err(BenchError::ZeroQuestions);
        }
        if !(self.render_noise >= 0.0 && self.render_noise.is_finite()) {
            return Err(BenchError::Spec("render_noise must be nonnegative".into()));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            if self.arms[..i].iter().any(|a| a.name == arm.name) {
                return Err(BenchError::Spec(format!("arm name '{}' repeated", arm.name)));
            }
            if arm.name.is_empty() || arm.name.chars().any(|c| c.is_whitespace() || "[]/=#".contains(c)) {
                return Err(BenchError::Spec(format!("arm name '{}' must be a plain word", arm.name)));
            }
            arm.decode.validate().map_err(|e| BenchError::Spec(format!("arm '{}': {e}", arm.name)))?;
        }
        self.generator.validate()
    }

    /// Frequencies from the scene generator, associations from the captioner.
    pub fn object_stats(&self) -> ObjectStats {
        ObjectStats { freq: self.generator.object_freq.clone(), cooccurrence: self.captioner.cooccurrence.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub name: String,
    pub chair: Option<ChairReport>,
    pub pope: Vec<PopeReport>,
    /// Scenes whose decode failed; they are left out of the metrics.
    pub failures: usize,
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub runs: Vec<SeedRun>,
}

impl ExperimentReport {
    /// `(arm, metric) -> mean/std` across seeds, for metrics every seed has.
    pub fn summary(&self) -> Vec<(String, String, MeanStd)> {
        let mut out = Vec::new();
        for (a, arm) in self.spec.arms.iter().enumerate() {
            let rows: Vec<Vec<(String, f64)>> = self.runs.iter().map(|r| metric_rows(&r.arms[a])).collect();
            for (m, (name, _)) in rows[0].iter().enumerate() {
                if rows.iter().all(|r| r.get(m).map(|x| &x.0) == Some(name)) {
                    let values: Vec<f64> = rows.iter().map(|r| r[m].1).collect();
                    out.push((arm.name.clone(), name.clone(), MeanStd::of(&values)));
                }
            }
        }
        out
    }
}

/// Flat `(suite.metric, value)` list of one arm result.
pub fn metric_rows(arm: &ArmResult) -> Vec<(String, f64)> {
    let mut rows = Vec::new();
    if let Some(c) = arm.chair {
        rows.extend([
            ("chair.chair_s".to_string(), c.chair_s),
            ("chair.chair_i".to_string(), c.chair_i),
            ("chair.recall".to_string(), c.recall),
            ("chair.avg_length".to_string(), c.avg_length),
        ]);
    }
    for p in &arm.pope {
        let s = format!("pope_{}", p.setup);
        rows.extend([
            (format!("{s}.accuracy"), p.accuracy),
            (format!("{s}.precision"), p.precision),
            (format!("{s}.recall"), p.recall),
            (format!("{s}.f1"), p.f1),
        ]);
    }
    rows.push(("failures".to_string(), arm.failures as f64));
    rows
}

fn run_seed(spec: &ExperimentSpec, vocab: &CaptionVocab, seed: u64) -> Result<SeedRun> {
    let params = CaptionerParams { seed, ..spec.captioner.clone() };
    let model = ToyCaptioner::new(vocab.clone(), params)?;
    let cell_px = spec.captioner.cell_px;
    let metric = vocab.ground_metric(spec.metric)?;
    let synth = |tokens: &[TokenId]| synthesize_feedback(tokens, vocab, cell_px).map_err(|e| e.to_string());
    let scenes: Vec<Scene> =
        (0..spec.n_scenes).map(|i| spec.generator.generate(vocab, mix_seed(&[seed, 0x5ce4e, i as u64]))).collect::<Result<_>>()?;
    let stats = spec.object_stats();

    let mut arms = Vec::with_capacity(spec.arms.len());
    for arm in &spec.arms {
        let captions: Vec<std::result::Result<Vec<TokenId>, String>> = scenes
            .par_iter()
            .enumerate()
            .map(|(i, scene)| {
                let img = render_scene(scene, cell_px, spec.render_noise, mix_seed(&[seed, 0x4e0153, i as u64])).map_err(|e| e.to_string())?;
                let out = match arm.mode {
                    ArmMode::Regular => regular_decode(&model, std::slice::from_ref(&img), &[], &arm.decode),
                    ArmMode::CofiDec => cofidec_decode(&model, &synth, &metric, &img, &[], &arm.decode),
                };
                out.map(|d| d.tokens).map_err(|e| e.to_string())
            })
            .collect();
        let first_failure = captions.iter().enumerate().find_map(|(i, c)| c.as_ref().err().map(|e| format!("scene {i}: {e}")));
        let kept: Vec<(usize, &Vec<TokenId>)> = captions.iter().enumerate().filter_map(|(i, c)| c.as_ref().ok().map(|c| (i, c))).collect();
        let failures = spec.n_scenes - kept.len();
        let ok_scenes: Vec<Scene> = kept.iter().map(|(i, _)| scenes[*i].clone()).collect();
        let ok_captions: Vec<Vec<TokenId>> = kept.iter().map(|(_, c)| (*c).clone()).collect();
        let (chair, pope) = if kept.is_empty() {
            (None, Vec::new())
        } else {
            let chair = chair_metrics(&ok_captions, &ok_scenes, vocab)?;
            let mut pope = Vec::new();
            for &setup in &spec.pope_setups {
                let answer = |i: usize, object: usize| Ok(ok_captions[i].contains(&vocab.object_token(object)));
                pope.push(pope_eval(answer, &ok_scenes, setup, spec.pope_k, &stats, mix_seed(&[seed, 0x90be]))?);
            }
            (Some(chair), pope)
        };
        arms.push(ArmResult { name: arm.name.clone(), chair, pope, failures, first_failure });
    }
    Ok(SeedRun { seed, arms })
}

/// Runs every arm on the same generated scenes, once per seed. Scenes decode
/// in parallel; results are gathered in scene order, so reports do not depend
/// on scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let vocab = CaptionVocab::standard();
    if spec.generator.object_freq.len() != vocab.n_objects() {
        return Err(BenchError::Spec(format!("object_freq needs {} entries", vocab.n_objects())));
    }
    let runs = spec.seeds.iter().map(|&seed| run_seed(spec, &vocab, seed)).collect::<Result<_>>()?;
    Ok(ExperimentReport { spec: spec.clone(), runs })
}
