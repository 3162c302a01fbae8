use cofidec_core::decoding::{
    cofidec_decode, generate_granular_responses, regular_decode, select_token, DecodeConfig, DecodeStatus, Selection, Stage,
};
use cofidec_core::fusion::FusionConfig;
use cofidec_core::image::ImageGrid;
use cofidec_core::ot::{Distribution, MetricKind, TokenId};
use cofidec_core::scene_models::{
    render_scene, synthesize_feedback, CaptionVocab, CaptionerParams, ConditionalModel, ModelError, Placement, Scene,
    ToyCaptioner, AND, BOS, EOS,
};
use cofidec_core::views::{decompose, ViewConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cell size the default captioner expects.
const CELL: usize = 4;

fn vocab() -> CaptionVocab {
    CaptionVocab::standard()
}

fn captioner(beta: f64, noise: f64) -> ToyCaptioner {
    let params = CaptionerParams { bias_beta: beta, evidence_noise: noise, ..CaptionerParams::default() };
    ToyCaptioner::new(vocab(), params).unwrap()
}

fn synth(tokens: &[TokenId]) -> Result<ImageGrid, String> {
    synthesize_feedback(tokens, &vocab(), CELL).map_err(|e| e.to_string())
}

fn put(x: usize, y: usize, object: usize, color: usize) -> Placement {
    Placement { x, y, object, color }
}

fn scene_image(placements: Vec<Placement>, noise: f64, seed: u64) -> ImageGrid {
    render_scene(&Scene::for_vocab(&vocab(), 4, 4, placements).unwrap(), CELL, noise, seed).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng) -> ImageGrid {
    let mut cells: Vec<usize> = (0..16).collect();
    let count = rng.gen_range(1..=4);
    let mut placements = Vec::new();
    for i in 0..count {
        let pick = rng.gen_range(i..16);
        cells.swap(i, pick);
        placements.push(put(cells[i] % 4, cells[i] / 4, rng.gen_range(0..6), rng.gen_range(0..3)));
    }
    scene_image(placements, 0.05, rng.gen())
}

/// Total variation over the whole vocabulary, whatever the supports.
fn tv(a: &Distribution, b: &Distribution) -> f64 {
    0.5 * (0..13).map(|t| (a.prob_of(t) - b.prob_of(t)).abs()).sum::<f64>()
}

/// Returns a fixed distribution whatever it is shown.
struct Constant(Distribution);

impl ConditionalModel for Constant {
    fn vocab_size(&self) -> usize {
        13
    }

    fn next_distribution(&self, _: &[ImageGrid], _: &[TokenId], _: &[TokenId]) -> Result<Distribution, ModelError> {
        Ok(self.0.clone())
    }
}

/// Fails once the prefix reaches a given length.
struct FailsAt(usize);

impl ConditionalModel for FailsAt {
    fn vocab_size(&self) -> usize {
        13
    }

    fn next_distribution(&self, _: &[ImageGrid], _: &[TokenId], prefix: &[TokenId]) -> Result<Distribution, ModelError> {
        if prefix.len() > self.0 {
            return Err(ModelError::Params("scripted failure".into()));
        }
        Ok(Distribution::dirac(AND, (0..13).collect()).unwrap())
    }
}

#[test]
fn hot_sampling_is_uniform() {
    let d = Distribution::dense(vec![0.05, 0.6, 0.3, 0.05]).unwrap();
    let sel = Selection::Sample { temperature: 1e6, seed: 17 };
    let draws = 100_000;
    let mut counts = [0usize; 4];
    for step in 0..draws {
        counts[select_token(&d, sel, step)] += 1;
    }
    for c in counts {
        let freq = c as f64 / draws as f64;
        assert!((freq - 0.25).abs() <= 0.02 * 0.25, "{counts:?}");
    }
}

#[test]
fn immediate_eos_and_budget() {
    let img = ImageGrid::filled(8, 8, 3, 0.0).unwrap();
    let cfg = DecodeConfig::default();
    let stop = regular_decode(&Constant(Distribution::dirac(EOS, (0..13).collect()).unwrap()), &[img.clone()], &[], &cfg).unwrap();
    assert_eq!(stop.tokens, vec![BOS, EOS]);
    assert_eq!(stop.status, DecodeStatus::Complete);

    let short = DecodeConfig { max_new_tokens: 3, ..DecodeConfig::default() };
    let run = regular_decode(&Constant(Distribution::dirac(AND, (0..13).collect()).unwrap()), &[img], &[], &short).unwrap();
    assert_eq!(run.tokens, vec![BOS, AND, AND, AND]);
    assert_eq!(run.status, DecodeStatus::Truncated);
    assert_eq!(run.trace.steps.len(), 3);
}

#[test]
fn model_failures_carry_the_step() {
    let img = ImageGrid::filled(8, 8, 3, 0.0).unwrap();
    let err = regular_decode(&FailsAt(3), &[img], &[], &DecodeConfig::default()).unwrap_err();
    assert_eq!((err.stage, err.step), (Stage::Decode, Some(3)));
}

#[test]
fn grounded_captioner_names_the_object() {
    let c = captioner(0.0, 0.0);
    let v = vocab();
    for object in 0..6 {
        let img = scene_image(vec![put(1, 2, object, 2)], 0.0, 0);
        let out = regular_decode(&c, &[img], &[], &DecodeConfig::default()).unwrap();
        assert_eq!(out.tokens, vec![BOS, v.object_token(object), EOS]);
    }
}

#[test]
fn identical_evidence_gives_identical_responses() {
    let img = scene_image(vec![put(0, 0, 0, 0), put(2, 3, 3, 1)], 0.0, 0);
    let (views, _) = decompose(&img, &ViewConfig::default()).unwrap();
    let r = generate_granular_responses(&captioner(1.0, 0.5), &views, &[], &DecodeConfig::default()).unwrap();
    assert_eq!(r.r0, r.rc);
    assert_eq!(r.r0, r.rf);
    assert!(!r.fine_fallback);
}

#[test]
fn pooling_collisions_split_the_coarse_and_fine_drafts() {
    // Pooling a whole cell to one pixel makes sphere and cone identical; the
    // fine crop keeps them apart.
    let v = vocab();
    let c = captioner(0.0, 0.0);
    let img = scene_image(vec![put(1, 1, 1, 0)], 0.0, 0);
    let (views, _) = decompose(&img, &ViewConfig { downsample: CELL, ..ViewConfig::default() }).unwrap();
    let r = generate_granular_responses(&c, &views, &[], &DecodeConfig::default()).unwrap();
    assert_eq!(r.rf, vec![BOS, v.object_token(1), EOS]);
    assert_ne!(r.rc, r.rf);
    assert!(!r.rc.contains(&v.object_token(1)) || r.rc.contains(&v.object_token(2)), "{:?}", r.rc);
}

#[test]
fn empty_fine_list_falls_back_to_the_original_draft() {
    let img = scene_image(vec![put(3, 0, 4, 1)], 0.0, 0);
    let cfg = ViewConfig { fine_count: 0, ..ViewConfig::default() };
    let (views, _) = decompose(&img, &cfg).unwrap();
    let r = generate_granular_responses(&captioner(0.2, 0.3), &views, &[], &DecodeConfig::default()).unwrap();
    assert!(r.fine_fallback);
    assert_eq!(r.rf, r.r0);
}

#[test]
fn view_blind_models_decode_as_usual() {
    let metric = vocab().ground_metric(MetricKind::SquaredEuclidean).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for fusion in [FusionConfig::exact(8), FusionConfig::default()] {
        let cfg = DecodeConfig { fusion, ..DecodeConfig::default() };
        for _ in 0..10 {
            let img = random_image(&mut rng);
            let model = captioner(1.0, 0.5);
            let plain = regular_decode(&model, &[img.clone()], &[], &cfg).unwrap();
            let fused = cofidec_decode(&model, &synth, &metric, &img, &[], &cfg).unwrap();
            assert_eq!(plain.tokens, fused.tokens);
            for (a, b) in plain.trace.steps.iter().zip(&fused.trace.steps) {
                assert!(tv(&a.fused, &b.fused) <= 0.02);
            }
        }
    }
}

#[test]
fn switching_feedback_off_is_plain_decoding() {
    let metric = vocab().ground_metric(MetricKind::SquaredEuclidean).unwrap();
    let cfg = DecodeConfig { feedback_enabled: false, fusion: FusionConfig::exact(8), ..DecodeConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let img = random_image(&mut rng);
        let model = captioner(0.4, 0.5);
        let plain = regular_decode(&model, &[img.clone()], &[], &cfg).unwrap();
        assert_eq!(plain, cofidec_decode(&model, &synth, &metric, &img, &[], &cfg).unwrap());
    }
}

#[test]
fn traces_are_complete_and_deterministic() {
    let metric = vocab().ground_metric(MetricKind::SquaredEuclidean).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (i, fusion) in [FusionConfig::exact(8), FusionConfig::default()].into_iter().enumerate() {
        let selection = if i == 0 { Selection::Greedy } else { Selection::Sample { temperature: 0.7, seed: 11 } };
        let cfg = DecodeConfig { fusion, selection, max_new_tokens: 5, ..DecodeConfig::default() };
        for _ in 0..8 {
            let img = random_image(&mut rng);
            let model = captioner(0.4, 0.5);
            let out = cofidec_decode(&model, &synth, &metric, &img, &[], &cfg).unwrap();
            assert_eq!(out.trace.steps.len(), out.tokens.len() - 1);
            assert!(out.tokens.len() - 1 <= cfg.max_new_tokens);
            for (step, record) in out.trace.steps.iter().enumerate() {
                assert_eq!(record.chosen, out.tokens[step + 1]);
                assert!(record.fused.prob_of(record.chosen) > 0.0);
                assert!(record.sources.is_some() && record.per_source_cost.is_some());
            }
            assert_eq!(out.trace.r0.first(), Some(&BOS));
            assert_eq!(out.trace.v_c.as_ref(), Some(&synth(&out.trace.rc).unwrap()));
            let again = cofidec_decode(&captioner(0.4, 0.5), &synth, &metric, &img, &[], &cfg).unwrap();
            assert_eq!(out, again);
        }
    }
}

#[test]
fn failures_name_their_stage() {
    let metric = vocab().ground_metric(MetricKind::SquaredEuclidean).unwrap();
    let model = captioner(0.4, 0.5);
    let img = scene_image(vec![put(0, 1, 2, 0)], 0.0, 0);
    let cfg = DecodeConfig::default();

    let broken = |_: &[TokenId]| -> Result<ImageGrid, String> { Err("renderer offline".into()) };
    assert_eq!(cofidec_decode(&model, &broken, &metric, &img, &[], &cfg).unwrap_err().stage, Stage::Feedback);

    let bad_views = DecodeConfig { views: ViewConfig { grid: (3, 3), downsample: 4, ..ViewConfig::default() }, ..cfg.clone() };
    assert_eq!(cofidec_decode(&model, &synth, &metric, &img, &[], &bad_views).unwrap_err().stage, Stage::Views);

    let small = cofidec_core::ot::GroundMetric::line(4, 2).unwrap();
    assert_eq!(cofidec_decode(&model, &synth, &small, &img, &[], &cfg).unwrap_err().stage, Stage::Fusion);

    let flaky = FailsAt(1);
    assert_eq!(cofidec_decode(&flaky, &synth, &metric, &img, &[], &cfg).unwrap_err().stage, Stage::Responses);
}
