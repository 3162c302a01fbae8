use cofidec_core::image::ImageGrid;
use cofidec_core::scene_models::{
    parse_caption, pattern_value, render_scene, synthesize_feedback, CaptionVocab, CaptionerParams, ConditionalModel,
    Placement, Scene, ToyCaptioner, AND, BOS, EOS,
};
use cofidec_core::views::coarse_decompose;
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

fn scene(placements: Vec<Placement>) -> Scene {
    Scene::for_vocab(&vocab(), 4, 4, placements).unwrap()
}

fn put(x: usize, y: usize, object: usize, color: usize) -> Placement {
    Placement { x, y, object, color }
}

/// Reads back (object, color) pairs by exact comparison of every cell block
/// with every palette entry.
fn signatures(img: &ImageGrid, cell_px: usize) -> Vec<(usize, usize)> {
    let mut found = Vec::new();
    for cy in 0..img.height() / cell_px {
        for cx in 0..img.width() / cell_px {
            let matches = |o: usize, c: usize| {
                (0..cell_px * cell_px * 3).all(|i| {
                    let (p, ch) = (i / 3, i % 3);
                    let (px, py) = (p % cell_px, p / cell_px);
                    img.get(cx * cell_px + px, cy * cell_px + py, ch) == pattern_value(o, c, cell_px, px, py, ch)
                })
            };
            if let Some(sig) = (0..6).flat_map(|o| (0..3).map(move |c| (o, c))).find(|&(o, c)| matches(o, c)) {
                found.push(sig);
            }
        }
    }
    found.sort_unstable();
    found
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let mut cells: Vec<usize> = (0..16).collect();
    let count = rng.gen_range(1..=3);
    let mut placements = Vec::new();
    for i in 0..count {
        let pick = rng.gen_range(i..16);
        cells.swap(i, pick);
        placements.push(put(cells[i] % 4, cells[i] / 4, rng.gen_range(0..6), rng.gen_range(0..3)));
    }
    scene(placements)
}

#[test]
fn rendering_is_deterministic_per_seed() {
    let s = scene(vec![put(1, 1, 0, 0), put(3, 2, 4, 2)]);
    assert_eq!(render_scene(&s, 4, 0.1, 9).unwrap(), render_scene(&s, 4, 0.1, 9).unwrap());
    assert_ne!(render_scene(&s, 4, 0.1, 9).unwrap(), render_scene(&s, 4, 0.1, 10).unwrap());
}

#[test]
fn pure_evidence_names_the_single_object() {
    let c = captioner(0.0, 0.0);
    for object in 0..6 {
        let img = render_scene(&scene(vec![put(2, 1, object, 1)]), CELL, 0.0, 0).unwrap();
        let d = c.next_distribution(&[img], &[], &[BOS]).unwrap();
        assert_eq!(d.argmax(), vocab().object_token(object));
    }
}

#[test]
fn pure_prior_ignores_the_views() {
    let c = captioner(1.0, 0.5);
    let a = render_scene(&scene(vec![put(0, 0, 0, 0)]), CELL, 0.0, 0).unwrap();
    let b = render_scene(&scene(vec![put(3, 3, 5, 2), put(1, 0, 2, 1)]), CELL, 0.05, 3).unwrap();
    let cube = vocab().object_token(0);
    for prefix in [vec![BOS], vec![BOS, cube], vec![BOS, cube, AND]] {
        assert_eq!(c.next_distribution(&[a.clone()], &[], &prefix).unwrap(), c.next_distribution(&[b.clone()], &[], &prefix).unwrap());
    }
}

#[test]
fn the_prior_pulls_toward_associated_objects() {
    let img = render_scene(&scene(vec![put(1, 1, 0, 0)]), CELL, 0.0, 0).unwrap();
    let (cube, sphere) = (vocab().object_token(0), vocab().object_token(1));
    let prefix = [BOS, cube, AND];
    let biased = captioner(0.5, 0.0).next_distribution(&[img.clone()], &[], &prefix).unwrap();
    let grounded = captioner(0.0, 0.0).next_distribution(&[img], &[], &prefix).unwrap();
    assert!(biased.prob_of(sphere) > grounded.prob_of(sphere));
}

#[test]
fn absent_mass_grows_with_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let v = vocab();
    for trial in 0..30 {
        let s = random_scene(&mut rng);
        let img = render_scene(&s, CELL, 0.05, trial).unwrap();
        let first = v.object_token(s.placements()[0].object);
        for prefix in [vec![BOS], vec![BOS, first], vec![BOS, first, AND]] {
            let absent = |beta: f64| {
                let d = captioner(beta, 0.5).next_distribution(&[img.clone()], &[], &prefix).unwrap();
                (0..6).filter(|&o| !s.contains(o)).map(|o| d.prob_of(v.object_token(o))).sum::<f64>()
            };
            let masses: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&b| absent(b)).collect();
            assert!(masses.windows(2).all(|w| w[1] >= w[0] - 1e-12), "trial {trial}: {masses:?}");
        }
    }
}

#[test]
fn coarse_views_carry_less_evidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let v = vocab();
    let c = captioner(0.0, 0.0);
    for _ in 0..30 {
        let s = random_scene(&mut rng);
        let img = render_scene(&s, CELL, 0.0, 0).unwrap();
        let coarse: Vec<ImageGrid> = coarse_decompose(&img, (2, 2), 2).unwrap().into_iter().map(|p| p.pixels).collect();
        let truth = |views: &[ImageGrid]| {
            let d = c.next_distribution(views, &[], &[BOS]).unwrap();
            s.objects().iter().map(|&o| d.prob_of(v.object_token(o))).sum::<f64>()
        };
        assert!(truth(&coarse) <= truth(&[img]) + 1e-12);
    }
}

#[test]
fn captions_round_trip_through_pixels() {
    let v = vocab();
    let tok = |n: &str| v.id(n).unwrap();
    let caption = [BOS, tok("blue"), tok("torus"), AND, tok("green"), tok("cube"), AND, tok("pyramid"), EOS];
    let parsed = parse_caption(&caption, &v).unwrap();
    assert_eq!(parsed.warnings, 0);
    let img = synthesize_feedback(&caption, &v, 2).unwrap();
    assert_eq!(signatures(&img, 2), parsed.scene.signatures());
    assert_eq!(signatures(&img, 2), vec![(0, 1), (4, 2), (5, 0)]);

    // Scene to caption to pixels keeps every signature.
    let s = scene(vec![put(0, 3, 3, 2), put(2, 2, 1, 0)]);
    let mut words = vec![BOS];
    for (i, p) in s.placements().iter().enumerate() {
        if i > 0 {
            words.push(AND);
        }
        words.extend([v.color_token(p.color), v.object_token(p.object)]);
    }
    words.push(EOS);
    let original = render_scene(&s, 2, 0.0, 0).unwrap();
    assert_eq!(signatures(&synthesize_feedback(&words, &v, 2).unwrap(), 2), signatures(&original, 2));

    let blank = synthesize_feedback(&[BOS, EOS], &v, 2).unwrap();
    assert!(blank.pixels().iter().all(|&p| p == 0.0));
}

#[test]
fn one_object_caption_lights_one_block() {
    let v = vocab();
    let img = synthesize_feedback(&[BOS, v.object_token(2), EOS], &v, 3).unwrap();
    let lit: Vec<usize> = (0..img.width() / 3).filter(|&cx| (0..9).any(|i| img.get(cx * 3 + i % 3, i / 3, 0) > 0.0)).collect();
    assert_eq!(lit, vec![0]);
    assert_eq!(signatures(&img, 3), vec![(2, 0)]);
}

#[test]
fn model_calls_are_deterministic() {
    let s = scene(vec![put(1, 2, 2, 1), put(3, 0, 0, 2)]);
    let img = render_scene(&s, CELL, 0.08, 5).unwrap();
    let a = captioner(0.4, 0.7);
    let b = captioner(0.4, 0.7);
    let prefix = [BOS, vocab().object_token(2), AND];
    let first = a.next_distribution(&[img.clone()], &[], &prefix).unwrap();
    assert_eq!(first, a.next_distribution(&[img.clone()], &[], &prefix).unwrap());
    assert_eq!(first, b.next_distribution(&[img], &[], &prefix).unwrap());
    assert!((first.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(a.next_distribution(&[render_scene(&s, CELL, 0.0, 0).unwrap()], &[], &[BOS, EOS]).is_err());
}
