use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::image::ImageGrid;
use crate::ot::TokenId;

use super::vocab::{CaptionVocab, TokenKind};
use super::{ModelError, Result};

/// Quadrant intensities (top-left, top-right, bottom-left, bottom-right) of
/// each object's cell pattern. Averaged over a whole cell, sphere and cone
/// coincide, as do cylinder and torus.
pub const OBJECT_PATTERNS: [[f64; 4]; 6] = [
    [1.0, 0.6, 0.6, 1.0],
    [0.4, 1.0, 1.0, 0.4],
    [1.0, 0.4, 0.4, 1.0],
    [1.0, 1.0, 0.3, 0.3],
    [0.3, 0.3, 1.0, 1.0],
    [0.2, 1.0, 0.2, 1.0],
];

pub const COLOR_RGB: [[f64; 3]; 3] = [[0.9, 0.2, 0.2], [0.2, 0.9, 0.2], [0.2, 0.2, 0.9]];

/// Cells per row of the canonical layout used when a caption becomes a scene.
pub const CANONICAL_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placement {
    pub x: usize,
    pub y: usize,
    pub object: usize,
    pub color: usize,
}

/// Ground-truth layout: at most one object per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    grid_w: usize,
    grid_h: usize,
    placements: Vec<Placement>,
    object_names: Vec<String>,
    color_names: Vec<String>,
}

impl Scene {
    pub fn new(
        grid_w: usize,
        grid_h: usize,
        placements: Vec<Placement>,
        object_names: Vec<String>,
        color_names: Vec<String>,
    ) -> Result<Self> {
        if grid_w == 0 || grid_h == 0 {
            return Err(ModelError::Scene(format!("grid {grid_w}x{grid_h} must be nonempty")));
        }
        for (i, p) in placements.iter().enumerate() {
            if p.x >= grid_w || p.y >= grid_h {
                return Err(ModelError::Scene(format!("placement at ({}, {}) is outside the grid", p.x, p.y)));
            }
            if p.object >= object_names.len() || p.color >= color_names.len() {
                return Err(ModelError::Scene(format!("placement at ({}, {}) has an unknown object or color", p.x, p.y)));
            }
            if placements[..i].iter().any(|q| q.x == p.x && q.y == p.y) {
                return Err(ModelError::Scene(format!("cell ({}, {}) holds two objects", p.x, p.y)));
            }
        }
        Ok(Self { grid_w, grid_h, placements, object_names, color_names })
    }

    /// A scene over the vocabulary's object and color names.
    pub fn for_vocab(vocab: &CaptionVocab, grid_w: usize, grid_h: usize, placements: Vec<Placement>) -> Result<Self> {
        let objects = vocab.object_names().into_iter().map(String::from).collect();
        let colors = vocab.color_names().into_iter().map(String::from).collect();
        Self::new(grid_w, grid_h, placements, objects, colors)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_w, self.grid_h)
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn object_names(&self) -> &[String] {
        &self.object_names
    }

    pub fn color_names(&self) -> &[String] {
        &self.color_names
    }

    /// Distinct objects present, ascending.
    pub fn objects(&self) -> Vec<usize> {
        let mut objs: Vec<usize> = self.placements.iter().map(|p| p.object).collect();
        objs.sort_unstable();
        objs.dedup();
        objs
    }

    pub fn contains(&self, object: usize) -> bool {
        self.placements.iter().any(|p| p.object == object)
    }

    /// Sorted (object, color) pairs, one per placement.
    pub fn signatures(&self) -> Vec<(usize, usize)> {
        let mut s: Vec<(usize, usize)> = self.placements.iter().map(|p| (p.object, p.color)).collect();
        s.sort_unstable();
        s
    }
}

/// Value of pixel `(px, py)` inside a `cell_px` cell holding `object` in `color`.
pub fn pattern_value(object: usize, color: usize, cell_px: usize, px: usize, py: usize, channel: usize) -> f64 {
    let half = cell_px / 2;
    let quadrant = usize::from(px >= half) + 2 * usize::from(py >= half);
    OBJECT_PATTERNS[object][quadrant] * COLOR_RGB[color][channel]
}

/// Renders each cell as a `cell_px` square block of its object's pattern,
/// background 0, plus seeded Gaussian noise clamped to `[0, 1]`.
pub fn render_scene(scene: &Scene, cell_px: usize, noise_sd: f64, seed: u64) -> Result<ImageGrid> {
    if cell_px < 2 {
        return Err(ModelError::Scene(format!("cell_px must be at least 2, got {cell_px}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(ModelError::Scene(format!("noise_sd must be nonnegative, got {noise_sd}")));
    }
    if scene.object_names.len() > OBJECT_PATTERNS.len() || scene.color_names.len() > COLOR_RGB.len() {
        return Err(ModelError::Scene("the palette covers six objects and three colors".into()));
    }
    let (w, h) = (scene.grid_w * cell_px, scene.grid_h * cell_px);
    let mut img = ImageGrid::filled(w, h, 3, 0.0)?;
    for p in &scene.placements {
        for py in 0..cell_px {
            for px in 0..cell_px {
                for c in 0..3 {
                    img.set(p.x * cell_px + px, p.y * cell_px + py, c, pattern_value(p.object, p.color, cell_px, px, py, c));
                }
            }
        }
    }
    if noise_sd > 0.0 {
        let normal = Normal::new(0.0, noise_sd).expect("finite nonnegative sd");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = img.get(x, y, c) + normal.sample(&mut rng);
                    img.set(x, y, c, v);
                }
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCaption {
    pub scene: Scene,
    /// Tokens or structure that could not be placed.
    pub warnings: usize,
}

/// Reads `(color? object)` phrases separated by AND or SEP and lays them out
/// row-major on a grid [`CANONICAL_WIDTH`] cells wide. A phrase without a
/// color takes the first color.
pub fn parse_caption(tokens: &[TokenId], vocab: &CaptionVocab) -> Result<ParsedCaption> {
    let mut phrases: Vec<(usize, usize)> = Vec::new();
    let mut warnings = 0;
    let mut pending_color: Option<usize> = None;
    // True right after an object, until a separator arrives.
    let mut need_separator = false;
    let mut body = tokens;
    match body.first().map(|&t| vocab.kind(t)) {
        Some(Some(TokenKind::Bos)) => body = &body[1..],
        Some(_) => warnings += 1,
        None => {}
    }
    let mut ended = false;
    for &t in body {
        if ended {
            warnings += 1;
            continue;
        }
        match vocab.kind(t) {
            None => return Err(ModelError::Vocab(format!("token id {t} is outside the vocabulary"))),
            Some(TokenKind::Eos) => ended = true,
            Some(TokenKind::And | TokenKind::Sep) => {
                if !need_separator {
                    warnings += 1;
                }
                if pending_color.take().is_some() {
                    warnings += 1;
                }
                need_separator = false;
            }
            Some(TokenKind::Color(c)) => {
                if pending_color.replace(c).is_some() || need_separator {
                    warnings += 1;
                }
            }
            Some(TokenKind::Object(o)) => {
                if need_separator {
                    warnings += 1;
                }
                phrases.push((o, pending_color.take().unwrap_or(0)));
                need_separator = true;
            }
            Some(TokenKind::Bos) => warnings += 1,
        }
    }
    if pending_color.is_some() {
        warnings += 1;
    }
    let grid_h = phrases.len().div_ceil(CANONICAL_WIDTH).max(1);
    let placements = phrases
        .iter()
        .enumerate()
        .map(|(i, &(object, color))| Placement { x: i % CANONICAL_WIDTH, y: i / CANONICAL_WIDTH, object, color })
        .collect();
    Ok(ParsedCaption { scene: Scene::for_vocab(vocab, CANONICAL_WIDTH, grid_h, placements)?, warnings })
}

/// The pseudo-image of a caption: its canonical scene rendered without noise.
pub fn synthesize_feedback(tokens: &[TokenId], vocab: &CaptionVocab, cell_px: usize) -> Result<ImageGrid> {
    render_scene(&parse_caption(tokens, vocab)?.scene, cell_px, 0.0, 0)
}
