//! Two-level decomposition of an image: uniform low-resolution patches that
//! keep the global layout, and full-resolution crops around salient windows.

use thiserror::Error;

use crate::image::{ImageError, ImageGrid, Region};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("grid {rows}x{cols} must have at least one cell and fit a {width}x{height} image")]
    BadGrid { rows: usize, cols: usize, width: usize, height: usize },
    #[error("downsample factor must be at least 1")]
    BadFactor,
    #[error("saliency window {window} must be in 1..={limit}")]
    BadWindow { window: usize, limit: usize },
    #[error("saliency map {map_w}x{map_h} does not fit a {width}x{height} image")]
    SaliencyShape { map_w: usize, map_h: usize, width: usize, height: usize },
    #[error("saliency map {width}x{height} needs {expected} scores, got {got}")]
    SaliencyLength { width: usize, height: usize, expected: usize, got: usize },
    #[error("invalid saliency score {0}")]
    BadScore(f64),
    #[error("crop {w}x{h} does not fit a {width}x{height} image")]
    BadCrop { w: usize, h: usize, width: usize, height: usize },
    #[error("fine view count must be at least 1")]
    ZeroFineCount,
    #[error("coarse patches are missing")]
    NoCoarse,
    #[error("coarse patches {0:?} and {1:?} overlap")]
    Overlap(Region, Region),
    #[error("coarse patches leave part of the image uncovered")]
    Uncovered,
    #[error("view region {0:?} lies outside the image")]
    OutOfBounds(Region),
    #[error("crop pixels do not match region {0:?}")]
    CropShape(Region),
}

pub type Result<T> = std::result::Result<T, ViewError>;

/// A pooled patch and the original-image region it summarizes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePatch {
    pub region: Region,
    pub pixels: ImageGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropView {
    pub region: Region,
    pub pixels: ImageGrid,
    pub saliency_score: f64,
}

/// Scores on a grid of non-overlapping windows, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, scores: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || scores.len() != width * height {
            let expected = width * height;
            return Err(ViewError::SaliencyLength { width, height, expected, got: scores.len() });
        }
        if let Some(&bad) = scores.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(ViewError::BadScore(bad));
        }
        Ok(Self { width, height, scores })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineViews {
    pub crops: Vec<CropView>,
    /// More crops were requested than there are windows.
    pub clamped: bool,
}

/// The unified view set: original, coarse patches and fine crops.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    original: ImageGrid,
    coarse: Vec<CoarsePatch>,
    fine: Vec<CropView>,
}

impl ViewSet {
    pub fn original(&self) -> &ImageGrid {
        &self.original
    }

    pub fn coarse(&self) -> &[CoarsePatch] {
        &self.coarse
    }

    pub fn fine(&self) -> &[CropView] {
        &self.fine
    }

    pub fn coarse_images(&self) -> Vec<ImageGrid> {
        self.coarse.iter().map(|p| p.pixels.clone()).collect()
    }

    pub fn fine_images(&self) -> Vec<ImageGrid> {
        self.fine.iter().map(|c| c.pixels.clone()).collect()
    }
}

/// Splits `img` into a `rows x cols` grid of patches, each average-pooled by
/// `factor` (row-major order).
///
/// The image is first padded by edge replication so that every block is
/// `factor`-divisible; each patch's region is its block clipped to the
/// original bounds.
pub fn coarse_decompose(img: &ImageGrid, grid: (usize, usize), factor: usize) -> Result<Vec<CoarsePatch>> {
    let (rows, cols) = grid;
    let (width, height) = (img.width(), img.height());
    if factor == 0 {
        return Err(ViewError::BadFactor);
    }
    let bad_grid = ViewError::BadGrid { rows, cols, width, height };
    if rows == 0 || cols == 0 {
        return Err(bad_grid);
    }
    let block_w = width.div_ceil(cols).div_ceil(factor) * factor;
    let block_h = height.div_ceil(rows).div_ceil(factor) * factor;
    // A block starting past the border would summarize padding only.
    if (cols - 1) * block_w >= width || (rows - 1) * block_h >= height {
        return Err(bad_grid);
    }
    let (out_w, out_h, ch) = (block_w / factor, block_h / factor, img.channels());
    let norm = (factor * factor) as f64;
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c * block_w, r * block_h);
            let mut pixels = Vec::with_capacity(out_w * out_h * ch);
            for py in 0..out_h {
                for px in 0..out_w {
                    for k in 0..ch {
                        let mut sum = 0.0;
                        for dy in 0..factor {
                            for dx in 0..factor {
                                sum += img.get_clamped(x0 + px * factor + dx, y0 + py * factor + dy, k);
                            }
                        }
                        pixels.push((sum / norm).clamp(0.0, 1.0));
                    }
                }
            }
            let region = Region::new(x0, y0, block_w.min(width - x0), block_h.min(height - y0));
            patches.push(CoarsePatch { region, pixels: ImageGrid::new(out_w, out_h, ch, pixels)? });
        }
    }
    Ok(patches)
}

/// Per-window pixel variance, summed over channels, on a grid of
/// non-overlapping `window x window` cells (stride = window).
pub fn local_saliency(img: &ImageGrid, window: usize) -> Result<SaliencyMap> {
    let limit = img.width().min(img.height());
    if window == 0 || window > limit {
        return Err(ViewError::BadWindow { window, limit });
    }
    let (gw, gh) = (img.width() / window, img.height() / window);
    let n = (window * window) as f64;
    let mut scores = Vec::with_capacity(gw * gh);
    for gy in 0..gh {
        for gx in 0..gw {
            let mut score = 0.0;
            for k in 0..img.channels() {
                // Shifted by the first pixel so constant windows score exactly 0.
                let at = |i: usize| img.get(gx * window + i % window, gy * window + i / window, k);
                let shift = at(0);
                let (sum, sq) = (0..window * window).fold((0.0, 0.0), |(s, q), i| {
                    let d = at(i) - shift;
                    (s + d, q + d * d)
                });
                let mean = sum / n;
                score += (sq / n - mean * mean).max(0.0);
            }
            scores.push(score);
        }
    }
    SaliencyMap::new(gw, gh, scores)
}

/// Picks the `m` highest-scoring windows (ties to the smaller row-major index)
/// and returns a `crop` sized full-resolution view centered on each, clamped
/// to the image, in descending score order.
pub fn fine_decompose(img: &ImageGrid, saliency: &SaliencyMap, m: usize, crop: (usize, usize)) -> Result<FineViews> {
    let (width, height) = (img.width(), img.height());
    let (cw, ch) = crop;
    if m == 0 {
        return Err(ViewError::ZeroFineCount);
    }
    if cw == 0 || ch == 0 || cw > width || ch > height {
        return Err(ViewError::BadCrop { w: cw, h: ch, width, height });
    }
    if saliency.width > width || saliency.height > height {
        return Err(ViewError::SaliencyShape { map_w: saliency.width, map_h: saliency.height, width, height });
    }
    let (cell_w, cell_h) = (width / saliency.width, height / saliency.height);
    let mut order: Vec<usize> = (0..saliency.scores.len()).collect();
    order.sort_by(|&a, &b| saliency.scores[b].total_cmp(&saliency.scores[a]));
    let clamped = m > order.len();
    let crops = order
        .into_iter()
        .take(m)
        .map(|idx| {
            let (gx, gy) = (idx % saliency.width, idx / saliency.width);
            let cx = gx * cell_w + cell_w / 2;
            let cy = gy * cell_h + cell_h / 2;
            let x = cx.saturating_sub(cw / 2).min(width - cw);
            let y = cy.saturating_sub(ch / 2).min(height - ch);
            let region = Region::new(x, y, cw, ch);
            Ok(CropView { region, pixels: img.crop(region)?, saliency_score: saliency.scores[idx] })
        })
        .collect::<Result<_>>()?;
    Ok(FineViews { crops, clamped })
}

/// Validates and assembles the unified view set.
pub fn unify(original: ImageGrid, coarse: Vec<CoarsePatch>, fine: Vec<CropView>) -> Result<ViewSet> {
    let (width, height) = (original.width(), original.height());
    if coarse.is_empty() {
        return Err(ViewError::NoCoarse);
    }
    for (i, p) in coarse.iter().enumerate() {
        if !p.region.fits_in(width, height) {
            return Err(ViewError::OutOfBounds(p.region));
        }
        if let Some(q) = coarse[..i].iter().find(|q| q.region.overlaps(&p.region)) {
            return Err(ViewError::Overlap(q.region, p.region));
        }
    }
    // Disjoint and in bounds, so full area means full coverage.
    if coarse.iter().map(|p| p.region.area()).sum::<usize>() != width * height {
        return Err(ViewError::Uncovered);
    }
    for c in &fine {
        if !c.region.fits_in(width, height) {
            return Err(ViewError::OutOfBounds(c.region));
        }
        if c.pixels.width() != c.region.w || c.pixels.height() != c.region.h {
            return Err(ViewError::CropShape(c.region));
        }
    }
    Ok(ViewSet { original, coarse, fine })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewConfig {
    /// `(rows, cols)` of the coarse grid.
    pub grid: (usize, usize),
    pub downsample: usize,
    pub fine_count: usize,
    /// Defaults to a quarter of the image per side.
    pub crop: Option<(usize, usize)>,
    /// Defaults to the shorter crop side.
    pub window: Option<usize>,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { grid: (2, 2), downsample: 2, fine_count: 2, crop: None, window: None }
    }
}

impl ViewConfig {
    pub fn crop_for(&self, img: &ImageGrid) -> (usize, usize) {
        self.crop.unwrap_or(((img.width() / 4).max(1), (img.height() / 4).max(1)))
    }

    pub fn window_for(&self, img: &ImageGrid) -> usize {
        let (w, h) = self.crop_for(img);
        self.window.unwrap_or(w.min(h))
    }
}

/// Runs the full decomposition. A `fine_count` of zero yields no crops.
pub fn decompose(img: &ImageGrid, cfg: &ViewConfig) -> Result<(ViewSet, bool)> {
    let coarse = coarse_decompose(img, cfg.grid, cfg.downsample)?;
    let (fine, clamped) = if cfg.fine_count == 0 {
        (Vec::new(), false)
    } else {
        let saliency = local_saliency(img, cfg.window_for(img))?;
        let f = fine_decompose(img, &saliency, cfg.fine_count, cfg.crop_for(img))?;
        (f.crops, f.clamped)
    };
    Ok((unify(img.clone(), coarse, fine)?, clamped))
}
