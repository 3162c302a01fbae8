//! C ABI over `cofidec-core`.
//!
//! Every fallible function returns a [`CofidecStatus`]. On failure the reason
//! is kept in a thread-local string readable with [`cofidec_last_error`].
//! Handles are boxed Rust values behind opaque pointers; each kind has a
//! `_free` function that accepts null.
//!
//! # Safety
//!
//! Pointer arguments must be valid for the lengths given and non-null unless
//! documented otherwise. Handles must come from this library and must not be
//! used after being freed.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cofidec_core::cli_io::{parse_config, RunConfig};
use cofidec_core::decoding::{self, regular_decode, DecodeStatus};
use cofidec_core::fusion::{fuse_distributions, FusionConfig, FusionError, FusionSolver};
use cofidec_core::image::ImageGrid;
use cofidec_core::ot::{
    build_ground_metric, lp_barycenter, sinkhorn, sinkhorn_barycenter, Distribution, GroundMetric, MetricKind, OtError,
    SinkhornConfig, TokenId,
};
use cofidec_core::scene_models::{synthesize_feedback, CaptionVocab, ToyCaptioner};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CofidecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Inputs live on different token supports.
    SupportMismatch = 3,
    /// The exact solver was asked for a support above its limit.
    SupportTooLarge = 4,
    /// A decoding stage failed; the message names the stage.
    DecodeFailed = 5,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CofidecSolver {
    ExactLp = 0,
    Sinkhorn = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CofidecMetricKind {
    SquaredEuclidean = 0,
    Euclidean = 1,
    ZeroOne = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CofidecMode {
    Regular = 0,
    Cofidec = 1,
}

/// Fusion settings. [`cofidec_fusion_config_default`] fills the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CofidecFusionConfig {
    pub solver: CofidecSolver,
    pub top_k: usize,
    pub weights: [f64; 3],
    pub smoothing_alpha: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

pub struct CofidecDistribution(Distribution);

pub struct CofidecMetric(GroundMetric);

/// A toy captioner with its decode settings.
pub struct CofidecDecoder {
    config: RunConfig,
    vocab: CaptionVocab,
    model: ToyCaptioner,
}

pub struct CofidecCaption {
    tokens: Vec<TokenId>,
    truncated: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(CofidecStatus, String);

impl From<OtError> for Failure {
    fn from(e: OtError) -> Self {
        let status = match e {
            OtError::SupportMismatch => CofidecStatus::SupportMismatch,
            OtError::SupportTooLarge { .. } => CofidecStatus::SupportTooLarge,
            _ => CofidecStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Ot(inner) => inner.into(),
            FusionError::VocabularyMismatch => Failure(CofidecStatus::SupportMismatch, e.to_string()),
            FusionError::SupportTooLargeForExact { .. } => Failure(CofidecStatus::SupportTooLarge, e.to_string()),
            other => Failure(CofidecStatus::InvalidArgument, other.to_string()),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CofidecStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CofidecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CofidecStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CofidecStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(CofidecStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies `src` into a caller buffer, reporting the needed length.
unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize, len: *mut usize) -> Result<(), Failure> {
    non_null(len, "len")?;
    *len = src.len();
    if cap < src.len() {
        return Err(Failure(CofidecStatus::BufferTooSmall, format!("buffer holds {cap}, need {}", src.len())));
    }
    if !src.is_empty() {
        non_null(buf, "buffer")?;
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Message left by the latest call on this thread if it failed, else null.
/// The pointer stays valid until the next call into this library from the
/// same thread.
#[no_mangle]
pub extern "C" fn cofidec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a distribution from probabilities over strictly increasing ids.
#[no_mangle]
pub unsafe extern "C" fn cofidec_distribution_new(
    probs: *const f64,
    ids: *const usize,
    len: usize,
    out: *mut *mut CofidecDistribution,
) -> CofidecStatus {
    guard(|| {
        non_null(out, "out")?;
        let d = Distribution::new(input(probs, len, "probs")?.to_vec(), input(ids, len, "ids")?.to_vec())?;
        emit(out, CofidecDistribution(d));
        Ok(())
    })
}

/// Support size, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cofidec_distribution_len(d: *const CofidecDistribution) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn cofidec_distribution_read(
    d: *const CofidecDistribution,
    probs: *mut f64,
    ids: *mut usize,
    cap: usize,
    len: *mut usize,
) -> CofidecStatus {
    guard(|| {
        non_null(d, "distribution")?;
        let d = &(*d).0;
        copy_out(d.probs(), probs, cap, len)?;
        copy_out(d.support(), ids, cap, len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn cofidec_distribution_free(d: *mut CofidecDistribution) {
    free(d);
}

/// Row-major `n x n` cost matrix.
#[no_mangle]
pub unsafe extern "C" fn cofidec_metric_from_costs(costs: *const f64, n: usize, out: *mut *mut CofidecMetric) -> CofidecStatus {
    guard(|| {
        non_null(out, "out")?;
        let len = n.checked_mul(n).ok_or_else(|| invalid("matrix size overflows"))?;
        let m = GroundMetric::new(n, input(costs, len, "costs")?.to_vec())?;
        emit(out, CofidecMetric(m));
        Ok(())
    })
}

/// Row-major `n x dim` embeddings, token `i` in row `i`.
#[no_mangle]
pub unsafe extern "C" fn cofidec_metric_from_embeddings(
    embeddings: *const f64,
    n: usize,
    dim: usize,
    kind: CofidecMetricKind,
    out: *mut *mut CofidecMetric,
) -> CofidecStatus {
    guard(|| {
        non_null(out, "out")?;
        if dim == 0 {
            return Err(invalid("embedding dimension must be positive"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| invalid("embedding size overflows"))?;
        let rows: Vec<Vec<f64>> = input(embeddings, len, "embeddings")?.chunks(dim).map(<[f64]>::to_vec).collect();
        let kind = match kind {
            CofidecMetricKind::SquaredEuclidean => MetricKind::SquaredEuclidean,
            CofidecMetricKind::Euclidean => MetricKind::Euclidean,
            CofidecMetricKind::ZeroOne => MetricKind::ZeroOne,
        };
        emit(out, CofidecMetric(build_ground_metric(&rows, kind)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cofidec_metric_size(m: *const CofidecMetric) -> usize {
    m.as_ref().map_or(0, |m| m.0.size())
}

#[no_mangle]
pub unsafe extern "C" fn cofidec_metric_free(m: *mut CofidecMetric) {
    free(m);
}

/// Barycenter of `count` distributions on one support. `weights` may be null
/// for uniform weights; `epsilon` is ignored by the exact solver and a
/// nonpositive value selects the default. `objective` may be null.
#[no_mangle]
pub unsafe extern "C" fn cofidec_barycenter(
    dists: *const *const CofidecDistribution,
    weights: *const f64,
    count: usize,
    metric: *const CofidecMetric,
    solver: CofidecSolver,
    epsilon: f64,
    out: *mut *mut CofidecDistribution,
    objective: *mut f64,
) -> CofidecStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(metric, "metric")?;
        let metric = &(*metric).0;
        let handles = input(dists, count, "dists")?;
        let mut ds = Vec::with_capacity(count);
        for (i, &h) in handles.iter().enumerate() {
            non_null(h, &format!("dists[{i}]"))?;
            ds.push((*h).0.clone());
        }
        let w = if weights.is_null() { vec![1.0 / count.max(1) as f64; count] } else { input(weights, count, "weights")?.to_vec() };
        let (fused, value) = match solver {
            CofidecSolver::ExactLp => {
                let b = lp_barycenter(&ds, &w, metric)?;
                (b.distribution, b.objective)
            }
            CofidecSolver::Sinkhorn => {
                let cfg = if epsilon > 0.0 { SinkhornConfig::with_epsilon(epsilon) } else { SinkhornConfig::default() };
                let b = sinkhorn_barycenter(&ds, &w, metric, &cfg)?;
                let mut value = 0.0;
                for (d, wk) in ds.iter().zip(&w) {
                    value += wk * sinkhorn(&b.distribution, d, metric, &cfg)?.cost;
                }
                (b.distribution, value)
            }
        };
        if !objective.is_null() {
            *objective = value;
        }
        emit(out, CofidecDistribution(fused));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn cofidec_fusion_config_default() -> CofidecFusionConfig {
    from_fusion(&FusionConfig::default())
}

fn from_fusion(f: &FusionConfig) -> CofidecFusionConfig {
    CofidecFusionConfig {
        solver: match f.solver {
            FusionSolver::ExactLp => CofidecSolver::ExactLp,
            FusionSolver::Sinkhorn => CofidecSolver::Sinkhorn,
        },
        top_k: f.top_k,
        weights: f.weights,
        smoothing_alpha: f.smoothing_alpha,
        epsilon: f.sinkhorn.epsilon,
        max_iter: f.sinkhorn.max_iter,
        tol: f.sinkhorn.tol,
    }
}

fn to_fusion(c: &CofidecFusionConfig) -> FusionConfig {
    let mut f = FusionConfig::default();
    f.solver = match c.solver {
        CofidecSolver::ExactLp => FusionSolver::ExactLp,
        CofidecSolver::Sinkhorn => FusionSolver::Sinkhorn,
    };
    f.top_k = c.top_k;
    f.weights = c.weights;
    f.smoothing_alpha = c.smoothing_alpha;
    f.sinkhorn.epsilon = c.epsilon;
    f.sinkhorn.max_iter = c.max_iter;
    f.sinkhorn.tol = c.tol;
    f
}

/// Fuses the original, coarse and fine next-token distributions of one step.
/// `cfg` may be null for the defaults; `chosen` (nullable) receives the
/// greedy token.
#[no_mangle]
pub unsafe extern "C" fn cofidec_fuse(
    p_v: *const CofidecDistribution,
    p_c: *const CofidecDistribution,
    p_f: *const CofidecDistribution,
    metric: *const CofidecMetric,
    cfg: *const CofidecFusionConfig,
    out: *mut *mut CofidecDistribution,
    chosen: *mut usize,
) -> CofidecStatus {
    guard(|| {
        for (p, name) in [(p_v, "p_v"), (p_c, "p_c"), (p_f, "p_f")] {
            non_null(p, name)?;
        }
        non_null(metric, "metric")?;
        non_null(out, "out")?;
        let cfg = cfg.as_ref().map_or_else(FusionConfig::default, to_fusion);
        let step = fuse_distributions(&(*p_v).0, &(*p_c).0, &(*p_f).0, &(*metric).0, &cfg)?;
        if !chosen.is_null() {
            *chosen = step.fused.argmax();
        }
        emit(out, CofidecDistribution(step.fused));
        Ok(())
    })
}

/// Creates a decoder from configuration text in the `key = value` format;
/// null gives the defaults.
#[no_mangle]
pub unsafe extern "C" fn cofidec_decoder_new(config: *const c_char, out: *mut *mut CofidecDecoder) -> CofidecStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = if config.is_null() {
            RunConfig::default()
        } else {
            let text = CStr::from_ptr(config).to_str().map_err(|_| invalid("config is not UTF-8"))?;
            parse_config(text).map_err(|e| invalid(format!("config {e}")))?
        };
        config.decode.validate().map_err(invalid)?;
        let vocab = CaptionVocab::standard();
        let model = ToyCaptioner::new(vocab.clone(), config.captioner.clone()).map_err(|e| invalid(e.to_string()))?;
        emit(out, CofidecDecoder { config, vocab, model });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cofidec_decoder_free(d: *mut CofidecDecoder) {
    free(d);
}

/// Captions a `width x height x channels` image given row-major with channels
/// interleaved.
#[no_mangle]
pub unsafe extern "C" fn cofidec_decode(
    decoder: *const CofidecDecoder,
    pixels: *const f64,
    width: usize,
    height: usize,
    channels: usize,
    mode: CofidecMode,
    out: *mut *mut CofidecCaption,
) -> CofidecStatus {
    guard(|| {
        non_null(decoder, "decoder")?;
        non_null(out, "out")?;
        let dec = &*decoder;
        let len = width.checked_mul(height).and_then(|n| n.checked_mul(channels)).ok_or_else(|| invalid("image size overflows"))?;
        let img = ImageGrid::new(width, height, channels, input(pixels, len, "pixels")?.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let cfg = &dec.config;
        let result = match mode {
            CofidecMode::Regular => regular_decode(&dec.model, &[img], &[], &cfg.decode),
            CofidecMode::Cofidec => {
                let metric = dec.vocab.ground_metric(cfg.metric).map_err(|e| invalid(e.to_string()))?;
                let cell = cfg.captioner.cell_px;
                let synth = |t: &[TokenId]| synthesize_feedback(t, &dec.vocab, cell).map_err(|e| e.to_string());
                decoding::cofidec_decode(&dec.model, &synth, &metric, &img, &[], &cfg.decode)
            }
        };
        let decoded = result.map_err(|e| Failure(CofidecStatus::DecodeFailed, e.to_string()))?;
        emit(out, CofidecCaption { tokens: decoded.tokens, truncated: decoded.status == DecodeStatus::Truncated });
        Ok(())
    })
}

/// Token ids including the leading BOS and, unless truncated, the final EOS.
#[no_mangle]
pub unsafe extern "C" fn cofidec_caption_tokens(
    c: *const CofidecCaption,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> CofidecStatus {
    guard(|| {
        non_null(c, "caption")?;
        copy_out(&(*c).tokens, buf, cap, len)
    })
}

/// 1 if decoding hit the token budget, 0 otherwise (and for null).
#[no_mangle]
pub unsafe extern "C" fn cofidec_caption_truncated(c: *const CofidecCaption) -> i32 {
    c.as_ref().map_or(0, |c| c.truncated as i32)
}

#[no_mangle]
pub unsafe extern "C" fn cofidec_caption_free(c: *mut CofidecCaption) {
    free(c);
}
