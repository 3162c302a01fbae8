//! Per-step fusion of the three conditional next-token distributions into a
//! single distribution: the weighted Wasserstein barycenter over a restricted
//! common support.

use thiserror::Error;

use crate::ot::{
    exact_wasserstein, lp_barycenter, sinkhorn, sinkhorn_barycenter, Distribution, GroundMetric, OtError,
    SinkhornConfig, SolveStatus, TokenId, EXACT_BARYCENTER_LIMIT, MASS_TOLERANCE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error("sources are not over the same vocabulary")]
    VocabularyMismatch,
    #[error("ground metric covers {metric} tokens but the vocabulary has {vocab}")]
    MetricMismatch { metric: usize, vocab: usize },
    #[error("exact_lp fusion needs a restricted support of at most {limit} ids, got {size}")]
    SupportTooLargeForExact { size: usize, limit: usize },
    #[error("invalid fusion configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionSolver {
    ExactLp,
    Sinkhorn,
}

impl std::str::FromStr for FusionSolver {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_lp" | "exact" => Ok(Self::ExactLp),
            "sinkhorn" => Ok(Self::Sinkhorn),
            other => Err(FusionError::InvalidConfig(format!("unknown solver `{other}`"))),
        }
    }
}

impl std::fmt::Display for FusionSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ExactLp => "exact_lp",
            Self::Sinkhorn => "sinkhorn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Weights of the original, coarse-feedback and fine-feedback sources.
    pub weights: [f64; 3],
    pub top_k: usize,
    pub smoothing_alpha: f64,
    pub solver: FusionSolver,
    pub sinkhorn: SinkhornConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            weights: [1.0 / 3.0; 3],
            top_k: 32,
            smoothing_alpha: 1e-6,
            solver: FusionSolver::Sinkhorn,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

impl FusionConfig {
    pub fn exact(top_k: usize) -> Self {
        Self { solver: FusionSolver::ExactLp, top_k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(FusionError::InvalidConfig(format!("weights must be positive: {:?}", self.weights)));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(FusionError::InvalidConfig(format!("weights sum to {total}")));
        }
        if self.top_k == 0 {
            return Err(FusionError::InvalidConfig("top_k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing_alpha) {
            return Err(FusionError::InvalidConfig(format!("smoothing_alpha {} outside [0, 1)", self.smoothing_alpha)));
        }
        Ok(())
    }
}

/// The three sources restricted to their common support.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedSources {
    pub sources: [Distribution; 3],
    pub support: Vec<TokenId>,
    /// `top_k` exceeded the vocabulary and was clamped.
    pub top_k_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedStep {
    pub fused: Distribution,
    pub restricted_support: Vec<TokenId>,
    /// Transport cost from the fused distribution to each (restricted, smoothed) source.
    pub per_source_cost: [f64; 3],
    pub solver_status: SolveStatus,
    pub top_k_clamped: bool,
}

fn top_k_ids(d: &Distribution, k: usize) -> Vec<TokenId> {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    // Stable sort keeps lower ids first among equal probabilities.
    idx.sort_by(|&a, &b| d.probs()[b].total_cmp(&d.probs()[a]));
    idx.into_iter().take(k).map(|i| d.support()[i]).collect()
}

fn restrict(d: &Distribution, support: &[TokenId]) -> Result<Distribution> {
    let weights = support.iter().map(|&id| d.prob_of(id)).collect();
    Ok(Distribution::from_weights(weights, support.to_vec())?)
}

/// Restricts all three sources to the union of their `top_k` ids.
pub fn restrict_support(
    p_v: &Distribution,
    p_c: &Distribution,
    p_f: &Distribution,
    top_k: usize,
) -> Result<RestrictedSources> {
    if !p_v.same_support(p_c) || !p_v.same_support(p_f) {
        return Err(FusionError::VocabularyMismatch);
    }
    if top_k == 0 {
        return Err(FusionError::InvalidConfig("top_k must be at least 1".into()));
    }
    let top_k_clamped = top_k > p_v.len();
    let k = top_k.min(p_v.len());
    let mut support: Vec<TokenId> = [p_v, p_c, p_f].iter().flat_map(|d| top_k_ids(d, k)).collect();
    support.sort_unstable();
    support.dedup();
    let sources = [restrict(p_v, &support)?, restrict(p_c, &support)?, restrict(p_f, &support)?];
    Ok(RestrictedSources { sources, support, top_k_clamped })
}

/// `(1 - alpha) p + alpha * uniform` over the same support.
pub fn smooth(p: &Distribution, alpha: f64) -> Result<Distribution> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(FusionError::InvalidConfig(format!("smoothing alpha {alpha} outside [0, 1)")));
    }
    if alpha == 0.0 {
        return Ok(p.clone());
    }
    let u = alpha / p.len() as f64;
    let weights = p.probs().iter().map(|&x| (1.0 - alpha) * x + u).collect();
    Ok(Distribution::from_weights(weights, p.support().to_vec())?)
}

/// Fuses the original-view, coarse-feedback and fine-feedback distributions.
pub fn fuse_distributions(
    p_v: &Distribution,
    p_c: &Distribution,
    p_f: &Distribution,
    metric: &GroundMetric,
    cfg: &FusionConfig,
) -> Result<FusedStep> {
    cfg.validate()?;
    if !p_v.same_support(p_c) || !p_v.same_support(p_f) {
        return Err(FusionError::VocabularyMismatch);
    }
    let max_id = *p_v.support().last().expect("distributions are nonempty");
    if max_id >= metric.size() {
        return Err(FusionError::MetricMismatch { metric: metric.size(), vocab: max_id + 1 });
    }
    let restricted = restrict_support(p_v, p_c, p_f, cfg.top_k)?;
    let sources: Vec<Distribution> =
        restricted.sources.iter().map(|d| smooth(d, cfg.smoothing_alpha)).collect::<Result<_>>()?;
    let support = restricted.support.clone();
    let weights = cfg.weights.to_vec();

    let (fused, mut status) = match cfg.solver {
        FusionSolver::ExactLp => {
            if support.len() > EXACT_BARYCENTER_LIMIT {
                return Err(FusionError::SupportTooLargeForExact {
                    size: support.len(),
                    limit: EXACT_BARYCENTER_LIMIT,
                });
            }
            (lp_barycenter(&sources, &weights, metric)?.distribution, SolveStatus::Converged)
        }
        FusionSolver::Sinkhorn => {
            let b = sinkhorn_barycenter(&sources, &weights, metric, &cfg.sinkhorn)?;
            (b.distribution, b.status)
        }
    };

    let mut per_source_cost = [0.0; 3];
    for (cost, src) in per_source_cost.iter_mut().zip(&sources) {
        *cost = match cfg.solver {
            FusionSolver::ExactLp => exact_wasserstein(&fused, src, metric)?.cost,
            FusionSolver::Sinkhorn => {
                let r = sinkhorn(&fused, src, metric, &cfg.sinkhorn)?;
                if r.status == SolveStatus::Truncated {
                    status = SolveStatus::Truncated;
                }
                r.cost
            }
        };
    }

    Ok(FusedStep {
        fused,
        restricted_support: support,
        per_source_cost,
        solver_status: status,
        top_k_clamped: restricted.top_k_clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(p: &[f64]) -> Distribution {
        Distribution::dense(p.to_vec()).unwrap()
    }

    #[test]
    fn identical_sources_share_their_top_k() {
        let p = Distribution::from_weights((1..=10).map(|i| i as f64).collect(), (0..10).collect()).unwrap();
        let r = restrict_support(&p, &p, &p, 3).unwrap();
        assert_eq!(r.support, vec![7, 8, 9]);
        for d in &r.sources {
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn top_one_is_the_union_of_argmaxes() {
        let mut v = vec![0.05; 10];
        v[7] = 0.55;
        let mut c = vec![0.05; 10];
        c[2] = 0.55;
        let r = restrict_support(&dense(&v), &dense(&c), &dense(&c), 1).unwrap();
        assert_eq!(r.support, vec![2, 7]);
    }

    #[test]
    fn disjoint_top_sets() {
        let mk = |ids: [usize; 3]| {
            let mut w = vec![0.001; 12];
            for (rank, id) in ids.iter().enumerate() {
                w[*id] = 0.3 - 0.05 * rank as f64;
            }
            Distribution::from_weights(w, (0..12).collect()).unwrap()
        };
        let r = restrict_support(&mk([0, 1, 2]), &mk([3, 4, 5]), &mk([6, 7, 8]), 3).unwrap();
        assert_eq!(r.support.len(), 9);
        for d in &r.sources {
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn top_k_is_clamped() {
        let p = dense(&[0.5, 0.5]);
        let r = restrict_support(&p, &p, &p, 5).unwrap();
        assert!(r.top_k_clamped);
        assert_eq!(r.support, vec![0, 1]);
    }

    #[test]
    fn smoothing_rules() {
        let p = dense(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(smooth(&p, 0.0).unwrap(), p);
        let u = smooth(&p, 1.0 - 1e-12).unwrap();
        assert!(u.probs().iter().all(|x| (x - 0.25).abs() < 1e-9));
        let d = smooth(&dense(&[1.0, 0.0]), 0.2).unwrap();
        assert!((d.probs()[0] - 0.9).abs() < 1e-15 && (d.probs()[1] - 0.1).abs() < 1e-15);
        assert!(smooth(&p, 1.0).is_err());
        assert!(smooth(&p, -0.1).is_err());
    }

    #[test]
    fn exact_fusion_of_dirac_sources_on_a_line() {
        let s: Vec<usize> = (0..5).collect();
        let d = |i| Distribution::dirac(i, s.clone()).unwrap();
        let m = GroundMetric::line(5, 2).unwrap();
        let step = fuse_distributions(&d(0), &d(2), &d(4), &m, &FusionConfig::exact(8)).unwrap();
        assert_eq!(step.fused.argmax(), 2);
        assert_eq!(step.solver_status, SolveStatus::Converged);
    }

    #[test]
    fn majority_wins_under_zero_one_costs() {
        let a = dense(&[0.8, 0.1, 0.1]);
        let b = dense(&[0.1, 0.1, 0.8]);
        let m = GroundMetric::zero_one(3).unwrap();
        let step = fuse_distributions(&a, &a, &b, &m, &FusionConfig::exact(3)).unwrap();
        assert_eq!(step.fused.argmax(), 0);
        assert!(step.fused.prob_of(0) > 0.5);
    }

    #[test]
    fn exact_lp_rejects_wide_supports() {
        let p = Distribution::uniform((0..9).collect()).unwrap();
        let m = GroundMetric::zero_one(9).unwrap();
        assert!(matches!(
            fuse_distributions(&p, &p, &p, &m, &FusionConfig::exact(9)),
            Err(FusionError::SupportTooLargeForExact { size: 9, limit: 8 })
        ));
    }

    #[test]
    fn metric_must_cover_the_vocabulary() {
        let p = dense(&[0.2, 0.3, 0.5]);
        let m = GroundMetric::zero_one(2).unwrap();
        assert!(matches!(
            fuse_distributions(&p, &p, &p, &m, &FusionConfig::default()),
            Err(FusionError::MetricMismatch { .. })
        ));
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let cfg = FusionConfig { weights: [0.5, 0.5, 0.5], ..FusionConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
