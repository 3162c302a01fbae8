//! Discrete optimal transport over categorical token distributions.
//!
//! Two families of solvers live here:
//!
//! - exact linear-programming solvers ([`exact_wasserstein`], [`lp_barycenter`])
//!   used as verification oracles on small supports, and
//! - entropic solvers ([`sinkhorn`], [`sinkhorn_barycenter`]) computed in the
//!   log domain so that small regularization does not underflow.
//!
//! Every solver is a pure function of its inputs. All arithmetic is `f64`.

mod barycenter;
mod exact;
pub(crate) mod lp;
mod sinkhorn;

pub use barycenter::{lp_barycenter, lp_barycenter_limited, sinkhorn_barycenter, Barycenter, EntropicBarycenter};
pub use exact::{exact_wasserstein, exact_wasserstein_limited, ExactTransport};
pub use sinkhorn::{sinkhorn, SinkhornResult};

use thiserror::Error;

/// Token identifier inside a vocabulary.
pub type TokenId = usize;

/// Tolerance on the total mass of a [`Distribution`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Default support limit for [`exact_wasserstein`].
pub const EXACT_TRANSPORT_LIMIT: usize = 64;

/// Default support limit for [`lp_barycenter`].
pub const EXACT_BARYCENTER_LIMIT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtError {
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("probabilities and support ids differ in length: {probs} vs {ids}")]
    LengthMismatch { probs: usize, ids: usize },
    #[error("probability at position {index} is negative or not finite: {value}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("support ids must be strictly increasing (position {0})")]
    UnsortedSupport(usize),
    #[error("distributions do not share the same support")]
    SupportMismatch,
    #[error("support size {size} exceeds the exact-solver limit {limit}")]
    SupportTooLarge { size: usize, limit: usize },
    #[error("token id {id} is outside the ground metric of size {size}")]
    MetricTooSmall { id: TokenId, size: usize },
    #[error("ground metric must have at least 2 points")]
    MetricTooSmallInput,
    #[error("embedding {index} has dimension {found}, expected {expected}")]
    EmbeddingDimension { index: usize, expected: usize, found: usize },
    #[error("invalid ground metric: {0}")]
    InvalidMetric(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("at least {needed} distributions are required, got {got}")]
    TooFewDistributions { needed: usize, got: usize },
    #[error("invalid sinkhorn configuration: {0}")]
    InvalidConfig(String),
    #[error("scaling vectors collapsed (non-finite potentials) after {0} iterations")]
    Underflow(usize),
    #[error("linear program failed: {0}")]
    Lp(String),
}

pub type Result<T> = std::result::Result<T, OtError>;

/// Probability vector over an ordered set of token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
    support: Vec<TokenId>,
}

impl Distribution {
    /// Validates and wraps `probs` over `support`.
    pub fn new(probs: Vec<f64>, support: Vec<TokenId>) -> Result<Self> {
        if probs.is_empty() {
            return Err(OtError::EmptyDistribution);
        }
        if probs.len() != support.len() {
            return Err(OtError::LengthMismatch { probs: probs.len(), ids: support.len() });
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(OtError::InvalidProbability { index, value });
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(OtError::NotNormalized(total));
        }
        if let Some(pos) = support.windows(2).position(|w| w[0] >= w[1]) {
            return Err(OtError::UnsortedSupport(pos + 1));
        }
        Ok(Self { probs, support })
    }

    /// Distribution over the dense support `0..probs.len()`.
    pub fn dense(probs: Vec<f64>) -> Result<Self> {
        let support = (0..probs.len()).collect();
        Self::new(probs, support)
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>, support: Vec<TokenId>) -> Result<Self> {
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(OtError::InvalidProbability { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(OtError::NotNormalized(total));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect(), support)
    }

    pub fn uniform(support: Vec<TokenId>) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(OtError::EmptyDistribution);
        }
        Self::new(vec![1.0 / n as f64; n], support)
    }

    /// Point mass at `id` over `support`.
    pub fn dirac(id: TokenId, support: Vec<TokenId>) -> Result<Self> {
        let probs = support.iter().map(|&s| if s == id { 1.0 } else { 0.0 }).collect();
        Self::new(probs, support)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> &[TokenId] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of `id`, zero when `id` is outside the support.
    pub fn prob_of(&self, id: TokenId) -> f64 {
        self.support.binary_search(&id).map(|i| self.probs[i]).unwrap_or(0.0)
    }

    /// Highest-probability token; ties resolve to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        self.support[best]
    }

    pub fn same_support(&self, other: &Distribution) -> bool {
        self.support == other.support
    }

    /// Total-variation distance; supports must match.
    pub fn total_variation(&self, other: &Distribution) -> Result<f64> {
        if !self.same_support(other) {
            return Err(OtError::SupportMismatch);
        }
        Ok(0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    /// Entries floored at `min_prob` then renormalized.
    pub fn floored(&self, min_prob: f64) -> Distribution {
        let raised: Vec<f64> = self.probs.iter().map(|&p| p.max(min_prob)).collect();
        let total: f64 = raised.iter().sum();
        Distribution { probs: raised.into_iter().map(|p| p / total).collect(), support: self.support.clone() }
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<TokenId>) {
        (self.probs, self.support)
    }
}

pub(crate) fn check_same_support(dists: &[&Distribution]) -> Result<()> {
    let first = dists[0];
    if dists.iter().any(|d| !d.same_support(first)) {
        return Err(OtError::SupportMismatch);
    }
    Ok(())
}

/// How token embeddings are turned into transport costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    SquaredEuclidean,
    Euclidean,
    ZeroOne,
}

impl std::str::FromStr for MetricKind {
    type Err = OtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_euclidean" => Ok(Self::SquaredEuclidean),
            "euclidean" => Ok(Self::Euclidean),
            "zero_one" => Ok(Self::ZeroOne),
            other => Err(OtError::InvalidMetric(format!("unknown metric kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SquaredEuclidean => "squared_euclidean",
            Self::Euclidean => "euclidean",
            Self::ZeroOne => "zero_one",
        })
    }
}

/// Symmetric nonnegative cost matrix with zero diagonal, indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMetric {
    size: usize,
    costs: Vec<f64>,
}

impl GroundMetric {
    /// Validates a row-major `size x size` cost matrix.
    pub fn new(size: usize, costs: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(OtError::InvalidMetric("size must be positive".into()));
        }
        if costs.len() != size * size {
            return Err(OtError::InvalidMetric(format!(
                "expected {} entries, got {}",
                size * size,
                costs.len()
            )));
        }
        for i in 0..size {
            if costs[i * size + i] != 0.0 {
                return Err(OtError::InvalidMetric(format!("diagonal entry {i} is nonzero")));
            }
            for j in 0..size {
                let c = costs[i * size + j];
                if !c.is_finite() || c < 0.0 {
                    return Err(OtError::InvalidMetric(format!("entry ({i},{j}) = {c}")));
                }
                if c != costs[j * size + i] {
                    return Err(OtError::InvalidMetric(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(Self { size, costs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(OtError::InvalidMetric("matrix is not square".into()));
        }
        Self::new(size, rows.concat())
    }

    /// `c[i][j] = |i - j|^power` on a line of `size` points.
    pub fn line(size: usize, power: i32) -> Result<Self> {
        let costs = (0..size)
            .flat_map(|i| (0..size).map(move |j| (i as f64 - j as f64).abs().powi(power)))
            .collect();
        Self::new(size, costs)
    }

    pub fn zero_one(size: usize) -> Result<Self> {
        let costs = (0..size).flat_map(|i| (0..size).map(move |j| if i == j { 0.0 } else { 1.0 })).collect();
        Self::new(size, costs)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cost(&self, i: TokenId, j: TokenId) -> f64 {
        self.costs[i * self.size + j]
    }

    pub fn max_cost(&self) -> f64 {
        self.costs.iter().copied().fold(0.0, f64::max)
    }

    pub fn row(&self, i: TokenId) -> &[f64] {
        &self.costs[i * self.size..(i + 1) * self.size]
    }

    /// Dense cost matrix restricted to `ids` (row-major, `ids.len()^2`).
    pub fn restricted(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.size) {
            return Err(OtError::MetricTooSmall { id, size: self.size });
        }
        Ok(ids.iter().flat_map(|&i| ids.iter().map(move |&j| self.cost(i, j))).collect())
    }

    /// Metric restricted to `ids`, re-indexed from zero.
    pub fn submetric(&self, ids: &[TokenId]) -> Result<GroundMetric> {
        let costs = self.restricted(ids)?;
        Ok(GroundMetric { size: ids.len(), costs })
    }
}

/// Builds a ground metric from per-token embeddings.
pub fn build_ground_metric(embeddings: &[Vec<f64>], kind: MetricKind) -> Result<GroundMetric> {
    if embeddings.is_empty() {
        return Err(OtError::MetricTooSmallInput);
    }
    let dim = embeddings[0].len();
    for (index, e) in embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(OtError::EmbeddingDimension { index, expected: dim, found: e.len() });
        }
    }
    if embeddings.len() < 2 {
        return Err(OtError::MetricTooSmallInput);
    }
    let n = embeddings.len();
    let mut costs = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let c = match kind {
                MetricKind::ZeroOne => 1.0,
                MetricKind::SquaredEuclidean | MetricKind::Euclidean => {
                    let sq: f64 = embeddings[i].iter().zip(&embeddings[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    if kind == MetricKind::Euclidean {
                        sq.sqrt()
                    } else {
                        sq
                    }
                }
            };
            costs[i * n + j] = c;
            costs[j * n + i] = c;
        }
    }
    GroundMetric::new(n, costs)
}

/// Dense coupling between two distributions on a shared support.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    mass: Vec<f64>,
    /// Total-variation distance between the plan's row sums and the source.
    pub row_marginal_err: f64,
    /// Total-variation distance between the plan's column sums and the target.
    pub col_marginal_err: f64,
}

impl TransportPlan {
    pub(crate) fn from_mass(n: usize, mass: Vec<f64>, source: &[f64], target: &[f64]) -> Self {
        let (row_marginal_err, col_marginal_err) = marginal_errors(n, &mass, source, target);
        Self { n, mass, row_marginal_err, col_marginal_err }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    /// `<plan, costs>` with `costs` row-major over the same support.
    pub fn cost(&self, costs: &[f64]) -> f64 {
        self.mass.iter().zip(costs).map(|(m, c)| m * c).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mass.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut cols = vec![0.0; self.n];
        for row in self.mass.chunks(self.n) {
            for (c, m) in cols.iter_mut().zip(row) {
                *c += m;
            }
        }
        cols
    }
}

pub(crate) fn marginal_errors(n: usize, mass: &[f64], source: &[f64], target: &[f64]) -> (f64, f64) {
    let mut cols = vec![0.0; n];
    let mut row_err = 0.0;
    for (i, row) in mass.chunks(n).enumerate() {
        row_err += (row.iter().sum::<f64>() - source[i]).abs();
        for (c, m) in cols.iter_mut().zip(row) {
            *c += m;
        }
    }
    let col_err: f64 = cols.iter().zip(target).map(|(c, t)| (c - t).abs()).sum();
    (0.5 * row_err, 0.5 * col_err)
}

/// Convergence status of an iterative solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Stopped at `max_iter`; the attached result is the last iterate.
    Truncated,
}

/// Parameters of the entropic solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stopping threshold in total-variation units.
    pub tol: f64,
    /// Floor applied to every input probability; `None` means `1e-8 / support`.
    pub min_prob: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.01, max_iter: 10_000, tol: 1e-5, min_prob: None }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn validate(&self, support: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(OtError::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(OtError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(OtError::InvalidConfig("max_iter must be positive".into()));
        }
        let floor = self.floor_for(support);
        if !(floor > 0.0 && floor < 1.0 / support as f64) {
            return Err(OtError::InvalidConfig(format!(
                "min_prob must lie in (0, 1/{support}), got {floor}"
            )));
        }
        Ok(())
    }

    pub fn floor_for(&self, support: usize) -> f64 {
        self.min_prob.unwrap_or(1e-8 / support as f64)
    }
}

pub(crate) fn validate_weights(weights: &[f64], count: usize) -> Result<()> {
    if weights.len() != count {
        return Err(OtError::InvalidWeights(format!("expected {count} weights, got {}", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(OtError::InvalidWeights(format!("weight {w} is not positive")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(OtError::InvalidWeights(format!("weights sum to {total}")));
    }
    Ok(())
}

/// Regularization path used to warm-start the entropic solvers: halves from the
/// largest cost down to `target`, always ending exactly at `target`.
pub(crate) fn epsilon_schedule(target: f64, max_cost: f64) -> Vec<f64> {
    let mut stages = Vec::new();
    let mut eps = max_cost;
    while eps > 2.0 * target {
        stages.push(eps);
        eps *= 0.5;
    }
    stages.push(target);
    stages
}

/// Looser tolerance accepted before moving to the next (smaller) epsilon.
pub(crate) const STAGE_TOL: f64 = 1e-3;

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_euclidean_on_a_line() {
        let m = build_ground_metric(&[vec![0.0], vec![1.0], vec![2.0]], MetricKind::SquaredEuclidean).unwrap();
        assert_eq!(m.restricted(&[0, 1, 2]).unwrap(), vec![0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_one_ignores_embeddings() {
        let m = build_ground_metric(&[vec![3.0, 1.0], vec![3.0, 1.0], vec![-7.0, 0.5]], MetricKind::ZeroOne).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.cost(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn euclidean_diagonal_pair() {
        let m = build_ground_metric(&[vec![1.0, 0.0], vec![0.0, 1.0]], MetricKind::Euclidean).unwrap();
        assert_eq!(m.cost(0, 1), 2f64.sqrt());
        assert_eq!(m.cost(1, 0), 2f64.sqrt());
    }

    #[test]
    fn metric_input_errors() {
        assert_eq!(build_ground_metric(&[], MetricKind::Euclidean), Err(OtError::MetricTooSmallInput));
        assert!(matches!(
            build_ground_metric(&[vec![0.0], vec![1.0, 2.0]], MetricKind::Euclidean),
            Err(OtError::EmbeddingDimension { index: 1, .. })
        ));
        assert!(GroundMetric::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(GroundMetric::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn distribution_invariants() {
        assert!(Distribution::new(vec![0.5, 0.5], vec![0, 1]).is_ok());
        assert!(matches!(Distribution::new(vec![0.5, 0.6], vec![0, 1]), Err(OtError::NotNormalized(_))));
        assert!(matches!(Distribution::new(vec![-0.5, 1.5], vec![0, 1]), Err(OtError::InvalidProbability { .. })));
        assert_eq!(Distribution::new(vec![0.5, 0.5], vec![1, 1]), Err(OtError::UnsortedSupport(1)));
        assert_eq!(Distribution::new(vec![], vec![]), Err(OtError::EmptyDistribution));
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        let d = Distribution::new(vec![0.25, 0.375, 0.375], vec![3, 5, 9]).unwrap();
        assert_eq!(d.argmax(), 5);
        assert_eq!(d.prob_of(9), 0.375);
        assert_eq!(d.prob_of(4), 0.0);
    }

    #[test]
    fn sinkhorn_config_floor_bounds() {
        let cfg = SinkhornConfig { min_prob: Some(0.3), ..SinkhornConfig::default() };
        assert!(cfg.validate(4).is_err());
        assert!(cfg.validate(3).is_ok());
        assert!(SinkhornConfig::with_epsilon(0.0).validate(2).is_err());
    }
}
