use super::lp::LinearProgram;
use super::{check_same_support, Distribution, GroundMetric, OtError, Result, TransportPlan, EXACT_TRANSPORT_LIMIT};

/// Optimal transport cost together with an optimal coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTransport {
    pub cost: f64,
    pub plan: TransportPlan,
}

/// Unregularized Wasserstein cost between `p` and `q` under `metric`, solved as
/// the transportation linear program. Supports above 64 ids are rejected.
pub fn exact_wasserstein(p: &Distribution, q: &Distribution, metric: &GroundMetric) -> Result<ExactTransport> {
    exact_wasserstein_limited(p, q, metric, EXACT_TRANSPORT_LIMIT)
}

pub fn exact_wasserstein_limited(
    p: &Distribution,
    q: &Distribution,
    metric: &GroundMetric,
    max_support: usize,
) -> Result<ExactTransport> {
    check_same_support(&[p, q])?;
    let n = p.len();
    if n > max_support {
        return Err(OtError::SupportTooLarge { size: n, limit: max_support });
    }
    let costs = metric.restricted(p.support())?;
    let mut lp = LinearProgram::new(costs.clone());
    for i in 0..n {
        lp.add_equality((0..n).map(|j| (i * n + j, 1.0)).collect(), p.probs()[i]);
    }
    for j in 0..n {
        lp.add_equality((0..n).map(|i| (i * n + j, 1.0)).collect(), q.probs()[j]);
    }
    let solution = lp.solve()?;
    let plan = TransportPlan::from_mass(n, solution.x, p.probs(), q.probs());
    Ok(ExactTransport { cost: plan.cost(&costs).max(0.0), plan })
}
