use super::{
    check_same_support, epsilon_schedule, log_sum_exp, marginal_errors, Distribution, GroundMetric, OtError, Result, SinkhornConfig,
    SolveStatus, TransportPlan, STAGE_TOL,
};

fn metric_max(costs: &[f64]) -> f64 {
    costs.iter().copied().fold(0.0, f64::max)
}

/// Outcome of an entropic transport solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    /// `<plan, costs>`, without the entropy term.
    pub cost: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Entropic optimal transport with log-domain Sinkhorn updates.
///
/// Inputs are floored by `cfg.min_prob` and renormalized first. The loop stops
/// once the row-marginal violation (total variation) drops to `cfg.tol`; column
/// marginals are exact after every sweep. Hitting `max_iter` is not an error:
/// the last iterate is returned with [`SolveStatus::Truncated`].
pub fn sinkhorn(p: &Distribution, q: &Distribution, metric: &GroundMetric, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    check_same_support(&[p, q])?;
    let n = p.len();
    cfg.validate(n)?;
    let costs = metric.restricted(p.support())?;
    let floor = cfg.floor_for(n);
    let a = p.floored(floor);
    let b = q.floored(floor);
    let log_a: Vec<f64> = a.probs().iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.probs().iter().map(|v| v.ln()).collect();

    // Dual potentials in cost units, carried across the epsilon path.
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut iterations = 0;
    let mut status = SolveStatus::Truncated;
    let stages = epsilon_schedule(cfg.epsilon, metric_max(&costs));
    let last = stages.len() - 1;
    'stages: for (stage, &eps) in stages.iter().enumerate() {
        let tol = if stage == last { cfg.tol } else { cfg.tol.max(STAGE_TOL) };
        while iterations < cfg.max_iter {
            iterations += 1;
            for i in 0..n {
                f[i] = eps * (log_a[i] - log_sum_exp((0..n).map(|j| (g[j] - costs[i * n + j]) / eps)));
            }
            for j in 0..n {
                g[j] = eps * (log_b[j] - log_sum_exp((0..n).map(|i| (f[i] - costs[i * n + j]) / eps)));
            }
            if f.iter().chain(&g).any(|v| !v.is_finite()) {
                return Err(OtError::Underflow(iterations));
            }
            let row_err: f64 = (0..n)
                .map(|i| {
                    let row = (0..n).map(|j| ((f[i] + g[j] - costs[i * n + j]) / eps).exp()).sum::<f64>();
                    (row - a.probs()[i]).abs()
                })
                .sum::<f64>()
                * 0.5;
            if row_err <= tol {
                if stage == last {
                    status = SolveStatus::Converged;
                }
                continue 'stages;
            }
        }
        break;
    }

    let eps = cfg.epsilon;
    let mass: Vec<f64> = (0..n * n).map(|k| ((f[k / n] + g[k % n] - costs[k]) / eps).exp()).collect();
    let (row_marginal_err, col_marginal_err) = marginal_errors(n, &mass, p.probs(), q.probs());
    let plan = TransportPlan { n, mass, row_marginal_err, col_marginal_err };
    let cost = plan.cost(&costs).max(0.0);
    Ok(SinkhornResult { plan, cost, iterations, status })
}
