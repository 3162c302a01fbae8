use std::cmp::Ordering;

use super::lp::LinearProgram;
use super::{
    check_same_support, epsilon_schedule, log_sum_exp, validate_weights, Distribution, GroundMetric, OtError, Result, SinkhornConfig,
    SolveStatus, EXACT_BARYCENTER_LIMIT, STAGE_TOL,
};

/// Exact barycenter and its objective `sum_k w_k W(P, P_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Barycenter {
    pub distribution: Distribution,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropicBarycenter {
    pub distribution: Distribution,
    pub iterations: usize,
    pub status: SolveStatus,
}

fn check_inputs(dists: &[Distribution], weights: &[f64]) -> Result<()> {
    if dists.len() < 2 {
        return Err(OtError::TooFewDistributions { needed: 2, got: dists.len() });
    }
    validate_weights(weights, dists.len())?;
    let refs: Vec<&Distribution> = dists.iter().collect();
    check_same_support(&refs)
}

/// Input order sorted by (weight, probabilities) so that permuting the inputs
/// produces the same arithmetic.
fn canonical_order(dists: &[Distribution], weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| {
        weights[a].total_cmp(&weights[b]).then_with(|| {
            dists[a]
                .probs()
                .iter()
                .zip(dists[b].probs())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    order
}

/// Exact Wasserstein barycenter over the shared support, solved as one joint
/// linear program: K couplings whose row marginals are a free common
/// distribution and whose column marginals are the inputs.
pub fn lp_barycenter(dists: &[Distribution], weights: &[f64], metric: &GroundMetric) -> Result<Barycenter> {
    lp_barycenter_limited(dists, weights, metric, EXACT_BARYCENTER_LIMIT)
}

pub fn lp_barycenter_limited(
    dists: &[Distribution],
    weights: &[f64],
    metric: &GroundMetric,
    max_support: usize,
) -> Result<Barycenter> {
    check_inputs(dists, weights)?;
    let n = dists[0].len();
    if n > max_support {
        return Err(OtError::SupportTooLarge { size: n, limit: max_support });
    }
    let support = dists[0].support().to_vec();
    let costs = metric.restricted(&support)?;
    let order = canonical_order(dists, weights);
    let k = dists.len();
    let bary_offset = k * n * n;

    let mut objective = vec![0.0; bary_offset + n];
    for (slot, &src) in order.iter().enumerate() {
        for (idx, c) in costs.iter().enumerate() {
            objective[slot * n * n + idx] = weights[src] * c;
        }
    }
    let mut lp = LinearProgram::new(objective);
    for (slot, &src) in order.iter().enumerate() {
        let base = slot * n * n;
        for i in 0..n {
            let mut row: Vec<(usize, f64)> = (0..n).map(|j| (base + i * n + j, 1.0)).collect();
            row.push((bary_offset + i, -1.0));
            lp.add_equality(row, 0.0);
        }
        for j in 0..n {
            lp.add_equality((0..n).map(|i| (base + i * n + j, 1.0)).collect(), dists[src].probs()[j]);
        }
    }
    let solution = lp.solve()?;
    let bary = solution.x[bary_offset..].to_vec();
    let distribution = Distribution::from_weights(bary, support)?;
    Ok(Barycenter { distribution, objective: solution.objective.max(0.0) })
}

/// Entropic barycenter by iterative Bregman projections in the log domain.
///
/// Inputs are floored by `cfg.min_prob` and renormalized. Iteration stops when
/// two successive (normalized) barycenter iterates are within `cfg.tol` in
/// total variation, or at `cfg.max_iter` with [`SolveStatus::Truncated`].
pub fn sinkhorn_barycenter(
    dists: &[Distribution],
    weights: &[f64],
    metric: &GroundMetric,
    cfg: &SinkhornConfig,
) -> Result<EntropicBarycenter> {
    check_inputs(dists, weights)?;
    let n = dists[0].len();
    cfg.validate(n)?;
    let support = dists[0].support().to_vec();
    let costs = metric.restricted(&support)?;
    let max_cost = costs.iter().copied().fold(0.0, f64::max);
    let floor = cfg.floor_for(n);
    let order = canonical_order(dists, weights);
    let targets: Vec<Vec<f64>> = order.iter().map(|&s| dists[s].floored(floor).probs().to_vec()).collect();
    let log_p: Vec<Vec<f64>> = targets.iter().map(|t| t.iter().map(|v| v.ln()).collect()).collect();
    let w: Vec<f64> = order.iter().map(|&s| weights[s]).collect();
    let k = order.len();

    // Dual potentials (cost units) on the barycenter side and the input side.
    let mut bary_pot = vec![vec![0.0; n]; k];
    let mut input_pot = vec![vec![0.0; n]; k];
    let mut log_row_marg = vec![vec![0.0; n]; k];
    let mut prev = vec![1.0 / n as f64; n];
    let mut current = prev.clone();
    let mut iterations = 0;
    let mut status = SolveStatus::Truncated;
    let stages = epsilon_schedule(cfg.epsilon, max_cost);
    let last = stages.len() - 1;

    'stages: for (stage, &eps) in stages.iter().enumerate() {
        let tol = if stage == last { cfg.tol } else { cfg.tol.max(STAGE_TOL) };
        while iterations < cfg.max_iter {
            iterations += 1;
            let mut input_violation: f64 = 0.0;
            for s in 0..k {
                let mut violation = 0.0;
                for j in 0..n {
                    let lse = log_sum_exp((0..n).map(|i| (bary_pot[s][i] - costs[i * n + j]) / eps));
                    violation += ((input_pot[s][j] / eps + lse).exp() - targets[s][j]).abs();
                    input_pot[s][j] = eps * (log_p[s][j] - lse);
                }
                input_violation = input_violation.max(0.5 * violation);
                for i in 0..n {
                    log_row_marg[s][i] = bary_pot[s][i] / eps
                        + log_sum_exp((0..n).map(|j| (input_pot[s][j] - costs[i * n + j]) / eps));
                }
            }
            let log_bary: Vec<f64> = (0..n).map(|i| (0..k).map(|s| w[s] * log_row_marg[s][i]).sum()).collect();
            for s in 0..k {
                for i in 0..n {
                    bary_pot[s][i] += eps * (log_bary[i] - log_row_marg[s][i]);
                }
            }
            if bary_pot.iter().chain(&input_pot).flatten().any(|v| !v.is_finite()) {
                return Err(OtError::Underflow(iterations));
            }
            let max = log_bary.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let unnorm: Vec<f64> = log_bary.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = unnorm.iter().sum();
            current = unnorm.into_iter().map(|v| v / total).collect();
            let change = 0.5 * current.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum::<f64>();
            prev.clone_from(&current);
            // The input-side violation is measured before this sweep's update,
            // so it certifies the previous iterate; require both to be small.
            if iterations > 1 && change <= tol && input_violation <= tol {
                if stage == last {
                    status = SolveStatus::Converged;
                }
                continue 'stages;
            }
        }
        break;
    }

    Ok(EntropicBarycenter { distribution: Distribution::from_weights(current, support)?, iterations, status })
}
