//! Independent oracles: exhaustive lattice search and Monte Carlo simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{concave_envelope, SeverityModel, ENVELOPE_TOL};
use crate::error::{Error, Result};
use crate::model::{objective, FortificationPlan, Instance};

/// Largest instance the lattice search accepts.
pub const GRID_MAX_NODES: usize = 10;
/// Largest number of precedence-feasible lattice points the search accepts.
pub const GRID_MAX_POINTS: f64 = 1e13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOracleResult {
    pub plan: FortificationPlan,
    pub objective: f64,
    /// Lattice nodes visited by the search.
    pub evaluated: u64,
}

/// Number of lattice points `0 <= k_i <= k_parent <= levels - 1`, ignoring the budget.
pub fn lattice_size(instance: &Instance, levels: usize) -> f64 {
    // count[i][k]: assignments of subtree(i) with node i at level index k
    let mut count = vec![vec![0.0f64; levels]; instance.len()];
    for &i in instance.topo_order().iter().rev() {
        for k in 0..levels {
            count[i][k] = instance
                .children(i)
                .iter()
                .map(|&j| count[j][..=k].iter().sum::<f64>())
                .product();
        }
    }
    count[instance.source()].iter().sum()
}

struct Search<'a> {
    order: Vec<usize>,
    /// Nodes sorted by decreasing `w / c`, for the relaxation bound.
    by_ratio: Vec<usize>,
    position: Vec<usize>,
    grid: Vec<f64>,
    cdf: Vec<f64>,
    slope: f64,
    instance: &'a Instance,
    level: Vec<usize>,
    best_value: f64,
    best_level: Vec<usize>,
    evaluated: u64,
    budget_cap: f64,
}

impl Search<'_> {
    /// Upper bound on the value still obtainable from nodes at `order[pos..]`.
    fn remaining_bound(&self, pos: usize, residual: f64) -> f64 {
        let inst = self.instance;
        let mut left = residual;
        let mut total = 0.0;
        for &j in &self.by_ratio {
            if self.position[j] < pos {
                continue;
            }
            let cap_idx = match inst.parent(j) {
                Some(p) if self.position[p] < pos => self.level[p],
                _ => self.grid.len() - 1,
            };
            if cap_idx == 0 {
                continue;
            }
            let gain_cap = self.cdf[cap_idx];
            // w F(x) <= w min(slope x, F(cap)); linear part reaches the cap at x = F(cap)/slope
            let x_full = (gain_cap / self.slope).min(self.grid[cap_idx]);
            let w = inst.weights()[j];
            let c = inst.costs()[j];
            if left >= c * x_full {
                left -= c * x_full;
                total += w * gain_cap.min(self.slope * x_full);
            } else {
                total += w * self.slope * left / c;
                break;
            }
        }
        total
    }

    fn dfs(&mut self, pos: usize, spent: f64, value: f64) {
        self.evaluated += 1;
        if pos == self.order.len() {
            if value > self.best_value {
                self.best_value = value;
                self.best_level = self.level.clone();
            }
            return;
        }
        let residual = self.budget_cap - spent;
        if value + self.remaining_bound(pos, residual) <= self.best_value {
            return;
        }
        let i = self.order[pos];
        let inst = self.instance;
        let cap = inst.parent(i).map_or(self.grid.len() - 1, |p| self.level[p]);
        let c = inst.costs()[i];
        let mut top = cap;
        while top > 0 && c * self.grid[top] > residual {
            top -= 1;
        }
        let w = inst.weights()[i];
        let last = pos + 1 == self.order.len();
        let bottom = if last { top } else { 0 };
        for k in (bottom..=top).rev() {
            self.level[i] = k;
            self.dfs(pos + 1, spent + c * self.grid[k], value + w * self.cdf[k]);
        }
        self.level[i] = 0;
    }
}

/// Best plan with every level an integer multiple of `step`, by depth-first
/// branch and bound over the precedence-respecting lattice.
pub fn grid_oracle(instance: &Instance, step: f64) -> Result<GridOracleResult> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::InvalidArgument(format!("grid step must lie in (0, 0.5], got {step}")));
    }
    let k_max = (1.0 / step + 1e-9).floor() as usize;
    let levels = k_max + 1;
    let n = instance.len();
    if n > GRID_MAX_NODES {
        return Err(Error::OracleTooLarge { n, estimate: (levels as f64).powi(n as i32) });
    }
    let estimate = lattice_size(instance, levels);
    if estimate > GRID_MAX_POINTS {
        return Err(Error::OracleTooLarge { n, estimate });
    }

    let grid: Vec<f64> = (0..levels)
        .map(|k| {
            let x = k as f64 * step;
            if (x - 1.0).abs() <= 1e-9 {
                1.0
            } else {
                x
            }
        })
        .collect();
    let model = instance.severity();
    let cdf: Vec<f64> = grid.iter().map(|&x| model.eval_cdf(x)).collect();
    let envelope = concave_envelope(model, ENVELOPE_TOL);
    // the envelope is concave with value 0 at 0, so its initial slope bounds F(x)/x
    let slope = envelope.slope.max(envelope.derivative(0.0)) * (1.0 + 1e-9);

    let order = instance.topo_order().to_vec();
    let mut position = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        position[i] = p;
    }
    let mut by_ratio: Vec<usize> = (0..n).collect();
    by_ratio.sort_by(|&a, &b| {
        let ra = instance.weights()[a] / instance.costs()[a];
        let rb = instance.weights()[b] / instance.costs()[b];
        rb.total_cmp(&ra).then(a.cmp(&b))
    });

    let mut search = Search {
        order,
        by_ratio,
        position,
        grid,
        cdf,
        slope,
        instance,
        level: vec![0; n],
        best_value: f64::NEG_INFINITY,
        best_level: vec![0; n],
        evaluated: 0,
        budget_cap: instance.budget() * (1.0 + 1e-12),
    };
    search.dfs(0, 0.0, 0.0);

    let plan = FortificationPlan::new(search.best_level.iter().map(|&k| search.grid[k]).collect());
    Ok(GridOracleResult {
        objective: objective(instance, &plan),
        plan,
        evaluated: search.evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// Mean number of customers served.
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Monte Carlo estimate of the expected number of customers served.
///
/// A node is served when the severity draw is strictly below the smallest
/// level on its path to the source.
pub fn mc_estimate(instance: &Instance, plan: &FortificationPlan, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    if plan.len() != instance.len() {
        return Err(Error::DimensionMismatch { expected: instance.len(), got: plan.len() });
    }
    let mut path_min = plan.levels.clone();
    for &i in instance.topo_order() {
        if let Some(p) = instance.parent(i) {
            path_min[i] = path_min[i].min(path_min[p]);
        }
    }
    // served weight for a draw y is the total weight with path minimum above y
    let mut pairs: Vec<(f64, f64)> = path_min.into_iter().zip(instance.weights().iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let thresholds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut suffix = vec![0.0; pairs.len() + 1];
    for k in (0..pairs.len()).rev() {
        suffix[k] = suffix[k + 1] + pairs[k].1;
    }

    let model = instance.severity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..samples {
        let y = sample_severity(model, &mut rng);
        let first_above = thresholds.partition_point(|&t| t <= y);
        let served = suffix[first_above];
        let delta = served - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (served - mean);
    }
    let stderr = if samples > 1 {
        (m2 / (samples - 1) as f64).sqrt() / (samples as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { mean, stderr, samples, seed })
}

/// One severity draw by inverse-CDF sampling.
pub fn sample_severity<R: Rng + ?Sized>(model: &SeverityModel, rng: &mut R) -> f64 {
    model.quantile(rng.gen::<f64>())
}

/// Kolmogorov distance between `draws` inverse-CDF samples and the model CDF.
pub fn ks_distance(model: &SeverityModel, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ys: Vec<f64> = (0..draws).map(|_| sample_severity(model, &mut rng)).collect();
    ys.sort_by(f64::total_cmp);
    let n = draws as f64;
    ys.iter()
        .enumerate()
        .map(|(k, &y)| {
            let f = model.eval_cdf(y);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_random, is_feasible, GeneratorParams, NodeSpec};
    use approx::assert_abs_diff_eq;

    fn build(parents: &[Option<usize>], w: &[f64], c: &[f64], budget: f64, model: SeverityModel) -> Instance {
        let nodes: Vec<NodeSpec> = (0..w.len())
            .map(|i| NodeSpec { id: i + 1, parent: parents[i], weight: w[i], cost: c[i] })
            .collect();
        Instance::build(&nodes, budget, model).unwrap()
    }

    /// Plain enumeration without bounds, for cross-checking the search.
    fn brute_force(instance: &Instance, step: f64) -> f64 {
        let k_max = (1.0 / step + 1e-9).floor() as usize;
        let n = instance.len();
        let order = instance.topo_order().to_vec();
        let mut levels = vec![0usize; n];
        let mut best = f64::NEG_INFINITY;
        fn rec(
            pos: usize,
            order: &[usize],
            levels: &mut Vec<usize>,
            inst: &Instance,
            step: f64,
            k_max: usize,
            best: &mut f64,
        ) {
            if pos == order.len() {
                let plan = FortificationPlan::new(levels.iter().map(|&k| (k as f64 * step).min(1.0)).collect());
                if plan.cost(inst) <= inst.budget() * (1.0 + 1e-12) {
                    *best = best.max(objective(inst, &plan));
                }
                return;
            }
            let i = order[pos];
            let cap = inst.parent(i).map_or(k_max, |p| levels[p]);
            for k in 0..=cap {
                levels[i] = k;
                rec(pos + 1, order, levels, inst, step, k_max, best);
            }
        }
        rec(0, &order, &mut levels, instance, step, k_max, &mut best);
        best
    }

    #[test]
    fn spec_cases() {
        let chain = build(&[None, Some(1)], &[1.0, 2.0], &[1.0, 1.0], 1.0, SeverityModel::Uniform);
        let r = grid_oracle(&chain, 0.01).unwrap();
        assert_abs_diff_eq!(r.objective, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.plan.levels[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.plan.levels[1], 0.5, epsilon = 1e-12);

        let one = build(&[None], &[1.0], &[1.0], 0.37, SeverityModel::Uniform);
        let r = grid_oracle(&one, 0.1).unwrap();
        assert_abs_diff_eq!(r.plan.levels[0], 0.3, epsilon = 1e-12);

        let star = build(&[None, Some(1), Some(1)], &[1.0, 3.0, 3.0], &[1.0; 3], 2.0, SeverityModel::Uniform);
        let r = grid_oracle(&star, 1.0 / 30.0).unwrap();
        assert_abs_diff_eq!(r.objective, 14.0 / 3.0, epsilon = 1e-9);
        for &x in &r.plan.levels {
            assert_abs_diff_eq!(x, 2.0 / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn refuses_large_instances() {
        let p = GeneratorParams { node_count: 12, seed: 1, ..Default::default() };
        let inst = generate_random(&p).unwrap();
        assert!(matches!(grid_oracle(&inst, 0.02), Err(Error::OracleTooLarge { n: 12, .. })));
        assert!(matches!(grid_oracle(&inst, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(grid_oracle(&inst, 0.6), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lattice_size_counts() {
        let chain = build(&[None, Some(1)], &[1.0; 2], &[1.0; 2], 1.0, SeverityModel::Uniform);
        // pairs 0 <= k2 <= k1 <= 2
        assert_eq!(lattice_size(&chain, 3), 6.0);
        let star = build(&[None, Some(1), Some(1)], &[1.0; 3], &[1.0; 3], 1.0, SeverityModel::Uniform);
        // sum_k (k+1)^2 for k = 0..2
        assert_eq!(lattice_size(&star, 3), 14.0);
    }

    #[test]
    fn branch_and_bound_matches_enumeration() {
        for seed in 0..25 {
            let p = GeneratorParams {
                node_count: 5,
                max_depth: 3,
                budget_fraction: [0.2, 0.5, 0.75][seed as usize % 3],
                seed,
                ..Default::default()
            };
            let inst = generate_random(&p).unwrap();
            let r = grid_oracle(&inst, 0.125).unwrap();
            assert!(is_feasible(&inst, &r.plan));
            for &x in &r.plan.levels {
                assert_abs_diff_eq!((x / 0.125).round() * 0.125, x, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(r.objective, brute_force(&inst, 0.125), epsilon = 1e-12);
        }
    }

    #[test]
    fn monte_carlo_cases() {
        let inst = build(&[None, Some(1)], &[1.0, 2.0], &[1.0; 2], 1.0, SeverityModel::Triangular { beta: 0.5 });
        let zero = mc_estimate(&inst, &FortificationPlan::zeros(2), 1000, 1).unwrap();
        assert_eq!(zero.mean, 0.0);
        assert_eq!(zero.stderr, 0.0);
        let full = mc_estimate(&inst, &FortificationPlan::new(vec![1.0, 1.0]), 1000, 1).unwrap();
        assert_eq!(full.mean, 3.0);

        let one = build(&[None], &[1.0], &[1.0], 0.5, SeverityModel::Triangular { beta: 0.5 });
        let est = mc_estimate(&one, &FortificationPlan::new(vec![0.5]), 100_000, 17).unwrap();
        assert!((est.mean - 0.5).abs() <= 4.0 * est.stderr, "{est:?}");
        assert_eq!(est, mc_estimate(&one, &FortificationPlan::new(vec![0.5]), 100_000, 17).unwrap());
        assert!(mc_estimate(&one, &FortificationPlan::new(vec![0.5]), 0, 1).is_err());
    }

    #[test]
    fn path_minimum_governs_service() {
        // child level above its parent is capped by the parent
        let inst = build(&[None, Some(1)], &[1.0, 1.0], &[1.0; 2], 1.0, SeverityModel::Uniform);
        let plan = FortificationPlan::new(vec![0.3, 0.9]);
        let est = mc_estimate(&inst, &plan, 200_000, 3).unwrap();
        assert!((est.mean - 0.6).abs() <= 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn sampler_matches_cdf() {
        for model in [
            SeverityModel::Uniform,
            SeverityModel::Triangular { beta: 0.3 },
            SeverityModel::SCurve { beta: 0.6 },
            SeverityModel::TruncatedNormal { mean: 0.5, std: 0.15 },
        ] {
            assert!(ks_distance(&model, 200_000, 11) < 0.005, "{model:?}");
        }
    }
}
