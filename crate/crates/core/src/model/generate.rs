use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Instance, NodeSpec};
use crate::distributions::SeverityModel;
use crate::error::{Error, Result};

/// Which severity family the generator attaches to a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeverityFamily {
    #[default]
    Triangular,
    Scurve,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub node_count: usize,
    /// Maximum number of edges between any node and the source.
    pub max_depth: usize,
    pub cost_range: (f64, f64),
    pub weight_range: (f64, f64),
    pub budget_fraction: f64,
    pub beta_range: (f64, f64),
    #[serde(default)]
    pub family: SeverityFamily,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            node_count: 50,
            max_depth: 10,
            cost_range: (1.0, 10.0),
            weight_range: (1.0, 10.0),
            budget_fraction: 0.5,
            beta_range: (0.0, 1.0),
            family: SeverityFamily::Triangular,
            seed: 0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.node_count < 1 {
            return bad("node_count must be at least 1".into());
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1".into());
        }
        for (name, (lo, hi)) in [("cost_range", self.cost_range), ("weight_range", self.weight_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} must be a positive interval, got [{lo}, {hi}]"));
            }
        }
        let (blo, bhi) = self.beta_range;
        if !(0.0 <= blo && blo <= bhi && bhi <= 1.0) {
            return bad(format!("beta_range must lie in [0, 1], got [{blo}, {bhi}]"));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction < 1.0) {
            return Err(Error::TrivialBudget {
                budget: self.budget_fraction,
                total: 1.0,
            });
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Random tree: node 1 is the source, each later node picks its parent
/// uniformly among earlier nodes whose depth is below `max_depth`.
///
/// Draw order is fixed (topology, costs, weights, beta), so the result is a
/// pure function of the parameters.
pub fn generate_random(params: &GeneratorParams) -> Result<Instance> {
    params.validate()?;
    let n = params.node_count;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut depth = vec![0usize; n];
    let mut eligible = vec![0usize];
    for i in 1..n {
        let p = eligible[rng.gen_range(0..eligible.len())];
        parent[i] = Some(p);
        depth[i] = depth[p] + 1;
        if depth[i] < params.max_depth {
            eligible.push(i);
        }
    }
    attach_data(params, parent, &mut rng)
}

/// Random series system: node `i + 1` hangs below node `i`. `max_depth` is ignored.
pub fn generate_chain(params: &GeneratorParams) -> Result<Instance> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let parent = (0..params.node_count).map(|i| i.checked_sub(1)).collect();
    attach_data(params, parent, &mut rng)
}

fn attach_data(params: &GeneratorParams, parent: Vec<Option<usize>>, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let n = parent.len();
    let costs: Vec<f64> = (0..n).map(|_| draw(rng, params.cost_range)).collect();
    let weights: Vec<f64> = (0..n).map(|_| draw(rng, params.weight_range)).collect();
    let beta = draw(rng, params.beta_range).clamp(1e-6, 1.0 - 1e-6);

    let severity = match params.family {
        SeverityFamily::Triangular => SeverityModel::Triangular { beta },
        SeverityFamily::Scurve => SeverityModel::SCurve { beta },
        SeverityFamily::Uniform => SeverityModel::Uniform,
    };
    let nodes: Vec<NodeSpec> = (0..n)
        .map(|i| NodeSpec {
            id: i + 1,
            parent: parent[i].map(|p| p + 1),
            weight: weights[i],
            cost: costs[i],
        })
        .collect();
    let budget = params.budget_fraction * costs.iter().sum::<f64>();
    Instance::build(&nodes, budget, severity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let p = GeneratorParams { seed: 7, ..Default::default() };
        assert_eq!(generate_random(&p).unwrap(), generate_random(&p).unwrap());
        let q = GeneratorParams { seed: 8, ..Default::default() };
        assert_ne!(generate_random(&p).unwrap(), generate_random(&q).unwrap());
    }

    #[test]
    fn respects_depth_limit() {
        for seed in 0..1000 {
            let p = GeneratorParams { node_count: 50, max_depth: 5, seed, ..Default::default() };
            let inst = generate_random(&p).unwrap();
            assert_eq!(inst.len(), 50);
            assert_eq!(inst.source(), 0);
            assert!(inst.max_depth() <= 5);
        }
        let p = GeneratorParams { node_count: 40, max_depth: 1, seed: 3, ..Default::default() };
        assert_eq!(generate_random(&p).unwrap().max_depth(), 1);
    }

    #[test]
    fn chains_are_series() {
        for seed in 0..20 {
            let p = GeneratorParams { node_count: 12, seed, ..Default::default() };
            let inst = generate_chain(&p).unwrap();
            assert!(inst.is_chain());
            assert_eq!(inst.max_depth(), 11);
            assert_eq!(generate_chain(&p).unwrap(), inst);
        }
    }

    #[test]
    fn budget_is_fraction_of_total_cost() {
        let p = GeneratorParams { budget_fraction: 0.5, seed: 11, ..Default::default() };
        let inst = generate_random(&p).unwrap();
        assert_eq!(inst.budget(), 0.5 * inst.costs().iter().sum::<f64>());
    }

    #[test]
    fn rejects_invalid_params() {
        let p = GeneratorParams { max_depth: 0, ..Default::default() };
        assert!(generate_random(&p).is_err());
        let p = GeneratorParams { node_count: 0, ..Default::default() };
        assert!(generate_random(&p).is_err());
        let p = GeneratorParams { budget_fraction: 1.0, ..Default::default() };
        assert!(matches!(generate_random(&p), Err(Error::TrivialBudget { .. })));
        let p = GeneratorParams { cost_range: (0.0, 1.0), ..Default::default() };
        assert!(generate_random(&p).is_err());
    }
}
