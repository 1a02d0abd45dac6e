//! Network instances, fortification plans and their evaluation.

mod generate;
mod io;

use serde::{Deserialize, Serialize};

use crate::distributions::SeverityModel;
use crate::error::{Error, Result};

pub use generate::{generate_chain, generate_random, GeneratorParams, SeverityFamily};
pub use io::{read_instance, read_plan, read_report, write_instance, write_plan, write_report};

/// One row of the node table used to build an [`Instance`]. Ids are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: usize,
    pub parent: Option<usize>,
    pub weight: f64,
    pub cost: f64,
}

/// An immutable, validated tree network.
///
/// Nodes are indexed `0..n` internally; node `i` has public id `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    weight: Vec<f64>,
    cost: Vec<f64>,
    budget: f64,
    severity: SeverityModel,
    source: usize,
    /// Parents before children.
    order: Vec<usize>,
    /// Number of edges between the node and the source.
    depth: Vec<usize>,
}

impl Instance {
    pub fn build(nodes: &[NodeSpec], budget: f64, severity: SeverityModel) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        severity.validate()?;
        let mut parent = vec![None; n];
        let mut weight = vec![0.0; n];
        let mut cost = vec![0.0; n];
        let mut seen = vec![false; n];
        for spec in nodes {
            if spec.id == 0 || spec.id > n {
                return Err(Error::IdOutOfRange { id: spec.id, n });
            }
            let i = spec.id - 1;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::DuplicateId(spec.id));
            }
            if let Some(p) = spec.parent {
                if p == spec.id {
                    return Err(Error::Cycle(spec.id));
                }
                if p == 0 || p > n {
                    return Err(Error::UnknownParent { node: spec.id, parent: p });
                }
                parent[i] = Some(p - 1);
            }
            if !(spec.weight > 0.0 && spec.weight.is_finite()) {
                return Err(Error::NonPositive { field: "weight", node: spec.id, value: spec.weight });
            }
            if !(spec.cost > 0.0 && spec.cost.is_finite()) {
                return Err(Error::NonPositive { field: "cost", node: spec.id, value: spec.cost });
            }
            weight[i] = spec.weight;
            cost[i] = spec.cost;
        }

        let mut roots = (0..n).filter(|&i| parent[i].is_none());
        let source = roots.next().ok_or(Error::NoSource)?;
        if let Some(other) = roots.next() {
            return Err(Error::MultipleSources(source + 1, other + 1));
        }

        let mut children = vec![Vec::new(); n];
        for i in 0..n {
            if let Some(p) = parent[i] {
                children[p].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut depth = vec![0; n];
        order.push(source);
        let mut head = 0;
        while head < order.len() {
            let i = order[head];
            head += 1;
            for &j in &children[i] {
                depth[j] = depth[i] + 1;
                order.push(j);
            }
        }
        if order.len() < n {
            let mut reached = vec![false; n];
            for &i in &order {
                reached[i] = true;
            }
            let stray = (0..n).find(|&i| !reached[i]).unwrap_or(0);
            return Err(Error::Cycle(stray + 1));
        }

        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::NonPositiveBudget(budget));
        }
        let total: f64 = cost.iter().sum();
        if budget >= total {
            return Err(Error::TrivialBudget { budget, total });
        }

        Ok(Instance {
            parent,
            children,
            weight,
            cost,
            budget,
            severity,
            source,
            order,
            depth,
        })
    }

    /// Same network with a different severity model.
    pub fn with_severity(&self, severity: SeverityModel) -> Result<Self> {
        severity.validate()?;
        Ok(Instance { severity, ..self.clone() })
    }

    /// Same network with a different budget.
    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Instance::build(&self.node_specs(), budget, self.severity)
    }

    pub fn node_specs(&self) -> Vec<NodeSpec> {
        (0..self.len())
            .map(|i| NodeSpec {
                id: i + 1,
                parent: self.parent[i].map(|p| p + 1),
                weight: self.weight[i],
                cost: self.cost[i],
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn severity(&self) -> &SeverityModel {
        &self.severity
    }

    pub fn source(&self) -> usize {
        self.source
    }

    /// Nodes ordered so that every parent precedes its children.
    pub fn topo_order(&self) -> &[usize] {
        &self.order
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    /// Nodes on the path from `i` up to the source, `i` first.
    pub fn path(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut cur = i;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path
    }

    pub fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.cost.iter().sum()
    }

    /// For a series system, the nodes from the source down to the single leaf.
    pub fn chain_order(&self) -> Option<Vec<usize>> {
        if self.children.iter().any(|c| c.len() > 1) {
            return None;
        }
        Some(self.order.clone())
    }

    pub fn is_chain(&self) -> bool {
        self.children.iter().all(|c| c.len() <= 1)
    }

    /// `sum_{j in subtree(i)} v_j` for every `i`, subtree including `i`.
    pub fn subtree_sums(&self, values: &[f64]) -> Vec<f64> {
        let mut acc = values.to_vec();
        for &i in self.order.iter().rev() {
            if let Some(p) = self.parent[i] {
                acc[p] += acc[i];
            }
        }
        acc
    }

    /// `sum_{j on path(i)} v_j` for every `i`, path including `i` and the source.
    pub fn path_sums(&self, values: &[f64]) -> Vec<f64> {
        let mut acc = values.to_vec();
        for &i in &self.order {
            if let Some(p) = self.parent[i] {
                acc[i] += acc[p];
            }
        }
        acc
    }
}

/// Fortification level per node, indexed like the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FortificationPlan {
    pub levels: Vec<f64>,
}

impl FortificationPlan {
    pub fn new(levels: Vec<f64>) -> Self {
        FortificationPlan { levels }
    }

    pub fn zeros(n: usize) -> Self {
        FortificationPlan { levels: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn cost(&self, instance: &Instance) -> f64 {
        instance.costs().iter().zip(&self.levels).map(|(c, x)| c * x).sum()
    }

    fn check_dim(&self, instance: &Instance) -> Result<()> {
        if self.levels.len() != instance.len() {
            return Err(Error::DimensionMismatch {
                expected: instance.len(),
                got: self.levels.len(),
            });
        }
        Ok(())
    }
}

/// A violated constraint and by how much. Node ids are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Violation {
    Budget { excess: f64 },
    Precedence { node: usize, excess: f64 },
    Bounds { node: usize, value: f64 },
}

/// Expected customers served, `sum_i w_i F(x_i)`. Feasibility is not required.
///
/// Panics if the plan length differs from the instance size.
pub fn objective(instance: &Instance, plan: &FortificationPlan) -> f64 {
    assert_eq!(plan.len(), instance.len(), "plan dimension mismatch");
    let model = instance.severity();
    instance
        .weights()
        .iter()
        .zip(&plan.levels)
        .map(|(w, &x)| w * model.eval_cdf(x))
        .sum()
}

pub fn check_feasible(instance: &Instance, plan: &FortificationPlan, tol: f64) -> Result<Vec<Violation>> {
    plan.check_dim(instance)?;
    let mut out = Vec::new();
    let spent = plan.cost(instance);
    if spent > instance.budget() + tol {
        out.push(Violation::Budget { excess: spent - instance.budget() });
    }
    for (i, &x) in plan.levels.iter().enumerate() {
        if !(x >= -tol && x <= 1.0 + tol) {
            out.push(Violation::Bounds { node: i + 1, value: x });
        }
        if let Some(p) = instance.parent(i) {
            let excess = x - plan.levels[p];
            if excess > tol {
                out.push(Violation::Precedence { node: i + 1, excess });
            }
        }
    }
    Ok(out)
}

pub fn is_feasible(instance: &Instance, plan: &FortificationPlan) -> bool {
    matches!(check_feasible(instance, plan, crate::FEASIBILITY_TOL), Ok(v) if v.is_empty())
}

/// Expected customers without service, `sum_i w_i P(Y >= min_{j in path(i)} x_j)`.
///
/// Under precedence feasibility this is `sum w - objective`; otherwise the path
/// minima are evaluated explicitly.
pub fn expected_without_service(instance: &Instance, plan: &FortificationPlan) -> Result<f64> {
    plan.check_dim(instance)?;
    let precedence_ok = (0..instance.len()).all(|i| match instance.parent(i) {
        Some(p) => plan.levels[i] <= plan.levels[p] + crate::FEASIBILITY_TOL,
        None => true,
    });
    if precedence_ok {
        return Ok(instance.total_weight() - objective(instance, plan));
    }
    let model = instance.severity();
    let mut path_min = plan.levels.clone();
    let mut lost = 0.0;
    for &i in instance.topo_order() {
        if let Some(p) = instance.parent(i) {
            path_min[i] = path_min[i].min(path_min[p]);
        }
        lost += instance.weights()[i] * (1.0 - model.eval_cdf(path_min[i]));
    }
    Ok(lost)
}

/// Outcome of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub plan: FortificationPlan,
    pub objective: f64,
    pub method: String,
    pub upper_bound: Option<f64>,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl SolveReport {
    pub fn new(instance: &Instance, plan: FortificationPlan, method: &str) -> Self {
        let objective = objective(instance, &plan);
        SolveReport {
            plan,
            objective,
            method: method.to_string(),
            upper_bound: None,
            iterations: 0,
            wall_time: 0.0,
            flags: Vec::new(),
        }
    }

    /// Copy with the wall time zeroed, for byte-level comparisons between runs.
    pub fn without_timing(&self) -> Self {
        SolveReport { wall_time: 0.0, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain2(severity: SeverityModel) -> Instance {
        let nodes = vec![
            NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 },
            NodeSpec { id: 2, parent: Some(1), weight: 2.0, cost: 1.0 },
        ];
        Instance::build(&nodes, 1.0, severity).unwrap()
    }

    #[test]
    fn builds_minimal_chain() {
        let inst = chain2(SeverityModel::Uniform);
        assert_eq!(inst.len(), 2);
        assert!(inst.is_chain());
        assert_eq!(inst.leaves(), vec![1]);
        assert_eq!(inst.path(1), vec![1, 0]);
        assert_eq!(inst.chain_order(), Some(vec![0, 1]));
    }

    #[test]
    fn rejects_self_parent() {
        let nodes = vec![
            NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 },
            NodeSpec { id: 2, parent: Some(2), weight: 1.0, cost: 1.0 },
        ];
        let err = Instance::build(&nodes, 1.0, SeverityModel::Uniform).unwrap_err();
        assert!(matches!(err, Error::Cycle(2)));
        assert!(err.to_string().contains("cycle detected"));
    }

    #[test]
    fn rejects_longer_cycle() {
        let nodes = vec![
            NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 },
            NodeSpec { id: 2, parent: Some(3), weight: 1.0, cost: 1.0 },
            NodeSpec { id: 3, parent: Some(2), weight: 1.0, cost: 1.0 },
        ];
        assert!(matches!(
            Instance::build(&nodes, 1.0, SeverityModel::Uniform),
            Err(Error::Cycle(_))
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let ok = |w: f64, c: f64, b: f64| {
            let nodes = vec![
                NodeSpec { id: 1, parent: None, weight: w, cost: c },
                NodeSpec { id: 2, parent: Some(1), weight: 1.0, cost: 1.0 },
            ];
            Instance::build(&nodes, b, SeverityModel::Uniform)
        };
        assert!(matches!(ok(0.0, 1.0, 1.0), Err(Error::NonPositive { field: "weight", .. })));
        assert!(matches!(ok(1.0, -1.0, 1.0), Err(Error::NonPositive { field: "cost", .. })));
        assert!(matches!(ok(1.0, 1.0, 0.0), Err(Error::NonPositiveBudget(_))));
        assert!(matches!(ok(1.0, 1.0, 2.0), Err(Error::TrivialBudget { .. })));
        assert!(matches!(ok(1.0, 1.0, 3.0), Err(Error::TrivialBudget { .. })));
        let two_roots = vec![
            NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 },
            NodeSpec { id: 2, parent: None, weight: 1.0, cost: 1.0 },
        ];
        assert!(matches!(
            Instance::build(&two_roots, 1.0, SeverityModel::Uniform),
            Err(Error::MultipleSources(1, 2))
        ));
        let dangling = vec![
            NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 },
            NodeSpec { id: 2, parent: Some(7), weight: 1.0, cost: 1.0 },
        ];
        assert!(matches!(
            Instance::build(&dangling, 1.0, SeverityModel::Uniform),
            Err(Error::UnknownParent { node: 2, parent: 7 })
        ));
    }

    #[test]
    fn objective_examples() {
        let inst = chain2(SeverityModel::Uniform);
        assert_eq!(objective(&inst, &FortificationPlan::new(vec![1.0, 1.0])), 3.0);
        assert_eq!(objective(&inst, &FortificationPlan::zeros(2)), 0.0);
        let single = Instance::build(
            &[NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 }],
            0.5,
            SeverityModel::Triangular { beta: 0.4 },
        )
        .unwrap();
        assert_abs_diff_eq!(objective(&single, &FortificationPlan::new(vec![0.2])), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn feasibility_examples() {
        let inst = chain2(SeverityModel::Uniform);
        let v = check_feasible(&inst, &FortificationPlan::new(vec![0.3, 0.5]), 1e-9).unwrap();
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::Precedence { node, excess } => {
                assert_eq!(*node, 2);
                assert_abs_diff_eq!(*excess, 0.2, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(check_feasible(&inst, &FortificationPlan::zeros(2), 1e-9).unwrap().is_empty());
        let v = check_feasible(&inst, &FortificationPlan::new(vec![0.6, 0.6]), 1e-9).unwrap();
        match &v[..] {
            [Violation::Budget { excess }] => assert_abs_diff_eq!(*excess, 0.2, epsilon = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            check_feasible(&inst, &FortificationPlan::zeros(3), 1e-9),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn without_service_uses_path_minima() {
        let nodes = vec![
            NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 },
            NodeSpec { id: 2, parent: Some(1), weight: 1.0, cost: 1.0 },
        ];
        let inst = Instance::build(&nodes, 1.0, SeverityModel::Uniform).unwrap();
        let lost = expected_without_service(&inst, &FortificationPlan::new(vec![0.3, 0.5])).unwrap();
        // brute force: both nodes see min(0.3, .) = 0.3
        assert_abs_diff_eq!(lost, 0.7 + 0.7, epsilon = 1e-12);
        assert_eq!(expected_without_service(&inst, &FortificationPlan::new(vec![1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(expected_without_service(&inst, &FortificationPlan::zeros(2)).unwrap(), 2.0);
    }

    #[test]
    fn subtree_and_path_sums() {
        let nodes = vec![
            NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 },
            NodeSpec { id: 2, parent: Some(1), weight: 3.0, cost: 1.0 },
            NodeSpec { id: 3, parent: Some(1), weight: 3.0, cost: 1.0 },
            NodeSpec { id: 4, parent: Some(3), weight: 5.0, cost: 2.0 },
        ];
        let inst = Instance::build(&nodes, 2.0, SeverityModel::Uniform).unwrap();
        assert_eq!(inst.subtree_sums(inst.weights()), vec![12.0, 3.0, 8.0, 5.0]);
        assert_eq!(inst.path_sums(inst.costs()), vec![1.0, 2.0, 2.0, 4.0]);
        assert!(!inst.is_chain());
        assert_eq!(inst.depth(3), 2);
    }
}
