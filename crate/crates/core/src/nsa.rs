//! Multi-start network search heuristic for general trees.
//!
//! Each node carries a label: fully fortified, in the concave region of the
//! CDF (`Cap`), in the convex region (`Cup`) or unfortified. Local procedures
//! move nodes between labels and re-level the free nodes, either uniformly or
//! by solving the two-group KKT system. Every combination of starting plan and
//! priority metric is searched and the best plan found is returned.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::distributions::SeverityModel;
use crate::envelope::{
    solve_envelope_relaxation, solve_envelope_relaxation_until, RelaxationResult, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::model::{is_feasible, objective, FortificationPlan, Instance, SolveReport};
use crate::error::{Error, Result};
use crate::series::{solve_two_group_system, GroupAggregates, ROOT_TOL};

/// Levels at or above `1 - ONE_TOL` count as fully fortified.
pub const ONE_TOL: f64 = 1e-6;
/// Levels at or below `ZERO_TOL` count as unfortified.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    One,
    Cap,
    Cup,
    Zero,
}

impl Label {
    pub fn classify(x: f64, beta: f64) -> Label {
        if x >= 1.0 - ONE_TOL {
            Label::One
        } else if x <= ZERO_TOL {
            Label::Zero
        } else if x <= beta {
            Label::Cup
        } else {
            Label::Cap
        }
    }

    pub fn is_free(self) -> bool {
        matches!(self, Label::Cap | Label::Cup)
    }

    /// Position in the order `Zero < Cup < Cap < One` that holds along every root path.
    pub fn rank(self) -> u8 {
        match self {
            Label::One => 3,
            Label::Cap => 2,
            Label::Cup => 1,
            Label::Zero => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    KnapsackRatio,
    SubtreeOverCost,
    SubtreeOverPathCost,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] =
        [MetricKind::KnapsackRatio, MetricKind::SubtreeOverCost, MetricKind::SubtreeOverPathCost];
}

/// Node priorities `theta` for one metric kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityMetric {
    pub kind: MetricKind,
    pub theta: Vec<f64>,
}

impl PriorityMetric {
    pub fn compute(instance: &Instance, kind: MetricKind) -> Self {
        let w = instance.weights();
        let c = instance.costs();
        let theta = match kind {
            MetricKind::KnapsackRatio => w.iter().zip(c).map(|(w, c)| w / c).collect(),
            MetricKind::SubtreeOverCost => {
                let sub = instance.subtree_sums(w);
                sub.iter().zip(c).map(|(s, c)| s / c).collect()
            }
            MetricKind::SubtreeOverPathCost => {
                let sub = instance.subtree_sums(w);
                let path = instance.path_sums(c);
                sub.iter().zip(&path).map(|(s, p)| s / p).collect()
            }
        };
        PriorityMetric { kind, theta }
    }
}

/// `phi_i`: weight over cost accumulated along the path from the source to `i`.
pub fn cumulative_ratio(instance: &Instance) -> Vec<f64> {
    let pw = instance.path_sums(instance.weights());
    let pc = instance.path_sums(instance.costs());
    pw.iter().zip(&pc).map(|(w, c)| w / c).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NsaParams {
    /// A sweep whose objective change is at most this ends the search of a start.
    pub epsilon: f64,
    /// Consecutive non-improving applications before a procedure yields.
    pub max_no_improve: usize,
    pub metrics: Vec<MetricKind>,
    /// Root-finding tolerance for the group system.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Seconds; checked between procedure applications.
    pub time_limit: Option<f64>,
}

impl Default for NsaParams {
    fn default() -> Self {
        NsaParams {
            epsilon: 1e-6,
            max_no_improve: 10,
            metrics: MetricKind::ALL.to_vec(),
            tol: ROOT_TOL,
            max_sweeps: 100,
            time_limit: None,
        }
    }
}

impl NsaParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.into()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.max_no_improve == 0 || self.max_sweeps == 0 {
            return bad("max_no_improve and max_sweeps must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.metrics.is_empty() {
            return bad("at least one priority metric is required");
        }
        if self.time_limit.is_some_and(|t| !(t >= 0.0)) {
            return bad("time_limit must be nonnegative");
        }
        Ok(())
    }
}

/// Labelled plan during the search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub labels: Vec<Label>,
    pub plan: FortificationPlan,
    pub objective: f64,
    beta: f64,
}

impl SearchState {
    /// Labels a feasible plan. Near-one levels are snapped to one and
    /// near-zero levels to zero; any budget this adds is taken back from
    /// the free nodes.
    pub fn from_plan(instance: &Instance, plan: &FortificationPlan) -> Self {
        let beta = instance.severity().convex_limit();
        let mut levels = plan.levels.clone();
        let labels: Vec<Label> = levels.iter().map(|&x| Label::classify(x, beta)).collect();
        for (x, l) in levels.iter_mut().zip(&labels) {
            match l {
                Label::One => *x = 1.0,
                Label::Zero => *x = 0.0,
                _ => {}
            }
        }
        let costs = instance.costs();
        let spent: f64 = levels.iter().zip(costs).map(|(x, c)| x * c).sum();
        let excess = spent - instance.budget();
        if excess > 0.0 {
            let free_cost: f64 = (0..levels.len()).filter(|&i| labels[i].is_free()).map(|i| costs[i]).sum();
            if free_cost > 0.0 {
                let cut = excess / free_cost;
                for i in 0..levels.len() {
                    if labels[i].is_free() {
                        levels[i] = (levels[i] - cut).max(0.0);
                    }
                }
            } else {
                levels.clone_from(&plan.levels);
            }
        }
        let mut state = SearchState {
            labels,
            plan: FortificationPlan::new(levels),
            objective: 0.0,
            beta,
        };
        state.relabel();
        state.objective = objective(instance, &state.plan);
        state
    }

    fn relabel(&mut self) {
        for (l, &x) in self.labels.iter_mut().zip(&self.plan.levels) {
            *l = Label::classify(x, self.beta);
        }
    }

    fn refresh(&mut self, instance: &Instance) {
        self.relabel();
        self.objective = objective(instance, &self.plan);
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.labels[i] != Label::Zero
    }

    /// Active nodes with no active child.
    pub fn leaves(&self, instance: &Instance) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.is_active(i) && instance.children(i).iter().all(|&j| !self.is_active(j)))
            .collect()
    }

    /// Inactive children of the active leaves.
    pub fn successors(&self, instance: &Instance) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .leaves(instance)
            .into_iter()
            .flat_map(|i| instance.children(i).iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn free(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_free()).collect()
    }

    /// Degree of `i` in the subgraph induced by the active nodes.
    pub fn degree(&self, instance: &Instance, i: usize) -> usize {
        let up = instance.parent(i).map_or(0, |p| usize::from(self.is_active(p)));
        up + instance.children(i).iter().filter(|&&j| self.is_active(j)).count()
    }

    fn one_cost(&self, instance: &Instance) -> f64 {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == Label::One)
            .map(|i| instance.costs()[i])
            .sum()
    }

    /// Puts every free node at the common level `min((B - C_1) / C_F, 1)`.
    fn relevel_free(&mut self, instance: &Instance) {
        let free = self.free();
        let free_cost: f64 = free.iter().map(|&i| instance.costs()[i]).sum();
        if free_cost > 0.0 {
            let ceiling = free
                .iter()
                .filter_map(|&i| instance.parent(i))
                .filter(|&p| self.labels[p] == Label::One)
                .map(|p| self.plan.levels[p])
                .fold(1.0, f64::min);
            let t = ((instance.budget() - self.one_cost(instance)) / free_cost).clamp(0.0, ceiling);
            for &i in &free {
                self.plan.levels[i] = t;
            }
        }
        self.refresh(instance);
    }
}

/// Re-solves the free levels from the current labels: a common level per
/// group, the two levels tied by the budget and the marginal identity.
/// `None` when the residual budget is negative or the system has no root.
pub fn solve_group_system(state: &SearchState, instance: &Instance, model: &SeverityModel, tol: f64) -> Option<FortificationPlan> {
    let w = instance.weights();
    let c = instance.costs();
    let mut agg = GroupAggregates { w_cup: 0.0, c_cup: 0.0, w_cap: 0.0, c_cap: 0.0 };
    let mut c_one = 0.0;
    for (i, l) in state.labels.iter().enumerate() {
        match l {
            Label::One => c_one += c[i],
            Label::Cap => {
                agg.w_cap += w[i];
                agg.c_cap += c[i];
            }
            Label::Cup => {
                agg.w_cup += w[i];
                agg.c_cup += c[i];
            }
            Label::Zero => {}
        }
    }
    let residual = instance.budget() - c_one;
    if residual < 0.0 {
        return None;
    }
    let (x_cap, x_cup) = if agg.c_cup > 0.0 && agg.c_cap > 0.0 {
        let sol = solve_two_group_system(&agg, residual, model, tol)?;
        (sol.x_cap, sol.x_cup)
    } else if agg.c_cup > 0.0 || agg.c_cap > 0.0 {
        let t = (residual / (agg.c_cup + agg.c_cap)).min(1.0);
        (t, t)
    } else {
        return None;
    };
    let levels = state
        .labels
        .iter()
        .zip(&state.plan.levels)
        .map(|(l, &x)| match l {
            Label::One => x,
            Label::Cap => x_cap,
            Label::Cup => x_cup,
            Label::Zero => 0.0,
        })
        .collect();
    Some(FortificationPlan::new(levels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    DeleteNode,
    AddNode,
    MaxFortification,
    SetAssignmentI,
    SetAssignmentII,
    SetAssignmentIII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Applied,
    /// Empty candidate set or inapplicable move; state unchanged.
    NoOp,
    /// The group system had no solution; state unchanged.
    Absent,
}

fn argmin_theta(candidates: impl IntoIterator<Item = usize>, theta: &[f64]) -> Option<usize> {
    candidates.into_iter().fold(None, |best, j| match best {
        Some(b) if theta[b] <= theta[j] => Some(b),
        _ => Some(j),
    })
}

fn argmax_theta(candidates: impl IntoIterator<Item = usize>, theta: &[f64]) -> Option<usize> {
    candidates.into_iter().fold(None, |best, j| match best {
        Some(b) if theta[b] >= theta[j] => Some(b),
        _ => Some(j),
    })
}

fn lexmax_degree(state: &SearchState, instance: &Instance, candidates: &[usize], theta: &[f64]) -> Option<usize> {
    candidates.iter().copied().fold(None, |best, j| match best {
        Some(b) => {
            let (db, dj) = (state.degree(instance, b), state.degree(instance, j));
            if dj > db || (dj == db && theta[j] > theta[b]) {
                Some(j)
            } else {
                Some(b)
            }
        }
        None => Some(j),
    })
}

fn apply_group_solution(state: &mut SearchState, instance: &Instance, tol: f64) -> Outcome {
    match solve_group_system(state, instance, instance.severity(), tol) {
        Some(plan) => {
            state.plan = plan;
            state.refresh(instance);
            Outcome::Applied
        }
        None => Outcome::Absent,
    }
}

/// One application of a local procedure. Ties are broken by the smallest node index.
pub fn run_procedure(
    state: &SearchState,
    instance: &Instance,
    kind: Procedure,
    theta: &[f64],
    tol: f64,
) -> (SearchState, Outcome) {
    let mut next = state.clone();
    let outcome = match kind {
        Procedure::DeleteNode => match argmin_theta(state.leaves(instance), theta) {
            Some(i) => {
                next.plan.levels[i] = 0.0;
                next.labels[i] = Label::Zero;
                next.relevel_free(instance);
                Outcome::Applied
            }
            None => Outcome::NoOp,
        },
        Procedure::AddNode => match argmax_theta(state.successors(instance), theta) {
            Some(i) => {
                next.labels[i] = Label::Cap;
                next.relevel_free(instance);
                Outcome::Applied
            }
            None => Outcome::NoOp,
        },
        Procedure::MaxFortification => {
            let free = state.free();
            match lexmax_degree(state, instance, &free, theta) {
                Some(i) => {
                    let path: Vec<usize> = instance.path(i).into_iter().filter(|&j| state.labels[j].is_free()).collect();
                    let path_cost: f64 = path.iter().map(|&j| instance.costs()[j]).sum();
                    if instance.budget() - state.one_cost(instance) >= path_cost {
                        for &j in &path {
                            next.plan.levels[j] = 1.0;
                            next.labels[j] = Label::One;
                        }
                        next.relevel_free(instance);
                        Outcome::Applied
                    } else {
                        Outcome::NoOp
                    }
                }
                None => Outcome::NoOp,
            }
        }
        Procedure::SetAssignmentI => {
            let cup: Vec<usize> = (0..state.labels.len()).filter(|&j| state.labels[j] == Label::Cup).collect();
            match lexmax_degree(state, instance, &cup, theta) {
                Some(i) => {
                    for j in instance.path(i) {
                        if next.labels[j] == Label::Cup {
                            next.labels[j] = Label::Cap;
                        }
                    }
                    apply_group_solution(&mut next, instance, tol)
                }
                None => Outcome::NoOp,
            }
        }
        Procedure::SetAssignmentII => {
            let leaves = state.leaves(instance).into_iter().filter(|&j| state.labels[j] == Label::Cap);
            match argmin_theta(leaves, theta) {
                Some(i) => {
                    next.labels[i] = Label::Cup;
                    apply_group_solution(&mut next, instance, tol)
                }
                None => Outcome::NoOp,
            }
        }
        Procedure::SetAssignmentIII => {
            let zeros = (0..state.labels.len()).filter(|&j| state.labels[j] == Label::Zero);
            match argmax_theta(zeros, theta) {
                Some(i) => {
                    for j in instance.path(i) {
                        next.labels[j] = match next.labels[j] {
                            Label::Cup => Label::Cap,
                            Label::Zero => Label::Cup,
                            other => other,
                        };
                    }
                    apply_group_solution(&mut next, instance, tol)
                }
                None => Outcome::NoOp,
            }
        }
    };
    match outcome {
        Outcome::Applied => {
            debug_assert!(is_feasible(instance, &next.plan), "{kind:?} produced an infeasible plan");
            (next, outcome)
        }
        _ => (state.clone(), outcome),
    }
}

/// Starting plans, each tagged with a short name. Plans the budget rules out are omitted.
pub fn initial_solutions(instance: &Instance) -> Vec<(String, FortificationPlan)> {
    let relaxation = solve_envelope_relaxation(instance, DEFAULT_TOL, DEFAULT_MAX_ITER);
    initial_solutions_with(instance, &relaxation)
}

fn equal_on(instance: &Instance, set: &[bool]) -> FortificationPlan {
    let cost: f64 = (0..instance.len()).filter(|&i| set[i]).map(|i| instance.costs()[i]).sum();
    let t = (instance.budget() / cost).min(1.0);
    FortificationPlan::new((0..instance.len()).map(|i| if set[i] { t } else { 0.0 }).collect())
}

fn initial_solutions_with(instance: &Instance, relaxation: &RelaxationResult) -> Vec<(String, FortificationPlan)> {
    let n = instance.len();
    let budget = instance.budget();
    let costs = instance.costs();
    let total_cost = instance.total_cost();
    let beta = instance.severity().convex_limit();
    let mut out = Vec::new();

    out.push(("equal".to_string(), FortificationPlan::new(vec![budget / total_cost; n])));

    let src = instance.source();
    let x_src = (budget / costs[src]).min(1.0);
    let rest = if n > 1 { (budget - costs[src] * x_src) / (total_cost - costs[src]) } else { 0.0 };
    let mut levels = vec![rest.max(0.0); n];
    levels[src] = x_src;
    out.push(("source".to_string(), FortificationPlan::new(levels)));

    // depth groups, shallowest first
    let max_depth = instance.max_depth();
    let mut group_cost = vec![0.0; max_depth + 1];
    for i in 0..n {
        group_cost[instance.depth(i)] += costs[i];
    }
    let mut prefix = 0.0;
    let mut concave_k = None;
    let mut convex_k = None;
    for (k, gc) in group_cost.iter().enumerate() {
        prefix += gc;
        let level = budget / prefix;
        if level >= beta && level <= 1.0 {
            concave_k = Some(k);
        }
        if level <= beta && convex_k.is_none() {
            convex_k = Some(k);
        }
    }
    for (name, k) in [("depth-concave", concave_k), ("depth-convex", convex_k)] {
        if let Some(k) = k {
            let set: Vec<bool> = (0..n).map(|i| instance.depth(i) <= k).collect();
            out.push((name.to_string(), equal_on(instance, &set)));
        }
    }

    let phi = cumulative_ratio(instance);
    let mut set = vec![false; n];
    set[src] = true;
    for i in 0..n {
        if let Some(p) = instance.parent(i) {
            if phi[i] > phi[p] {
                for j in instance.path(i) {
                    set[j] = true;
                }
            }
        }
    }
    out.push(("cumulative-ratio".to_string(), equal_on(instance, &set)));

    out.push(("envelope".to_string(), relaxation.plan.clone()));
    out.retain(|(_, plan)| is_feasible(instance, plan));
    out
}

struct Search<'a> {
    instance: &'a Instance,
    params: &'a NsaParams,
    deadline: Option<Instant>,
    steps: usize,
    timed_out: bool,
}

impl Search<'_> {
    fn expired(&mut self) -> bool {
        if let Some(d) = self.deadline {
            if Instant::now() >= d {
                self.timed_out = true;
            }
        }
        self.timed_out
    }

    /// Applies `kind` until `max_no_improve` consecutive applications fail to
    /// improve, then continues from the best state seen.
    fn repeat(&mut self, state: SearchState, kind: Procedure, theta: &[f64]) -> SearchState {
        let mut best = state.clone();
        let mut current = state;
        let mut misses = 0;
        let step_cap = self.params.max_no_improve * (self.instance.len() + 1);
        let mut taken = 0;
        while misses < self.params.max_no_improve && taken < step_cap && !self.expired() {
            let (next, outcome) = run_procedure(&current, self.instance, kind, theta, self.params.tol);
            taken += 1;
            self.steps += 1;
            match outcome {
                Outcome::NoOp | Outcome::Absent => break,
                Outcome::Applied => {}
            }
            current = next;
            if current.objective > best.objective {
                best = current.clone();
                misses = 0;
            } else {
                misses += 1;
            }
        }
        best
    }

    fn run_start(&mut self, start: SearchState, theta: &[f64]) -> SearchState {
        let mut state = start;
        for _ in 0..self.params.max_sweeps {
            if self.expired() {
                break;
            }
            let before = state.objective;
            let branch: &[Procedure] = if state.count(Label::Cup) > 0 {
                &[Procedure::DeleteNode, Procedure::AddNode, Procedure::MaxFortification, Procedure::SetAssignmentI]
            } else if state.count(Label::Cap) > 0 {
                &[Procedure::DeleteNode, Procedure::AddNode, Procedure::SetAssignmentII, Procedure::MaxFortification]
            } else {
                &[Procedure::SetAssignmentIII]
            };
            for &kind in branch {
                state = self.repeat(state, kind, theta);
            }
            if (state.objective - before).abs() <= self.params.epsilon {
                break;
            }
        }
        state
    }
}

/// Runs every start under every metric and returns the best plan found.
pub fn nsa_solve(instance: &Instance, params: &NsaParams) -> SolveReport {
    let start_time = Instant::now();
    let deadline = params.time_limit.map(|s| start_time + Duration::from_secs_f64(s.max(0.0)));
    let relaxation = solve_envelope_relaxation_until(instance, DEFAULT_TOL, DEFAULT_MAX_ITER, deadline);
    let starts = initial_solutions_with(instance, &relaxation);
    let mut search = Search {
        instance,
        params,
        deadline,
        steps: 0,
        timed_out: relaxation.timed_out,
    };
    let metrics: Vec<PriorityMetric> = params.metrics.iter().map(|&k| PriorityMetric::compute(instance, k)).collect();

    let mut best_plan = FortificationPlan::zeros(instance.len());
    let mut best_value = f64::NEG_INFINITY;
    let mut offer = |plan: &FortificationPlan, value: f64| {
        if value > best_value {
            best_value = value;
            best_plan = plan.clone();
        }
    };
    for (_, plan) in &starts {
        offer(plan, objective(instance, plan));
    }
    for (_, plan) in &starts {
        let initial = SearchState::from_plan(instance, plan);
        for metric in &metrics {
            let found = search.run_start(initial.clone(), &metric.theta);
            offer(&found.plan, found.objective);
        }
    }

    let mut report = SolveReport::new(instance, best_plan, "nsa");
    report.upper_bound = Some(relaxation.bound());
    report.iterations = search.steps;
    if search.timed_out {
        report.flags.push("time limit reached".to_string());
    }
    report.wall_time = start_time.elapsed().as_secs_f64();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_random, GeneratorParams, NodeSpec};
    use crate::series::solve_series;
    use approx::assert_abs_diff_eq;

    fn build(parents: &[Option<usize>], w: &[f64], c: &[f64], budget: f64, model: SeverityModel) -> Instance {
        let nodes: Vec<NodeSpec> = (0..w.len())
            .map(|i| NodeSpec { id: i + 1, parent: parents[i], weight: w[i], cost: c[i] })
            .collect();
        Instance::build(&nodes, budget, model).unwrap()
    }

    #[test]
    fn metrics_on_small_tree() {
        // 1 -> 2 -> 3, 1 -> 4
        let inst = build(&[None, Some(1), Some(2), Some(1)], &[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 1.0, 2.0], 2.0, SeverityModel::Uniform);
        let k = PriorityMetric::compute(&inst, MetricKind::KnapsackRatio);
        assert_eq!(k.theta, vec![1.0, 1.0, 3.0, 2.0]);
        let s = PriorityMetric::compute(&inst, MetricKind::SubtreeOverCost);
        assert_eq!(s.theta, vec![10.0, 2.5, 3.0, 2.0]);
        let p = PriorityMetric::compute(&inst, MetricKind::SubtreeOverPathCost);
        assert_eq!(p.theta, vec![10.0, 5.0 / 3.0, 3.0 / 4.0, 4.0 / 3.0]);
        let phi = cumulative_ratio(&inst);
        assert_eq!(phi, vec![1.0, 1.0, 1.5, 5.0 / 3.0]);
    }

    #[test]
    fn starting_plans() {
        let inst = build(&[None, Some(1), Some(2)], &[1.0, 1.0, 1.0], &[3.0, 3.0, 4.0], 5.0, SeverityModel::Triangular { beta: 0.5 });
        let starts = initial_solutions(&inst);
        let equal = &starts.iter().find(|(n, _)| n == "equal").unwrap().1;
        assert!(equal.levels.iter().all(|&x| x == 0.5));
        let source = &starts.iter().find(|(n, _)| n == "source").unwrap().1;
        assert_eq!(source.levels[0], 1.0);
        assert_abs_diff_eq!(source.levels[1], 2.0 / 7.0, epsilon = 1e-15);

        let two = build(&[None, Some(1)], &[1.0, 3.0], &[1.0, 1.0], 1.0, SeverityModel::Triangular { beta: 0.5 });
        let starts = initial_solutions(&two);
        let cum = &starts.iter().find(|(n, _)| n == "cumulative-ratio").unwrap().1;
        assert_eq!(cum.levels, vec![0.5, 0.5]);
        for (_, plan) in &starts {
            assert!(is_feasible(&two, plan));
        }
    }

    #[test]
    fn depth_groups_respect_region() {
        // budget below c_1 beta: the concave depth plan cannot exist
        let inst = build(&[None, Some(1), Some(1), Some(2)], &[1.0; 4], &[4.0, 1.0, 1.0, 1.0], 1.0, SeverityModel::Triangular { beta: 0.5 });
        let starts = initial_solutions(&inst);
        assert!(starts.iter().all(|(n, _)| n != "depth-concave"));
        let convex = &starts.iter().find(|(n, _)| n == "depth-convex").unwrap().1;
        assert_abs_diff_eq!(convex.levels[0], 0.25, epsilon = 1e-15);
        assert_eq!(convex.levels[1], 0.0);
    }

    #[test]
    fn group_system_cases() {
        let inst = build(&[None, Some(1)], &[1.0, 1.0], &[1.0, 1.0], 0.9, SeverityModel::Triangular { beta: 0.4 });
        let mut state = SearchState::from_plan(&inst, &FortificationPlan::new(vec![0.45, 0.45]));
        state.labels = vec![Label::Cap, Label::Cup];
        let plan = solve_group_system(&state, &inst, inst.severity(), ROOT_TOL).unwrap();
        assert_abs_diff_eq!(plan.levels[0], 0.7, epsilon = 1e-9);
        assert_abs_diff_eq!(plan.levels[1], 0.2, epsilon = 1e-9);

        state.labels = vec![Label::Cap, Label::Cap];
        let plan = solve_group_system(&state, &inst, inst.severity(), ROOT_TOL).unwrap();
        assert_eq!(plan.levels, vec![0.45, 0.45]);

        state.labels = vec![Label::One, Label::Cap];
        state.plan.levels[0] = 1.0;
        let big = build(&[None, Some(1)], &[1.0, 1.0], &[2.0, 1.0], 1.0, SeverityModel::Triangular { beta: 0.4 });
        assert!(solve_group_system(&state, &big, big.severity(), ROOT_TOL).is_none());
    }

    #[test]
    fn max_fortification_reaches_series_optimum() {
        let inst = build(&[None, Some(1)], &[1.0, 1.0], &[1.0, 1.0], 1.0, SeverityModel::Triangular { beta: 0.8 });
        let state = SearchState::from_plan(&inst, &FortificationPlan::new(vec![0.5, 0.5]));
        let theta = PriorityMetric::compute(&inst, MetricKind::KnapsackRatio).theta;
        let (next, outcome) = run_procedure(&state, &inst, Procedure::MaxFortification, &theta, ROOT_TOL);
        assert_eq!(outcome, Outcome::Applied);
        assert_eq!(next.plan.levels, vec![1.0, 0.0]);
        assert_abs_diff_eq!(next.objective, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.objective, solve_series(&inst, ROOT_TOL).unwrap().objective, epsilon = 1e-12);
    }

    #[test]
    fn delete_and_add() {
        let inst = build(&[None, Some(1), Some(2)], &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 1.5, SeverityModel::Uniform);
        let state = SearchState::from_plan(&inst, &FortificationPlan::new(vec![0.5, 0.5, 0.5]));
        let theta = PriorityMetric::compute(&inst, MetricKind::KnapsackRatio).theta;
        let (next, outcome) = run_procedure(&state, &inst, Procedure::DeleteNode, &theta, ROOT_TOL);
        assert_eq!(outcome, Outcome::Applied);
        assert_eq!(next.plan.levels, vec![0.75, 0.75, 0.0]);

        let (_, outcome) = run_procedure(&state, &inst, Procedure::AddNode, &theta, ROOT_TOL);
        assert_eq!(outcome, Outcome::NoOp);
        let (back, outcome) = run_procedure(&next, &inst, Procedure::AddNode, &theta, ROOT_TOL);
        assert_eq!(outcome, Outcome::Applied);
        assert_eq!(back.plan.levels, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn never_worse_than_starts_nor_above_bound() {
        for seed in 0..10 {
            let p = GeneratorParams { node_count: 25, max_depth: 5, seed, ..Default::default() };
            let inst = generate_random(&p).unwrap();
            let rep = nsa_solve(&inst, &NsaParams::default());
            assert!(is_feasible(&inst, &rep.plan));
            for (_, plan) in initial_solutions(&inst) {
                assert!(rep.objective >= objective(&inst, &plan) - 1e-12);
            }
            assert!(rep.objective <= rep.upper_bound.unwrap() + 1e-6);
        }
    }

    #[test]
    fn labels_follow_precedence() {
        for seed in 0..10 {
            let p = GeneratorParams { node_count: 20, max_depth: 4, seed, ..Default::default() };
            let inst = generate_random(&p).unwrap();
            let theta = PriorityMetric::compute(&inst, MetricKind::SubtreeOverCost).theta;
            for (_, plan) in initial_solutions(&inst) {
                let mut state = SearchState::from_plan(&inst, &plan);
                for kind in [
                    Procedure::DeleteNode,
                    Procedure::AddNode,
                    Procedure::MaxFortification,
                    Procedure::SetAssignmentI,
                    Procedure::SetAssignmentII,
                    Procedure::SetAssignmentIII,
                ] {
                    state = run_procedure(&state, &inst, kind, &theta, ROOT_TOL).0;
                    assert!(is_feasible(&inst, &state.plan), "{kind:?}");
                    for i in 0..inst.len() {
                        if let Some(p) = inst.parent(i) {
                            assert!(state.labels[i].rank() <= state.labels[p].rank());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let p = GeneratorParams { node_count: 40, seed: 3, ..Default::default() };
        let inst = generate_random(&p).unwrap();
        let a = nsa_solve(&inst, &NsaParams::default());
        let b = nsa_solve(&inst, &NsaParams::default());
        assert_eq!(a.without_timing(), b.without_timing());
    }
}
