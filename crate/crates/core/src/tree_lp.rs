//! Exact solver for trees under uniform severity.
//!
//! With `F(y) = y` the problem is a linear program. Its dual reduces to the
//! convex piecewise-linear function `z(alpha) = B alpha + lambda_source(alpha)`,
//! where `lambda_i = (sum_{children} lambda_j + w_i - c_i alpha)^+` is computed
//! bottom-up. The minimizer is bracketed by bisection on the subgradient and
//! then located exactly by intersecting the two linear pieces at the bracket.

use std::time::Instant;

use crate::envelope::solve_envelope_relaxation;
use crate::error::{Error, Result};
use crate::model::{objective, FortificationPlan, Instance, SolveReport};
use crate::FEASIBILITY_TOL;

/// Threshold for treating a multiplier or reduced cost as nonzero.
pub const TIE_TOL: f64 = 1e-9;
/// Default bracket width on `alpha`.
pub const ALPHA_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;
const MAX_REFINEMENTS: usize = 64;
const DUALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DualProfile {
    pub alpha: f64,
    pub lambda: Vec<f64>,
    /// `sum_{children} lambda_j + w_i - c_i alpha` before clipping at zero.
    pub inner: Vec<f64>,
    /// `z(alpha)`.
    pub value: f64,
    /// Right derivative of `z` at `alpha`: `B` minus the cost of the active set.
    pub slope: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl DualProfile {
    /// Nodes whose multiplier chain to the source is strictly positive.
    pub fn active(&self, instance: &Instance) -> Vec<bool> {
        let mut active = vec![false; instance.len()];
        for &i in instance.topo_order() {
            let up = instance.parent(i).is_none_or(|p| active[p]);
            active[i] = up && self.inner[i] > 0.0;
        }
        active
    }
}

fn check_weights(instance: &Instance, weights: &[f64]) -> Result<()> {
    if weights.len() != instance.len() {
        return Err(Error::DimensionMismatch { expected: instance.len(), got: weights.len() });
    }
    if let Some(&w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::Domain(w));
    }
    Ok(())
}

fn ratio_range(instance: &Instance, weights: &[f64]) -> (f64, f64) {
    weights
        .iter()
        .zip(instance.costs())
        .map(|(w, c)| w / c)
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// One bottom-up pass of the multiplier recursion at `alpha`.
pub fn dual_value(instance: &Instance, weights: &[f64], alpha: f64) -> Result<DualProfile> {
    check_weights(instance, weights)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(alpha));
    }
    let (rho_min, rho_max) = ratio_range(instance, weights);
    Ok(profile_unchecked(instance, weights, alpha, rho_min, rho_max))
}

fn profile_unchecked(instance: &Instance, weights: &[f64], alpha: f64, rho_min: f64, rho_max: f64) -> DualProfile {
    let n = instance.len();
    let costs = instance.costs();
    let mut lambda = vec![0.0; n];
    let mut inner = vec![0.0; n];
    for &i in instance.topo_order().iter().rev() {
        let below: f64 = instance.children(i).iter().map(|&j| lambda[j]).sum();
        inner[i] = below + weights[i] - costs[i] * alpha;
        lambda[i] = inner[i].max(0.0);
    }
    let src = instance.source();
    let mut profile = DualProfile {
        alpha,
        value: instance.budget() * alpha + lambda[src],
        lambda,
        inner,
        slope: 0.0,
        rho_min,
        rho_max,
    };
    let active = profile.active(instance);
    let active_cost: f64 = (0..n).filter(|&i| active[i]).map(|i| costs[i]).sum();
    profile.slope = instance.budget() - active_cost;
    profile
}

/// A bracket `[lo, hi]` around the minimizer together with the active sets
/// just inside each end.
struct Bracket {
    alpha: f64,
    profile: DualProfile,
    lo_set: Vec<bool>,
    hi_set: Vec<bool>,
    iterations: usize,
}

fn set_totals(instance: &Instance, weights: &[f64], set: &[bool]) -> (f64, f64) {
    (0..instance.len())
        .filter(|&i| set[i])
        .fold((0.0, 0.0), |(w, c), i| (w + weights[i], c + instance.costs()[i]))
}

fn minimize_dual(instance: &Instance, weights: &[f64], tol: f64) -> Bracket {
    let n = instance.len();
    let budget = instance.budget();
    let (rho_min, rho_max) = ratio_range(instance, weights);
    let probe = |alpha: f64| profile_unchecked(instance, weights, alpha, rho_min, rho_max);

    // below rho_min every node is active and z decreases; above rho_max nothing is
    let mut lo = rho_min;
    let mut hi = rho_max;
    let mut lo_set = vec![true; n];
    let mut hi_set = vec![false; n];
    let mut iterations = 0;

    let start = probe(lo);
    if start.slope >= 0.0 {
        hi = lo;
        hi_set = start.active(instance);
    }
    while hi - lo > tol && iterations < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = probe(mid);
        iterations += 1;
        if p.slope >= 0.0 {
            hi = mid;
            hi_set = p.active(instance);
        } else {
            lo = mid;
            lo_set = p.active(instance);
        }
    }

    // the pieces at both ends are exact lines; their crossing is a breakpoint candidate
    let mut alpha = hi;
    for _ in 0..MAX_REFINEMENTS {
        let (w_lo, c_lo) = set_totals(instance, weights, &lo_set);
        let (w_hi, c_hi) = set_totals(instance, weights, &hi_set);
        if c_lo - c_hi <= 0.0 {
            break;
        }
        let cross = ((w_lo - w_hi) / (c_lo - c_hi)).clamp(lo, hi);
        alpha = cross;
        let p = probe(cross);
        iterations += 1;
        let line = budget * cross + w_hi - cross * c_hi;
        if (p.value - line).abs() <= 1e-12 * p.value.abs().max(1.0) || cross <= lo || cross >= hi {
            break;
        }
        if p.slope >= 0.0 {
            hi = cross;
            hi_set = p.active(instance);
        } else {
            lo = cross;
            lo_set = p.active(instance);
        }
    }
    let profile = probe(alpha);
    Bracket { alpha, profile, lo_set, hi_set, iterations }
}

/// Full fortification on the smaller active set, a common level on the
/// nodes that join it just below the minimizer.
fn bracket_plan(instance: &Instance, bracket: &Bracket) -> FortificationPlan {
    let n = instance.len();
    let costs = instance.costs();
    let hi_cost: f64 = (0..n).filter(|&i| bracket.hi_set[i]).map(|i| costs[i]).sum();
    let diff_cost: f64 = (0..n)
        .filter(|&i| bracket.lo_set[i] && !bracket.hi_set[i])
        .map(|i| costs[i])
        .sum();
    let t = if diff_cost > 0.0 {
        ((instance.budget() - hi_cost) / diff_cost).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let levels = (0..n)
        .map(|i| {
            if bracket.hi_set[i] {
                1.0
            } else if bracket.lo_set[i] {
                t
            } else {
                0.0
            }
        })
        .collect();
    FortificationPlan::new(levels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    One,
    Free,
    Zero,
}

/// Complementary-slackness recovery; `None` when the result is infeasible or
/// leaves a duality gap.
fn recover_checked(instance: &Instance, weights: &[f64], profile: &DualProfile) -> Option<FortificationPlan> {
    let n = instance.len();
    let costs = instance.costs();
    let mut status = vec![Status::Zero; n];
    for &i in instance.topo_order() {
        let tight = profile.lambda[i] > TIE_TOL;
        let slack = profile.inner[i] < -TIE_TOL;
        status[i] = match instance.parent(i) {
            None if tight => Status::One,
            None if slack => Status::Zero,
            None => Status::Free,
            Some(p) if status[p] == Status::Zero => Status::Zero,
            Some(p) if tight => status[p],
            Some(_) if slack => Status::Zero,
            Some(_) => Status::Free,
        };
    }
    let fixed_cost: f64 = (0..n).filter(|&i| status[i] == Status::One).map(|i| costs[i]).sum();
    let free_cost: f64 = (0..n).filter(|&i| status[i] == Status::Free).map(|i| costs[i]).sum();
    let residual = instance.budget() - fixed_cost;
    let t = if free_cost > 0.0 { (residual / free_cost).clamp(0.0, 1.0) } else { 0.0 };
    let plan = FortificationPlan::new(
        status
            .iter()
            .map(|s| match s {
                Status::One => 1.0,
                Status::Free => t,
                Status::Zero => 0.0,
            })
            .collect(),
    );
    let value: f64 = plan.levels.iter().zip(weights).map(|(x, w)| x * w).sum();
    let feasible = plan.cost(instance) <= instance.budget() * (1.0 + FEASIBILITY_TOL) + FEASIBILITY_TOL;
    let gap_ok = (value - profile.value).abs() <= DUALITY_TOL * profile.value.abs().max(1.0);
    (feasible && gap_ok).then_some(plan)
}

/// Primal plan from a dual profile at the minimizer.
///
/// Falls back to the conditional-gradient solver with the identity envelope
/// when the complementary-slackness reconstruction fails its checks.
pub fn recover_primal(instance: &Instance, profile: &DualProfile) -> FortificationPlan {
    recover_checked(instance, instance.weights(), profile).unwrap_or_else(|| {
        let linear = instance
            .with_severity(crate::distributions::SeverityModel::Uniform)
            .expect("uniform severity is valid");
        solve_envelope_relaxation(&linear, crate::envelope::DEFAULT_TOL, crate::envelope::DEFAULT_MAX_ITER).plan
    })
}

/// Maximizes `sum_i weights_i x_i` over the fortification polytope.
pub fn solve_weighted_lp(instance: &Instance, weights: &[f64]) -> Result<FortificationPlan> {
    check_weights(instance, weights)?;
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(FortificationPlan::zeros(instance.len()));
    }
    let bracket = minimize_dual(instance, weights, ALPHA_TOL);
    Ok(bracket_plan(instance, &bracket))
}

/// Exact optimum under uniform severity.
pub fn solve_uniform_tree(instance: &Instance, tol: f64) -> Result<SolveReport> {
    let start = Instant::now();
    if !instance.severity().is_uniform() {
        return Err(Error::NotUniform);
    }
    let weights = instance.weights();
    let bracket = minimize_dual(instance, weights, tol);
    let z = bracket.profile.value;
    let mut flags = Vec::new();

    let plan = match recover_checked(instance, weights, &bracket.profile) {
        Some(plan) => plan,
        None => {
            flags.push("degenerate recovery".to_string());
            let plan = bracket_plan(instance, &bracket);
            if (objective(instance, &plan) - z).abs() <= DUALITY_TOL * z.abs().max(1.0) {
                plan
            } else {
                flags.push("conditional gradient fallback".to_string());
                solve_envelope_relaxation(instance, crate::envelope::DEFAULT_TOL, crate::envelope::DEFAULT_MAX_ITER)
                    .plan
            }
        }
    };

    let mut report = SolveReport::new(instance, plan, "lp-uniform");
    report.upper_bound = Some(z);
    report.iterations = bracket.iterations;
    report.flags = flags;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// `alpha` at which [`solve_uniform_tree`] terminates, for inspection.
pub fn optimal_alpha(instance: &Instance, weights: &[f64], tol: f64) -> Result<f64> {
    check_weights(instance, weights)?;
    Ok(minimize_dual(instance, weights, tol).alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::SeverityModel;
    use crate::model::{generate_random, is_feasible, GeneratorParams, NodeSpec, SeverityFamily};
    use crate::verification::grid_oracle;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn build(parents: &[Option<usize>], w: &[f64], c: &[f64], budget: f64) -> Instance {
        let nodes: Vec<NodeSpec> = (0..w.len())
            .map(|i| NodeSpec { id: i + 1, parent: parents[i], weight: w[i], cost: c[i] })
            .collect();
        Instance::build(&nodes, budget, SeverityModel::Uniform).unwrap()
    }

    fn five_chain() -> Instance {
        build(
            &[None, Some(1), Some(2), Some(3), Some(4)],
            &[9.0, 2.0, 10.0, 5.0, 2.0],
            &[5.0, 3.0, 7.0, 4.0, 1.0],
            10.0,
        )
    }

    fn star() -> Instance {
        build(&[None, Some(1), Some(1)], &[1.0, 3.0, 3.0], &[1.0, 1.0, 1.0], 2.0)
    }

    fn random_uniform(seed: u64, n: usize) -> Instance {
        let p = GeneratorParams {
            node_count: n,
            max_depth: 4,
            family: SeverityFamily::Uniform,
            seed,
            ..Default::default()
        };
        generate_random(&p).unwrap()
    }

    #[test]
    fn hand_recursion_on_chain() {
        let inst = five_chain();
        let p = dual_value(&inst, inst.weights(), 19.0 / 15.0).unwrap();
        // leaf first: 2 - 19/15, 5 + 11/15 - 76/15, 10 + 2/3 - 133/15, 2 + 9/5 - 57/15, 9 - 95/15
        let expect = [8.0 / 3.0, 0.0, 1.8, 2.0 / 3.0, 11.0 / 15.0];
        for (l, e) in p.lambda.iter().zip(expect) {
            assert_abs_diff_eq!(*l, e, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(p.value, 46.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.inner[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn alpha_zero_gives_subtree_weights() {
        let inst = random_uniform(3, 20);
        let p = dual_value(&inst, inst.weights(), 0.0).unwrap();
        let sub = inst.subtree_sums(inst.weights());
        for i in 0..inst.len() {
            assert_abs_diff_eq!(p.lambda[i], sub[i], epsilon = 1e-9);
        }
        assert_abs_diff_eq!(p.value, inst.total_weight(), epsilon = 1e-9);
    }

    #[test]
    fn alpha_above_ratios_zeroes_multipliers() {
        for seed in 0..20 {
            let inst = random_uniform(seed, 15);
            let p = dual_value(&inst, inst.weights(), 0.0).unwrap();
            let alpha = p.rho_max * 1.01;
            let q = dual_value(&inst, inst.weights(), alpha).unwrap();
            assert!(q.lambda.iter().all(|&l| l == 0.0));
            assert_abs_diff_eq!(q.value, inst.budget() * alpha, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let inst = five_chain();
        assert!(matches!(dual_value(&inst, inst.weights(), -1.0), Err(Error::Domain(_))));
        assert!(dual_value(&inst, &[1.0, -1.0, 1.0, 1.0, 1.0], 1.0).is_err());
        assert!(matches!(dual_value(&inst, &[1.0], 1.0), Err(Error::DimensionMismatch { .. })));
        let tri = inst.with_severity(SeverityModel::Triangular { beta: 0.3 }).unwrap();
        assert!(matches!(solve_uniform_tree(&tri, ALPHA_TOL), Err(Error::NotUniform)));
    }

    #[test]
    fn chain_solution() {
        let inst = five_chain();
        let rep = solve_uniform_tree(&inst, ALPHA_TOL).unwrap();
        assert_abs_diff_eq!(rep.objective, 46.0 / 3.0, epsilon = 1e-9);
        let expect = [1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (x, e) in rep.plan.levels.iter().zip(expect) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(rep.upper_bound.unwrap(), 46.0 / 3.0, epsilon = 1e-9);
        assert!(rep.flags.is_empty());
        let alpha = optimal_alpha(&inst, inst.weights(), ALPHA_TOL).unwrap();
        assert_abs_diff_eq!(alpha, 19.0 / 15.0, epsilon = 1e-9);
        let grid = grid_oracle(&inst, 1.0 / 300.0).unwrap();
        assert!(grid.objective <= rep.objective + 1e-9);
        assert!(grid.objective >= rep.objective - 0.01 * inst.total_weight());
    }

    #[test]
    fn recovery_from_chain_profile() {
        let inst = five_chain();
        let p = dual_value(&inst, inst.weights(), 19.0 / 15.0).unwrap();
        let plan = recover_primal(&inst, &p);
        assert_abs_diff_eq!(plan.levels[0], 1.0, epsilon = 1e-12);
        for &x in &plan.levels[1..] {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-12);
        }

        let two = build(&[None, Some(1)], &[1.0, 2.0], &[1.0, 1.0], 1.0);
        let p = dual_value(&two, two.weights(), 1.5).unwrap();
        assert_abs_diff_eq!(p.lambda[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.lambda[1], 0.5, epsilon = 1e-12);
        let plan = recover_primal(&two, &p);
        assert_abs_diff_eq!(plan.levels[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.levels[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(objective(&two, &plan), p.value, epsilon = 1e-12);
    }

    #[test]
    fn single_node_and_star() {
        let one = build(&[None], &[1.0], &[1.0], 0.4);
        let rep = solve_uniform_tree(&one, ALPHA_TOL).unwrap();
        assert_abs_diff_eq!(rep.plan.levels[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.objective, 0.4, epsilon = 1e-12);

        let rep = solve_uniform_tree(&star(), ALPHA_TOL).unwrap();
        assert_abs_diff_eq!(rep.objective, 14.0 / 3.0, epsilon = 1e-9);
        for &x in &rep.plan.levels {
            assert_abs_diff_eq!(x, 2.0 / 3.0, epsilon = 1e-9);
        }
        let candidate = objective(&star(), &FortificationPlan::new(vec![1.0, 0.5, 0.5]));
        assert_abs_diff_eq!(candidate, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_lp_cases() {
        let inst = five_chain();
        let via_lp = solve_weighted_lp(&inst, inst.weights()).unwrap();
        let direct = solve_uniform_tree(&inst, ALPHA_TOL).unwrap();
        for (a, b) in via_lp.levels.iter().zip(&direct.plan.levels) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
        assert_eq!(solve_weighted_lp(&inst, &[0.0; 5]).unwrap(), FortificationPlan::zeros(5));

        let star = star();
        let plan = solve_weighted_lp(&star, &[1.0, 1.0, 1.0]).unwrap();
        for &x in &plan.levels {
            assert_abs_diff_eq!(x, 2.0 / 3.0, epsilon = 1e-9);
        }

        // 1 -> 2 -> 3 and 1 -> 4; all weight on leaf 3
        let tree = build(&[None, Some(1), Some(2), Some(1)], &[1.0; 4], &[1.0, 2.0, 1.0, 1.0], 2.0);
        let plan = solve_weighted_lp(&tree, &[0.0, 0.0, 1.0, 0.0]).unwrap();
        let expect = [0.5, 0.5, 0.5, 0.0];
        for (x, e) in plan.levels.iter().zip(expect) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-9);
        }
        // oracle on the same network with negligible weight off the target leaf
        let specs: Vec<NodeSpec> = tree
            .node_specs()
            .into_iter()
            .map(|mut s| {
                s.weight = if s.id == 3 { 1.0 } else { 1e-9 };
                s
            })
            .collect();
        let grid = grid_oracle(&Instance::build(&specs, 2.0, SeverityModel::Uniform).unwrap(), 0.05).unwrap();
        assert_abs_diff_eq!(grid.plan.levels[2], plan.levels[2], epsilon = 1e-9);
    }

    #[test]
    fn dual_is_convex_and_nonincreasing() {
        for seed in 0..20 {
            let inst = random_uniform(seed, 30);
            let p0 = dual_value(&inst, inst.weights(), 0.0).unwrap();
            let hi = p0.rho_max * 1.1;
            let lam = |a: f64| dual_value(&inst, inst.weights(), a).unwrap().lambda[inst.source()];
            for k in 0..50 {
                let a1 = hi * k as f64 / 52.0;
                let a2 = hi * (k + 1) as f64 / 52.0;
                let a3 = hi * (k + 2) as f64 / 52.0;
                assert!(lam(a1) >= lam(a2) - 1e-12);
                assert!(lam(a2) <= 0.5 * (lam(a1) + lam(a3)) + 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn strong_duality_on_random_trees(seed in any::<u64>(), n in 1usize..50, frac in 0.05f64..0.95) {
            let p = GeneratorParams {
                node_count: n,
                max_depth: 6,
                budget_fraction: frac,
                family: SeverityFamily::Uniform,
                seed,
                ..Default::default()
            };
            let inst = generate_random(&p).unwrap();
            let rep = solve_uniform_tree(&inst, ALPHA_TOL).unwrap();
            prop_assert!(is_feasible(&inst, &rep.plan));
            let z = rep.upper_bound.unwrap();
            prop_assert!((rep.objective - z).abs() <= 1e-6);
            let prof = dual_value(&inst, inst.weights(), 0.0).unwrap();
            let alpha = optimal_alpha(&inst, inst.weights(), ALPHA_TOL).unwrap();
            prop_assert!(alpha >= prof.rho_min - 1e-12 && alpha <= prof.rho_max + 1e-12);
        }
    }

    #[test]
    fn matches_grid_oracle_on_small_trees() {
        for seed in 0..15 {
            let inst = random_uniform(seed + 100, 5);
            let rep = solve_uniform_tree(&inst, ALPHA_TOL).unwrap();
            let grid = grid_oracle(&inst, 0.05).unwrap();
            assert!(rep.objective >= grid.objective - 1e-9);
            assert!(rep.objective <= grid.objective + 0.05 * inst.total_weight());
        }
    }
}
