//! Exact solver for series (chain) systems.
//!
//! Along a chain an optimal plan splits into at most four contiguous segments:
//! fully fortified, one group in the concave region of the CDF, one group in
//! the convex region, and unfortified. All cut positions are enumerated and
//! the two interior levels are found from the budget equation plus equality of
//! the weighted marginal contributions `(W/C) f(x)` of the two groups.

use std::time::Instant;

use crate::distributions::{scurve_coefficients, SeverityModel};
use crate::error::{Error, Result};
use crate::model::{FortificationPlan, Instance, SolveReport};

/// Default bisection tolerance on fortification levels.
pub const ROOT_TOL: f64 = 1e-10;
const SCAN_INTERVALS: usize = 64;
const MAX_BISECTIONS: usize = 200;
const TIE_EPS: f64 = 1e-12;

/// Weight and cost totals of the convex-region group (`cup`) and the
/// concave-region group (`cap`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupAggregates {
    pub w_cup: f64,
    pub c_cup: f64,
    pub w_cap: f64,
    pub c_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoGroupSolution {
    /// Common level of the convex-region group, in `[0, beta]`.
    pub x_cup: f64,
    /// Common level of the concave-region group, in `[beta, 1]`.
    pub x_cap: f64,
    /// `residual / C_cup`; NaN when the convex group is empty.
    pub b_hat: f64,
    /// `C_cap / C_cup`; NaN when the convex group is empty.
    pub c_hat: f64,
}

impl TwoGroupSolution {
    fn new(agg: &GroupAggregates, residual: f64, x_cup: f64, x_cap: f64) -> Self {
        let (b_hat, c_hat) = if agg.c_cup > 0.0 {
            (residual / agg.c_cup, agg.c_cap / agg.c_cup)
        } else {
            (f64::NAN, f64::NAN)
        };
        TwoGroupSolution { x_cup, x_cap, b_hat, c_hat }
    }

    fn value(&self, agg: &GroupAggregates, model: &SeverityModel) -> f64 {
        agg.w_cup * model.eval_cdf(self.x_cup) + agg.w_cap * model.eval_cdf(self.x_cap)
    }
}

/// Solves `(W_cup/C_cup) f(x_cup) = (W_cap/C_cap) f(x_cap)` together with
/// `C_cup x_cup + C_cap x_cap = residual`, `x_cup in [0, beta]`, `x_cap in [beta, 1]`.
///
/// Substitutes `x_cup = b_hat - c_hat x_cap`, scans `[beta, 1]` for sign changes
/// and bisects each. When several roots exist the one with the larger group
/// value is returned. If one group is empty the budget equation alone fixes
/// the other level.
pub fn solve_two_group_system(
    agg: &GroupAggregates,
    residual: f64,
    model: &SeverityModel,
    tol: f64,
) -> Option<TwoGroupSolution> {
    if residual < 0.0 {
        return None;
    }
    let beta = model.convex_limit();
    let has_cup = agg.c_cup > 0.0;
    let has_cap = agg.c_cap > 0.0;
    match (has_cup, has_cap) {
        (false, false) => None,
        (false, true) => {
            let x_cap = residual / agg.c_cap;
            (beta..=1.0).contains(&x_cap).then(|| TwoGroupSolution::new(agg, residual, 0.0, x_cap))
        }
        (true, false) => {
            let x_cup = residual / agg.c_cup;
            (0.0..=beta).contains(&x_cup).then(|| TwoGroupSolution::new(agg, residual, x_cup, 0.0))
        }
        (true, true) => solve_interior(agg, residual, model, beta, tol),
    }
}

fn solve_interior(
    agg: &GroupAggregates,
    residual: f64,
    model: &SeverityModel,
    beta: f64,
    tol: f64,
) -> Option<TwoGroupSolution> {
    let x_cup_of = |x_cap: f64| ((residual - agg.c_cap * x_cap) / agg.c_cup).clamp(0.0, beta);
    let ratio_cup = agg.w_cup / agg.c_cup;
    let ratio_cap = agg.w_cap / agg.c_cap;
    let h = |x_cap: f64| ratio_cap * model.eval_pdf(x_cap) - ratio_cup * model.eval_pdf(x_cup_of(x_cap));

    // x_cup in [0, beta] restricts x_cap to [(R - C_cup beta)/C_cap, R/C_cap]
    let lo = beta.max((residual - agg.c_cup * beta) / agg.c_cap);
    let hi = 1.0_f64.min(residual / agg.c_cap);
    if lo > hi {
        return None;
    }

    let mut roots = Vec::new();
    if hi - lo <= tol {
        let mid = 0.5 * (lo + hi);
        let scale = ratio_cap.max(ratio_cup) * model.eval_pdf(beta).max(1.0);
        if h(mid).abs() <= 1e-9 * scale {
            roots.push(mid);
        }
    } else {
        let step = (hi - lo) / SCAN_INTERVALS as f64;
        let grid: Vec<f64> = (0..=SCAN_INTERVALS)
            .map(|k| if k == SCAN_INTERVALS { hi } else { lo + step * k as f64 })
            .collect();
        let values: Vec<f64> = grid.iter().map(|&x| h(x)).collect();
        for k in 0..=SCAN_INTERVALS {
            if values[k] == 0.0 {
                roots.push(grid[k]);
            } else if k < SCAN_INTERVALS && values[k] * values[k + 1] < 0.0 {
                roots.push(bisect(&h, grid[k], grid[k + 1], values[k], tol));
            }
        }
    }

    roots
        .into_iter()
        .map(|x_cap| TwoGroupSolution::new(agg, residual, x_cup_of(x_cap), x_cap))
        .fold(None, |best: Option<(f64, TwoGroupSolution)>, sol| {
            let v = sol.value(agg, model);
            match best {
                Some((bv, _)) if bv >= v => best,
                _ => Some((v, sol)),
            }
        })
        .map(|(_, sol)| sol)
}

fn bisect(h: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, h_lo: f64, tol: f64) -> f64 {
    let lo_sign = h_lo.signum();
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = h(mid);
        if v == 0.0 {
            return mid;
        }
        if v.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form two-group solution for triangular severity.
///
/// Returns `Err(DegenerateSystem)` when `C_cup^2 W_cap beta - C_cap^2 W_cup (1 - beta)`
/// vanishes and `Ok(None)` when the solution leaves the level bounds.
pub fn triangular_two_group_closed_form(
    agg: &GroupAggregates,
    residual: f64,
    beta: f64,
) -> Result<Option<TwoGroupSolution>> {
    let denom = agg.c_cup * agg.c_cup * agg.w_cap * beta - agg.c_cap * agg.c_cap * agg.w_cup * (1.0 - beta);
    let scale = agg.c_cup * agg.c_cup * agg.w_cap + agg.c_cap * agg.c_cap * agg.w_cup;
    if denom.abs() <= 1e-14 * scale || agg.c_cap <= 0.0 {
        return Err(Error::DegenerateSystem);
    }
    let x_cup = agg.c_cup * agg.w_cap * beta * (residual - agg.c_cap) / denom;
    let x_cap = (residual - agg.c_cup * x_cup) / agg.c_cap;
    let slack = 1e-12;
    if x_cup < -slack || x_cup > beta + slack || x_cap < beta - slack || x_cap > 1.0 + slack {
        return Ok(None);
    }
    Ok(Some(TwoGroupSolution::new(
        agg,
        residual,
        x_cup.clamp(0.0, beta),
        x_cap.clamp(beta, 1.0),
    )))
}

/// Inverse of the pdf on its increasing (`convex`) or decreasing branch,
/// clamped to that branch.
fn pdf_inverse(model: &SeverityModel, v: f64, convex: bool) -> f64 {
    let beta = model.convex_limit();
    let (lo, hi) = if convex { (0.0, beta) } else { (beta, 1.0) };
    let x = match *model {
        SeverityModel::Triangular { beta } => {
            if convex {
                v * beta / 2.0
            } else {
                1.0 - v * (1.0 - beta) / 2.0
            }
        }
        SeverityModel::SCurve { beta } => {
            let (k1, k2) = scurve_coefficients(beta);
            if convex {
                v / (2.0 * k1)
            } else {
                1.0 - (v - 1.0) / (2.0 * k2)
            }
        }
        _ => {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..MAX_BISECTIONS {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                // increasing on the convex branch, decreasing on the concave one
                if (model.eval_pdf(mid) < v) == convex {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        }
    };
    x.clamp(lo, hi)
}

/// Pool-adjacent-violators blocks `(W, C, len)` of a chain segment, with
/// `W/C` nonincreasing from block to block.
fn ratio_blocks(w: &[f64], c: &[f64]) -> Vec<(f64, f64, usize)> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(w.len());
    for (&wi, &ci) in w.iter().zip(c) {
        blocks.push((wi, ci, 1));
        while blocks.len() >= 2 {
            let (w2, c2, n2) = blocks[blocks.len() - 1];
            let (w1, c1, n1) = blocks[blocks.len() - 2];
            if w1 * c2 > w2 * c1 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push((w1 + w2, c1 + c2, n1 + n2));
        }
    }
    blocks
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CupMode {
    Absent,
    Interior,
    AtMode,
}

/// Levels of a concave segment split into ratio blocks plus an optional
/// convex group, all tied to one budget multiplier `alpha`.
///
/// Each block sits where `(W_G/C_G) f(x_G) = alpha` on the decreasing branch
/// of the pdf and the convex group where `(W/C) f(x) = alpha` on the increasing
/// branch. Returns `(block levels, convex level)` for every budget-feasible root.
fn block_solutions(
    blocks: &[(f64, f64, usize)],
    cup: (f64, f64),
    mode: CupMode,
    residual: f64,
    model: &SeverityModel,
) -> Vec<(Vec<f64>, f64)> {
    let beta = model.convex_limit();
    let f_beta = model.eval_pdf(beta);
    let cap_levels = |alpha: f64| -> Vec<f64> {
        blocks.iter().map(|&(w, c, _)| pdf_inverse(model, alpha * c / w, false)).collect()
    };
    let cup_level = |alpha: f64| match mode {
        CupMode::Absent => 0.0,
        CupMode::Interior => pdf_inverse(model, alpha * cup.1 / cup.0, true),
        CupMode::AtMode => beta,
    };
    let spend = |alpha: f64| -> f64 {
        let caps: f64 = blocks.iter().zip(cap_levels(alpha)).map(|(b, x)| b.1 * x).sum();
        let cup_cost = if mode == CupMode::Absent { 0.0 } else { cup.1 * cup_level(alpha) };
        caps + cup_cost - residual
    };
    let alpha_max = match mode {
        CupMode::Interior => cup.0 / cup.1 * f_beta,
        _ => blocks.iter().map(|&(w, c, _)| w / c * f_beta).fold(0.0, f64::max),
    };
    if !(alpha_max > 0.0) {
        return Vec::new();
    }

    let grid: Vec<f64> = (0..=SCAN_INTERVALS).map(|k| alpha_max * k as f64 / SCAN_INTERVALS as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&a| spend(a)).collect();
    let mut roots = Vec::new();
    for k in 0..SCAN_INTERVALS {
        let (mut lo, mut hi) = (grid[k], grid[k + 1]);
        let (mut h_lo, h_hi) = (values[k], values[k + 1]);
        if h_lo == 0.0 {
            roots.push(lo);
            continue;
        }
        if h_lo * h_hi >= 0.0 {
            if k + 1 == SCAN_INTERVALS && h_hi == 0.0 {
                roots.push(hi);
            }
            continue;
        }
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let h = spend(mid);
            if (h < 0.0) == (h_lo < 0.0) {
                lo = mid;
                h_lo = h;
            } else {
                hi = mid;
            }
        }
        // keep the side that does not overspend
        roots.push(if h_lo <= 0.0 { lo } else { hi });
    }
    roots
        .into_iter()
        .filter(|&a| spend(a) <= 1e-12 * residual.max(1.0))
        .map(|a| (cap_levels(a), cup_level(a)))
        .collect()
}

/// Exact optimum for a chain.
///
/// Enumerates every split into a fully fortified prefix, a concave segment,
/// a convex group and an unfortified suffix. The concave segment is tried
/// both as one group (two-group system, mode-pinned variants) and split into
/// its ratio blocks under a common budget multiplier.
pub fn solve_series(instance: &Instance, tol: f64) -> Result<SolveReport> {
    let start = Instant::now();
    let chain = instance.chain_order().ok_or(Error::NotSeries)?;
    let n = chain.len();
    let model = *instance.severity();
    let uniform = model.is_uniform();
    let beta = model.convex_limit();
    let budget = instance.budget();
    let w: Vec<f64> = chain.iter().map(|&i| instance.weights()[i]).collect();
    let c: Vec<f64> = chain.iter().map(|&i| instance.costs()[i]).collect();

    let mut pw = vec![0.0; n + 1];
    let mut pc = vec![0.0; n + 1];
    for k in 0..n {
        pw[k + 1] = pw[k] + w[k];
        pc[k + 1] = pc[k] + c[k];
    }
    let seg = |p: &[f64], from: usize, to: usize| p[to] - p[from];

    // best value, its cuts and its levels in chain order
    type Candidate = (f64, (usize, usize, usize), Vec<f64>);
    let mut best: Option<Candidate> = None;
    let mut evaluated = 0usize;
    let mut offer = |value: f64, cuts: (usize, usize, usize), levels: &dyn Fn() -> Vec<f64>| {
        evaluated += 1;
        let replace = match &best {
            None => true,
            Some((bv, bc, _)) => value > bv + TIE_EPS || (value >= bv - TIE_EPS && cuts > *bc),
        };
        if replace {
            best = Some((value, cuts, levels()));
        }
    };
    let layout = |(a, b, cut): (usize, usize, usize), cap: &dyn Fn(usize) -> f64, x_cup: f64| -> Vec<f64> {
        (0..n)
            .map(|k| {
                if k < a {
                    1.0
                } else if k < b {
                    cap(k)
                } else if k < cut {
                    x_cup
                } else {
                    0.0
                }
            })
            .collect()
    };

    for a in 0..n {
        let c1 = pc[a];
        if c1 > budget {
            break;
        }
        let residual = budget - c1;
        let base = pw[a];
        if residual <= TIE_EPS * budget.max(1.0) {
            offer(base, (a, a, a), &|| layout((a, a, a), &|_| 0.0, 0.0));
        }
        for b in a..=n {
            // single interior group [a, b); its label follows from the level
            if b > a {
                let level = residual / seg(&pc, a, b);
                if level > 0.0 && level <= 1.0 {
                    let value = base + seg(&pw, a, b) * model.eval_cdf(level);
                    offer(value, (a, b, b), &|| layout((a, b, b), &|_| level, 0.0));
                }
            }
            if uniform || b == a {
                continue;
            }
            let blocks = ratio_blocks(&w[a..b], &c[a..b]);
            let block_of: Vec<usize> = blocks.iter().enumerate().flat_map(|(g, blk)| std::iter::repeat_n(g, blk.2)).collect();
            let split = blocks.len() > 1;
            let block_value = |levels: &[f64], x_cup: f64, w_cup: f64| {
                base + blocks.iter().zip(levels).map(|(blk, &x)| blk.0 * model.eval_cdf(x)).sum::<f64>()
                    + w_cup * model.eval_cdf(x_cup)
            };
            if split {
                for (levels, _) in block_solutions(&blocks, (0.0, 0.0), CupMode::Absent, residual, &model) {
                    let cuts = (a, b, b);
                    offer(block_value(&levels, 0.0, 0.0), cuts, &|| layout(cuts, &|k| levels[block_of[k - a]], 0.0));
                }
            }
            for cut in (b + 1)..=n {
                let agg = GroupAggregates {
                    w_cap: seg(&pw, a, b),
                    c_cap: seg(&pc, a, b),
                    w_cup: seg(&pw, b, cut),
                    c_cup: seg(&pc, b, cut),
                };
                let cuts = (a, b, cut);
                let mut push = |x_cap: f64, x_cup: f64| {
                    let value = base + agg.w_cap * model.eval_cdf(x_cap) + agg.w_cup * model.eval_cdf(x_cup);
                    offer(value, cuts, &|| layout(cuts, &|_| x_cap, x_cup));
                };
                if let Some(sol) = solve_two_group_system(&agg, residual, &model, tol) {
                    push(sol.x_cap, sol.x_cup);
                }
                // one group pinned at the mode, the other absorbing the residual
                let x_cap = (residual - agg.c_cup * beta) / agg.c_cap;
                if (beta..=1.0).contains(&x_cap) {
                    push(x_cap, beta);
                }
                let x_cup = (residual - agg.c_cap * beta) / agg.c_cup;
                if (0.0..=beta).contains(&x_cup) {
                    push(beta, x_cup);
                }
                if split {
                    for mode in [CupMode::Interior, CupMode::AtMode] {
                        for (levels, x_cup) in block_solutions(&blocks, (agg.w_cup, agg.c_cup), mode, residual, &model) {
                            let value = block_value(&levels, x_cup, agg.w_cup);
                            offer(value, cuts, &|| layout(cuts, &|k| levels[block_of[k - a]], x_cup));
                        }
                    }
                }
            }
        }
    }

    let (_, _, chain_levels) = best.expect("a single group over the whole chain is always feasible");
    let mut levels = vec![0.0; n];
    for (k, &i) in chain.iter().enumerate() {
        levels[i] = chain_levels[k];
    }
    let mut report = SolveReport::new(instance, FortificationPlan::new(levels), "series");
    report.iterations = evaluated;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Weighted marginal contribution `(W/C) f(x)` of every maximal run of equal
/// interior levels (strictly between 0 and 1) along a chain.
///
/// At a KKT point all entries agree and equal the budget multiplier.
pub fn group_marginals(instance: &Instance, plan: &FortificationPlan) -> Result<Vec<f64>> {
    let chain = instance.chain_order().ok_or(Error::NotSeries)?;
    let model = instance.severity();
    let mut out = Vec::new();
    let mut k = 0;
    while k < chain.len() {
        let x = plan.levels[chain[k]];
        let mut w = 0.0;
        let mut c = 0.0;
        let mut j = k;
        while j < chain.len() && (plan.levels[chain[j]] - x).abs() <= 1e-12 {
            w += instance.weights()[chain[j]];
            c += instance.costs()[chain[j]];
            j += 1;
        }
        if x > 1e-12 && x < 1.0 - 1e-12 {
            out.push(w / c * model.eval_pdf(x));
        }
        k = j;
    }
    Ok(out)
}
