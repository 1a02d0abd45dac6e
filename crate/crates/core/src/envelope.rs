//! Concave relaxation: every CDF replaced by its upper concave envelope and
//! the resulting concave program solved by conditional gradient (Frank-Wolfe)
//! with the tree LP as linear oracle.

use std::time::Instant;

use crate::distributions::{concave_envelope, EnvelopeModel, ENVELOPE_TOL};
use crate::model::{FortificationPlan, Instance};
use crate::tree_lp::solve_weighted_lp;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 5000;
const LINE_SEARCH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationResult {
    pub plan: FortificationPlan,
    /// `sum_i w_i F~(x_i)` at the returned plan.
    pub relaxed_value: f64,
    /// Smallest linearization gap seen; the relaxation optimum is at most
    /// `relaxed_value + fw_gap`.
    pub fw_gap: f64,
    pub iterations: usize,
    /// True when the deadline stopped the iteration early.
    pub timed_out: bool,
    pub envelope: EnvelopeModel,
}

impl RelaxationResult {
    /// Certified upper bound on the relaxation, hence on the original problem.
    pub fn bound(&self) -> f64 {
        self.relaxed_value + self.fw_gap
    }
}

pub fn relaxed_objective(instance: &Instance, envelope: &EnvelopeModel, levels: &[f64]) -> f64 {
    levels
        .iter()
        .zip(instance.weights())
        .map(|(&x, &w)| w * envelope.value(x))
        .sum()
}

fn golden_max(f: impl Fn(f64) -> f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // endpoints are common optima of FW line searches, so compare them explicitly
    let mid = 0.5 * (a + b);
    [(0.0, f(0.0)), (1.0, f(1.0)), (mid, f(mid))]
        .into_iter()
        .fold((0.0, f64::NEG_INFINITY), |best, cand| if cand.1 > best.1 { cand } else { best })
}

/// Conditional gradient from `x = 0` on the envelope relaxation.
pub fn solve_envelope_relaxation(instance: &Instance, tol: f64, max_iter: usize) -> RelaxationResult {
    solve_envelope_relaxation_until(instance, tol, max_iter, None)
}

/// As [`solve_envelope_relaxation`], checking `deadline` between iterations.
/// The bound stays valid when stopped early, only looser.
pub fn solve_envelope_relaxation_until(
    instance: &Instance,
    tol: f64,
    max_iter: usize,
    deadline: Option<Instant>,
) -> RelaxationResult {
    let envelope = concave_envelope(instance.severity(), ENVELOPE_TOL);
    let n = instance.len();
    let weights = instance.weights();
    let mut x = vec![0.0; n];
    let mut value = 0.0_f64;
    let mut best_gap = f64::INFINITY;
    let mut iterations = 0;
    let mut grad = vec![0.0; n];
    let mut timed_out = false;

    while iterations < max_iter {
        if iterations > 0 && deadline.is_some_and(|d| Instant::now() >= d) {
            timed_out = true;
            break;
        }
        for i in 0..n {
            grad[i] = weights[i] * envelope.derivative(x[i]);
        }
        let s = solve_weighted_lp(instance, &grad).expect("gradient is nonnegative").levels;
        let gap: f64 = (0..n).map(|i| grad[i] * (s[i] - x[i])).sum::<f64>().max(0.0);
        best_gap = best_gap.min(gap);
        iterations += 1;
        if gap <= tol * value.max(1.0) {
            break;
        }
        let along = |t: f64| {
            (0..n)
                .map(|i| weights[i] * envelope.value(x[i] + t * (s[i] - x[i])))
                .sum::<f64>()
        };
        let (t, v) = golden_max(along, LINE_SEARCH_TOL);
        if v <= value || t == 0.0 {
            break;
        }
        for i in 0..n {
            x[i] = (x[i] + t * (s[i] - x[i])).clamp(0.0, 1.0);
        }
        value = relaxed_objective(instance, &envelope, &x);
    }

    RelaxationResult {
        plan: FortificationPlan::new(x),
        relaxed_value: value,
        fw_gap: if best_gap.is_finite() { best_gap } else { 0.0 },
        iterations,
        timed_out,
        envelope,
    }
}

/// Certified upper bound on the optimal objective, using the default tolerances.
pub fn upper_bound(instance: &Instance) -> f64 {
    solve_envelope_relaxation(instance, DEFAULT_TOL, DEFAULT_MAX_ITER).bound()
}
