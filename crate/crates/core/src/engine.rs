//! The distributed MDE iteration: local MAP detection of `h_i`, then
//! consensus + innovations updates of the `u`/`v` accumulators, Laplacian
//! averaging of the observation mean, and the branch-selected estimate.
//!
//! # Time indexing
//!
//! [`initialize`] produces the state labelled `0`: `theta(1)`, `u(0)`, `v(0)`,
//! `h(1)` and `ybar_hat(1) = y`. Iteration `t` (starting at 1) reads the state
//! labelled `t - 1` and writes the state labelled `t`, which holds
//! `theta(t + 1)`, `u(t)`, `v(t)`, `ybar_hat(t)` and the detections `h(t)`
//! that fed the update. The observation-mean consensus first applies at
//! `t = 2`, since `ybar_hat(1)` is the initial value.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FieldSnapshot;
use crate::topology::NetworkTopology;

/// Step-size sequences `alpha(t)` (innovation gain) and `beta(t)` (consensus
/// gain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `alpha = delta_a / t`, `beta = delta_b / t^(1 - epsilon)`. With
    /// `cap_degree = Some(d)` the consensus gain is additionally limited to
    /// `(1 - alpha(t)) / d`, which keeps every update a convex combination on
    /// graphs of maximum degree `d`.
    PowerLaw {
        delta_a: f64,
        delta_b: f64,
        epsilon: f64,
        cap_degree: Option<usize>,
    },
    /// Fixed gains. Not admissible in general; meant for probing the update.
    Constant { alpha: f64, beta: f64 },
}

pub const DEFAULT_DELTA_A: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 0.99;

impl StepSchedule {
    /// Default power-law family scaled to `topo`: `delta_b = 1/(d_max + 1)`
    /// with the convexity cap enabled.
    pub fn for_topology(topo: &NetworkTopology) -> Self {
        Self::power_law_for(topo, DEFAULT_DELTA_A, None, DEFAULT_EPSILON, true)
    }

    /// Power-law family; `delta_b = None` picks `1/(d_max + 1)`.
    pub fn power_law_for(
        topo: &NetworkTopology,
        delta_a: f64,
        delta_b: Option<f64>,
        epsilon: f64,
        cap: bool,
    ) -> Self {
        let d = topo.max_degree();
        StepSchedule::PowerLaw {
            delta_a,
            delta_b: delta_b.unwrap_or(if d == 0 { 0.5 } else { 1.0 / (d as f64 + 1.0) }),
            epsilon,
            cap_degree: if cap && d > 0 { Some(d) } else { None },
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::PowerLaw { delta_a, .. } => delta_a / t as f64,
            StepSchedule::Constant { alpha, .. } => alpha,
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::PowerLaw { delta_a, delta_b, epsilon, cap_degree } => {
                let t = t as f64;
                let b = delta_b / t.powf(1.0 - epsilon);
                match cap_degree {
                    Some(d) => b.min((1.0 - delta_a / t) / d as f64),
                    None => b,
                }
            }
            StepSchedule::Constant { beta, .. } => beta,
        }
    }

    pub fn description(&self) -> String {
        match *self {
            StepSchedule::PowerLaw { delta_a, delta_b, epsilon, cap_degree } => {
                let mut s = format!("alpha = {delta_a}/t, beta = {delta_b}/t^(1-{epsilon})");
                if let Some(d) = cap_degree {
                    s.push_str(&format!(", beta capped at (1-alpha)/{d}"));
                }
                s
            }
            StepSchedule::Constant { alpha, beta } => format!("alpha = {alpha}, beta = {beta} (constant)"),
        }
    }

    /// Symbolic admissibility of the power-law family: `0 < delta_a, delta_b < 1`
    /// and `0 < epsilon < 1` imply the four step-size conditions for all `t`.
    pub fn symbolically_admissible(&self) -> bool {
        match *self {
            StepSchedule::PowerLaw { delta_a, delta_b, epsilon, .. } => {
                delta_a > 0.0
                    && delta_a < 1.0
                    && delta_b > 0.0
                    && delta_b < 1.0
                    && epsilon > 0.0
                    && epsilon < 1.0
            }
            StepSchedule::Constant { .. } => false,
        }
    }

    /// Numerical check of the four step-size conditions over `1..=horizon`.
    pub fn check_admissible(&self, horizon: usize) -> Admissibility {
        let horizon = horizon.max(8);
        let a = |t| self.alpha(t);
        let b = |t| self.beta(t);
        let in_unit = (1..=horizon).all(|t| {
            let (x, y) = (a(t), b(t));
            x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0
        });
        // Decay proxy: both sequences still strictly decrease across the last
        // doubling of the horizon.
        let vanishing = a(horizon) < a(horizon / 2) && b(horizon) < b(horizon / 2);
        let mut ratio_monotone = true;
        let mut prev = b(1) / a(1);
        for t in 2..=horizon {
            let r = b(t) / a(t);
            if !(r >= prev * (1.0 - 1e-12)) {
                ratio_monotone = false;
            }
            prev = r;
        }
        let ratio_unbounded = ratio_monotone && b(horizon) / a(horizon) > 10.0 * b(1) / a(1);
        // A sequence t^(-p) diverges iff p <= 1, and then consecutive dyadic
        // block sums do not shrink; summable sequences lose a constant factor.
        let block = |f: &dyn Fn(usize) -> f64, lo: usize, hi: usize| (lo..hi).map(f).sum::<f64>();
        let divergent = |f: &dyn Fn(usize) -> f64| {
            let q = horizon / 4;
            block(f, 2 * q, 4 * q) >= (1.0 - 1e-3) * block(f, q, 2 * q)
        };
        Admissibility {
            in_unit_interval: in_unit,
            vanishing,
            ratio_unbounded,
            divergent_sums: divergent(&a) && divergent(&b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admissibility {
    pub in_unit_interval: bool,
    pub vanishing: bool,
    pub ratio_unbounded: bool,
    pub divergent_sums: bool,
}

impl Admissibility {
    pub fn all(&self) -> bool {
        self.in_unit_interval && self.vanishing && self.ratio_unbounded && self.divergent_sums
    }
}

/// Neighborhood used by the initial local LMVUE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitNeighborhood {
    /// Neighbors only; isolated nodes are an error.
    Open,
    /// Neighbors only, but an isolated node falls back to its own observation.
    #[default]
    OpenSelfFallback,
    /// Neighbors plus the node itself.
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub delta: f64,
    pub epsilon_stop: f64,
    pub max_iters: usize,
    pub record_trace: bool,
    pub init_neighborhood: InitNeighborhood,
    /// Stop as soon as the stopping rule holds. When false the run always
    /// performs `max_iters` iterations and only records when the rule first held.
    pub halt_on_convergence: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            delta: 1e-9,
            epsilon_stop: 1e-6,
            max_iters: 3000,
            record_trace: false,
            init_neighborhood: InitNeighborhood::default(),
            halt_on_convergence: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Param(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.epsilon_stop > 0.0 && self.epsilon_stop.is_finite()) {
            return Err(Error::Param(format!("epsilon_stop must be positive, got {}", self.epsilon_stop)));
        }
        if self.max_iters == 0 {
            return Err(Error::Param("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeState {
    pub theta_plus: f64,
    pub theta_minus: f64,
    /// Branch-selected estimate.
    pub estimate: f64,
    pub u_plus: f64,
    pub v_plus: f64,
    pub u_minus: f64,
    pub v_minus: f64,
    pub ybar_hat: f64,
    pub h_plus: bool,
    pub h_minus: bool,
}

impl NodeState {
    fn ratio_plus(&self, delta: f64) -> f64 {
        self.u_plus / (self.v_plus + delta)
    }
    fn ratio_minus(&self, delta: f64) -> f64 {
        self.u_minus / (self.v_minus + delta)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_states: Vec<NodeState>,
    pub final_estimates: Vec<f64>,
    pub iterations_used: usize,
    /// Whether the stopping rule held at some iteration.
    pub converged: bool,
    /// First iteration at which the stopping rule held.
    pub converged_at: Option<usize>,
    /// Detections implied by each node's final branch estimates.
    pub final_h_plus: Vec<bool>,
    pub final_h_minus: Vec<bool>,
    /// States labelled `0..=iterations_used` when tracing is enabled.
    pub trace: Option<Vec<Vec<NodeState>>>,
    /// Self-consistency residual of the limit map at the median estimate,
    /// computed regardless of convergence.
    pub fixed_point_residual: f64,
    pub delta: f64,
}

impl RunResult {
    /// Largest pairwise difference between final node estimates.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .final_estimates
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        hi - lo
    }
}

/// MAP validity test with the threshold `2 sigma^2 ln(p1/p0)` precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Detector {
    threshold: f64,
}

impl Detector {
    pub fn new(sigma: f64, p1: f64) -> Self {
        Detector { threshold: 2.0 * sigma * sigma * (p1 / (1.0 - p1)).ln() }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Ties count as valid.
    #[inline]
    pub fn valid(&self, theta_hat: f64, y: f64) -> bool {
        theta_hat * theta_hat - 2.0 * y * theta_hat <= self.threshold
    }
}

/// Returns true iff `theta_hat^2 - 2 y theta_hat <= 2 sigma^2 ln(p1/p0)`.
pub fn detect(theta_hat: f64, y: f64, sigma: f64, p1: f64) -> bool {
    Detector::new(sigma, p1).valid(theta_hat, y)
}

fn check_sizes(snapshot: &FieldSnapshot, topo: &NetworkTopology) -> Result<()> {
    if topo.n() != snapshot.n() {
        return Err(Error::LengthMismatch { expected: snapshot.n(), got: topo.n() });
    }
    Ok(())
}

/// Step 1: local LMVUE over the neighborhood, `ybar_hat = y`, and the initial
/// detections that seed `u(0) = y h(1)` and `v(0) = h(1)`.
pub fn initialize(
    snapshot: &FieldSnapshot,
    topo: &NetworkTopology,
    config: &EngineConfig,
) -> Result<Vec<NodeState>> {
    check_sizes(snapshot, topo)?;
    let p = snapshot.params;
    let det = Detector::new(p.sigma(), p.p1());
    let y = &snapshot.y;
    (0..topo.n())
        .map(|i| {
            let nb = topo.neighbors(i);
            let (sum, count) = match (config.init_neighborhood, nb.is_empty()) {
                (InitNeighborhood::Open, true) => return Err(Error::IsolatedNode { node: i }),
                (InitNeighborhood::OpenSelfFallback, true) => (y[i], 1),
                (InitNeighborhood::Closed, _) => (y[i] + nb.iter().map(|&j| y[j]).sum::<f64>(), nb.len() + 1),
                _ => (nb.iter().map(|&j| y[j]).sum::<f64>(), nb.len()),
            };
            let theta = sum / (count as f64 * p.p1());
            let h = det.valid(theta, y[i]);
            let hv = h as u8 as f64;
            Ok(NodeState {
                theta_plus: theta,
                theta_minus: theta,
                estimate: theta,
                u_plus: y[i] * hv,
                v_plus: hv,
                u_minus: y[i] * hv,
                v_minus: hv,
                ybar_hat: y[i],
                h_plus: h,
                h_minus: h,
            })
        })
        .collect()
}

#[inline]
fn laplacian(x: impl Fn(&NodeState) -> f64, states: &[NodeState], i: usize, nb: &[usize]) -> f64 {
    let xi = x(&states[i]);
    nb.iter().map(|&j| xi - x(&states[j])).sum()
}

fn iterate_into(
    prev: &[NodeState],
    next: &mut [NodeState],
    snapshot: &FieldSnapshot,
    topo: &NetworkTopology,
    schedule: &StepSchedule,
    det: &Detector,
    delta: f64,
    t: usize,
) -> Result<()> {
    let a = schedule.alpha(t);
    let b = schedule.beta(t);
    let y = &snapshot.y;
    // Detection from theta(t). At t = 1 this reproduces the initial detections.
    for (i, s) in prev.iter().enumerate() {
        next[i].h_plus = det.valid(s.theta_plus, y[i]);
        next[i].h_minus = det.valid(s.theta_minus, y[i]);
    }
    for i in 0..prev.len() {
        let nb = topo.neighbors(i);
        let s = &prev[i];
        let hp = next[i].h_plus as u8 as f64;
        let hm = next[i].h_minus as u8 as f64;
        let u_plus = s.u_plus - b * laplacian(|s| s.u_plus, prev, i, nb) + a * (y[i] * hp - s.u_plus);
        let v_plus = s.v_plus - b * laplacian(|s| s.v_plus, prev, i, nb) + a * (hp - s.v_plus);
        let u_minus = s.u_minus - b * laplacian(|s| s.u_minus, prev, i, nb) + a * (y[i] * hm - s.u_minus);
        let v_minus = s.v_minus - b * laplacian(|s| s.v_minus, prev, i, nb) + a * (hm - s.v_minus);
        let ybar_hat = if t >= 2 { s.ybar_hat - b * laplacian(|s| s.ybar_hat, prev, i, nb) } else { s.ybar_hat };

        for (value, field) in [
            (u_plus, "u_plus"),
            (v_plus, "v_plus"),
            (u_minus, "u_minus"),
            (v_minus, "v_minus"),
            (ybar_hat, "ybar_hat"),
        ] {
            if !value.is_finite() {
                return Err(Error::Diverged { t, node: i, field });
            }
        }

        let theta_plus = (u_plus / (v_plus + delta)).max(0.0);
        let theta_minus = (u_minus / (v_minus + delta)).min(0.0);
        let n = &mut next[i];
        n.u_plus = u_plus;
        n.v_plus = v_plus;
        n.u_minus = u_minus;
        n.v_minus = v_minus;
        n.ybar_hat = ybar_hat;
        n.theta_plus = theta_plus;
        n.theta_minus = theta_minus;
        n.estimate = if ybar_hat >= 0.0 { theta_plus } else { theta_minus };
    }
    Ok(())
}

/// One synchronous sweep of Steps 2-4 at time `t`; every right-hand side reads
/// `states` (labelled `t - 1`) before anything is written.
pub fn iterate(
    states: &[NodeState],
    snapshot: &FieldSnapshot,
    topo: &NetworkTopology,
    schedule: &StepSchedule,
    config: &EngineConfig,
    t: usize,
) -> Result<Vec<NodeState>> {
    if t == 0 {
        return Err(Error::Param("iteration index starts at 1".into()));
    }
    check_sizes(snapshot, topo)?;
    if states.len() != topo.n() {
        return Err(Error::LengthMismatch { expected: topo.n(), got: states.len() });
    }
    let p = snapshot.params;
    let mut next = states.to_vec();
    iterate_into(states, &mut next, snapshot, topo, schedule, &Detector::new(p.sigma(), p.p1()), config.delta, t)?;
    Ok(next)
}

fn stopping_rule_holds(prev: &[NodeState], next: &[NodeState], delta: f64, eps: f64) -> bool {
    prev.iter().zip(next).all(|(a, b)| {
        (b.ratio_plus(delta) - a.ratio_plus(delta)).abs() < eps
            && (b.ratio_minus(delta) - a.ratio_minus(delta)).abs() < eps
            && (b.ybar_hat - a.ybar_hat).abs() < eps
    })
}

/// Runs the iteration until the stopping rule holds at every node (checked
/// globally) or `max_iters` sweeps have been performed.
pub fn run(
    snapshot: &FieldSnapshot,
    topo: &NetworkTopology,
    schedule: &StepSchedule,
    config: &EngineConfig,
) -> Result<RunResult> {
    config.validate()?;
    let p = snapshot.params;
    let det = Detector::new(p.sigma(), p.p1());
    let mut prev = initialize(snapshot, topo, config)?;
    let mut next = prev.clone();
    let mut trace = config.record_trace.then(|| vec![prev.clone()]);
    let mut converged_at = None;
    let mut used = 0;
    for t in 1..=config.max_iters {
        iterate_into(&prev, &mut next, snapshot, topo, schedule, &det, config.delta, t)?;
        used = t;
        if let Some(tr) = trace.as_mut() {
            tr.push(next.clone());
        }
        // The consensus on ybar only starts at t = 2, so a quiet first sweep
        // says nothing about convergence.
        let stop = t >= 2 && stopping_rule_holds(&prev, &next, config.delta, config.epsilon_stop);
        std::mem::swap(&mut prev, &mut next);
        if stop && converged_at.is_none() {
            converged_at = Some(t);
            if config.halt_on_convergence {
                break;
            }
        }
    }
    let final_estimates: Vec<f64> = prev.iter().map(|s| s.estimate).collect();
    let final_h_plus = prev.iter().zip(&snapshot.y).map(|(s, &y)| det.valid(s.theta_plus, y)).collect();
    let final_h_minus = prev.iter().zip(&snapshot.y).map(|(s, &y)| det.valid(s.theta_minus, y)).collect();
    let fixed_point_residual = fixed_point_residual(&final_estimates, snapshot, config.delta);
    Ok(RunResult {
        final_states: prev,
        final_estimates,
        iterations_used: used,
        converged: converged_at.is_some(),
        converged_at,
        final_h_plus,
        final_h_minus,
        trace,
        fixed_point_residual,
        delta: config.delta,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// The limit map: detect every sensor at `theta`, average the accepted
/// observations with the `n delta` guard, and clip to the branch half-line.
pub fn limit_map(theta: f64, y: &[f64], det: &Detector, delta: f64, plus: bool) -> f64 {
    let (mut sum, mut count) = (0.0, 0.0);
    for &yj in y {
        if det.valid(theta, yj) {
            sum += yj;
            count += 1.0;
        }
    }
    let value = sum / (count + y.len() as f64 * delta);
    if plus {
        value.max(0.0)
    } else {
        value.min(0.0)
    }
}

/// `|theta_inf - g(theta_inf)|` at the median of `estimates`, on the branch
/// selected by the sign of the observation mean.
pub fn fixed_point_residual(estimates: &[f64], snapshot: &FieldSnapshot, delta: f64) -> f64 {
    let p = snapshot.params;
    let det = Detector::new(p.sigma(), p.p1());
    let theta = median(estimates);
    (theta - limit_map(theta, &snapshot.y, &det, delta, snapshot.mean_y() >= 0.0)).abs()
}

/// Fixed-point residual of a converged run; non-converged runs are an error.
pub fn check_fixed_point(result: &RunResult, snapshot: &FieldSnapshot, config: &EngineConfig) -> Result<f64> {
    if !result.converged {
        return Err(Error::NotConverged { max_iters: config.max_iters });
    }
    Ok(fixed_point_residual(&result.final_estimates, snapshot, config.delta))
}

/// Checks that, with sensors sorted by observation, the final plus-branch
/// detections are nondecreasing and the minus-branch detections nonincreasing.
pub fn detection_ordering_holds(result: &RunResult, snapshot: &FieldSnapshot) -> bool {
    ordering_holds(&snapshot.y, &result.final_h_plus, &result.final_h_minus)
}

pub fn ordering_holds(y: &[f64], h_plus: &[bool], h_minus: &[bool]) -> bool {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    order.windows(2).all(|w| h_plus[w[0]] <= h_plus[w[1]] && h_minus[w[0]] >= h_minus[w[1]])
}

/// Writes recorded states as CSV with one row per (t, node).
pub fn write_trace_csv<W: Write>(trace: &[Vec<NodeState>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t", "node", "theta_plus", "theta_minus", "u_plus", "v_plus", "u_minus", "v_minus", "ybar_hat", "h_plus",
        "h_minus",
    ])?;
    for (t, states) in trace.iter().enumerate() {
        for (i, s) in states.iter().enumerate() {
            w.write_record([
                t.to_string(),
                i.to_string(),
                s.theta_plus.to_string(),
                s.theta_minus.to_string(),
                s.u_plus.to_string(),
                s.v_plus.to_string(),
                s.u_minus.to_string(),
                s.v_minus.to_string(),
                s.ybar_hat.to_string(),
                (s.h_plus as u8).to_string(),
                (s.h_minus as u8).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
