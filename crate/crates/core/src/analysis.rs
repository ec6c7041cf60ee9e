//! Performance theory of the MDE limit: decision regions, order statistics of
//! the observation mixture, probabilities of the ordered detection patterns,
//! the variance decomposition over those patterns, and large-n limits.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::Detector;
use crate::error::{Error, Result};
use crate::quadrature::{integrate_with_breaks, Tolerance};
use crate::rng::{self, SimRng};
use crate::special::{binomial_upper_tail, ln_beta_pdf, normal_cdf, normal_pdf, normal_quantile, normal_sf};

// ---------------------------------------------------------------------------
// Decision regions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegionKind {
    Empty,
    Interval,
}

/// Set of estimate values for which sensor `i` is declared valid:
/// `[y - sqrt(y^2 + c), y + sqrt(y^2 + c)]` with `c = 2 sigma^2 ln(p1/p0)`,
/// empty when the discriminant is negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRegion {
    pub kind: RegionKind,
    pub lower: f64,
    pub upper: f64,
}

impl DecisionRegion {
    const EMPTY: DecisionRegion = DecisionRegion { kind: RegionKind::Empty, lower: f64::NAN, upper: f64::NAN };

    pub fn contains(&self, theta: f64) -> bool {
        self.kind == RegionKind::Interval && self.lower <= theta && theta <= self.upper
    }

    /// Intersection with the half-line of one sign branch (`[0, inf)` for plus).
    pub fn truncated(&self, plus: bool) -> DecisionRegion {
        if self.kind == RegionKind::Empty {
            return *self;
        }
        let (lower, upper) = if plus { (self.lower.max(0.0), self.upper) } else { (self.lower, self.upper.min(0.0)) };
        if lower > upper {
            Self::EMPTY
        } else {
            DecisionRegion { kind: RegionKind::Interval, lower, upper }
        }
    }

    /// Set inclusion; the empty set is contained in everything.
    pub fn is_subset_of(&self, other: &DecisionRegion) -> bool {
        match (self.kind, other.kind) {
            (RegionKind::Empty, _) => true,
            (_, RegionKind::Empty) => false,
            _ => other.lower <= self.lower && self.upper <= other.upper,
        }
    }
}

pub fn decision_region(y: f64, sigma: f64, p1: f64) -> DecisionRegion {
    let disc = y * y + Detector::new(sigma, p1).threshold();
    if disc < 0.0 {
        return DecisionRegion::EMPTY;
    }
    let root = disc.sqrt();
    DecisionRegion { kind: RegionKind::Interval, lower: y - root, upper: y + root }
}

pub fn region_contains(region: &DecisionRegion, theta: f64) -> bool {
    region.contains(theta)
}

/// Nesting of the branch-truncated regions of ascending `sorted_y`: increasing
/// along the order on the plus branch, decreasing on the minus branch.
pub fn regions_nested(sorted_y: &[f64], sigma: f64, p1: f64, plus: bool) -> bool {
    let regions: Vec<DecisionRegion> =
        sorted_y.iter().map(|&y| decision_region(y, sigma, p1).truncated(plus)).collect();
    regions.windows(2).all(|w| if plus { w[0].is_subset_of(&w[1]) } else { w[1].is_subset_of(&w[0]) })
}

// ---------------------------------------------------------------------------
// Observation mixture

/// Distribution of one observation: `p0 N(0, sigma^2) + p1 N(theta, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureDistribution {
    theta: f64,
    sigma: f64,
    p1: f64,
}

const QUANTILE_TOL: f64 = 1e-12;

impl MixtureDistribution {
    pub fn new(theta: f64, sigma: f64, p1: f64) -> Result<Self> {
        if !theta.is_finite() || !(sigma > 0.0 && sigma.is_finite()) || !(p1 > 0.0 && p1 < 1.0) {
            return Err(Error::Param(format!("invalid mixture (theta {theta}, sigma {sigma}, p1 {p1})")));
        }
        Ok(MixtureDistribution { theta, sigma, p1 })
    }

    pub fn from_params(p: &crate::model::ModelParams) -> Self {
        MixtureDistribution { theta: p.theta(), sigma: p.sigma(), p1: p.p1() }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn p1(&self) -> f64 {
        self.p1
    }
    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }

    pub fn mean(&self) -> f64 {
        self.p1 * self.theta
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma + self.p1 * self.p0() * self.theta * self.theta
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let s = self.sigma;
        (self.p0() * normal_pdf(y / s) + self.p1 * normal_pdf((y - self.theta) / s)) / s
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let s = self.sigma;
        self.p0() * normal_cdf(y / s) + self.p1 * normal_cdf((y - self.theta) / s)
    }

    pub fn sf(&self, y: f64) -> f64 {
        let s = self.sigma;
        self.p0() * normal_sf(y / s) + self.p1 * normal_sf((y - self.theta) / s)
    }

    /// Inverse cdf by safeguarded Newton iteration inside the bracket
    /// `[min(sigma z, theta + sigma z), max(..)]`, `z = Phi^-1(q)`, which
    /// contains the root because each component cdf is monotone. Upper
    /// quantiles are solved on the survival function to keep precision.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Param(format!("quantile level must lie in (0, 1), got {q}")));
        }
        let z = normal_quantile(q);
        let (a, b) = (self.sigma * z, self.theta + self.sigma * z);
        let (mut lo, mut hi) = (a.min(b), a.max(b));
        if hi - lo <= QUANTILE_TOL {
            return Ok(0.5 * (lo + hi));
        }
        let upper = q > 0.5;
        let target = if upper { 1.0 - q } else { q };
        // Increasing in y on both formulations.
        let g = |y: f64| if upper { target - self.sf(y) } else { self.cdf(y) - target };
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let gx = g(x);
            if gx == 0.0 {
                return Ok(x);
            }
            if gx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.pdf(x);
            let mut next = if d > 0.0 { x - gx / d } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= QUANTILE_TOL || hi - lo <= QUANTILE_TOL {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        let valid = rng::bernoulli(rng, self.p1);
        let w = self.sigma * rng::standard_normal(rng);
        if valid {
            self.theta + w
        } else {
            w
        }
    }

    /// Break points covering both components, for quadrature in `y`.
    fn y_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut b = vec![lo, hi];
        for c in [0.0, self.theta] {
            for k in [-8.0, -4.0, -2.0, 0.0, 2.0, 4.0, 8.0] {
                b.push(c + k * self.sigma);
            }
        }
        sorted_within(b, lo, hi)
    }
}

fn sorted_within(mut b: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    b.retain(|x| *x >= lo && *x <= hi);
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

// ---------------------------------------------------------------------------
// Order statistics

fn check_index(n: usize, i: usize) -> Result<()> {
    if n == 0 || i == 0 || i > n {
        return Err(Error::Param(format!("order statistic index {i} out of range 1..={n}")));
    }
    Ok(())
}

/// `Pr{Y_(i) <= r} = sum_{k=i}^n C(n,k) F^k (1-F)^(n-k)` with `F = F_Y(r)`.
pub fn order_stat_cdf(dist: &MixtureDistribution, n: usize, i: usize, r: f64) -> Result<f64> {
    check_index(n, i)?;
    Ok(binomial_upper_tail(n as u64, i as u64, dist.cdf(r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MomentMethod {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderStatSummary {
    pub n: usize,
    pub i: usize,
    pub mean: f64,
    pub variance: f64,
    pub method: MomentMethod,
    /// Quadrature error estimate of the larger of the two moment integrals,
    /// or the standard error of the mean for Monte Carlo.
    pub abs_error: f64,
}

pub const MOMENT_TOL: f64 = 1e-6;
pub const MAX_MOMENT_N: usize = 10_000;
const U_CLIP: f64 = 1e-12;

/// Quadrature in the quantile domain:
/// `E[Y_(i)^m] = int_0^1 F^-1(u)^m Beta(u; i, n-i+1) du` on `[1e-12, 1 - 1e-12]`.
pub fn order_stat_moments(dist: &MixtureDistribution, n: usize, i: usize) -> Result<OrderStatSummary> {
    check_index(n, i)?;
    if n > MAX_MOMENT_N {
        return Err(Error::TooLarge { n, max: MAX_MOMENT_N });
    }
    let (a, b) = (i as f64, (n - i + 1) as f64);
    let (lo, hi) = (U_CLIP, 1.0 - U_CLIP);

    let mut breaks = vec![lo, hi];
    for e in [1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
        breaks.push(e);
        breaks.push(1.0 - e);
    }
    // Around the peak of the Beta weight.
    let mode = if n == 1 { 0.5 } else { (a - 1.0) / (a + b - 2.0) };
    let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
    for k in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
        breaks.push(mode - k * sd);
        breaks.push(mode + k * sd);
    }
    // Where the quantile function moves between the two components.
    let (y0, y1) = (dist.theta.min(0.0), dist.theta.max(0.0));
    for j in 0..=16 {
        breaks.push(dist.cdf(y0 + (y1 - y0) * j as f64 / 16.0));
    }
    let breaks = sorted_within(breaks, lo, hi);

    let tol = Tolerance { abs: MOMENT_TOL, rel: 0.0, max_intervals: 20_000 };
    let weight = |u: f64| ln_beta_pdf(a, b, u).exp();
    let quantile = |u: f64| dist.quantile(u).unwrap_or(f64::NAN);
    let m1 = integrate_with_breaks(|u| quantile(u) * weight(u), &breaks, tol)?;
    let m2 = integrate_with_breaks(
        |u| {
            let x = quantile(u);
            x * x * weight(u)
        },
        &breaks,
        tol,
    )?;
    Ok(OrderStatSummary {
        n,
        i,
        mean: m1.value,
        variance: (m2.value - m1.value * m1.value).max(0.0),
        method: MomentMethod::Quadrature,
        abs_error: m1.abs_error.max(m2.abs_error),
    })
}

/// Moments of every order statistic, `i = 1..=n`.
pub fn order_stat_moments_all(dist: &MixtureDistribution, n: usize) -> Result<Vec<OrderStatSummary>> {
    (1..=n).map(|i| order_stat_moments(dist, n, i)).collect()
}

const MC_CHUNK: usize = 4096;

/// Runs `samples` Monte Carlo draws in fixed-size chunks, each with its own
/// stream derived from `(seed, tag, chunk)`, so results do not depend on the
/// thread count. Chunk outputs are returned in chunk order.
fn chunked_mc<T, F>(samples: usize, seed: u64, tag: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut SimRng, usize) -> T + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, &[rng::purpose::ANALYSIS, tag, c as u64]);
            let len = MC_CHUNK.min(samples - c * MC_CHUNK);
            f(&mut rng, len)
        })
        .collect()
}

fn sorted_sample(dist: &MixtureDistribution, n: usize, rng: &mut SimRng, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend((0..n).map(|_| dist.sample(rng)));
    buf.sort_by(f64::total_cmp);
}

/// Monte Carlo moments of all `n` order statistics from `samples` sorted draws.
pub fn order_stat_moments_mc(
    dist: &MixtureDistribution,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<OrderStatSummary>> {
    check_index(n, 1)?;
    if samples < 2 {
        return Err(Error::Param("need at least two samples".into()));
    }
    let partial = chunked_mc(samples, seed, 1, |rng, len| {
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        let mut buf = Vec::with_capacity(n);
        for _ in 0..len {
            sorted_sample(dist, n, rng, &mut buf);
            for (k, &x) in buf.iter().enumerate() {
                s1[k] += x;
                s2[k] += x * x;
            }
        }
        (s1, s2)
    });
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    for (a, b) in partial {
        for k in 0..n {
            s1[k] += a[k];
            s2[k] += b[k];
        }
    }
    let m = samples as f64;
    Ok((0..n)
        .map(|k| {
            let mean = s1[k] / m;
            let variance = (s2[k] - m * mean * mean) / (m - 1.0);
            OrderStatSummary {
                n,
                i: k + 1,
                mean,
                variance,
                method: MomentMethod::MonteCarlo,
                abs_error: (variance / m).sqrt(),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Probabilities of the ordered detection patterns

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventProbabilities {
    pub plus: bool,
    /// `probs[k - 1]` estimates `Pr{h = h_k}`; each sample counts toward the
    /// first pattern whose event it satisfies.
    pub probs: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Fraction of samples satisfying none of the n events.
    pub residual: f64,
    /// Fraction satisfying the events of more than one pattern.
    pub overlap: f64,
    /// Fraction where more than one of the alternative conjunctions listed
    /// for the same pattern holds (possible only when `p1 < 1/2`).
    pub subevent_overlap: f64,
    pub samples: usize,
}

pub const MIN_EVENT_SAMPLES: usize = 10_000;

/// Evaluates the pattern events on one ascending sample (plus branch).
/// Returns, per k, the number of alternative conjunctions that hold.
fn pattern_events(sorted: &[f64], c: f64, p1: f64, suffix: &[f64], out: &mut [u8]) {
    let n = sorted.len();
    let positive = suffix[0] >= 0.0;
    let r_plus = |y: f64| y + (y * y + c).sqrt();
    let r_minus = |y: f64| y - (y * y + c).sqrt();
    for k in 1..=n {
        out[k - 1] = 0;
        if !positive {
            continue;
        }
        let m = suffix[k - 1] / (n - k + 1) as f64;
        let cur = sorted[k - 1];
        let prev = (k > 1).then(|| sorted[k - 2]);
        if p1 >= 0.5 {
            // Y_(0) is read as -inf: the lower boundary constraint is vacuous.
            let lower = prev.is_none_or(|p| r_plus(p) <= m);
            out[k - 1] = (lower && m <= r_plus(cur)) as u8;
        } else {
            let b = -(-c).sqrt();
            let prev_ge = prev.is_some_and(|p| p >= b);
            let prev_lt = !prev_ge;
            let cur_ge = cur >= b;
            let e1 = prev_ge && prev.is_some_and(|p| r_plus(p) <= m) && m <= r_plus(cur);
            let e2 = m <= r_plus(cur) && cur_ge && prev_lt;
            let e3 = prev_ge && prev.is_some_and(|p| r_minus(p) >= m) && m >= r_minus(cur);
            let e4 = m >= r_minus(cur) && cur_ge && prev_lt;
            out[k - 1] = e1 as u8 + e2 as u8 + e3 as u8 + e4 as u8;
        }
    }
}

/// Monte Carlo estimate of `Pr{h = h_k}` for `k = 1..=n` on one branch,
/// evaluating the literal event conditions on sorted samples (comparisons with
/// an undefined boundary, i.e. a negative discriminant, are false). The minus
/// branch is the plus branch applied to negated samples.
pub fn event_probabilities(
    dist: &MixtureDistribution,
    n: usize,
    plus: bool,
    samples: usize,
    seed: u64,
) -> Result<EventProbabilities> {
    check_index(n, 1)?;
    if samples < MIN_EVENT_SAMPLES {
        return Err(Error::Param(format!("need at least {MIN_EVENT_SAMPLES} samples, got {samples}")));
    }
    let c = Detector::new(dist.sigma, dist.p1).threshold();
    let partial = chunked_mc(samples, seed, 2 + plus as u64, |rng, len| {
        let mut counts = vec![0u64; n];
        let (mut residual, mut overlap, mut sub) = (0u64, 0u64, 0u64);
        let mut buf = Vec::with_capacity(n);
        let mut suffix = vec![0.0; n];
        let mut hits = vec![0u8; n];
        for _ in 0..len {
            buf.clear();
            buf.extend((0..n).map(|_| {
                let y = dist.sample(rng);
                if plus {
                    y
                } else {
                    -y
                }
            }));
            buf.sort_by(f64::total_cmp);
            let mut acc = 0.0;
            for k in (0..n).rev() {
                acc += buf[k];
                suffix[k] = acc;
            }
            pattern_events(&buf, c, dist.p1, &suffix, &mut hits);
            let matched = hits.iter().filter(|&&h| h > 0).count();
            match hits.iter().position(|&h| h > 0) {
                Some(k) => counts[k] += 1,
                None => residual += 1,
            }
            overlap += (matched > 1) as u64;
            sub += hits.iter().any(|&h| h > 1) as u64;
        }
        (counts, residual, overlap, sub)
    });
    let mut counts = vec![0u64; n];
    let (mut residual, mut overlap, mut sub) = (0, 0, 0);
    for (c, r, o, s) in partial {
        for k in 0..n {
            counts[k] += c[k];
        }
        residual += r;
        overlap += o;
        sub += s;
    }
    let m = samples as f64;
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    let std_err = probs.iter().map(|&p| (p * (1.0 - p) / m).sqrt()).collect();
    Ok(EventProbabilities {
        plus,
        probs,
        std_err,
        residual: residual as f64 / m,
        overlap: overlap as f64 / m,
        subevent_overlap: sub as f64 / m,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Variance decomposition

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    /// `E(Var(theta | h))`.
    pub expected_conditional_variance: f64,
    /// `Var(E(theta | h))`.
    pub variance_of_conditional_mean: f64,
    pub total: f64,
}

/// Law-of-total-variance decomposition over the ordered patterns, with
/// `E(theta^k+) = sum_{i>=k} mu_(i)/(n-k+1)` and
/// `Var(theta^k+) = sum_{i>=k} sigma^2_(i)/(n-k+1)^2` (and the mirrored
/// minus-branch sums over `i <= n-k+1`). The variance terms treat the order
/// statistics as uncorrelated, exactly as the expressions are written.
pub fn variance_decomposition(
    probs_plus: &[f64],
    probs_minus: &[f64],
    moments: &[OrderStatSummary],
) -> Result<VarianceDecomposition> {
    let n = moments.len();
    for len in [probs_plus.len(), probs_minus.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    if moments.iter().enumerate().any(|(k, m)| m.i != k + 1 || m.n != n) {
        return Err(Error::Param("moments must list i = 1..=n in order".into()));
    }
    let (mut e_var, mut e_sq, mut e_mean) = (0.0, 0.0, 0.0);
    for k in 1..=n {
        let count = (n - k + 1) as f64;
        let upper = &moments[k - 1..];
        let lower = &moments[..n - k + 1];
        for (set, p) in [(upper, probs_plus[k - 1]), (lower, probs_minus[k - 1])] {
            let mean = set.iter().map(|m| m.mean).sum::<f64>() / count;
            let var = set.iter().map(|m| m.variance).sum::<f64>() / (count * count);
            e_var += var * p;
            e_sq += mean * mean * p;
            e_mean += mean * p;
        }
    }
    let v = e_sq - e_mean * e_mean;
    Ok(VarianceDecomposition { expected_conditional_variance: e_var, variance_of_conditional_mean: v, total: e_var + v })
}

// ---------------------------------------------------------------------------
// Asymptotics

/// Normal limit of the central order statistic `Y_(ceil(nq))`:
/// `N(F^-1(q), q(1-q) / (n f(F^-1(q))^2))`. Returns `(mean, variance)`.
pub fn central_orderstat_normal_approx(dist: &MixtureDistribution, n: usize, q: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Param("n must be at least 1".into()));
    }
    let x = dist.quantile(q)?;
    let f = dist.pdf(x);
    if !(f > f64::MIN_POSITIVE) {
        return Err(Error::VanishingDensity);
    }
    Ok((x, q * (1.0 - q) / (n as f64 * f * f)))
}

/// `int_a^inf y phi_s(y - m) dy = m Q((a-m)/s) + s phi((a-m)/s)`.
fn upper_partial_moment(m: f64, s: f64, a: f64) -> f64 {
    let z = (a - m) / s;
    m * normal_sf(z) + s * normal_pdf(z)
}

/// `int_-inf^b y phi_s(y - m) dy = m Phi((b-m)/s) - s phi((b-m)/s)`.
fn lower_partial_moment(m: f64, s: f64, b: f64) -> f64 {
    let z = (b - m) / s;
    m * normal_cdf(z) - s * normal_pdf(z)
}

/// Large-n limit of the trimmed mean that keeps the top `1 - q` fraction of
/// observations (plus branch), `E[Y | Y > F^-1(q)]`, or the bottom `1 - q`
/// fraction (minus branch), `E[Y | Y < F^-1(1-q)]`, from closed-form Gaussian
/// partial moments.
pub fn asymptotic_trimmed_mean(dist: &MixtureDistribution, q: f64, plus: bool) -> Result<f64> {
    let (s, p0, p1, th) = (dist.sigma, dist.p0(), dist.p1, dist.theta);
    if plus {
        let a = dist.quantile(q)?;
        let num = p0 * upper_partial_moment(0.0, s, a) + p1 * upper_partial_moment(th, s, a);
        Ok(num / dist.sf(a))
    } else {
        let b = dist.quantile(1.0 - q)?;
        let num = p0 * lower_partial_moment(0.0, s, b) + p1 * lower_partial_moment(th, s, b);
        Ok(num / dist.cdf(b))
    }
}

/// [`asymptotic_trimmed_mean`] by direct quadrature of the tail integrals.
pub fn asymptotic_trimmed_mean_quadrature(dist: &MixtureDistribution, q: f64, plus: bool) -> Result<f64> {
    let reach = 40.0 * dist.sigma;
    let (lo, hi) = if plus {
        (dist.quantile(q)?, dist.theta.max(0.0) + reach)
    } else {
        (dist.theta.min(0.0) - reach, dist.quantile(1.0 - q)?)
    };
    let breaks = dist.y_breaks(lo, hi);
    let tol = Tolerance { abs: 1e-13, rel: 1e-13, max_intervals: 4000 };
    let num = integrate_with_breaks(|y| y * dist.pdf(y), &breaks, tol)?;
    let den = integrate_with_breaks(|y| dist.pdf(y), &breaks, tol)?;
    Ok(num.value / den.value)
}

/// Sample counterpart: mean of the `n - ceil(nq) + 1` largest values (plus)
/// or the `n - ceil(nq) + 1` smallest (minus). Sorts `sample` in place.
pub fn trimmed_mean(sample: &mut [f64], q: f64, plus: bool) -> f64 {
    let n = sample.len();
    sample.sort_by(f64::total_cmp);
    let k = ((n as f64 * q).ceil() as usize).clamp(1, n);
    let kept = n - k + 1;
    let slice = if plus { &sample[k - 1..] } else { &sample[..kept] };
    slice.iter().sum::<f64>() / kept as f64
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, Serialize)]
pub struct OrderStatRow {
    pub n: usize,
    pub p1: f64,
    pub theta: f64,
    pub sigma: f64,
    pub i: usize,
    pub mean: f64,
    pub variance: f64,
    pub abs_error: f64,
}

impl OrderStatRow {
    pub fn new(dist: &MixtureDistribution, s: &OrderStatSummary) -> Self {
        OrderStatRow {
            n: s.n,
            p1: dist.p1,
            theta: dist.theta,
            sigma: dist.sigma,
            i: s.i,
            mean: s.mean,
            variance: s.variance,
            abs_error: s.abs_error,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EventRow {
    pub n: usize,
    pub p1: f64,
    pub theta: f64,
    pub sigma: f64,
    pub k: usize,
    pub branch: &'static str,
    pub prob: f64,
    pub std_err: f64,
}

impl EventRow {
    pub fn rows(dist: &MixtureDistribution, ev: &EventProbabilities) -> Vec<Self> {
        ev.probs
            .iter()
            .zip(&ev.std_err)
            .enumerate()
            .map(|(k, (&prob, &std_err))| EventRow {
                n: ev.probs.len(),
                p1: dist.p1,
                theta: dist.theta,
                sigma: dist.sigma,
                k: k + 1,
                branch: if ev.plus { "plus" } else { "minus" },
                prob,
                std_err,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticRow {
    pub n: usize,
    pub p1: f64,
    pub theta: f64,
    pub sigma: f64,
    pub q: f64,
    pub quantile: f64,
    pub normal_variance: f64,
    pub trimmed_mean_plus: f64,
    pub trimmed_mean_minus: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionRow {
    pub y: f64,
    pub sigma: f64,
    pub p1: f64,
    pub kind: RegionKind,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl RegionRow {
    pub fn new(y: f64, sigma: f64, p1: f64) -> Self {
        let r = decision_region(y, sigma, p1);
        let bounds = (r.kind == RegionKind::Interval).then_some((r.lower, r.upper));
        RegionRow { y, sigma, p1, kind: r.kind, lower: bounds.map(|b| b.0), upper: bounds.map(|b| b.1) }
    }
}

/// Writes serializable rows as CSV with a header line.
pub fn write_table<W: Write, R: Serialize>(rows: &[R], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::detect;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mix(theta: f64, sigma: f64, p1: f64) -> MixtureDistribution {
        MixtureDistribution::new(theta, sigma, p1).unwrap()
    }

    #[test]
    fn region_examples() {
        let r = decision_region(0.0, 1.0, 0.5);
        assert_eq!((r.kind, r.lower, r.upper), (RegionKind::Interval, 0.0, 0.0));
        let r = decision_region(3.0, 1.0, 0.5);
        assert_eq!((r.lower, r.upper), (0.0, 6.0));
        assert_eq!(decision_region(0.0, 1.0, 0.3).kind, RegionKind::Empty);
        assert!(region_contains(&decision_region(3.0, 1.0, 0.5), 2.5) && detect(2.5, 3.0, 1.0, 0.5));
        assert!(!region_contains(&decision_region(3.0, 1.0, 0.5), 7.0) && !detect(7.0, 3.0, 1.0, 0.5));
    }

    #[test]
    fn empty_regions_reject_everything() {
        for y in [-0.5, 0.0, 0.4, 1.0] {
            let r = decision_region(y, 1.0, 0.3);
            assert_eq!(r.kind, RegionKind::Empty);
            for k in -100..=100 {
                assert!(!detect(k as f64 * 0.05, y, 1.0, 0.3));
            }
        }
    }

    #[test]
    fn mixture_examples() {
        assert_eq!(mix(0.0, 1.0, 0.3).cdf(0.0), 0.5);
        assert_relative_eq!(mix(10.0, 1.0, 0.5).cdf(5.0), 0.5, epsilon = 1e-15);
        let d = mix(10.0, 1.0, 0.5);
        for k in -40..=140 {
            let y = k as f64 * 0.1;
            let q = d.cdf(y);
            if q > 1e-300 && q < 1.0 - 1e-15 {
                let back = d.quantile(q).unwrap();
                assert!((d.cdf(back) - q).abs() <= 1e-10, "y = {y}");
            }
        }
        assert!(d.quantile(0.0).is_err() && d.quantile(1.0).is_err());
    }

    #[test]
    fn quantile_extremes() {
        let d = mix(100.0, 1.0, 0.5);
        for q in [1e-12, 1e-6, 0.3, 0.5, 0.7, 1.0 - 1e-6, 1.0 - 1e-12] {
            let x = d.quantile(q).unwrap();
            let err = if q > 0.5 { d.sf(x) - (1.0 - q) } else { d.cdf(x) - q };
            assert!(err.abs() <= 1e-10 * 1e-2f64.max(q.min(1.0 - q)) + 1e-16, "q = {q}: {err}");
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let d = mix(7.0, 1.3, 0.35);
        let b = d.y_breaks(-60.0, 70.0);
        let r = integrate_with_breaks(|y| d.pdf(y), &b, Tolerance::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn order_stat_cdf_identities() {
        let d = mix(3.0, 1.0, 0.6);
        let f = d.cdf(1.2);
        assert_relative_eq!(order_stat_cdf(&d, 7, 1, 1.2).unwrap(), 1.0 - (1.0 - f).powi(7), max_relative = 1e-12);
        assert_relative_eq!(order_stat_cdf(&d, 7, 7, 1.2).unwrap(), f.powi(7), max_relative = 1e-12);
        assert!(order_stat_cdf(&d, 7, 0, 1.2).is_err() && order_stat_cdf(&d, 7, 8, 1.2).is_err());
        for r in [-2.0, 0.5, 1.5, 3.0, 5.0] {
            let v: Vec<f64> = (1..=7).map(|i| order_stat_cdf(&d, 7, i, r).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        }
    }

    #[test]
    fn order_stat_moment_closed_forms() {
        let single = order_stat_moments(&mix(4.0, 1.0, 0.3), 1, 1).unwrap();
        assert!((single.mean - 1.2).abs() < 1e-6);
        assert!((single.variance - (1.0 + 0.21 * 16.0)).abs() < 1e-5);
        // Max of two standard normals has mean 1/sqrt(pi).
        let max2 = order_stat_moments(&mix(0.0, 1.0, 0.5), 2, 2).unwrap();
        assert!((max2.mean - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-6);
        assert!(max2.abs_error < MOMENT_TOL);
        assert!(order_stat_moments(&mix(0.0, 1.0, 0.5), 3, 4).is_err());
    }

    #[test]
    fn order_stat_means_resum_and_increase() {
        let d = mix(10.0, 1.0, 0.5);
        let all = order_stat_moments_all(&d, 10).unwrap();
        let total: f64 = all.iter().map(|m| m.mean).sum();
        assert!((total - 10.0 * d.mean()).abs() < 1e-4);
        assert!(all.windows(2).all(|w| w[1].mean >= w[0].mean));
        assert!(all.iter().all(|m| m.variance >= 0.0));
    }

    #[test]
    fn large_n_moments_converge() {
        let d = mix(2.0, 1.0, 0.5);
        let m = order_stat_moments(&d, 10_000, 5_000).unwrap();
        let (mu, var) = central_orderstat_normal_approx(&d, 10_000, 0.5).unwrap();
        assert!((m.mean - mu).abs() < 3e-3 && (m.variance / var - 1.0).abs() < 0.05);
    }

    #[test]
    fn normal_approx_examples() {
        let d = mix(0.0, 2.0, 0.5);
        let (m, v) = central_orderstat_normal_approx(&d, 100, 0.5).unwrap();
        assert!(m.abs() < 1e-12);
        assert_relative_eq!(v, std::f64::consts::PI * 4.0 / 200.0, max_relative = 1e-10);
        let (_, v2) = central_orderstat_normal_approx(&d, 200, 0.5).unwrap();
        assert_relative_eq!(v2, v / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn trimmed_mean_limits() {
        let half_normal = asymptotic_trimmed_mean(&mix(0.0, 1.5, 0.5), 0.5, true).unwrap();
        assert_relative_eq!(half_normal, 1.5 * (2.0 / std::f64::consts::PI).sqrt(), max_relative = 1e-10);
        let whole = asymptotic_trimmed_mean(&mix(8.0, 1.0, 0.4), 1e-6, true).unwrap();
        assert!((whole - 3.2).abs() < 1e-3);
        let d = mix(5.0, 1.0, 0.5);
        // Mirror symmetry of the balanced mixture about theta/2.
        let up = asymptotic_trimmed_mean(&d, 0.3, true).unwrap();
        let down = asymptotic_trimmed_mean(&d, 0.3, false).unwrap();
        assert_relative_eq!(up - 2.5, 2.5 - down, max_relative = 1e-9);
    }

    #[test]
    fn trimmed_mean_matches_quadrature() {
        for (theta, p1) in [(5.0, 0.5), (-3.0, 0.3), (20.0, 0.8), (0.0, 0.5)] {
            let d = mix(theta, 1.0, p1);
            for q in [0.1, 0.5, 0.9] {
                for plus in [true, false] {
                    let a = asymptotic_trimmed_mean(&d, q, plus).unwrap();
                    let b = asymptotic_trimmed_mean_quadrature(&d, q, plus).unwrap();
                    assert!((a - b).abs() < 1e-8, "theta {theta} q {q} plus {plus}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn trimmed_mean_sample_statistic() {
        let mut s = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        // ceil(5 * 0.5) = 3: keep Y_(3..5) for plus, Y_(1..3) for minus.
        assert_eq!(trimmed_mean(&mut s, 0.5, true), 4.0);
        assert_eq!(trimmed_mean(&mut s, 0.5, false), 2.0);
    }

    #[test]
    fn single_sensor_decomposition_is_total_variance() {
        let d = mix(4.0, 1.0, 0.5);
        let m = order_stat_moments_all(&d, 1).unwrap();
        let v = variance_decomposition(&[0.7], &[0.3], &m).unwrap();
        assert!((v.total - d.variance()).abs() < 1e-5);
        assert!(variance_decomposition(&[0.7, 0.1], &[0.3], &m).is_err());
    }

    #[test]
    fn noiseless_decomposition_vanishes() {
        let d = mix(0.0, 1e-6, 0.5);
        let m = order_stat_moments_all(&d, 4).unwrap();
        let ev_p = event_probabilities(&d, 4, true, 10_000, 3).unwrap();
        let ev_m = event_probabilities(&d, 4, false, 10_000, 3).unwrap();
        let v = variance_decomposition(&ev_p.probs, &ev_m.probs, &m).unwrap();
        assert!(v.total.abs() < 1e-10, "{v:?}");
    }

    #[test]
    fn event_frequencies_are_probabilities() {
        for p1 in [0.5, 0.3] {
            let d = mix(2.0, 1.0, p1);
            for plus in [true, false] {
                let ev = event_probabilities(&d, 6, plus, 20_000, 11).unwrap();
                let s: f64 = ev.probs.iter().sum::<f64>() + ev.residual;
                assert!((s - 1.0).abs() < 1e-12);
                assert!(ev.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
                if p1 >= 0.5 {
                    assert_eq!(ev.subevent_overlap, 0.0);
                }
            }
        }
        assert!(event_probabilities(&mix(1.0, 1.0, 0.5), 3, true, 100, 1).is_err());
    }

    #[test]
    fn event_probabilities_are_deterministic() {
        let d = mix(1.0, 1.0, 0.4);
        let a = event_probabilities(&d, 5, true, 12_345, 9).unwrap();
        let b = event_probabilities(&d, 5, true, 12_345, 9).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn region_agrees_with_detector(y in -20.0f64..20.0, theta in -40.0f64..40.0, p1 in 0.05f64..0.95, sigma in 0.1f64..4.0) {
            let r = decision_region(y, sigma, p1);
            let near_edge = r.kind == RegionKind::Interval
                && ((theta - r.lower).abs() < 1e-9 * (1.0 + theta.abs()) || (theta - r.upper).abs() < 1e-9 * (1.0 + theta.abs()));
            if !near_edge {
                prop_assert_eq!(region_contains(&r, theta), detect(theta, y, sigma, p1));
            }
        }

        #[test]
        fn mixture_cdf_monotone(theta in -30.0f64..30.0, p1 in 0.05f64..0.95, a in -50.0f64..50.0, d in 0.0f64..10.0) {
            let m = mix(theta, 1.0, p1);
            let (fa, fb) = (m.cdf(a), m.cdf(a + d));
            prop_assert!((0.0..=1.0).contains(&fa) && fa <= fb && m.pdf(a) >= 0.0);
        }
    }
}
