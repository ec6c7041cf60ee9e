//! Centralized benchmark estimators and a small-instance fixed-point oracle.

use serde::{Deserialize, Serialize};

use crate::engine::Detector;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::special::ln_binomial;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Naive,
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub variant: EstimatorKind,
    /// False only for the ideal estimator when no sensor is valid.
    pub defined: bool,
}

/// `sum(y) / (n p1)`, unbiased without knowledge of `h`.
pub fn naive_estimate(y: &[f64], p1: f64) -> f64 {
    y.iter().sum::<f64>() / (y.len() as f64 * p1)
}

pub fn naive_report(y: &[f64], p1: f64) -> EstimatorReport {
    EstimatorReport { estimate: naive_estimate(y, p1), variant: EstimatorKind::Naive, defined: true }
}

/// `(1/n) (sigma^2 / p1^2) (1 + SNR sigma_h^2)`.
pub fn naive_variance(params: &ModelParams) -> f64 {
    let s2 = params.sigma() * params.sigma();
    s2 / (params.p1() * params.p1()) * (1.0 + params.snr() * params.sigma_h2()) / params.n() as f64
}

/// Mean of the valid observations; undefined (estimate 0) when none are valid.
pub fn ideal_estimate(y: &[f64], h: &[bool]) -> Result<EstimatorReport> {
    if y.len() != h.len() {
        return Err(Error::LengthMismatch { expected: y.len(), got: h.len() });
    }
    let (sum, count) = y
        .iter()
        .zip(h)
        .filter(|(_, &valid)| valid)
        .fold((0.0, 0usize), |(s, c), (&v, _)| (s + v, c + 1));
    Ok(EstimatorReport {
        estimate: if count > 0 { sum / count as f64 } else { 0.0 },
        variant: EstimatorKind::Ideal,
        defined: count > 0,
    })
}

/// `psi = sum_{k=1}^n (1/k) C(n,k) p1^k (1-p1)^(n-k)`, i.e. `E[1/K; K >= 1]`
/// for `K ~ Binomial(n, p1)`. Terms are formed in the log domain.
pub fn psi(n: usize, p1: f64) -> f64 {
    let (lp, lq) = (p1.ln(), (1.0 - p1).ln());
    let nu = n as u64;
    (1..=nu)
        .map(|k| (ln_binomial(nu, k) + k as f64 * lp + (nu - k) as f64 * lq - (k as f64).ln()).exp())
        .sum()
}

/// `psi(n, p1) sigma^2`; does not depend on theta.
pub fn ideal_variance(params: &ModelParams) -> f64 {
    ideal_variance_for(params.n(), params.p1(), params.sigma())
}

/// [`ideal_variance`] for raw arguments, allowing the noiseless `sigma = 0`.
pub fn ideal_variance_for(n: usize, p1: f64, sigma: f64) -> f64 {
    psi(n, p1) * sigma * sigma
}

pub const ORACLE_MAX_N: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub theta: f64,
    pub h: Vec<bool>,
    pub plus: bool,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Branch selected by the sign of the observation mean (`>= 0` is plus).
    pub plus: bool,
    /// Every self-consistent fixed point on the selected branch, sorted by theta.
    pub fixed_points: Vec<FixedPoint>,
    /// Representative: the fixed point with the most accepted sensors.
    pub selected: f64,
}

impl OracleResult {
    /// Distance from `theta` to the nearest branch fixed point.
    pub fn distance(&self, theta: f64) -> f64 {
        self.fixed_points.iter().map(|f| (f.theta - theta).abs()).fold(f64::INFINITY, f64::min)
    }
}

fn candidate_value(y: &[f64], h: &[bool], delta: f64, plus: bool) -> f64 {
    let (sum, count) = y.iter().zip(h).filter(|(_, &v)| v).fold((0.0, 0.0), |(s, c), (&v, _)| (s + v, c + 1.0));
    let value = sum / (count + y.len() as f64 * delta);
    if plus {
        value.max(0.0)
    } else {
        value.min(0.0)
    }
}

fn consistent(y: &[f64], h: &[bool], det: &Detector, delta: f64, plus: bool) -> Option<FixedPoint> {
    let theta = candidate_value(y, h, delta, plus);
    y.iter()
        .zip(h)
        .all(|(&yj, &hj)| det.valid(theta, yj) == hj)
        .then(|| FixedPoint { theta, h: h.to_vec(), plus })
}

fn check_size(n: usize) -> Result<()> {
    if n > ORACLE_MAX_N {
        return Err(Error::TooLarge { n, max: ORACLE_MAX_N });
    }
    if n == 0 {
        return Err(Error::Param("empty observation vector".into()));
    }
    Ok(())
}

/// Fixed points of the detect-and-average map among the ordered patterns:
/// on the plus branch, "accept every observation at or above the k-th
/// smallest" for k = 1..=n, mirrored on the minus branch, plus the all-reject
/// pattern (a fixed point at 0 whenever `p1 < 1/2`).
pub fn ordered_fixed_points(y: &[f64], params: &ModelParams, delta: f64, plus: bool) -> Result<Vec<FixedPoint>> {
    check_size(y.len())?;
    let det = Detector::new(params.sigma(), params.p1());
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    if !plus {
        order.reverse();
    }
    let mut out = Vec::new();
    for k in 0..=y.len() {
        let mut h = vec![false; y.len()];
        for &i in &order[k..] {
            h[i] = true;
        }
        out.extend(consistent(y, &h, &det, delta, plus));
    }
    out.sort_by(|a, b| a.theta.total_cmp(&b.theta).then_with(|| a.h.cmp(&b.h)));
    Ok(out)
}

/// Exhaustive search over all `2^n` detection vectors.
pub fn brute_force_fixed_points(y: &[f64], params: &ModelParams, delta: f64, plus: bool) -> Result<Vec<FixedPoint>> {
    check_size(y.len())?;
    let det = Detector::new(params.sigma(), params.p1());
    let n = y.len();
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        let h: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        out.extend(consistent(y, &h, &det, delta, plus));
    }
    out.sort_by(|a, b| a.theta.total_cmp(&b.theta).then_with(|| a.h.cmp(&b.h)));
    Ok(out)
}

/// Enumeration oracle for the limit of the distributed iteration on small
/// instances (`n <= 20`).
pub fn centralized_mde_oracle(y: &[f64], params: &ModelParams, delta: f64) -> Result<OracleResult> {
    check_size(y.len())?;
    let plus = y.iter().sum::<f64>() >= 0.0;
    let fixed_points = ordered_fixed_points(y, params, delta, plus)?;
    let selected = fixed_points
        .iter()
        .max_by_key(|f| f.h.iter().filter(|&&v| v).count())
        .map_or(0.0, |f| f.theta);
    Ok(OracleResult { plus, fixed_points, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn naive_examples() {
        assert_eq!(naive_estimate(&[1.0, 1.0], 0.5), 2.0);
        assert_eq!(naive_estimate(&[0.0; 5], 0.3), 0.0);
        let p = ModelParams::new(100.0, 1.0, 0.5, 50).unwrap();
        assert_relative_eq!(naive_variance(&p), 200.08, max_relative = 1e-12);
        let p0 = ModelParams::new(0.0, 2.0, 0.4, 10).unwrap();
        assert_relative_eq!(naive_variance(&p0), 4.0 / (10.0 * 0.16), max_relative = 1e-12);
    }

    #[test]
    fn ideal_examples() {
        let r = ideal_estimate(&[5.0, 7.0, 100.0], &[true, true, false]).unwrap();
        assert_eq!((r.estimate, r.defined), (6.0, true));
        assert_eq!(ideal_estimate(&[1.0, 3.0], &[true, true]).unwrap().estimate, 2.0);
        assert!(!ideal_estimate(&[1.0, 3.0], &[false, false]).unwrap().defined);
        assert!(ideal_estimate(&[1.0], &[true, false]).is_err());
        assert_eq!(ideal_variance_for(50, 0.5, 0.0), 0.0);
    }

    #[test]
    fn psi_values() {
        assert_relative_eq!(psi(1, 0.5), 0.5, max_relative = 1e-14);
        // Direct sum with exact binomials for n = 10.
        let mut direct = 0.0;
        let mut c = 1.0;
        for k in 1..=10u32 {
            c = c * (10 - k + 1) as f64 / k as f64;
            direct += c * 0.3f64.powi(k as i32) * 0.7f64.powi(10 - k as i32) / k as f64;
        }
        assert_relative_eq!(psi(10, 0.3), direct, max_relative = 1e-12);
        assert!(psi(5000, 0.5).is_finite() && psi(5000, 0.5) > 0.0);
    }

    #[test]
    fn psi_is_unimodal_in_n() {
        // psi = E[1/K; K >= 1] first grows with Pr{K >= 1}, peaks near
        // n ~ 1.4/p1, and decreases strictly from there on.
        for p1 in [0.05, 0.1, 0.3, 0.5, 0.9] {
            let v: Vec<f64> = (1..=200).map(|n| psi(n, p1)).collect();
            assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
            let peak = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            assert!(peak < (2.0 / p1).ceil() as usize, "p1 = {p1}, peak n = {}", peak + 1);
            assert!(v[..=peak].windows(2).all(|w| w[1] > w[0]), "p1 = {p1}");
            assert!(v[peak..].windows(2).all(|w| w[1] < w[0]), "p1 = {p1}");
        }
    }

    #[test]
    fn oracle_examples() {
        let p = ModelParams::new(10.0, 1.0, 0.5, 3).unwrap();
        let o = centralized_mde_oracle(&[10.0, 10.0, 0.0], &p, 1e-9).unwrap();
        assert!(o.plus);
        let best = o.fixed_points.iter().find(|f| (f.theta - 10.0).abs() < 1e-6).expect("fixed point near 10");
        assert_eq!(best.h, vec![true, true, false]);
        assert_relative_eq!(o.selected, 20.0 / (2.0 + 3e-9), max_relative = 1e-15);

        let neg = centralized_mde_oracle(&[-40.0, -41.0, -39.5], &p, 1e-9).unwrap();
        assert!(!neg.plus && neg.selected < -39.0);

        let pc = ModelParams::new(1.0, 1.0, 0.5, 6).unwrap();
        let c = 2.5;
        let eq = centralized_mde_oracle(&[c; 6], &pc, 1e-9).unwrap();
        assert_relative_eq!(eq.selected, c * 6.0 / (6.0 + 6e-9), max_relative = 1e-15);

        assert!(matches!(
            centralized_mde_oracle(&[0.0; 21], &ModelParams::new(1.0, 1.0, 0.5, 21).unwrap(), 1e-9),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn zero_pattern_fixed_point_below_one_half() {
        let p = ModelParams::new(1.0, 1.0, 0.3, 3).unwrap();
        let fps = ordered_fixed_points(&[4.0, 4.2, -1.0], &p, 1e-9, true).unwrap();
        assert!(fps.iter().any(|f| f.theta == 0.0 && f.h.iter().all(|&h| !h)));
    }

    proptest! {
        #[test]
        fn ordered_fixed_points_match_brute_force(
            y in proptest::collection::vec(-30.0f64..30.0, 1..=12),
            p1 in 0.15f64..0.85,
            sigma in 0.3f64..3.0,
        ) {
            let p = ModelParams::new(1.0, sigma, p1, y.len()).unwrap();
            for plus in [true, false] {
                let ordered = ordered_fixed_points(&y, &p, 1e-9, plus).unwrap();
                let brute = brute_force_fixed_points(&y, &p, 1e-9, plus).unwrap();
                prop_assert_eq!(&ordered, &brute);
            }
            let o = centralized_mde_oracle(&y, &p, 1e-9).unwrap();
            let brute = brute_force_fixed_points(&y, &p, 1e-9, o.plus).unwrap();
            prop_assert!(o.fixed_points.is_empty() || brute.iter().any(|f| f.theta == o.selected));
        }

        #[test]
        fn naive_is_linear(y in proptest::collection::vec(-100.0f64..100.0, 1..40), lambda in -5.0f64..5.0) {
            let scaled: Vec<f64> = y.iter().map(|v| lambda * v).collect();
            let a = naive_estimate(&scaled, 0.4);
            let b = lambda * naive_estimate(&y, 0.4);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}
