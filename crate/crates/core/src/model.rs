//! Observation model `y = h * theta + w` and reproducible field snapshots.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// Parameters of the observation model.
///
/// Derived quantities (`p0`, `sigma_h^2`, SNR) are computed on demand so they
/// can never drift out of sync with the stored fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    theta: f64,
    sigma: f64,
    p1: f64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawParams {
    theta: f64,
    sigma: f64,
    p1: f64,
    n: usize,
}

impl Default for RawParams {
    fn default() -> Self {
        RawParams { theta: 100.0, sigma: 1.0, p1: 0.5, n: 50 }
    }
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        ModelParams::new(r.theta, r.sigma, r.p1, r.n)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            theta: p.theta,
            sigma: p.sigma,
            p1: p.p1,
            n: p.n,
        }
    }
}

impl ModelParams {
    pub fn new(theta: f64, sigma: f64, p1: f64, n: usize) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::Param(format!("theta must be finite, got {theta}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Param(format!("sigma must be positive, got {sigma}")));
        }
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(Error::Param(format!("p1 must lie in (0, 1), got {p1}")));
        }
        if n == 0 {
            return Err(Error::Param("n must be at least 1".into()));
        }
        Ok(ModelParams { theta, sigma, p1, n })
    }

    /// Builds parameters from an SNR in dB using `theta = sigma * 10^(snr/20)`.
    pub fn from_snr_db(snr_db: f64, sigma: f64, p1: f64, n: usize) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::Param(format!("SNR must be finite, got {snr_db}")));
        }
        Self::new(sigma * 10f64.powf(snr_db / 20.0), sigma, p1, n)
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
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }
    pub fn sigma_h2(&self) -> f64 {
        self.p1 * (1.0 - self.p1)
    }
    pub fn snr(&self) -> f64 {
        self.theta * self.theta / (self.sigma * self.sigma)
    }
    pub fn snr_db(&self) -> f64 {
        10.0 * self.snr().log10()
    }

    pub fn with_theta(self, theta: f64) -> Result<Self> {
        Self::new(theta, self.sigma, self.p1, self.n)
    }
}

/// One realization of validity indices, noise and observations.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub h: Vec<bool>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub params: ModelParams,
}

impl FieldSnapshot {
    /// Builds a snapshot from given indices and noise, computing `y`.
    pub fn from_parts(params: ModelParams, h: Vec<bool>, w: Vec<f64>) -> Result<Self> {
        let n = params.n();
        for len in [h.len(), w.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, got: len });
            }
        }
        let y = h
            .iter()
            .zip(&w)
            .map(|(&hi, &wi)| if hi { params.theta() + wi } else { wi })
            .collect();
        Ok(FieldSnapshot { h, w, y, params })
    }

    /// Snapshot with prescribed observations; `h` and `w` are left as the
    /// all-valid reading `w = y - theta`. Used for hand-built test instances.
    pub fn from_observations(params: ModelParams, y: Vec<f64>) -> Result<Self> {
        if y.len() != params.n() {
            return Err(Error::LengthMismatch { expected: params.n(), got: y.len() });
        }
        let w = y.iter().map(|v| v - params.theta()).collect();
        Ok(FieldSnapshot { h: vec![true; y.len()], w, y, params })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    pub fn valid_count(&self) -> usize {
        self.h.iter().filter(|&&v| v).count()
    }
}

fn draw_noise(rng: &mut SimRng, params: &ModelParams) -> Vec<f64> {
    (0..params.n())
        .map(|_| params.sigma() * rng::standard_normal(rng))
        .collect()
}

pub fn sample_snapshot_with(params: &ModelParams, rng: &mut SimRng) -> FieldSnapshot {
    let h: Vec<bool> = (0..params.n()).map(|_| rng::bernoulli(rng, params.p1())).collect();
    let w = draw_noise(rng, params);
    FieldSnapshot::from_parts(*params, h, w).expect("lengths match by construction")
}

/// Draws `h_i ~ Bernoulli(p1)` and `w_i ~ N(0, sigma^2)` independently.
pub fn sample_snapshot(params: &ModelParams, seed: u64) -> FieldSnapshot {
    sample_snapshot_with(params, &mut rng::stream(seed, &[rng::purpose::SNAPSHOT]))
}

/// Snapshot with exactly `k` invalid sensors at uniformly random positions.
pub fn conditional_snapshot(params: &ModelParams, k: usize, seed: u64) -> Result<FieldSnapshot> {
    let n = params.n();
    if k > n {
        return Err(Error::Param(format!("defect count {k} exceeds n = {n}")));
    }
    let mut rng = rng::stream(seed, &[rng::purpose::SNAPSHOT, k as u64]);
    let mut h = vec![true; n];
    for i in index::sample(&mut rng, n, k) {
        h[i] = false;
    }
    let w = draw_noise(&mut rng, params);
    FieldSnapshot::from_parts(*params, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(theta: f64, n: usize) -> ModelParams {
        ModelParams::new(theta, 1.0, 0.5, n).unwrap()
    }

    #[test]
    fn rejects_out_of_domain_parameters() {
        assert!(ModelParams::new(3.0, 1.0, 1.0, 5).is_err());
        assert!(ModelParams::new(3.0, 1.0, 0.0, 5).is_err());
        assert!(ModelParams::new(3.0, 0.0, 0.5, 5).is_err());
        assert!(ModelParams::new(3.0, 1.0, 0.5, 0).is_err());
        assert!(ModelParams::new(f64::NAN, 1.0, 0.5, 1).is_err());
        let json = r#"{"theta":1.0,"sigma":1.0,"p1":1.0,"n":3}"#;
        assert!(serde_json::from_str::<ModelParams>(json).is_err());
    }

    #[test]
    fn derived_quantities() {
        let p = ModelParams::new(100.0, 1.0, 0.5, 50).unwrap();
        assert_eq!(p.p0(), 0.5);
        assert_eq!(p.sigma_h2(), 0.25);
        assert_eq!(p.snr(), 1e4);
        assert!((p.snr_db() - 40.0).abs() < 1e-12);
        let q = ModelParams::from_snr_db(40.0, 1.0, 0.5, 50).unwrap();
        assert!((q.theta() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_theta_collapses_to_noise() {
        let s = sample_snapshot(&params(0.0, 200), 11);
        assert_eq!(s.y, s.w);
    }

    #[test]
    fn observation_identity_is_exact() {
        let s = sample_snapshot(&params(3.5, 500), 4);
        for i in 0..s.n() {
            let expect = if s.h[i] { 3.5 + s.w[i] } else { s.w[i] };
            assert_eq!(s.y[i].to_bits(), expect.to_bits());
        }
        assert_eq!(sample_snapshot(&params(3.5, 500), 4), s);
    }

    #[test]
    fn conditional_extremes() {
        let p = params(10.0, 30);
        assert!(conditional_snapshot(&p, 0, 1).unwrap().h.iter().all(|&v| v));
        let all_bad = conditional_snapshot(&p, 30, 1).unwrap();
        assert!(all_bad.h.iter().all(|&v| !v));
        assert_eq!(all_bad.y, all_bad.w);
        assert_eq!(conditional_snapshot(&p, 7, 2).unwrap().valid_count(), 23);
        assert!(conditional_snapshot(&p, 31, 1).is_err());
    }

    #[test]
    fn empirical_mean_of_observations() {
        // E(y) = p1 * theta; pooled over 1e5 draws.
        let p = params(10.0, 100);
        let mut all = Vec::with_capacity(100_000);
        for seed in 0..1000 {
            all.extend(sample_snapshot(&p, seed).y);
        }
        let m = all.len() as f64;
        let mean = all.iter().sum::<f64>() / m;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((mean - 5.0).abs() < 3.0 * (var / m).sqrt());
        // Law of total variance: p1 p0 theta^2 + sigma^2 = 26.
        let fourth = all.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m;
        let se_var = ((fourth - var * var) / m).sqrt();
        assert!((var - 26.0).abs() < 3.0 * se_var, "var = {var}");
        let frac_valid = {
            let mut count = 0usize;
            for seed in 0..1000 {
                count += sample_snapshot(&p, seed).valid_count();
            }
            count as f64 / m
        };
        assert!((frac_valid - 0.5).abs() < 3.0 * (0.25 / m).sqrt());
    }

    #[test]
    fn conditional_half_defective_mean() {
        // With k fixed the only randomness in mean(y) is the noise: std-err = sigma / sqrt(n).
        let p = params(10.0, 10_000);
        let s = conditional_snapshot(&p, 5_000, 9).unwrap();
        assert!((s.mean_y() - 5.0).abs() < 3.0 / (s.n() as f64).sqrt());
    }
}
