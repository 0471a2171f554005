//! Special functions and diagnostics for the limit laws.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laws::ReturnLaw;
use crate::mc::{hitting_time, sample_rng, ExcursionSampler, SimConfig};
use crate::numeric::{integrate, CompensatedSum};

/// Gamma function on `[0.1, 50]`.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(0.1..=50.0).contains(&x) {
        return Err(Error::OutOfDomain(x));
    }
    Ok(libm::tgamma(x))
}

const BETA_QUAD_TOL: f64 = 1e-13;

/// `int_0^t u^(beta-1) (1-u)^(-beta) du`.
///
/// Both endpoint singularities are removed by substitution: `u = s^(1/beta)`
/// on `[0, 1/2]` and `1 - u = w^(1/(1-beta))` on `[1/2, 1]`.
pub fn beta_incomplete(beta: f64, t: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BetaOutOfRange(beta));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfDomain(t));
    }
    let lower = |t: f64| {
        let inv = 1.0 / beta;
        integrate(|s| (1.0 - s.powf(inv)).powf(-beta), 0.0, t.powf(beta), BETA_QUAD_TOL) / beta
    };
    if t <= 0.5 {
        return Ok(lower(t));
    }
    let gamma = 1.0 - beta;
    let inv = 1.0 / gamma;
    let upper = integrate(
        |w| (1.0 - w.powf(inv)).powf(-gamma),
        (1.0 - t).powf(gamma),
        0.5f64.powf(gamma),
        BETA_QUAD_TOL,
    ) / gamma;
    Ok(lower(0.5) + upper)
}

/// `E[M_beta^k] = k! Gamma(1+beta)^k / Gamma(1+k beta)`; NaN off `(0, 1]`.
pub fn ml_moment(beta: f64, k: u32) -> f64 {
    if !(beta > 0.0 && beta <= 1.0) {
        return f64::NAN;
    }
    if k == 0 {
        return 1.0;
    }
    let k_f = k as f64;
    let log = libm::lgamma(k_f + 1.0) + k_f * libm::lgamma(1.0 + beta) - libm::lgamma(1.0 + k_f * beta);
    log.exp()
}

/// Fit of `log|1 - phi(theta)|` against `log theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct CBetaFit {
    pub beta: f64,
    pub theta: Vec<f64>,
    pub modulus: Vec<f64>,
    pub slope: f64,
    /// Geometric mean of `|1 - phi(theta)| / theta^beta`.
    pub c_beta: f64,
    pub residual_rms: f64,
    /// Slope within `SLOPE_TOLERANCE` of `beta`.
    pub accepted: bool,
}

pub const SLOPE_TOLERANCE: f64 = 0.03;

/// `|1 - phi(theta)|` with `phi(theta) = sum a_n e^{i n theta}`.
///
/// Mass beyond the table is counted with a fully averaged phase, which is
/// accurate once `n_max * theta` is large.
pub fn char_gap(law: &ReturnLaw, theta: f64) -> f64 {
    let mut re = CompensatedSum::new();
    let mut im = CompensatedSum::new();
    for (i, &a) in law.masses().iter().enumerate() {
        let (s, c) = ((i + 1) as f64 * theta).sin_cos();
        re.add(a * (1.0 - c));
        im.add(-a * s);
    }
    re.add(law.truncation_remainder());
    re.value().hypot(im.value())
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Estimates `|C_beta|` in `1 - phi(theta) ~ C_beta theta^beta`.
///
/// `beta` defaults to the law's tail index; passing it explicitly lets a
/// law without one be tested against a hypothesised exponent.
pub fn estimate_c_beta(law: &ReturnLaw, theta_grid: &[f64], beta: Option<f64>) -> Result<CBetaFit> {
    let beta = match beta {
        Some(b) => b,
        None => law.require_beta()?,
    };
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BetaOutOfRange(beta));
    }
    if theta_grid.len() < 2 || theta_grid.iter().any(|&t| !(t > 0.0 && t < std::f64::consts::PI)) {
        return Err(Error::InvalidArgument("theta grid needs >= 2 points in (0, pi)".into()));
    }
    let modulus: Vec<f64> = theta_grid.par_iter().map(|&t| char_gap(law, t)).collect();
    let x: Vec<f64> = theta_grid.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = modulus.iter().map(|m| m.ln()).collect();
    let k = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_rms = (x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    let c_beta = (x.iter().zip(&y).map(|(a, b)| b - beta * a).sum::<f64>() / k).exp();
    Ok(CBetaFit {
        beta,
        theta: theta_grid.to_vec(),
        modulus,
        slope,
        c_beta,
        residual_rms,
        accepted: (slope - beta).abs() <= SLOPE_TOLERANCE,
    })
}

/// Largest gap between two empirical CDFs.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub const KS_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct StableScaling {
    pub beta: f64,
    pub m1: u64,
    pub m2: u64,
    pub samples: u64,
    pub ks_distance: f64,
    /// KS distance within `KS_THRESHOLD`.
    pub converged: bool,
}

/// Compares the laws of `m^(-1/beta) tau_m` at two values of `m`.
///
/// Sample `i` of `m1` uses stream `2i` and sample `i` of `m2` stream `2i+1`.
pub fn stable_scaling_check(
    law: &ReturnLaw,
    m_pair: (u64, u64),
    samples: u64,
    cfg: &SimConfig,
    beta: Option<f64>,
) -> Result<StableScaling> {
    let beta = match beta {
        Some(b) => b,
        None => law.require_beta()?,
    };
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BetaOutOfRange(beta));
    }
    let (m1, m2) = m_pair;
    if m1 == 0 || m2 < 4 * m1 {
        return Err(Error::InvalidArgument("need m1 >= 1 and m2 >= 4 m1".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    let sampler = ExcursionSampler::new(law);
    let draw = |m: u64, parity: u64| -> Vec<f64> {
        let scale = (m as f64).powf(-1.0 / beta);
        let run = SimConfig { samples, ..*cfg };
        let parts: Vec<Vec<f64>> = run
            .shard_ranges()
            .into_par_iter()
            .map(|r| {
                r.map(|i| {
                    let mut rng = sample_rng(cfg.seed, 2 * i + parity);
                    hitting_time(&sampler, &mut rng, m) as f64 * scale
                })
                .collect()
            })
            .collect();
        parts.concat()
    };
    let (mut a, mut b) = (draw(m1, 0), draw(m2, 1));
    let ks_distance = ks_two_sample(&mut a, &mut b);
    Ok(StableScaling {
        beta,
        m1,
        m2,
        samples,
        ks_distance,
        converged: ks_distance <= KS_THRESHOLD,
    })
}

/// Limit-law constants for one tail index.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitTargets {
    pub beta: f64,
    /// `ml_moments[k] = E[M_beta^k]`.
    pub ml_moments: Vec<f64>,
    pub c_beta_estimate: Option<f64>,
}

impl LimitTargets {
    pub fn new(beta: f64, k_max: u32) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::BetaOutOfRange(beta));
        }
        Ok(Self {
            beta,
            ml_moments: (0..=k_max).map(|k| ml_moment(beta, k)).collect(),
            c_beta_estimate: None,
        })
    }

    pub fn with_c_beta(mut self, law: &ReturnLaw, theta_grid: &[f64]) -> Result<Self> {
        self.c_beta_estimate = Some(estimate_c_beta(law, theta_grid, Some(self.beta))?.c_beta);
        Ok(self)
    }

    pub fn i_beta(&self, t: f64) -> Result<f64> {
        beta_incomplete(self.beta, t)
    }
}
