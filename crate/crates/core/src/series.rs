//! Finite power-series coefficient algebra and a checker for the decay of
//! `C(z) = (1 - z)^{-1} A(z) B(z)` when `A(1) = B(1) = 0`.
//!
//! With `|A_n|, |B_n| = O(n^{-(beta+1)})` the coefficients of `C` are
//! `O(n^{-2 beta})` for `beta < 1`, `O(n^{-2} log n)` for `beta = 1` and
//! `O(n^{-(beta+1)})` for `beta > 1`. The checker fits the exponent on the top
//! decade and compares it with that prediction. For pure power inputs at
//! `beta = 1/2` the `n^{-1}` term has a vanishing coefficient and the fit
//! sees `n^{-3/2}`.

use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, convolve, power_tail, CompensatedSum};

/// Coefficients `c_0..=c_N` of `sum c_n z^n`.
///
/// A series may stand for the head of an infinite one; `tail_mass` is then
/// the sum of the coefficients past `c_N` and enters only `at_one`. Series
/// produced by the algebra below carry no tail mass.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSeries {
    c: Vec<f64>,
    tail_mass: f64,
}

impl CoeffSeries {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if let Some(i) = c.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("coefficient {i} is not finite")));
        }
        Ok(Self { c, tail_mass: 0.0 })
    }

    fn from_vec(c: Vec<f64>) -> Self {
        Self { c, tail_mass: 0.0 }
    }

    pub fn with_tail_mass(mut self, mass: f64) -> Self {
        self.tail_mass = mass;
        self
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.c
    }

    /// Value at `z = 1`, tail mass included.
    pub fn at_one(&self) -> f64 {
        compensated_sum(self.c.iter().copied().chain([self.tail_mass]))
    }

    /// Unit impulse `delta_0` of length `len`.
    pub fn delta(len: usize) -> Self {
        let mut c = vec![0.0; len.max(1)];
        c[0] = 1.0;
        Self::from_vec(c)
    }
}

impl std::ops::Index<usize> for CoeffSeries {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.c[i]
    }
}

/// `c_n = sum_{k<=n} a_k b_{n-k}` for `n = 0..=n_out`.
pub fn cauchy_product(a: &CoeffSeries, b: &CoeffSeries, n_out: usize) -> Result<CoeffSeries> {
    if a.is_empty() || b.is_empty() || n_out + 2 > a.len() + b.len() {
        return Err(Error::InvalidArgument(format!(
            "product degree {n_out} exceeds {} + {} - 2",
            a.len(),
            b.len()
        )));
    }
    CoeffSeries::new(convolve(&a.c, &b.c, n_out + 1))
}

/// Coefficients of `(1 - z)^{-1} A(z)`: running sums `sum_{k<=n} a_k`.
pub fn inv_one_minus_z(a: &CoeffSeries) -> CoeffSeries {
    let mut acc = CompensatedSum::new();
    CoeffSeries::from_vec(
        a.c.iter()
            .map(|&x| {
                acc.add(x);
                acc.value()
            })
            .collect(),
    )
}

/// Coefficients of `A'(z)`: `(n + 1) a_{n+1}`.
pub fn differentiate(a: &CoeffSeries) -> CoeffSeries {
    CoeffSeries::from_vec(
        a.c.iter()
            .enumerate()
            .skip(1)
            .map(|(n, &x)| n as f64 * x)
            .collect(),
    )
}

/// Least-squares description of `log|c_n|` against `log n` on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    /// `exp(intercept)`, the fitted constant in `|c_n| ~ K n^{slope}`.
    pub constant: f64,
    /// Second-order coefficient of a quadratic fit in `log n`.
    pub curvature: f64,
    /// Largest deviation the quadratic term produces across the window.
    pub curvature_effect: f64,
    /// True when `curvature_effect` exceeds `CURVATURE_THRESHOLD`.
    pub curved: bool,
    pub residual_rms: f64,
}

pub const CURVATURE_THRESHOLD: f64 = 1e-3;

pub fn decay_exponent_fit(c: &CoeffSeries, window: RangeInclusive<usize>) -> Result<DecayFit> {
    let (lo, hi) = (*window.start(), *window.end());
    if lo == 0 || lo > hi || hi >= c.len() {
        return Err(Error::InvalidArgument(format!(
            "window {lo}..={hi} must be nonempty, start at n >= 1 and lie inside the series (len {})",
            c.len()
        )));
    }
    if let Some(n) = (lo..=hi).find(|&n| c[n] == 0.0) {
        return Err(Error::ZeroCoefficientInWindow(n));
    }
    let xs: Vec<f64> = (lo..=hi).map(|n| (n as f64).ln()).collect();
    let ys: Vec<f64> = (lo..=hi).map(|n| c[n].abs().ln()).collect();
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let d: Vec<f64> = xs.iter().map(|x| x - xbar).collect();
    let sxx: f64 = d.iter().map(|v| v * v).sum();
    let (slope, curvature, curvature_effect, residual_rms);
    if sxx == 0.0 {
        slope = 0.0;
        curvature = 0.0;
        curvature_effect = 0.0;
        residual_rms = 0.0;
    } else {
        let sxy: f64 = d.iter().zip(&ys).map(|(a, y)| a * (y - ybar)).sum();
        slope = sxy / sxx;
        residual_rms = (d
            .iter()
            .zip(&ys)
            .map(|(a, y)| (y - ybar - slope * a).powi(2))
            .sum::<f64>()
            / m)
            .sqrt();
        // Quadratic term on the centered abscissa, orthogonalized against 1 and x.
        let q: Vec<f64> = d.iter().map(|v| v * v).collect();
        let qbar = q.iter().sum::<f64>() / m;
        let qxy: f64 = d.iter().zip(&q).map(|(a, b)| a * (b - qbar)).sum::<f64>() / sxx;
        let w: Vec<f64> = d.iter().zip(&q).map(|(a, b)| b - qbar - qxy * a).collect();
        let sww: f64 = w.iter().map(|v| v * v).sum();
        curvature = if sww > 0.0 {
            w.iter().zip(&ys).map(|(a, y)| a * y).sum::<f64>() / sww
        } else {
            0.0
        };
        let half = 0.5 * (xs[xs.len() - 1] - xs[0]);
        curvature_effect = curvature.abs() * half * half;
    }
    Ok(DecayFit {
        slope,
        constant: (ybar - slope * xbar).exp(),
        curvature,
        curvature_effect,
        curved: curvature_effect > CURVATURE_THRESHOLD,
        residual_rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `n^{-2 beta}`, `beta < 1`.
    TwoBeta,
    /// `n^{-2} log n`, `beta = 1`.
    Logarithmic,
    /// `n^{-(beta+1)}`, `beta > 1`.
    BetaPlusOne,
    /// Coefficients vanish on the fit window.
    SuperPolynomial,
}

pub fn predicted_regime(beta: f64) -> (Regime, f64) {
    if beta < 1.0 {
        (Regime::TwoBeta, 2.0 * beta)
    } else if beta == 1.0 {
        (Regime::Logarithmic, 2.0)
    } else {
        (Regime::BetaPlusOne, beta + 1.0)
    }
}

pub const REGIME_TOLERANCE: f64 = 0.15;
const HYPOTHESIS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Default)]
pub struct RegimeOptions {
    /// Highest coefficient of `C` to compute; defaults to `min(len a, len b) - 1`.
    pub n_out: Option<usize>,
    /// Fit window; defaults to the top decade `[n_out/10, n_out]`.
    pub window: Option<RangeInclusive<usize>>,
}

#[derive(Debug, Clone)]
pub struct RegimeReport {
    pub beta: f64,
    pub predicted: Regime,
    pub predicted_exponent: f64,
    pub observed: Regime,
    /// Decay exponent `-slope`; `INFINITY` for vanishing coefficients.
    pub fitted_exponent: f64,
    pub fit: Option<DecayFit>,
    pub window: RangeInclusive<usize>,
    /// Largest `|A_n| n^{beta+1}` and `|B_n| n^{beta+1}` over `n >= 1`.
    pub decay_constants: (f64, f64),
    pub within_tolerance: bool,
    pub c: CoeffSeries,
}

fn decay_constant(a: &CoeffSeries, beta: f64) -> f64 {
    a.c.iter()
        .enumerate()
        .skip(1)
        .map(|(n, x)| x.abs() * (n as f64).powf(beta + 1.0))
        .fold(0.0, f64::max)
}

/// Computes `C = (1 - z)^{-1} A B` and classifies its decay.
///
/// The running sums of `A` are formed first and then multiplied by `B`,
/// which keeps the small trailing coefficients free of the cancellation a
/// product-then-sum order would suffer.
pub fn abstr_regime_check(
    a: &CoeffSeries,
    b: &CoeffSeries,
    beta: f64,
    opts: &RegimeOptions,
) -> Result<RegimeReport> {
    let (a1, b1) = (a.at_one(), b.at_one());
    if a1.abs() > HYPOTHESIS_TOL || b1.abs() > HYPOTHESIS_TOL {
        return Err(Error::HypothesisViolated(format!("A(1) = {a1:e}, B(1) = {b1:e}")));
    }
    if !(beta > 0.0) {
        return Err(Error::NonPositiveBeta(beta));
    }
    let n_out = opts
        .n_out
        .unwrap_or(a.len().min(b.len()) - 1)
        .min(a.len() + b.len() - 2);
    let c = cauchy_product(&inv_one_minus_z(a), b, n_out)?;
    let window = opts
        .window
        .clone()
        .unwrap_or((n_out / 10).max(1)..=n_out.max(1));
    let (predicted, predicted_exponent) = predicted_regime(beta);

    let scale = c.c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (lo, hi) = (*window.start(), (*window.end()).min(c.len().saturating_sub(1)));
    let vanishing = lo > hi || (lo..=hi).filter(|&n| c[n].abs() <= 1e-14 * scale).count() * 2 >= hi - lo + 1;

    let (observed, fitted_exponent, fit) = if vanishing {
        (Regime::SuperPolynomial, f64::INFINITY, None)
    } else {
        let fit = decay_exponent_fit(&c, window.clone())?;
        (predicted, -fit.slope, Some(fit))
    };
    let within_tolerance = !vanishing && (fitted_exponent - predicted_exponent).abs() <= REGIME_TOLERANCE;
    Ok(RegimeReport {
        beta,
        predicted,
        predicted_exponent,
        observed,
        fitted_exponent,
        fit,
        window,
        decay_constants: (decay_constant(a, beta), decay_constant(b, beta)),
        within_tolerance,
        c,
    })
}

/// `(min, max)` of `|c_n| n^2 / log n` over `range`, the `beta = 1` envelope.
pub fn log_regime_envelope(c: &CoeffSeries, range: RangeInclusive<usize>) -> (f64, f64) {
    range
        .filter(|&n| n >= 2 && n < c.len())
        .map(|n| {
            let x = n as f64;
            c[n].abs() * x * x / x.ln()
        })
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Head `A_0..A_{len-1}` of the infinite series with `A_n = n^{-(beta+1)}`
/// for `n >= 1` and `A_0 = -sum_{n>=1} A_n`, so that `A(1) = 0`.
///
/// Every stored coefficient of a product or running sum of such heads equals
/// the one of the infinite series, since index `n` only involves `A_0..A_n`.
pub fn balanced_power_series(beta: f64, len: usize) -> CoeffSeries {
    let s = beta + 1.0;
    let mut c: Vec<f64> = (0..len.max(1))
        .map(|n| if n == 0 { 0.0 } else { (n as f64).powf(-s) })
        .collect();
    let tail = power_tail(s, c.len() as u64 - 1);
    c[0] = -compensated_sum(c[1..].iter().rev().copied().chain([tail]));
    CoeffSeries { c, tail_mass: tail }
}
