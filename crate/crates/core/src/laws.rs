//! Return-time laws of the recurrent renewal chain and their punctured
//! (transient) versions.
//!
//! A [`ReturnLaw`] holds `a_n = P(tau = n)` for `n = 1..=n_max`. Pure power
//! laws additionally know their exponent, so masses and tails past the table
//! are available in closed form and the mass beyond `n_max` is carried as an
//! explicit remainder instead of being renormalized away.

use std::io::Write;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, gcd, power_tail, CompensatedSum};
use crate::report::fmt_num;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// `a_n = n^{-(beta+1)} / zeta_sum` for every `n >= 1`.
    PowerLaw { beta: f64, zeta_sum: f64 },
    /// Finite support, no tail index.
    Custom,
}

/// Law of the first return time `tau` to the base state.
#[derive(Debug, Clone)]
pub struct ReturnLaw {
    /// `masses[n] = a_n`; index 0 is unused and zero.
    masses: Vec<f64>,
    /// `tails[m] = sum_{j > m} a_j` for `m = 0..=n_max`, remainder included.
    tails: Vec<f64>,
    shape: Shape,
}

impl ReturnLaw {
    pub fn n_max(&self) -> usize {
        self.masses.len() - 1
    }

    /// `a_n` for any `n >= 0`; closed form beyond the table for power laws.
    pub fn mass(&self, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        if let Some(&a) = self.masses.get(n) {
            return a;
        }
        match self.shape {
            Shape::PowerLaw { beta, zeta_sum } => (n as f64).powf(-(beta + 1.0)) / zeta_sum,
            Shape::Custom => 0.0,
        }
    }

    /// Tabulated masses `a_1..=a_{n_max}`.
    pub fn masses(&self) -> &[f64] {
        &self.masses[1..]
    }

    /// `sum_{j > m} a_j`.
    pub fn tail(&self, m: usize) -> f64 {
        if let Some(&t) = self.tails.get(m) {
            return t;
        }
        match self.shape {
            Shape::PowerLaw { beta, zeta_sum } => power_tail(beta + 1.0, m as u64) / zeta_sum,
            Shape::Custom => 0.0,
        }
    }

    pub fn truncation_remainder(&self) -> f64 {
        self.tails[self.n_max()]
    }

    pub fn beta(&self) -> Option<f64> {
        match self.shape {
            Shape::PowerLaw { beta, .. } => Some(beta),
            Shape::Custom => None,
        }
    }

    /// `C` in `P(tau > n) = C n^{-beta} (1 + o(1))`.
    pub fn c_tail(&self) -> Option<f64> {
        match self.shape {
            Shape::PowerLaw { beta, zeta_sum } => Some(1.0 / (beta * zeta_sum)),
            Shape::Custom => None,
        }
    }

    /// Normalizing sum `Z(beta+1)` of a power law.
    pub fn zeta_sum(&self) -> Option<f64> {
        match self.shape {
            Shape::PowerLaw { zeta_sum, .. } => Some(zeta_sum),
            Shape::Custom => None,
        }
    }

    pub fn require_beta(&self) -> Result<f64> {
        self.beta().ok_or(Error::MissingTailIndex)
    }

    /// gcd of the tabulated support.
    pub fn support_gcd(&self) -> u64 {
        support_gcd(self.masses())
    }

    pub fn is_aperiodic(&self) -> bool {
        self.support_gcd() == 1
    }

    /// Largest `n` with `a_n > 0` in the table.
    pub fn support_max(&self) -> usize {
        self.masses.iter().rposition(|&a| a > 0.0).unwrap_or(0)
    }
}

fn support_gcd(masses: &[f64]) -> u64 {
    masses
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > 0.0)
        .fold(0, |g, (i, _)| gcd(g, i as u64 + 1))
}

fn suffix_tails(masses: &[f64], remainder: f64) -> Vec<f64> {
    // masses[0] is the unused slot.
    let n_max = masses.len() - 1;
    let mut tails = vec![0.0; n_max + 1];
    let mut acc = CompensatedSum::new();
    acc.add(remainder);
    tails[n_max] = acc.value();
    for m in (0..n_max).rev() {
        acc.add(masses[m + 1]);
        tails[m] = acc.value();
    }
    tails
}

/// Pure power law `a_n = n^{-(beta+1)} / Z(beta+1)` tabulated up to `n_max`.
pub fn power_law_return(beta: f64, n_max: usize) -> Result<ReturnLaw> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::NonPositiveBeta(beta));
    }
    if n_max < 2 {
        return Err(Error::InvalidArgument(format!("n_max must be >= 2, got {n_max}")));
    }
    let s = beta + 1.0;
    let raw_tail = power_tail(s, n_max as u64);
    let head = compensated_sum((1..=n_max).rev().map(|n| (n as f64).powf(-s)));
    let zeta_sum = head + raw_tail;
    let remainder = raw_tail / zeta_sum;
    if remainder > 0.5 {
        return Err(Error::TruncationTooCoarse(remainder));
    }
    let mut masses = Vec::with_capacity(n_max + 1);
    masses.push(0.0);
    masses.extend((1..=n_max).map(|n| (n as f64).powf(-s) / zeta_sum));
    let tails = suffix_tails(&masses, remainder);
    Ok(ReturnLaw {
        masses,
        tails,
        shape: Shape::PowerLaw { beta, zeta_sum },
    })
}

/// Finite-support law from `masses[i] = a_{i+1}`.
pub fn custom_return(masses: &[f64]) -> Result<ReturnLaw> {
    if masses.is_empty() {
        return Err(Error::InvalidMass("empty mass vector".into()));
    }
    if let Some((i, a)) = masses.iter().enumerate().find(|(_, a)| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::InvalidMass(format!("a_{} = {a}", i + 1)));
    }
    let total = compensated_sum(masses.iter().copied());
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(total));
    }
    let g = support_gcd(masses);
    if g > 1 {
        return Err(Error::PeriodicLaw(g));
    }
    let mut table = Vec::with_capacity(masses.len() + 1);
    table.push(0.0);
    table.extend_from_slice(masses);
    let tails = suffix_tails(&table, 0.0);
    Ok(ReturnLaw {
        masses: table,
        tails,
        shape: Shape::Custom,
    })
}

/// Deterministic return after one step, `a_1 = 1`.
pub fn deterministic_return() -> ReturnLaw {
    custom_return(&[1.0]).expect("unit mass is a valid law")
}

/// Return law with a hole: each return survives with probability `p`, so
/// the defective return mass at lag `n` is `g_n = p a_n`.
#[derive(Debug, Clone)]
pub struct TransientLaw {
    base: ReturnLaw,
    p: f64,
}

pub fn puncture(law: ReturnLaw, p: f64) -> Result<TransientLaw> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::POutOfRange(p));
    }
    Ok(TransientLaw { base: law, p })
}

impl TransientLaw {
    pub fn base(&self) -> &ReturnLaw {
        &self.base
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    #[inline]
    pub fn g(&self, n: usize) -> f64 {
        self.p * self.base.mass(n)
    }

    /// `g_0..=g_len-1` (with `g_0 = 0`).
    pub fn g_vec(&self, len: usize) -> Vec<f64> {
        (0..len).map(|n| self.g(n)).collect()
    }

    /// `sum_{j > m} g_j`, analytic remainder included.
    pub fn defective_tail(&self, m: usize) -> f64 {
        self.p * self.base.tail(m)
    }

    pub fn beta(&self) -> Option<f64> {
        self.base.beta()
    }

    /// Writes `n,a_n,g_n,tail_a,tail_g` for `n = 1..=rows`.
    pub fn write_csv<W: Write>(&self, out: &mut W, rows: usize) -> Result<()> {
        writeln!(out, "n,a_n,g_n,tail_a,tail_g")?;
        for n in 1..=rows {
            writeln!(
                out,
                "{n},{},{},{},{}",
                fmt_num(self.base.mass(n)),
                fmt_num(self.g(n)),
                fmt_num(self.base.tail(n)),
                fmt_num(self.defective_tail(n)),
            )?;
        }
        Ok(())
    }
}
