//! Renewal sequence `u_n` of the transient chain.
//!
//! `u_0 = 1`, `u_n = sum_{j=1..n} g_j u_{n-j}`. Two engines compute it: a
//! direct quadratic recursion with compensated sums, and a divide-and-conquer
//! online convolution that feeds each finished block of `u` through an FFT
//! against the (fully known) `g` coefficients.

use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::laws::TransientLaw;
use crate::numeric::{CompensatedSum, FftPair};
use crate::report::fmt_num;

/// Memory bound for the engines, in sequence length.
#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub max_len: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { max_len: 1 << 26 }
    }
}

impl EngineConfig {
    fn check(&self, n: usize) -> Result<()> {
        if n >= self.max_len {
            Err(Error::CapacityExceeded {
                requested: n,
                limit: self.max_len,
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenewalSequence {
    /// `u[n]` for `n = 0..=N`.
    pub u: Vec<f64>,
    pub p: f64,
    /// `tail_sums[n] = sum_{j > n} u_j`, from the closed-form total mass.
    pub tail_sums: Vec<f64>,
    pub law: TransientLaw,
}

impl RenewalSequence {
    fn new(u: Vec<f64>, law: &TransientLaw) -> Self {
        let total = total_mass(law);
        let mut partial = CompensatedSum::new();
        let tail_sums = u
            .iter()
            .map(|&x| {
                partial.add(x);
                total - partial.value()
            })
            .collect();
        Self {
            u,
            p: law.p(),
            tail_sums,
            law: law.clone(),
        }
    }

    /// Largest index `N`.
    pub fn horizon(&self) -> usize {
        self.u.len() - 1
    }

    /// Writes `n,u_n,tail_u,ratio_pointwise,ratio_tailsum`; ratio columns are
    /// `NaN` when the law has no tail index.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let pointwise = diag_pointwise(self).ok();
        let tailsum = diag_tailsum(self).ok();
        writeln!(out, "n,u_n,tail_u,ratio_pointwise,ratio_tailsum")?;
        for (n, (&u, &t)) in self.u.iter().zip(&self.tail_sums).enumerate() {
            let rp = pointwise.as_ref().map_or(f64::NAN, |v| v[n]);
            let rt = tailsum.as_ref().map_or(f64::NAN, |v| v[n]);
            writeln!(out, "{n},{},{},{},{}", fmt_num(u), fmt_num(t), fmt_num(rp), fmt_num(rt))?;
        }
        Ok(())
    }
}

/// `u(1) = (1 - p)^{-1}`.
pub fn total_mass(tl: &TransientLaw) -> f64 {
    1.0 / (1.0 - tl.p())
}

pub fn renewal_direct(tl: &TransientLaw, n: usize) -> Result<RenewalSequence> {
    renewal_direct_with(tl, n, EngineConfig::default())
}

pub fn renewal_direct_with(tl: &TransientLaw, n: usize, cfg: EngineConfig) -> Result<RenewalSequence> {
    cfg.check(n)?;
    let g = tl.g_vec(n + 1);
    Ok(RenewalSequence::new(direct_recursion(&g, n), tl))
}

fn direct_recursion(g: &[f64], n: usize) -> Vec<f64> {
    // Lags beyond the last positive g_j contribute nothing.
    let reach = g.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    let mut u = vec![0.0; n + 1];
    u[0] = 1.0;
    for i in 1..=n {
        let lo = i.saturating_sub(reach);
        let mut acc = CompensatedSum::new();
        for k in lo..i {
            acc.add(g[i - k] * u[k]);
        }
        u[i] = acc.value();
    }
    u
}

const LEAF: usize = 32;
/// Laws whose last positive lag is at most this are convolved directly.
const SHORT_REACH: usize = 64;

pub fn renewal_fast(tl: &TransientLaw, n: usize) -> Result<RenewalSequence> {
    renewal_fast_with(tl, n, EngineConfig::default())
}

pub fn renewal_fast_with(tl: &TransientLaw, n: usize, cfg: EngineConfig) -> Result<RenewalSequence> {
    cfg.check(n)?;
    let size = (n + 1).next_power_of_two().max(LEAF);
    let g = tl.g_vec(size);
    let mut u = online_recursion(&g, size);
    u.truncate(n + 1);
    Ok(RenewalSequence::new(u, tl))
}

struct Kernel<'a> {
    g: &'a [f64],
    /// Last lag with `g_j > 0`.
    reach: usize,
    levels: Vec<Level>,
}

/// Per-level cache: FFT plan of length `2h` and the transform of `g[0..2h)`.
struct Level {
    fft: FftPair,
    g_hat: Vec<Complex64>,
}

/// Solves `u = 1 + g * u` on `[0, size)`, `size` a power of two.
///
/// Block `[l, l+2h)` is handled by solving its left half, adding the
/// contribution of `u[l..l+h)` to the right half through a cyclic convolution
/// of length `2h` with `g[0..2h)`, then solving the right half. Wrap-around
/// terms of the cyclic product land in `[0, h)` and are discarded.
fn online_recursion(g: &[f64], size: usize) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut levels = Vec::new();
    let mut h = LEAF;
    while 2 * h <= size {
        let fft = FftPair::new(&mut planner, 2 * h);
        let mut g_hat: Vec<Complex64> = g[..2 * h].iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft.forward(&mut g_hat);
        levels.push(Level { fft, g_hat });
        h *= 2;
    }
    let kernel = Kernel {
        g,
        reach: g.iter().rposition(|&x| x > 0.0).unwrap_or(0),
        levels,
    };
    let mut u = vec![0.0; size];
    let mut scratch = vec![Complex64::default(); size];
    solve(&kernel, &mut u, &mut scratch, 0, size);
    u
}

fn solve(kernel: &Kernel, u: &mut [f64], scratch: &mut [Complex64], l: usize, r: usize) {
    let g = kernel.g;
    let len = r - l;
    if len <= LEAF {
        for i in l..r {
            if i == 0 {
                u[0] = 1.0;
                continue;
            }
            let mut acc = CompensatedSum::new();
            acc.add(u[i]);
            for k in l.max(i.saturating_sub(kernel.reach))..i {
                acc.add(g[i - k] * u[k]);
            }
            // Transform round-off can push vanishing terms below zero.
            u[i] = acc.value().max(0.0);
        }
        return;
    }
    let h = len / 2;
    let mid = l + h;
    solve(kernel, u, scratch, l, mid);

    if kernel.reach <= SHORT_REACH {
        for t in mid..r.min(mid + kernel.reach) {
            let mut acc = CompensatedSum::new();
            acc.add(u[t]);
            for k in l.max(t.saturating_sub(kernel.reach))..mid {
                acc.add(g[t - k] * u[k]);
            }
            u[t] = acc.value();
        }
        solve(kernel, u, scratch, mid, r);
        return;
    }

    let level = &kernel.levels[(h / LEAF).trailing_zeros() as usize];
    let buf = &mut scratch[..len];
    for (b, &x) in buf.iter_mut().zip(&u[l..mid]) {
        *b = Complex64::new(x, 0.0);
    }
    buf[h..].fill(Complex64::default());
    level.fft.forward(buf);
    for (b, gh) in buf.iter_mut().zip(&level.g_hat) {
        *b *= *gh;
    }
    level.fft.inverse(buf);
    for (t, b) in u[mid..r].iter_mut().zip(&buf[h..]) {
        *t += b.re;
    }

    solve(kernel, u, scratch, mid, r);
}

/// `R_n = (sum_{j>n} u_j) / ((1-p)^{-2} sum_{j>n} g_j)` for `n = 0..=N`.
pub fn diag_tailsum(rs: &RenewalSequence) -> Result<Vec<f64>> {
    rs.law.base().require_beta()?;
    let scale = (1.0 - rs.p).powi(-2);
    Ok(rs
        .tail_sums
        .iter()
        .enumerate()
        .map(|(n, &t)| t / (scale * rs.law.defective_tail(n)))
        .collect())
}

/// `r_n = u_n / ((1-p)^{-2} g_n)` for `n = 1..=N`; index 0 holds `NaN`.
pub fn diag_pointwise(rs: &RenewalSequence) -> Result<Vec<f64>> {
    rs.law.base().require_beta()?;
    let scale = (1.0 - rs.p).powi(-2);
    Ok(rs
        .u
        .iter()
        .enumerate()
        .map(|(n, &u)| if n == 0 { f64::NAN } else { u / (scale * rs.law.g(n)) })
        .collect())
}

/// Powers of two `1, 2, 4, ... <= n`.
pub fn dyadic_checkpoints(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |&k| k.checked_mul(2))
        .take_while(|&k| k <= n)
        .collect()
}
