//! Small numerical kernels shared by the engines: compensated summation,
//! power-sum tails, FFT convolution and adaptive Gauss-Kronrod quadrature.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

const EM_CUTOFF: u64 = 64;

/// `sum_{n > m} n^{-s}` for `s > 1`.
///
/// Sums directly up to `EM_CUTOFF` and closes with an Euler-Maclaurin
/// expansion (three Bernoulli terms); the truncation error is below
/// `m^{-s-7}`, far under double precision for `m >= 64`.
pub fn power_tail(s: f64, m: u64) -> f64 {
    debug_assert!(s > 1.0);
    let mut acc = CompensatedSum::new();
    let mut start = m;
    if m < EM_CUTOFF {
        for n in (m + 1..=EM_CUTOFF).rev() {
            acc.add((n as f64).powf(-s));
        }
        start = EM_CUTOFF;
    }
    let x = start as f64;
    let fx = x.powf(-s);
    let integral = x * fx / (s - 1.0);
    let b2 = s * fx / (12.0 * x);
    let b4 = s * (s + 1.0) * (s + 2.0) * fx / (720.0 * x * x * x);
    let b6 = s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * fx / (30240.0 * x.powi(5));
    acc.add(b6);
    acc.add(-b4);
    acc.add(b2);
    acc.add(-0.5 * fx);
    acc.add(integral);
    acc.value()
}

/// Riemann zeta for real `s > 1`.
pub fn zeta(s: f64) -> f64 {
    power_tail(s, 0)
}

/// Cached forward/inverse complex transforms of one length.
#[derive(Clone)]
pub struct FftPair {
    pub len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(planner: &mut FftPlanner<f64>, len: usize) -> Self {
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Inverse transform including the `1/len` normalization.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }
}

const DIRECT_CONV_MAX: usize = 64;

/// Linear convolution of two real sequences, truncated to `out_len` terms.
pub fn convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    let full = (a.len() + b.len()).saturating_sub(1);
    let out_len = out_len.min(full);
    if out_len == 0 {
        return Vec::new();
    }
    let a = &a[..a.len().min(out_len)];
    let b = &b[..b.len().min(out_len)];
    if a.len().min(b.len()) <= DIRECT_CONV_MAX {
        let mut out = vec![0.0; out_len];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out[i..].iter_mut().zip(b) {
                *o += x * y;
            }
        }
        return out;
    }
    let len = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let pair = FftPair::new(&mut planner, len);
    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(len, Complex64::default());
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(len, Complex64::default());
    pair.forward(&mut fa);
    pair.forward(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    pair.inverse(&mut fa);
    fa.iter().take(out_len).map(|z| z.re).collect()
}

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, &x) in XGK[..7].iter().enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod integration of a smooth integrand on `[a, b]`.
///
/// Intervals are bisected until each local error estimate falls under its
/// share of `abs_tol`; bisection stops at depth 50.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        tol: f64,
        depth: u32,
        acc: &mut CompensatedSum,
    ) {
        let (val, err) = gk15(f, a, b);
        if err <= tol || depth >= 50 {
            acc.add(val);
            return;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth + 1, acc);
        recurse(f, mid, b, 0.5 * tol, depth + 1, acc);
    }
    let mut acc = CompensatedSum::new();
    recurse(&f, a, b, abs_tol, 0, &mut acc);
    acc.value()
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
