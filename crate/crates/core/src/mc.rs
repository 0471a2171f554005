//! Reproducible Monte Carlo over terminating renewal paths.
//!
//! Every sample `i` draws from its own ChaCha8 stream keyed by
//! `(seed, i)`, so a result depends only on the seed and the sample count.
//! Shards own contiguous sample ranges and report integer counts; merging is
//! integer addition, which makes every report independent of the shard
//! count and of rayon's scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laws::{ReturnLaw, TransientLaw};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    /// Parallel work units; never changes results.
    pub shards: usize,
    pub samples: u64,
    /// Paths are not followed past this time.
    pub horizon: u64,
}

impl SimConfig {
    pub fn new(seed: u64, samples: u64) -> Self {
        Self {
            seed,
            shards: 1,
            samples,
            horizon: u64::MAX,
        }
    }

    pub fn with_shards(mut self, shards: usize) -> Self {
        self.shards = shards.max(1);
        self
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidArgument("samples must be >= 1".into()));
        }
        Ok(())
    }

    /// Contiguous sample-index ranges, one per shard.
    pub fn shard_ranges(&self) -> Vec<std::ops::Range<u64>> {
        let shards = self.shards.max(1) as u64;
        (0..shards)
            .map(|s| (self.samples * s / shards)..(self.samples * (s + 1) / shards))
            .collect()
    }
}

/// Independent stream for sample `index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform on `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform<R: Rng>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Runs `work` on every shard in parallel and folds the per-shard results
/// with `merge` in shard order.
pub fn run_sharded<T, W, M>(cfg: &SimConfig, work: W, merge: M) -> T
where
    T: Send + Default,
    W: Fn(std::ops::Range<u64>) -> T + Sync,
    M: Fn(T, T) -> T,
{
    let parts: Vec<T> = cfg.shard_ranges().into_par_iter().map(&work).collect();
    parts.into_iter().fold(T::default(), merge)
}

const GUIDE_MAX: usize = 1 << 20;
/// Lengths are clamped here; far beyond any horizon the engines use.
const LENGTH_CAP: u64 = 1 << 62;

/// Inverse-CDF sampler of excursion lengths with an exact tail bucket.
///
/// Draws landing in the mass beyond the table are resolved by rejection
/// from a continuous Pareto proposal, so heavy tails keep their exact mass.
#[derive(Debug, Clone)]
pub struct ExcursionSampler {
    /// `cdf[i] = P(tau <= i + 1)`.
    cdf: Vec<f64>,
    guide: Vec<u32>,
    tail: Option<TailBucket>,
}

#[derive(Debug, Clone, Copy)]
struct TailBucket {
    /// Table size; tail lengths exceed it.
    n_max: u64,
    beta: f64,
    /// Supremum of the target/proposal ratio.
    bound: f64,
}

impl TailBucket {
    fn ratio(&self, n: u64) -> f64 {
        // n^{-s} / int_n^{n+1} y^{-s} dy with s = beta + 1
        let x = n as f64;
        let cell = -(-self.beta * (1.0 / x).ln_1p()).exp_m1() / self.beta;
        1.0 / (x * cell)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let base = (self.n_max + 1) as f64;
        loop {
            let u = 1.0 - uniform(rng);
            let y = base * u.powf(-1.0 / self.beta);
            if !(y < LENGTH_CAP as f64) {
                return LENGTH_CAP;
            }
            let n = y.floor() as u64;
            if uniform(rng) * self.bound <= self.ratio(n) {
                return n;
            }
        }
    }
}

impl ExcursionSampler {
    pub fn new(law: &ReturnLaw) -> Self {
        let masses = law.masses();
        let mut acc = crate::numeric::CompensatedSum::new();
        let cdf: Vec<f64> = masses
            .iter()
            .map(|&a| {
                acc.add(a);
                acc.value()
            })
            .collect();
        let k = cdf.len().min(GUIDE_MAX);
        let mut guide = Vec::with_capacity(k);
        let mut i = 0usize;
        for slot in 0..k {
            let level = slot as f64 / k as f64;
            while i + 1 < cdf.len() && cdf[i] <= level {
                i += 1;
            }
            guide.push(i as u32);
        }
        let tail = match (law.beta(), law.truncation_remainder() > 0.0) {
            (Some(beta), true) => {
                let mut bucket = TailBucket {
                    n_max: law.n_max() as u64,
                    beta,
                    bound: 1.0,
                };
                bucket.bound = bucket.ratio(law.n_max() as u64 + 1);
                Some(bucket)
            }
            _ => None,
        };
        Self { cdf, guide, tail }
    }

    #[inline]
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let u = uniform(rng);
        let last = self.cdf.len() - 1;
        if u >= self.cdf[last] {
            return match &self.tail {
                Some(bucket) => bucket.sample(rng),
                // Rounding gap of a finite law.
                None => self.cdf.iter().rposition(|&c| c < self.cdf[last]).map_or(1, |i| i as u64 + 2),
            };
        }
        let mut i = self.guide[(u * self.guide.len() as f64) as usize] as usize;
        while self.cdf[i] <= u {
            i += 1;
        }
        i as u64 + 1
    }
}

/// One sampled path of the marked renewal chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerminatingPath {
    /// Surviving renewal epochs `0 = t_0 < t_1 < ...` up to the horizon.
    pub epochs: Vec<u64>,
    /// Index of the return whose survival mark failed.
    pub death_epoch: Option<usize>,
    /// Time of that failed return.
    pub death_time: Option<u64>,
    /// Alive when the horizon was reached.
    pub alive_at_horizon: bool,
}

impl TerminatingPath {
    /// Largest surviving epoch `<= time`.
    pub fn last_epoch_at(&self, time: u64) -> u64 {
        let i = self.epochs.partition_point(|&e| e <= time);
        self.epochs[i - 1]
    }
}

/// Samples a path, each return surviving with probability `p` (`p >= 1`
/// disables marks); time 0 is alive.
pub fn sample_path_with<R: Rng>(sampler: &ExcursionSampler, p: f64, rng: &mut R, horizon: u64) -> TerminatingPath {
    let mut epochs = vec![0u64];
    let mut t = 0u64;
    loop {
        let next = t.saturating_add(sampler.sample(rng));
        if next > horizon {
            return TerminatingPath {
                epochs,
                death_epoch: None,
                death_time: None,
                alive_at_horizon: true,
            };
        }
        if p < 1.0 && uniform(rng) >= p {
            return TerminatingPath {
                death_epoch: Some(epochs.len()),
                epochs,
                death_time: Some(next),
                alive_at_horizon: false,
            };
        }
        epochs.push(next);
        t = next;
    }
}

/// Path number `index` of the run described by `cfg`.
pub fn sample_path(tl: &TransientLaw, cfg: &SimConfig, index: u64, horizon: u64) -> Result<TerminatingPath> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let sampler = ExcursionSampler::new(tl.base());
    let mut rng = sample_rng(cfg.seed, index);
    Ok(sample_path_with(&sampler, tl.p(), &mut rng, horizon))
}

/// `floor(j^q)`, the time index visited by grid point `j`.
pub fn grid_time(j: u64, q: f64) -> u64 {
    (j as f64).powf(q).floor() as u64
}

/// Largest `j` with `grid_time(j, q) <= e`.
pub fn grid_last(e: u64, q: f64) -> u64 {
    let mut j = ((e + 1) as f64).powf(1.0 / q).ceil() as u64;
    while j > 0 && grid_time(j, q) > e {
        j -= 1;
    }
    while grid_time(j + 1, q) <= e {
        j += 1;
    }
    j
}

/// `floor((n t)^{1/q})`, the last grid point counted at level `t`.
pub fn grid_cap(n: u64, t: f64, q: f64) -> u64 {
    (n as f64 * t).max(0.0).powf(1.0 / q).floor() as u64
}

/// `#{1 <= j <= cap : floor(j^q) = s}`.
pub fn grid_weight(s: u64, cap: u64, q: f64) -> u64 {
    if s == 0 {
        return 0;
    }
    grid_last(s, q).min(cap).saturating_sub(grid_last(s - 1, q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LastVisit {
    /// Largest `j <= n` with `floor(j^q)` a surviving epoch.
    pub z_hat: u64,
    /// Last surviving epoch `<= floor(n^q)`.
    pub z_ring: u64,
    /// `|z_hat - z_ring^{1/q}|`.
    pub discrepancy: f64,
}

pub fn last_visit_grid(path: &TerminatingPath, n: u64, q: f64) -> Result<LastVisit> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::QOutOfRange(q));
    }
    let z_ring = path.last_epoch_at(grid_time(n, q));
    let z_hat = grid_last(z_ring, q).min(n);
    let discrepancy = (z_hat as f64 - (z_ring as f64).powf(1.0 / q)).abs();
    Ok(LastVisit {
        z_hat,
        z_ring,
        discrepancy,
    })
}

/// Monte Carlo view of the last surviving epoch `Z_n <= n`.
///
/// Two statistics per level `t`:
/// * `counts`: paths with `Z_n <= floor(n t)`, the CDF of `V = Z_n / n`;
/// * `weighted`: sum over paths whose excursion straddling `n` returns alive
///   of `grid_weight(Z_n, grid_cap(n, t, q), q)`. Its mean is the grid sum
///   `sum_{1 <= j <= (nt)^{1/q}} u_{floor(j^q)} P(tau > n - floor(j^q))` of
///   the transient law.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcsineMc {
    pub n: u64,
    pub samples: u64,
    pub seed: u64,
    pub q: f64,
    pub t_grid: Vec<f64>,
    pub counts: Vec<u64>,
    pub cdf: Vec<f64>,
    pub stderr: Vec<f64>,
    pub weighted: Vec<u128>,
    pub weighted_sq: Vec<u128>,
    pub grid_estimate: Vec<f64>,
    pub grid_stderr: Vec<f64>,
    /// Paths still alive at time `n`.
    pub alive_at_horizon: u64,
}

fn binomial(count: u64, total: u64) -> (f64, f64) {
    let f = count as f64 / total as f64;
    (f, (f * (1.0 - f) / total as f64).sqrt())
}

#[derive(Debug, Default, Clone, PartialEq)]
struct ArcsineCounts {
    counts: Vec<u64>,
    weighted: Vec<u128>,
    weighted_sq: Vec<u128>,
    alive: u64,
}

impl ArcsineCounts {
    fn merge(mut self, other: Self) -> Self {
        if self.counts.is_empty() {
            return other;
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        for (a, b) in self.weighted.iter_mut().zip(other.weighted) {
            *a += b;
        }
        for (a, b) in self.weighted_sq.iter_mut().zip(other.weighted_sq) {
            *a += b;
        }
        self.alive += other.alive;
        self
    }
}

pub fn mc_arcsine_cdf(tl: &TransientLaw, n: u64, t_grid: &[f64], cfg: &SimConfig) -> Result<ArcsineMc> {
    let beta = tl.base().require_beta()?;
    cfg.validate()?;
    let q = 1.0 / (1.0 + 2.0 * beta);
    let sampler = ExcursionSampler::new(tl.base());
    let thresholds: Vec<u64> = t_grid.iter().map(|&t| (t * n as f64).floor().max(0.0) as u64).collect();
    let caps: Vec<u64> = t_grid.iter().map(|&t| grid_cap(n, t, q)).collect();
    let k = t_grid.len();
    let total = run_sharded(
        cfg,
        |range| {
            let mut c = ArcsineCounts {
                counts: vec![0; k],
                weighted: vec![0; k],
                weighted_sq: vec![0; k],
                alive: 0,
            };
            for i in range {
                let mut rng = sample_rng(cfg.seed, i);
                let path = sample_path_with(&sampler, tl.p(), &mut rng, n);
                let z = path.last_epoch_at(n);
                // mark of the return that ends the straddling excursion
                let straddle_alive = path.alive_at_horizon && uniform(&mut rng) < tl.p();
                c.alive += path.alive_at_horizon as u64;
                for slot in 0..k {
                    if z <= thresholds[slot] {
                        c.counts[slot] += 1;
                        if straddle_alive {
                            let w = grid_weight(z, caps[slot], q) as u128;
                            c.weighted[slot] += w;
                            c.weighted_sq[slot] += w * w;
                        }
                    }
                }
            }
            c
        },
        ArcsineCounts::merge,
    );
    let (cdf, stderr) = total.counts.iter().map(|&c| binomial(c, cfg.samples)).unzip();
    let m = cfg.samples as f64;
    let (grid_estimate, grid_stderr) = total
        .weighted
        .iter()
        .zip(&total.weighted_sq)
        .map(|(&s1, &s2)| {
            let mean = s1 as f64 / m;
            let var = (s2 as f64 / m - mean * mean).max(0.0);
            (mean, (var / m).sqrt())
        })
        .unzip();
    Ok(ArcsineMc {
        n,
        samples: cfg.samples,
        seed: cfg.seed,
        q,
        t_grid: t_grid.to_vec(),
        counts: total.counts,
        cdf,
        stderr,
        weighted: total.weighted,
        weighted_sq: total.weighted_sq,
        grid_estimate,
        grid_stderr,
        alive_at_horizon: total.alive,
    })
}

/// Per-path `|Z_hat_n - Z_{floor(n^q)}^{1/q}|`, in sample order.
pub fn last_visit_discrepancies(tl: &TransientLaw, n: u64, q: f64, cfg: &SimConfig) -> Result<Vec<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::QOutOfRange(q));
    }
    cfg.validate()?;
    let sampler = ExcursionSampler::new(tl.base());
    let horizon = grid_time(n, q);
    let parts: Vec<Vec<f64>> = cfg
        .shard_ranges()
        .into_par_iter()
        .map(|range| {
            range
                .map(|i| {
                    let mut rng = sample_rng(cfg.seed, i);
                    let path = sample_path_with(&sampler, tl.p(), &mut rng, horizon);
                    last_visit_grid(&path, n, q).map(|v| v.discrepancy).unwrap_or(f64::NAN)
                })
                .collect()
        })
        .collect();
    Ok(parts.concat())
}

/// Moments of normalized occupation counts of the recurrent chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DarlingKacReport {
    pub n: u64,
    pub samples: u64,
    pub beta: f64,
    pub c_tail: f64,
    /// Exact integer sums of `S_n^k`, `k = 1, 2, 4`.
    pub sum_s: u128,
    pub sum_s2: u128,
    pub sum_s4: u128,
    /// Normalization `C n^beta` (`S_n / (C n^beta)`).
    pub literal_scale: f64,
    /// Normalization `n^beta / (C Gamma(1+beta) Gamma(1-beta))`, the
    /// asymptotic mean of `S_n`.
    pub darling_kac_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub mean_se: f64,
    pub second: f64,
    pub second_se: f64,
}

impl DarlingKacReport {
    pub fn moments(&self, scale: f64) -> Moments {
        let n = self.samples as f64;
        let m1 = self.sum_s as f64 / n;
        let m2 = self.sum_s2 as f64 / n;
        let m4 = self.sum_s4 as f64 / n;
        Moments {
            mean: m1 / scale,
            mean_se: ((m2 - m1 * m1).max(0.0) / n).sqrt() / scale,
            second: m2 / (scale * scale),
            second_se: ((m4 - m2 * m2).max(0.0) / n).sqrt() / (scale * scale),
        }
    }

    pub fn literal(&self) -> Moments {
        self.moments(self.literal_scale)
    }

    pub fn darling_kac(&self) -> Moments {
        self.moments(self.darling_kac_scale)
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct PowerSums {
    s1: u128,
    s2: u128,
    s4: u128,
}

/// Number of visits to the base state in `[0, n-1]` of the recurrent chain.
fn occupation_count<R: Rng>(sampler: &ExcursionSampler, rng: &mut R, n: u64) -> u64 {
    let mut t = 0u64;
    let mut visits = 1u64;
    loop {
        t = t.saturating_add(sampler.sample(rng));
        if t >= n {
            return visits;
        }
        visits += 1;
    }
}

pub fn mc_darling_kac_baseline(law: &ReturnLaw, n: u64, cfg: &SimConfig) -> Result<DarlingKacReport> {
    let beta = law.require_beta()?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::BetaOutOfRange(beta));
    }
    cfg.validate()?;
    let c = law.c_tail().ok_or(Error::MissingTailIndex)?;
    let sampler = ExcursionSampler::new(law);
    let sums = run_sharded(
        cfg,
        |range| {
            let mut acc = PowerSums::default();
            for i in range {
                let mut rng = sample_rng(cfg.seed, i);
                let s = occupation_count(&sampler, &mut rng, n) as u128;
                acc.s1 += s;
                acc.s2 += s * s;
                acc.s4 += s * s * s * s;
            }
            acc
        },
        |a, b| PowerSums {
            s1: a.s1 + b.s1,
            s2: a.s2 + b.s2,
            s4: a.s4 + b.s4,
        },
    );
    let nb = (n as f64).powf(beta);
    let gamma_product = crate::distributions::gamma_fn(1.0 + beta)? * crate::distributions::gamma_fn(1.0 - beta)?;
    Ok(DarlingKacReport {
        n,
        samples: cfg.samples,
        beta,
        c_tail: c,
        sum_s: sums.s1,
        sum_s2: sums.s2,
        sum_s4: sums.s4,
        literal_scale: c * nb,
        darling_kac_scale: nb / (c * gamma_product),
    })
}

/// Sum of `m` excursions, the hitting time `tau_m`.
pub fn hitting_time<R: Rng>(sampler: &ExcursionSampler, rng: &mut R, m: u64) -> u64 {
    (0..m).fold(0u64, |t, _| t.saturating_add(sampler.sample(rng)))
}

/// Survivor-conditioned estimate of `P(tau_m >= n | first m marks alive)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionedEstimate {
    pub survivors: u64,
    pub hits: u64,
    pub raw_samples: u64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Draws marked excursion blocks in sample order until `target` of them have
/// all `m` marks alive; among those, counts `tau_m >= n`.
pub fn mc_survivor_conditioned(
    law: &ReturnLaw,
    p: f64,
    n: u64,
    m: u64,
    target: u64,
    cfg: &SimConfig,
) -> Result<ConditionedEstimate> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::POutOfRange(p));
    }
    if target == 0 {
        return Err(Error::InvalidArgument("target must be >= 1".into()));
    }
    let sampler = ExcursionSampler::new(law);
    // outcome per sample: 0 = killed, 1 = survived with tau_m < n, 2 = survived with tau_m >= n
    let outcome = |i: u64| -> u8 {
        let mut rng = sample_rng(cfg.seed, i);
        let mut t = 0u64;
        for _ in 0..m {
            t = t.saturating_add(sampler.sample(&mut rng));
            if uniform(&mut rng) >= p {
                return 0;
            }
        }
        1 + (t >= n) as u8
    };
    let batch = (target as f64 / p.powi(m as i32)).ceil() as u64 / 4 + 1024;
    let (mut survivors, mut hits, mut next) = (0u64, 0u64, 0u64);
    while survivors < target {
        let block = SimConfig {
            samples: batch,
            ..*cfg
        };
        let outcomes: Vec<u8> = block
            .shard_ranges()
            .into_par_iter()
            .flat_map_iter(|r| r.map(|i| outcome(next + i)).collect::<Vec<_>>())
            .collect();
        for o in outcomes {
            next += 1;
            if o > 0 {
                survivors += 1;
                hits += (o == 2) as u64;
                if survivors == target {
                    break;
                }
            }
        }
    }
    let (estimate, stderr) = binomial(hits, survivors);
    Ok(ConditionedEstimate {
        survivors,
        hits,
        raw_samples: next,
        estimate,
        stderr,
    })
}
