//! Exact laws of the occupation count `S_n` and audits of the marked chain.
//!
//! `S_n = #{k >= 0 : tau_k <= n - 1}` counts visits to the base state in
//! `[0, n-1]`, with `tau_0 = 0`, so `P(S_n <= m) = P(tau_m >= n)`.
//!
//! In the marked model each return carries an independent Bernoulli(`p`)
//! survival mark and time 0 is alive.

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::laws::ReturnLaw;
use crate::numeric::{convolve, CompensatedSum};
use crate::report::{Cell, ExperimentReport, Table, Verdict};

/// Largest horizon the exact tables accept.
pub const DP_CAPACITY: usize = 1 << 14;

/// `f[m] = P(S_n <= m) = P(tau_m >= n)` for `m = 0..=m_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationTable {
    pub n: usize,
    pub f: Vec<f64>,
}

impl OccupationTable {
    pub fn m_max(&self) -> usize {
        self.f.len() - 1
    }

    /// `P(S_n = k)`.
    pub fn pmf(&self, k: usize) -> f64 {
        if k == 0 {
            self.f[0]
        } else {
            self.f[k] - self.f[k - 1]
        }
    }
}

fn check_scale(n: usize, m_max: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if n > DP_CAPACITY {
        return Err(Error::CapacityExceeded {
            requested: n,
            limit: DP_CAPACITY,
        });
    }
    if m_max > n {
        return Err(Error::InvalidArgument(format!("m_max {m_max} exceeds n {n}")));
    }
    Ok(())
}

/// Law of `S_n` from the `m`-fold convolutions of the return law, truncated
/// at lag `n - 1`.
pub fn sn_distribution(law: &ReturnLaw, n: usize, m_max: usize) -> Result<OccupationTable> {
    check_scale(n, m_max)?;
    let a: Vec<f64> = (0..n).map(|j| law.mass(j)).collect();
    // h[j] = P(tau_m = j) for j < n
    let mut h = vec![0.0; n];
    h[0] = 1.0;
    let mut f = Vec::with_capacity(m_max + 1);
    f.push(0.0);
    for _ in 1..=m_max {
        h = convolve(&h, &a, n);
        let below: f64 = h.iter().copied().collect::<CompensatedSum>().value();
        f.push((1.0 - below).clamp(0.0, 1.0));
    }
    Ok(OccupationTable { n, f })
}

/// Same table from a forward recursion over the chain's age since the last
/// visit; shares no code path with the convolution.
pub fn sn_distribution_dp(law: &ReturnLaw, n: usize, m_max: usize) -> Result<OccupationTable> {
    check_scale(n, m_max)?;
    // dist[age][k - 1]: at the current time, age since last visit, k visits so far
    let mut dist = vec![vec![0.0f64; n]; n];
    dist[0][0] = 1.0;
    let hazard: Vec<f64> = (0..n)
        .map(|age| {
            let alive = law.tail(age);
            if alive > 0.0 {
                law.mass(age + 1) / alive
            } else {
                0.0
            }
        })
        .collect();
    for t in 0..n - 1 {
        let mut next = vec![vec![0.0f64; n]; n];
        for age in 0..=t {
            let h = hazard[age];
            for k in 0..=t {
                let w = dist[age][k];
                if w == 0.0 {
                    continue;
                }
                next[0][k + 1] += w * h;
                next[age + 1][k] += w * (1.0 - h);
            }
        }
        dist = next;
    }
    let mut pmf = vec![0.0f64; n + 1];
    for row in &dist {
        for (k, &w) in row.iter().enumerate() {
            pmf[k + 1] += w;
        }
    }
    let mut acc = CompensatedSum::new();
    let f = (0..=m_max)
        .map(|m| {
            acc.add(pmf[m]);
            acc.value().min(1.0)
        })
        .collect();
    Ok(OccupationTable { n, f })
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::POutOfRange(p));
    }
    Ok(())
}

/// The three probabilities of the ratio identity in the marked model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioAudit {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    /// `p^m P(tau_m >= n)`: first `m` returns alive and `tau_m >= n`.
    pub lhs: f64,
    /// `sum_{k=1..m} p^{m-k} P(S_n = k)`.
    pub sum_factor: f64,
    /// `sum_{k=1..m} p^{k-1} P(S_n = k)`: alive through `n-1` with at most `m` visits.
    pub joint_factor: f64,
    pub product: f64,
    /// `product - lhs`.
    pub gap: f64,
    /// `gap / lhs`.
    pub relative_gap: f64,
}

pub fn ratio_identity_audit(law: &ReturnLaw, p: f64, n: usize, m: usize) -> Result<RatioAudit> {
    check_p(p)?;
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let table = sn_distribution(law, n, m)?;
    Ok(ratio_from_table(&table, p, m))
}

fn ratio_from_table(table: &OccupationTable, p: f64, m: usize) -> RatioAudit {
    let lhs = p.powi(m as i32) * table.f[m];
    let sum_factor = abel_direct(table, p, m);
    let joint_factor = (1..=m)
        .map(|k| p.powi(k as i32 - 1) * table.pmf(k))
        .collect::<CompensatedSum>()
        .value();
    let product = joint_factor * sum_factor;
    let gap = product - lhs;
    RatioAudit {
        n: table.n,
        m,
        p,
        lhs,
        sum_factor,
        joint_factor,
        product,
        gap,
        relative_gap: gap / lhs,
    }
}

fn abel_direct(table: &OccupationTable, p: f64, m: usize) -> f64 {
    (1..=m)
        .map(|k| p.powi((m - k) as i32) * table.pmf(k))
        .collect::<CompensatedSum>()
        .value()
}

/// `W = sum_{k=1..m} p^{m-k} P(S_n = k)` evaluated two ways, with its bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbelDecomposition {
    pub m: usize,
    pub p: f64,
    pub w_direct: f64,
    /// `F_m - (1-p) sum_{k=1..m-1} p^{m-1-k} F_k`.
    pub w_abel: f64,
    pub f_m: f64,
    /// `F_m <= W <= (1+p) F_m`, the displayed sandwich; audit only.
    pub sandwich_holds: bool,
    /// `p^{m-1} F_m`.
    pub lower_bound: f64,
    /// `p^{m-1} F_m <= W <= F_m` within `BOUND_SLACK`.
    pub provable_bounds_hold: bool,
}

pub const BOUND_SLACK: f64 = 1e-12;

pub fn abel_decomposition(table: &OccupationTable, p: f64, m: usize) -> Result<AbelDecomposition> {
    if m == 0 || m > table.m_max() {
        return Err(Error::InvalidArgument(format!("m must lie in 1..={}", table.m_max())));
    }
    let f_m = table.f[m];
    let w_direct = abel_direct(table, p, m);
    let mut inner = CompensatedSum::new();
    for k in 1..m {
        inner.add(p.powi((m - 1 - k) as i32) * table.f[k]);
    }
    let w_abel = f_m - (1.0 - p) * inner.value();
    let lower_bound = p.powi(m as i32 - 1) * f_m;
    Ok(AbelDecomposition {
        m,
        p,
        w_direct,
        w_abel,
        f_m,
        sandwich_holds: f_m <= w_direct && w_direct <= (1.0 + p) * f_m,
        lower_bound,
        provable_bounds_hold: w_direct >= lower_bound - BOUND_SLACK && w_direct <= f_m + BOUND_SLACK,
    })
}

/// `P(tau_m >= n | first m marks alive)`, which equals `P(tau_m >= n)`
/// because marks are independent of excursion lengths.
pub fn survivor_conditioned_tail(law: &ReturnLaw, p: f64, n: usize, m: usize) -> Result<f64> {
    check_p(p)?;
    let table = sn_distribution(law, n, m)?;
    Ok(table.f[m])
}

pub const AUDIT_COLUMNS: [&str; 11] = [
    "n",
    "m",
    "p",
    "lhs",
    "sum_factor",
    "joint_factor",
    "product",
    "gap",
    "W",
    "F_m",
    "sandwich_holds",
];

/// One row per `(n, m, p)` with `1 <= m <= min(n, m_cap)`, ordered by `n`,
/// then `m`, then `p`.
pub fn audit_grid(law: &ReturnLaw, p_list: &[f64], n_list: &[usize], m_cap: usize) -> Result<Table> {
    for &p in p_list {
        check_p(p)?;
    }
    let tables: Vec<OccupationTable> = n_list
        .par_iter()
        .map(|&n| sn_distribution(law, n, n.min(m_cap)))
        .collect::<Result<_>>()?;
    let mut out = Table::new(&AUDIT_COLUMNS);
    for table in &tables {
        for m in 1..=table.m_max() {
            for &p in p_list {
                let r = ratio_from_table(table, p, m);
                let w = abel_decomposition(table, p, m)?;
                out.push(vec![
                    table.n.into(),
                    m.into(),
                    p.into(),
                    r.lhs.into(),
                    r.sum_factor.into(),
                    r.joint_factor.into(),
                    r.product.into(),
                    r.gap.into(),
                    w.w_direct.into(),
                    w.f_m.into(),
                    w.sandwich_holds.into(),
                ]);
            }
        }
    }
    Ok(out)
}

/// Finite-`n` survivor tables at `m = floor(n^beta t)`.
pub fn prop_surv_finite_report(law: &ReturnLaw, p: f64, n: usize, t_grid: &[f64]) -> Result<ExperimentReport> {
    let beta = law.require_beta()?;
    check_p(p)?;
    let ms: Vec<usize> = t_grid
        .iter()
        .map(|&t| ((n as f64).powf(beta) * t).floor().max(0.0) as usize)
        .collect();
    let m_max = ms.iter().copied().max().unwrap_or(0).min(n);
    let table = sn_distribution(law, n, m_max)?;
    let mut out = Table::new(&[
        "n",
        "t",
        "m",
        "W",
        "F_m",
        "ratio",
        "lower_bound",
        "survivor_mass",
        "sandwich_holds",
        "provable_bounds_hold",
    ]);
    let mut all_provable = true;
    for (&t, &m) in t_grid.iter().zip(&ms) {
        let m = m.min(n);
        let mut row: Vec<Cell> = vec![n.into(), t.into(), m.into()];
        if m == 0 {
            row.extend([0.0.into(), 0.0.into(), f64::NAN.into(), 0.0.into(), 0.0.into(), false.into(), true.into()]);
        } else {
            let w = abel_decomposition(&table, p, m)?;
            let survivor_mass = ratio_from_table(&table, p, m).joint_factor;
            all_provable &= w.provable_bounds_hold;
            row.extend([
                w.w_direct.into(),
                w.f_m.into(),
                (w.w_direct / w.f_m).into(),
                w.lower_bound.into(),
                survivor_mass.into(),
                w.sandwich_holds.into(),
                w.provable_bounds_hold.into(),
            ]);
        }
        out.push(row);
    }
    let mut report = ExperimentReport::new("prop_surv_finite");
    report.set_meta("beta", beta);
    report.set_meta("p", p);
    report.set_meta("n", n as u64);
    report.set_meta("bound_slack", BOUND_SLACK);
    report.set_meta("t_grid", Value::from(t_grid.to_vec()));
    report.add_table("survivor", out);
    report.verdicts.push(Verdict::check(
        "provable_bounds",
        all_provable,
        BOUND_SLACK,
        "p^(m-1) F_m <= W <= F_m".into(),
    ));
    report.verdicts.push(Verdict::audit(
        "sandwich",
        "F_m <= W <= (1+p) F_m reported per row".into(),
    ));
    report.verdicts.push(Verdict::audit(
        "normalization_exponent",
        "p^(n^(1/beta)) does not match the cost p^floor(n^beta t) of surviving m excursions; no limit asserted".into(),
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{custom_return, power_law_return};
    use proptest::prelude::*;

    fn two_point() -> ReturnLaw {
        custom_return(&[0.5, 0.5]).unwrap()
    }

    #[test]
    fn small_cases() {
        let law = two_point();
        let t1 = sn_distribution(&law, 1, 1).unwrap();
        assert_eq!(t1.pmf(1), 1.0);
        let t2 = sn_distribution(&law, 2, 2).unwrap();
        assert!((t2.pmf(1) - 0.5).abs() < 1e-15 && (t2.pmf(2) - 0.5).abs() < 1e-15);
        let t3 = sn_distribution(&law, 3, 3).unwrap();
        assert!((t3.pmf(3) - 0.25).abs() < 1e-15 && (t3.pmf(2) - 0.75).abs() < 1e-15);
        assert_eq!(t3.f[0], 0.0);
    }

    #[test]
    fn convolution_matches_age_chain() {
        for law in [
            two_point(),
            custom_return(&[0.2, 0.0, 0.5, 0.3]).unwrap(),
            power_law_return(0.5, 1000).unwrap(),
            power_law_return(1.5, 50).unwrap(),
        ] {
            for n in [1, 2, 7, 33, 60] {
                let a = sn_distribution(&law, n, n).unwrap();
                let b = sn_distribution_dp(&law, n, n).unwrap();
                for m in 0..=n {
                    assert!((a.f[m] - b.f[m]).abs() < 1e-12, "n={n} m={m}");
                }
            }
        }
    }

    #[test]
    fn ratio_examples() {
        let r = ratio_identity_audit(&two_point(), 0.5, 2, 1).unwrap();
        assert!((r.lhs - 0.25).abs() < 1e-15);
        assert!((r.sum_factor - 0.5).abs() < 1e-15);
        assert!((r.joint_factor - 0.5).abs() < 1e-15);
        assert!(r.gap.abs() < 1e-15);
        let r = ratio_identity_audit(&two_point(), 0.3, 2, 1).unwrap();
        assert!((r.lhs - 0.15).abs() < 1e-15);
        assert!((r.product - 0.25).abs() < 1e-15);
        assert!((r.gap - 0.10).abs() < 1e-15);
        assert_eq!(ratio_identity_audit(&two_point(), 1.5, 2, 1), Err(Error::POutOfRange(1.5)));
    }

    #[test]
    fn abel_examples() {
        let t = sn_distribution(&two_point(), 2, 2).unwrap();
        let w = abel_decomposition(&t, 0.5, 2).unwrap();
        assert!((w.w_direct - 0.75).abs() < 1e-15 && (w.w_abel - 0.75).abs() < 1e-15);
        assert_eq!(w.f_m, 1.0);
        assert!(!w.sandwich_holds);
        assert!(w.provable_bounds_hold);
        let w1 = abel_decomposition(&t, 0.3, 1).unwrap();
        assert_eq!(w1.w_direct, w1.f_m);
        assert_eq!(w1.w_abel, w1.f_m);
        let law = power_law_return(0.5, 500).unwrap();
        let t = sn_distribution(&law, 40, 10).unwrap();
        let w = abel_decomposition(&t, 1.0 - 1e-9, 10).unwrap();
        assert!((w.w_direct - w.f_m).abs() < 1e-8);
    }

    #[test]
    fn survivor_conditioned_values() {
        let law = two_point();
        assert!((survivor_conditioned_tail(&law, 0.3, 2, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(survivor_conditioned_tail(&law, 0.9, 2, 1).unwrap(), survivor_conditioned_tail(&law, 0.3, 2, 1).unwrap());
        assert_eq!(survivor_conditioned_tail(&law, 0.5, 2, 2).unwrap(), 1.0);
    }

    #[test]
    fn capacity_and_arguments() {
        let law = two_point();
        assert!(sn_distribution(&law, DP_CAPACITY + 1, 1).unwrap_err().is_capacity());
        assert!(sn_distribution(&law, 3, 4).is_err());
        assert!(sn_distribution(&law, 0, 0).is_err());
    }

    #[test]
    fn audit_grid_shape() {
        let t = audit_grid(&two_point(), &[0.3, 0.5], &[2, 4], 3).unwrap();
        assert_eq!(t.columns, AUDIT_COLUMNS);
        // n=2: m=1,2; n=4: m=1..3; two p values each
        assert_eq!(t.rows.len(), 2 * (2 + 3));
        let counter = t
            .rows
            .iter()
            .find(|r| r[0] == Cell::Int(2) && r[1] == Cell::Int(2) && r[2] == Cell::Num(0.5))
            .unwrap();
        assert_eq!(counter[8], Cell::Num(0.75));
        assert_eq!(counter[9], Cell::Num(1.0));
        assert_eq!(counter[10], Cell::Bool(false));
    }

    #[test]
    fn prop_surv_is_deterministic() {
        let law = power_law_return(0.5, 1 << 12).unwrap();
        let grid = [0.5, 1.0, 1.5];
        let a = prop_surv_finite_report(&law, 0.5, 400, &grid).unwrap();
        let b = prop_surv_finite_report(&law, 0.5, 400, &grid).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
        assert!(a.passed());
        let t = a.table("survivor").unwrap();
        assert_eq!(t.values("m"), vec![10.0, 20.0, 30.0]);
        let table = sn_distribution(&law, 400, 30).unwrap();
        for (w, m) in t.values("W").iter().zip([10usize, 20, 30]) {
            let brute: f64 = (1..=m).map(|k| 0.5f64.powi((m - k) as i32) * table.pmf(k)).sum();
            assert!((w - brute).abs() < 1e-12);
        }
    }

    fn small_law() -> impl Strategy<Value = ReturnLaw> {
        prop::collection::vec(0.0f64..1.0, 1..8).prop_filter_map("zero law", |w| {
            let total: f64 = w.iter().sum();
            if total <= 1e-3 || w[0] == 0.0 {
                return None;
            }
            custom_return(&w.iter().map(|x| x / total).collect::<Vec<_>>()).ok()
        })
    }

    proptest! {
        #[test]
        fn abel_identity_and_bounds(law in small_law(), n in 1usize..40, p in 0.01f64..0.99) {
            let t = sn_distribution(&law, n, n).unwrap();
            for m in 1..=n {
                let w = abel_decomposition(&t, p, m).unwrap();
                prop_assert!((w.w_direct - w.w_abel).abs() < 1e-12);
                prop_assert!(w.provable_bounds_hold);
            }
            prop_assert!(t.f.windows(2).all(|x| x[0] <= x[1] + 1e-15));
            prop_assert!(t.f.iter().all(|&x| x <= 1.0));
        }

        #[test]
        fn duality_with_age_chain(law in small_law(), n in 1usize..30) {
            let a = sn_distribution(&law, n, n).unwrap();
            let b = sn_distribution_dp(&law, n, n).unwrap();
            for m in 0..=n {
                prop_assert!((a.f[m] - b.f[m]).abs() < 1e-12);
            }
        }
    }
}
