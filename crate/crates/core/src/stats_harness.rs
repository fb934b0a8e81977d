//! Hypothesis tests and reports comparing simulated flows with the
//! coalescing reference law.

use crate::aggregation::AggregationSim;
use crate::circle_maps::{MonotoneCircleMap, Side};
use crate::coalescing_oracle::{self, two_point_collision_cdf};
use crate::flow_space::{FlowError, Interval, IntervalFlow};
use crate::levy_flow::{self, LevyError, SupportSim};
use crate::rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{got} samples, at least {need} required")]
    TooFewSamples { got: usize, need: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Levy(#[from] LevyError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub n: usize,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub alpha: Option<f64>,
    pub band: Option<(f64, f64)>,
    pub pass: bool,
    pub seeds: Vec<u64>,
    pub detail: String,
}

impl TestReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn summary_line(&self) -> String {
        let mut s = format!("{} {} n={} stat={:.6e}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.n, self.statistic);
        if let Some(p) = self.p_value {
            let _ = write!(s, " p={p:.4}");
        }
        if let Some((lo, hi)) = self.band {
            let _ = write!(s, " band=[{lo:.4e},{hi:.4e}]");
        }
        if !self.detail.is_empty() {
            let _ = write!(s, " ({})", self.detail);
        }
        s
    }
}

/// JSON lines and a human-readable summary, both ordered by test name.
pub fn write_reports(reports: &[TestReport]) -> (String, String) {
    let mut r: Vec<&TestReport> = reports.iter().collect();
    r.sort_by(|a, b| a.name.cmp(&b.name));
    let mut json = String::new();
    let mut summary = String::new();
    for t in r {
        json.push_str(&t.to_json());
        json.push('\n');
        summary.push_str(&t.summary_line());
        summary.push('\n');
    }
    (json, summary)
}

/// Asymptotic Kolmogorov distribution tail P(K > x).
pub fn kolmogorov_q(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    if x < 1.0 {
        // Jacobi-transformed series converges fast for small x
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let c = (2.0 * std::f64::consts::PI).sqrt() / x;
        let mut s = 0.0;
        for k in 1..50 {
            let kk = (2 * k - 1) as f64;
            s += (-kk * kk * pi2 / (8.0 * x * x)).exp();
        }
        return (1.0 - c * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let sn = ne.sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

pub const MIN_KS_SAMPLES: usize = 100;

/// One-sample KS against a continuous cdf. Infinite samples (censored
/// observations) are allowed and count as mass at +∞.
pub fn ks_one_sample<F: Fn(f64) -> f64>(name: &str, samples: &[f64], cdf: F, alpha: f64, seeds: &[u64]) -> Result<TestReport, StatsError> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(StatsError::TooFewSamples { got: samples.len(), need: MIN_KS_SAMPLES });
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(StatsError::Invalid("NaN sample".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let c = if x == f64::INFINITY { 1.0 } else { cdf(x) };
        d = d.max(c - i as f64 / n).max((i + 1) as f64 / n - c);
    }
    let p = ks_p(d, n);
    Ok(TestReport {
        name: name.into(),
        n: v.len(),
        statistic: d,
        p_value: Some(p),
        alpha: Some(alpha),
        band: None,
        pass: p >= alpha,
        seeds: seeds.to_vec(),
        detail: String::new(),
    })
}

pub fn ks_two_sample(name: &str, a: &[f64], b: &[f64], alpha: f64, seeds: &[u64]) -> Result<TestReport, StatsError> {
    for s in [a, b] {
        if s.len() < MIN_KS_SAMPLES {
            return Err(StatsError::TooFewSamples { got: s.len(), need: MIN_KS_SAMPLES });
        }
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let p = ks_p(d, ne);
    Ok(TestReport {
        name: name.into(),
        n: n + m,
        statistic: d,
        p_value: Some(p),
        alpha: Some(alpha),
        band: None,
        pass: p >= alpha,
        seeds: seeds.to_vec(),
        detail: String::new(),
    })
}

/// Pools ordered categories left to right until every pooled cell has
/// expected count at least `min_expected` in both rows.
pub fn pool_categories(a: &[usize], b: &[usize], min_expected: f64) -> Vec<(usize, usize)> {
    let k = a.len().max(b.len());
    let na: usize = a.iter().sum();
    let nb: usize = b.iter().sum();
    let tot = (na + nb) as f64;
    let fa = na as f64 / tot;
    let fb = nb as f64 / tot;
    let ok = |ca: usize, cb: usize| {
        let c = (ca + cb) as f64;
        c * fa >= min_expected && c * fb >= min_expected
    };
    let mut cells: Vec<(usize, usize)> = Vec::new();
    let (mut ca, mut cb) = (0, 0);
    for i in 0..k {
        ca += a.get(i).copied().unwrap_or(0);
        cb += b.get(i).copied().unwrap_or(0);
        if ok(ca, cb) {
            cells.push((ca, cb));
            ca = 0;
            cb = 0;
        }
    }
    if ca + cb > 0 {
        match cells.last_mut() {
            Some(l) => {
                l.0 += ca;
                l.1 += cb;
            }
            None => cells.push((ca, cb)),
        }
    }
    cells
}

/// Chi-square test that two count vectors over the same ordered categories
/// come from one distribution.
pub fn chi_square_homogeneity(name: &str, a: &[usize], b: &[usize], alpha: f64, seeds: &[u64]) -> Result<TestReport, StatsError> {
    let na: usize = a.iter().sum();
    let nb: usize = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(StatsError::TooFewSamples { got: na.min(nb), need: 1 });
    }
    let cells = pool_categories(a, b, 5.0);
    let tot = (na + nb) as f64;
    let mut x2 = 0.0;
    for &(ca, cb) in &cells {
        let c = (ca + cb) as f64;
        for (obs, n) in [(ca, na), (cb, nb)] {
            let e = c * n as f64 / tot;
            x2 += (obs as f64 - e).powi(2) / e;
        }
    }
    let df = cells.len().saturating_sub(1);
    let (p, detail) = if df == 0 {
        (1.0, "single pooled category; test is degenerate".to_string())
    } else {
        let dist = ChiSquared::new(df as f64).map_err(|e| StatsError::Invalid(e.to_string()))?;
        (1.0 - dist.cdf(x2), format!("df={df}"))
    };
    Ok(TestReport {
        name: name.into(),
        n: na + nb,
        statistic: x2,
        p_value: Some(p),
        alpha: Some(alpha),
        band: None,
        pass: p >= alpha,
        seeds: seeds.to_vec(),
        detail,
    })
}

/// Runs `test` with the primary seed and, on failure, once more with the
/// pre-registered retry seed.
pub fn with_retry<F: Fn(u64) -> Result<TestReport, StatsError>>(primary: u64, retry: u64, test: F) -> Result<TestReport, StatsError> {
    let first = test(primary)?;
    if first.pass {
        return Ok(first);
    }
    let mut second = test(retry)?;
    second.seeds = vec![primary, retry];
    second.detail = format!("retry after p={:.4}; {}", first.p_value.unwrap_or(f64::NAN), second.detail).trim_end_matches("; ").to_string();
    Ok(second)
}

/// Where coupled collision times come from.
pub enum CollisionSource<'a> {
    Levy(&'a SupportSim),
    Aggregation(&'a AggregationSim),
    /// coalescing Brownian motions on the given grid
    Oracle(&'a [f64]),
}

/// Collision times of lines from x1 and x2 over `n` independent runs; runs
/// without a collision before `horizon` are +∞.
pub fn collision_samples(src: &CollisionSource, x1: f64, x2: f64, horizon: f64, n: usize, seed: u64, tol: f64) -> Vec<f64> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let t = match src {
                CollisionSource::Levy(s) => s.collision_time(x1, x2, horizon, tol, &mut r),
                CollisionSource::Aggregation(s) => s.collision_time(x1, x2, horizon, tol, &mut r),
                CollisionSource::Oracle(grid) => {
                    let sys = coalescing_oracle::simulate_coalescing(&[(0.0, x1), (0.0, x2)], grid, seed.wrapping_mul(0x9E37).wrapping_add(i as u64)).expect("grid starts at 0");
                    sys.collision_time(0, 1)
                }
            };
            t.unwrap_or(f64::INFINITY)
        })
        .collect()
}

pub fn collision_time_test(
    name: &str,
    src: &CollisionSource,
    starts: (f64, f64),
    horizon: f64,
    n: usize,
    seed: u64,
    alpha: f64,
) -> Result<TestReport, StatsError> {
    let d = starts.1 - starts.0;
    let a = d - d.floor();
    if !(a > 0.0 && a < 1.0) {
        return Err(StatsError::Invalid("starts coincide on the circle".into()));
    }
    let v = collision_samples(src, starts.0, starts.1, horizon, n, seed, 1e-12);
    let censored = v.iter().filter(|t| t.is_infinite()).count();
    let mut r = ks_one_sample(name, &v, |t| two_point_collision_cdf(a, t).unwrap_or(1.0), alpha, &[seed])?;
    r.detail = format!("censored={censored} at horizon {horizon}");
    Ok(r)
}

/// Checks that the time reversal of the f-flow is the f⁻¹-flow on reflected
/// events, by three routes: the reflected-event construction, the explicit
/// inverse in 𝒟, and the residual g⁻(y) ≤ x ≤ g⁺(y) of the reversed value y
/// under the forward flow g on −I.
pub fn reversal_audit(f: &MonotoneCircleMap, seeds: &[u64], probes: usize, horizon: f64) -> Result<TestReport, StatsError> {
    let finv = f.invert();
    let (rho, beta) = levy_flow::rate_and_drift(f)?;
    let (rho_i, beta_i) = levy_flow::rate_and_drift(&finv)?;
    let mut worst: f64 = ((rho - rho_i) / rho).abs();
    let mut worst_beta: f64 = (beta + beta_i).abs() / (1.0 + beta.abs());
    for &seed in seeds {
        let ev = levy_flow::sample_events(rho, (-horizon, horizon), seed)?;
        let fwd = levy_flow::build_flow(f, &ev)?;
        let mut refl = ev.clone();
        refl.atoms = ev.atoms.iter().rev().map(|&(t, z)| (-t, z)).collect();
        let inv_flow = levy_flow::build_flow_with_beta(&finv, &refl, beta_i)?;
        let rev = fwd.time_reverse();
        let mut r = rng::stream(seed, 0x12E7);
        for _ in 0..probes {
            let mut s: f64 = r.gen_range(-horizon..horizon);
            let mut t: f64 = r.gen_range(-horizon..horizon);
            if s > t {
                std::mem::swap(&mut s, &mut t);
            }
            let i = Interval::oc(s, t);
            let x: f64 = r.gen();
            let a = rev.eval(&i, x, Side::Right)?;
            let b = inv_flow.eval(&i, x, Side::Right)?;
            let explicit = fwd.map_on(&i.neg())?.invert().eval(x, Side::Right);
            let lo = fwd.eval(&i.neg(), a, Side::Left)?;
            let hi = fwd.eval(&i.neg(), a, Side::Right)?;
            let residual = (lo - x).max(x - hi).max(0.0);
            worst = worst.max((a - b).abs()).max((a - explicit).abs()).max(residual);
        }
        worst_beta = worst_beta.max(((fwd.beta() + rev.beta()) / (1.0 + beta.abs())).abs());
    }
    let stat = worst.max(worst_beta);
    Ok(TestReport {
        name: "time_reversal".into(),
        n: seeds.len() * probes,
        statistic: stat,
        p_value: None,
        alpha: None,
        band: Some((0.0, 1e-10)),
        pass: stat <= 1e-10,
        seeds: seeds.to_vec(),
        detail: format!("beta={beta:.6e}, beta(f^-1)={beta_i:.6e}"),
    })
}

/// inf{y : g(y) > x} for a non-decreasing degree-1 g.
pub fn bisect_inverse<G: Fn(f64) -> f64>(g: G, x: f64) -> f64 {
    let mut lo = x - 1.0;
    while g(lo) > x {
        lo -= 1.0;
    }
    let mut hi = x + 1.0;
    while g(hi) <= x {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > x {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Mean and variance checks of X_t − x with SE bands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
    pub target_var: f64,
}

impl MomentCheck {
    pub fn from_increments(v: &[f64], target_var: f64) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        MomentCheck { n: v.len(), mean, mean_se: (m2 / n).sqrt(), var: m2, var_se: ((m4 - m2 * m2) / n).sqrt(), target_var }
    }

    /// |mean| ≤ 4 SE and |Var − target|/target ≤ 5 SE of that ratio.
    pub fn passes(&self) -> bool {
        self.mean.abs() <= 4.0 * self.mean_se && ((self.var - self.target_var) / self.target_var).abs() <= 5.0 * self.var_se / self.target_var
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::Normal;

    #[test]
    fn kolmogorov_tail_values() {
        // reference values of the Kolmogorov distribution
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_q(0.8276) - 0.5).abs() < 1e-3);
        assert!((kolmogorov_q(0.9999) - kolmogorov_q(1.0001)).abs() < 1e-3);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(ks_one_sample("x", &[0.5; 99], |x| x, 0.05, &[]), Err(StatsError::TooFewSamples { .. })));
    }

    #[test]
    fn ks_null_calibration() {
        let mut rej = 0;
        let mut rej2 = 0;
        let reps = 1000;
        for k in 0..reps {
            let mut r = rng::stream(k, 1);
            let v: Vec<f64> = (0..200).map(|_| r.gen()).collect();
            let w: Vec<f64> = (0..150).map(|_| r.gen()).collect();
            if !ks_one_sample("null", &v, |x| x.clamp(0.0, 1.0), 0.05, &[k]).unwrap().pass {
                rej += 1;
            }
            if !ks_two_sample("null2", &v, &w, 0.05, &[k]).unwrap().pass {
                rej2 += 1;
            }
        }
        let rate = rej as f64 / reps as f64;
        assert!((rate - 0.05).abs() <= 0.02, "{rate}");
        // the two-sample statistic is discrete at these sizes and runs conservative
        let rate2 = rej2 as f64 / reps as f64;
        assert!((0.02..=0.07).contains(&rate2), "{rate2}");
    }

    #[test]
    fn chi_square_null_calibration() {
        let mut rej = 0;
        let reps = 1000;
        for k in 0..reps {
            let mut r = rng::stream(k, 2);
            let mut a = vec![0usize; 8];
            let mut b = vec![0usize; 8];
            for _ in 0..300 {
                let u: f64 = r.gen();
                a[((u * u) * 8.0) as usize] += 1;
                let u: f64 = r.gen();
                b[((u * u) * 8.0) as usize] += 1;
            }
            if !chi_square_homogeneity("null", &a, &b, 0.05, &[k]).unwrap().pass {
                rej += 1;
            }
        }
        let rate = rej as f64 / reps as f64;
        assert!((rate - 0.05).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn chi_square_power_and_degenerate() {
        let r = chi_square_homogeneity("p", &[100, 200, 300], &[300, 200, 100], 0.01, &[]).unwrap();
        assert!(!r.pass);
        let r = chi_square_homogeneity("d", &[500], &[500], 0.01, &[]).unwrap();
        assert!(r.pass && r.statistic == 0.0 && r.detail.contains("degenerate"));
        assert_eq!(pool_categories(&[0, 1, 30, 2, 1], &[1, 0, 28, 3, 0], 5.0), vec![(34, 32)]);
    }

    #[test]
    fn ks_power_on_wrong_variance() {
        let mut r = rng::stream(9, 0);
        let v: Vec<f64> = (0..100_000).map(|_| 1.1f64.sqrt() * { let z: f64 = StandardNormal.sample(&mut r); z }).collect();
        let n = Normal::new(0.0, 1.0).unwrap();
        assert!(!ks_one_sample("var", &v, |x| n.cdf(x), 0.01, &[9]).unwrap().pass);
        let v: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut r)).collect();
        assert!(ks_one_sample("var", &v, |x| n.cdf(x), 0.01, &[9]).unwrap().pass);
    }

    #[test]
    fn levy_increments_are_gaussian() {
        let r = (3e-6f64).cbrt();
        let f = MonotoneCircleMap::corollary_family(r);
        let sim = SupportSim::new(&f).unwrap();
        assert!((sim.rho - 1e6).abs() < 1e-3);
        let t = 0.05;
        let v: Vec<f64> = (0..10_000)
            .map(|i| {
                let mut g = rng::stream(31, i);
                sim.run(&[0.3], t, &mut g)[0] - 0.3
            })
            .collect();
        let n = Normal::new(0.0, t.sqrt()).unwrap();
        assert!(ks_one_sample("levy", &v, |x| n.cdf(x), 0.01, &[31]).unwrap().pass);
    }

    #[test]
    fn oracle_against_oracle() {
        let grid: Vec<f64> = (0..=4000).map(|k| k as f64 * 0.0005).collect();
        let a = collision_samples(&CollisionSource::Oracle(&grid), 0.0, 0.5, 2.0, 2000, 1, 1e-12);
        let b = collision_samples(&CollisionSource::Oracle(&grid), 0.0, 0.5, 2.0, 2000, 2, 1e-12);
        assert!(ks_two_sample("oo", &a, &b, 0.01, &[1, 2]).unwrap().pass);
        let r = collision_time_test("oracle", &CollisionSource::Oracle(&grid), (0.0, 0.5), 2.0, 2000, 3, 0.01).unwrap();
        assert!(r.pass, "{}", r.summary_line());
    }

    #[test]
    fn retry_uses_second_seed() {
        let mk = |s: u64| -> Result<TestReport, StatsError> {
            Ok(TestReport { name: "r".into(), n: 1, statistic: 0.0, p_value: Some(if s == 1 { 0.0 } else { 0.5 }), alpha: Some(0.01), band: None, pass: s != 1, seeds: vec![s], detail: String::new() })
        };
        let r = with_retry(1, 2, mk).unwrap();
        assert!(r.pass);
        assert_eq!(r.seeds, vec![1, 2]);
        let r = with_retry(3, 1, mk).unwrap();
        assert_eq!(r.seeds, vec![3]);
    }

    #[test]
    fn reports_are_sorted_and_deterministic() {
        let mk = |n: &str| TestReport { name: n.into(), n: 1, statistic: 1.0, p_value: None, alpha: None, band: None, pass: true, seeds: vec![], detail: String::new() };
        let (j, s) = write_reports(&[mk("b"), mk("a")]);
        assert!(j.lines().next().unwrap().contains("\"a\""));
        assert!(s.starts_with("PASS a"));
        assert_eq!(write_reports(&[mk("b"), mk("a")]), (j, s));
    }

    #[test]
    fn reversal_identity_with_drift() {
        let f = MonotoneCircleMap::new(vec![
            crate::circle_maps::Knot { x: 0.0, y_minus: -0.05, y_plus: 0.1 },
            crate::circle_maps::Knot::cont(0.3, 0.32),
            crate::circle_maps::Knot::cont(0.6, 0.6),
        ])
        .unwrap();
        let (_, beta) = levy_flow::rate_and_drift(&f).unwrap();
        assert!(beta.abs() > 1e-3);
        let r = reversal_audit(&f, &[1, 2, 3], 30, 1.0).unwrap();
        assert!(r.pass, "{}", r.summary_line());
    }

    #[test]
    fn reversal_of_involution_matches_forward_in_law() {
        // translation by 1/2 is its own inverse on the circle
        let f = MonotoneCircleMap::translation(0.5);
        let (rho, _) = levy_flow::rate_and_drift(&f).unwrap();
        let n = 4000;
        let (mut fc, mut rc) = (Vec::new(), Vec::new());
        let i = Interval::oc(0.0, 0.7);
        for s in 0..n {
            let ev = levy_flow::sample_events(rho, (-1.0, 1.0), s).unwrap();
            let fwd = levy_flow::build_flow(&f, &ev).unwrap();
            let rev = fwd.time_reverse();
            fc.push((2.0 * std::f64::consts::PI * (fwd.eval(&i, 0.2, Side::Right).unwrap() - 0.2)).cos());
            rc.push((2.0 * std::f64::consts::PI * (rev.eval(&i, 0.2, Side::Right).unwrap() - 0.2)).cos());
        }
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = (2.0 / n as f64).sqrt();
        assert!((m(&fc) - m(&rc)).abs() < 4.0 * se);
    }

    #[test]
    fn moment_check_bands() {
        let mut r = rng::stream(4, 4);
        let v: Vec<f64> = (0..100_000).map(|_| { let z: f64 = StandardNormal.sample(&mut r); 0.3 * z }).collect();
        assert!(MomentCheck::from_increments(&v, 0.09).passes());
        assert!(!MomentCheck::from_increments(&v, 0.1).passes());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_bisect_inverse(seed in any::<u64>(), x in 0.0f64..1.0) {
            let f = crate::circle_maps::random_map(&mut rng::stream(seed, 0), 6, 0.3, 0.0);
            let y = bisect_inverse(|y| f.eval_right(y), x);
            prop_assert!((y - f.invert().eval_right(x)).abs() < 1e-9);
        }

        #[test]
        fn prop_ks_statistic_in_unit_interval(seed in any::<u64>()) {
            let mut r = rng::stream(seed, 0);
            let v: Vec<f64> = (0..120).map(|_| r.gen::<f64>().powi(2)).collect();
            let rep = ks_one_sample("p", &v, |x| x.clamp(0.0, 1.0), 0.05, &[]).unwrap();
            prop_assert!(rep.statistic > 0.0 && rep.statistic <= 1.0);
            prop_assert!((0.0..=1.0).contains(&rep.p_value.unwrap()));
        }
    }
}
