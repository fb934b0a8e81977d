//! Coalescing Brownian motions on the circle, used as the reference law, and
//! the two-point collision-time distribution.

use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("argument out of domain: {0}")]
    Domain(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub time: f64,
    /// driver id followed by the merged class
    pub driver: u64,
    /// driver id that stopped
    pub absorbed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalescingSystem {
    pub starts: Vec<(f64, f64)>,
    pub ids: Vec<u64>,
    pub grid: Vec<f64>,
    /// lifted paths per label; NaN before the label's start time
    pub paths: Vec<Vec<f64>>,
    pub merges: Vec<Merge>,
    /// number of distinct circle positions at each grid time
    pub distinct: Vec<usize>,
}

impl CoalescingSystem {
    /// First grid time at which labels j and k share a circle position.
    pub fn collision_time(&self, j: usize, k: usize) -> Option<f64> {
        for (i, &t) in self.grid.iter().enumerate() {
            let (a, b) = (self.paths[j][i], self.paths[k][i]);
            if a.is_nan() || b.is_nan() {
                continue;
            }
            let d = a - b;
            if (d - d.round()).abs() < 1e-12 {
                return Some(t);
            }
        }
        None
    }
}

struct Class {
    driver: u64,
    pos: f64,
    rng: ChaCha8Rng,
}

/// Probability that a Brownian bridge of variance rate `var` over time h,
/// from g0 > 0 to g1 > 0, touches 0.
#[inline]
pub fn bridge_hit_probability(g0: f64, g1: f64, var: f64, h: f64) -> f64 {
    if g0 <= 0.0 || g1 <= 0.0 {
        return 1.0;
    }
    (-2.0 * g0 * g1 / (var * h)).exp()
}

fn check_grid(grid: &[f64]) -> Result<(), OracleError> {
    if grid.is_empty() {
        return Err(OracleError::InvalidGrid("empty".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(OracleError::InvalidGrid("times must be strictly increasing".into()));
    }
    Ok(())
}

pub fn simulate_coalescing(starts: &[(f64, f64)], grid: &[f64], seed: u64) -> Result<CoalescingSystem, OracleError> {
    let ids: Vec<u64> = (0..starts.len() as u64).collect();
    simulate_coalescing_keyed(starts, &ids, grid, seed, true)
}

/// Driver k uses stream `ids[k]`; a merged class follows the larger id. The
/// output is therefore equivariant under joint permutation of starts and ids.
pub fn simulate_coalescing_keyed(
    starts: &[(f64, f64)],
    ids: &[u64],
    grid: &[f64],
    seed: u64,
    store_paths: bool,
) -> Result<CoalescingSystem, OracleError> {
    check_grid(grid)?;
    if ids.len() != starts.len() {
        return Err(OracleError::Domain("one id per start".into()));
    }
    let mut first = Vec::with_capacity(starts.len());
    for &(s, _) in starts {
        let i = grid.partition_point(|&t| t < s - 1e-12);
        if i >= grid.len() || (grid[i] - s).abs() > 1e-12 {
            return Err(OracleError::InvalidGrid(format!("start time {s} is not a grid time")));
        }
        first.push(i);
    }
    let n = starts.len();
    // label -> (class index, integer offset)
    let mut label_class: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut classes: Vec<Class> = Vec::new();
    // active classes in circular order, as indices into `classes`
    let mut order: Vec<usize> = Vec::new();
    let mut paths = if store_paths { vec![vec![f64::NAN; grid.len()]; n] } else { vec![] };
    let mut merges = Vec::new();
    let mut distinct = Vec::with_capacity(grid.len());

    for i in 0..grid.len() {
        if i > 0 {
            let h = grid[i] - grid[i - 1];
            let sd = h.sqrt();
            let before: Vec<f64> = order.iter().map(|&c| classes[c].pos).collect();
            for &c in &order {
                let z: f64 = classes[c].rng.sample(StandardNormal);
                classes[c].pos += sd * z;
            }
            merge_adjacent(&mut classes, &mut order, &mut label_class, &before, h, seed, i as u64, grid[i], &mut merges);
        }
        // activate labels starting now
        for k in 0..n {
            if first[k] == i && label_class[k].is_none() {
                let x = starts[k].1;
                let hit = order.iter().find(|&&c| {
                    let d = classes[c].pos - x;
                    (d - d.round()).abs() < 1e-12
                });
                if let Some(&c) = hit {
                    let off = (x - classes[c].pos).round();
                    label_class[k] = Some((c, off));
                    if ids[k] > classes[c].driver {
                        // the class now follows the larger id, same position
                        classes[c].driver = ids[k];
                        classes[c].rng = rng::stream(seed, ids[k]);
                    }
                } else {
                    classes.push(Class { driver: ids[k], pos: x, rng: rng::stream(seed, ids[k]) });
                    let c = classes.len() - 1;
                    label_class[k] = Some((c, 0.0));
                    order.push(c);
                    sort_circular(&classes, &mut order);
                }
            }
        }
        if store_paths {
            for k in 0..n {
                if let Some((c, off)) = label_class[k] {
                    paths[k][i] = classes[c].pos + off;
                }
            }
        }
        distinct.push(order.len());
    }
    Ok(CoalescingSystem { starts: starts.to_vec(), ids: ids.to_vec(), grid: grid.to_vec(), paths, merges, distinct })
}

/// Sorts classes counter-clockwise starting from the smallest reduced position,
/// keeping lifted values inside one period above the first.
fn sort_circular(classes: &[Class], order: &mut [usize]) {
    order.sort_by(|&a, &b| {
        let ra = classes[a].pos - classes[a].pos.floor();
        let rb = classes[b].pos - classes[b].pos.floor();
        ra.total_cmp(&rb)
    });
}

#[allow(clippy::too_many_arguments)]
fn merge_adjacent(
    classes: &mut [Class],
    order: &mut Vec<usize>,
    label_class: &mut [Option<(usize, f64)>],
    before: &[f64],
    h: f64,
    seed: u64,
    step: u64,
    time: f64,
    merges: &mut Vec<Merge>,
) {
    let m = order.len();
    if m < 2 {
        return;
    }
    let mut hit: Option<usize> = None;
    for j in 0..m {
        let (a, b) = (order[j], order[(j + 1) % m]);
        // gap from a forward to b, in (0,1) before the step
        let g0 = gap(before[j], before[(j + 1) % m]);
        let g1 = g0 + (classes[b].pos - before[(j + 1) % m]) - (classes[a].pos - before[j]);
        let p = if m == 2 && j == 1 {
            // both gaps of a two-class system share one difference process
            continue;
        } else if m == 2 {
            let q0 = 1.0 - g0;
            let q1 = 1.0 - g1;
            bridge_hit_probability(g0, g1, 2.0, h).max(bridge_hit_probability(q0, q1, 2.0, h))
        } else {
            bridge_hit_probability(g0, g1, 2.0, h)
        };
        let (lo, hi) = (classes[a].driver.min(classes[b].driver), classes[b].driver.max(classes[a].driver));
        let u = rng::keyed_uniform(seed ^ 0x5EED, lo.wrapping_mul(0x1_0000_0001).wrapping_add(hi), step);
        if p >= 1.0 || u < p {
            hit = Some(j);
            break;
        }
    }
    let Some(j) = hit else { return };
    let (a, b) = (order[j], order[(j + 1) % m]);
    let (keep, gone) = if classes[a].driver > classes[b].driver { (a, b) } else { (b, a) };
    let shift = classes[gone].pos - classes[keep].pos;
    let n = shift.round();
    for lc in label_class.iter_mut() {
        if let Some((c, off)) = lc {
            if *c == gone {
                *lc = Some((keep, *off + n));
            }
        }
    }
    merges.push(Merge { time, driver: classes[keep].driver, absorbed: classes[gone].driver });
    let gi = order.iter().position(|&c| c == gone).unwrap();
    order.remove(gi);
    // `before` must stay aligned with `order`
    let mut nb = before.to_vec();
    nb.remove(gi);
    merge_adjacent(classes, order, label_class, &nb, h, seed, step.wrapping_add(1 << 40), time, merges);
}

fn gap(a: f64, b: f64) -> f64 {
    let d = b - a;
    d - d.floor()
}

/// Number of distinct positions at the last grid time, from simultaneous starts.
pub fn surviving_count(xs: &[f64], grid: &[f64], seed: u64) -> Result<usize, OracleError> {
    let t0 = grid.first().copied().ok_or_else(|| OracleError::InvalidGrid("empty".into()))?;
    let starts: Vec<(f64, f64)> = xs.iter().map(|&x| (t0, x)).collect();
    let ids: Vec<u64> = (0..xs.len() as u64).collect();
    let s = simulate_coalescing_keyed(&starts, &ids, grid, seed, false)?;
    Ok(*s.distinct.last().unwrap())
}

/// P(T ≤ t) for two unit-diffusivity motions at circle distance a: first exit
/// of a diffusivity-2 motion from (0,1), by the eigenfunction series.
pub fn two_point_collision_cdf(a: f64, t: f64) -> Result<f64, OracleError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(OracleError::Domain(format!("distance {a} not in (0,1)")));
    }
    if !(t >= 0.0) {
        return Err(OracleError::Domain(format!("time {t} negative")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if t.is_infinite() {
        return Ok(1.0);
    }
    let pi = std::f64::consts::PI;
    let mut surv = 0.0;
    let mut n = 1u64;
    loop {
        let nf = n as f64;
        let bound = 4.0 / (nf * pi) * (-nf * nf * pi * pi * t).exp();
        if bound < 1e-12 {
            break;
        }
        surv += bound * (nf * pi * a).sin();
        n += 2;
    }
    Ok((1.0 - surv).clamp(0.0, 1.0))
}

/// Method-of-images form of the same probability (accurate for small t).
pub fn two_point_collision_cdf_images(a: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let s = (2.0 * t).sqrt();
    let phi = |z: f64| 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let mass = |c: f64| phi((1.0 - c) / s) - phi(-c / s);
    let mut surv = 0.0;
    for k in -50i32..=50 {
        let k2 = 2.0 * k as f64;
        surv += mass(a + k2) - mass(-a + k2);
    }
    (1.0 - surv).clamp(0.0, 1.0)
}

/// Monte Carlo estimate of P(T ≤ t) with bridge-corrected steps of size h.
/// Returns (estimate, standard error).
pub fn two_point_collision_mc(a: f64, t: f64, h: f64, n: usize, seed: u64) -> (f64, f64) {
    let steps = (t / h).round() as usize;
    let h = t / steps as f64;
    let sd = (2.0 * h).sqrt();
    let mut g = rng::stream(seed, 0xC011);
    let mut hits = 0usize;
    for _ in 0..n {
        let mut d = a;
        for _ in 0..steps {
            let z: f64 = g.sample(StandardNormal);
            let d1 = d + sd * z;
            let p = if d1 <= 0.0 || d1 >= 1.0 {
                1.0
            } else {
                bridge_hit_probability(d, d1, 2.0, h).max(bridge_hit_probability(1.0 - d, 1.0 - d1, 2.0, h))
            };
            if p >= 1.0 || g.gen::<f64>() < p {
                hits += 1;
                break;
            }
            d = d1;
        }
    }
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub quantity: String,
    pub time: f64,
    pub mean: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub rows: Vec<AuditRow>,
    pub passed: bool,
}

/// Checks that Zᵏ − Zᵏ₀ and ZʲZᵏ − (t−Tʲᵏ)⁺ − ZʲZᵏ|₀ have mean zero at each
/// checkpoint, across independent systems sharing starts and grid.
pub fn martingale_audit(
    systems: &[CoalescingSystem],
    labels: &[usize],
    pairs: &[(usize, usize)],
    checkpoints: &[usize],
    z: f64,
) -> MartingaleReport {
    let mut rows = Vec::new();
    let stat = |vals: Vec<f64>| {
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
        (m, (v / n).sqrt())
    };
    for &k in labels {
        for &c in checkpoints {
            let (m, se) = stat(systems.iter().map(|s| s.paths[k][c] - s.paths[k][0]).collect());
            rows.push(AuditRow { quantity: format!("Z{k}"), time: systems[0].grid[c], mean: m, se, pass: m.abs() <= z * se + 1e-12 });
        }
    }
    for &(j, k) in pairs {
        for &c in checkpoints {
            let vals = systems
                .iter()
                .map(|s| {
                    let t = s.grid[c];
                    let tc = s.collision_time(j, k).unwrap_or(f64::INFINITY);
                    let comp = (t - tc).max(0.0);
                    s.paths[j][c] * s.paths[k][c] - comp - s.paths[j][0] * s.paths[k][0]
                })
                .collect();
            let (m, se) = stat(vals);
            rows.push(AuditRow { quantity: format!("Z{j}Z{k}"), time: systems[0].grid[c], mean: m, se, pass: m.abs() <= z * se + 1e-12 });
        }
    }
    let passed = rows.iter().all(|r| r.pass);
    MartingaleReport { rows, passed }
}

/// Piecewise-uniform grid on [0, t]: step h_k until the k-th breakpoint.
pub fn graded_grid(pieces: &[(f64, f64)]) -> Vec<f64> {
    let mut g = vec![0.0];
    let mut t = 0.0;
    for &(until, h) in pieces {
        if until <= t {
            continue;
        }
        let steps = ((until - t) / h).round().max(1.0) as usize;
        let hh = (until - t) / steps as f64;
        for i in 1..=steps {
            g.push(t + hh * i as f64);
        }
        t = until;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform_grid(t: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| t * i as f64 / n as f64).collect()
    }

    #[test]
    fn identical_and_integer_starts() {
        let g = uniform_grid(0.5, 200);
        let s = simulate_coalescing(&[(0.0, 0.3), (0.0, 0.3)], &g, 1).unwrap();
        assert_eq!(s.paths[0], s.paths[1]);
        assert_eq!(s.distinct[0], 1);
        let s = simulate_coalescing(&[(0.0, 0.3), (0.0, 1.3)], &g, 1).unwrap();
        for i in 0..g.len() {
            assert!((s.paths[1][i] - s.paths[0][i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_grid() {
        assert!(simulate_coalescing(&[(0.0, 0.1)], &[0.0, 0.0], 1).is_err());
        assert!(simulate_coalescing(&[(0.05, 0.1)], &[0.0, 0.1], 1).is_err());
    }

    #[test]
    fn single_path_variance() {
        let g = uniform_grid(0.3, 3);
        let n = 100_000;
        let v: Vec<f64> = (0..n).map(|s| simulate_coalescing(&[(0.0, 0.2)], &g, s).unwrap().paths[0][3] - 0.2).collect();
        let m2 = v.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let m4 = v.iter().map(|x| x.powi(4)).sum::<f64>() / n as f64;
        let se = ((m4 - m2 * m2) / n as f64).sqrt();
        assert!((m2 - 0.3).abs() < 5.0 * se);
    }

    #[test]
    fn cdf_limits_and_images() {
        assert_eq!(two_point_collision_cdf(0.3, 0.0).unwrap(), 0.0);
        assert!((two_point_collision_cdf(0.3, 50.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(two_point_collision_cdf(1.0, 0.1).is_err());
        assert!(two_point_collision_cdf(0.5, -1.0).is_err());
        for &a in &[0.05, 0.3, 0.5, 0.77] {
            for &t in &[1e-4, 1e-3, 0.01, 0.05, 0.1, 0.3, 1.0] {
                let s = two_point_collision_cdf(a, t).unwrap();
                let m = two_point_collision_cdf_images(a, t);
                assert!((s - m).abs() < 1e-10, "a={a} t={t} {s} {m}");
            }
        }
    }

    #[test]
    fn cdf_matches_bridge_monte_carlo() {
        let exact = two_point_collision_cdf(0.5, 0.1).unwrap();
        let (p, se) = two_point_collision_mc(0.5, 0.1, 0.01, 1_000_000, 42);
        assert!((p - exact).abs() < 3.0 * se, "{p} vs {exact} (se {se})");
    }

    #[test]
    fn two_label_system_matches_cdf() {
        let g = uniform_grid(0.1, 20);
        let n = 20_000;
        let mut hit = 0;
        for s in 0..n {
            let sys = simulate_coalescing(&[(0.0, 0.0), (0.0, 0.5)], &g, s).unwrap();
            if sys.collision_time(0, 1).is_some() {
                hit += 1;
            }
        }
        let p = hit as f64 / n as f64;
        let exact = two_point_collision_cdf(0.5, 0.1).unwrap();
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((p - exact).abs() < 4.0 * se);
    }

    #[test]
    fn halving_step_is_stable() {
        let n = 100_000;
        let (p1, se1) = two_point_collision_mc(0.3, 0.05, 0.005, n, 7);
        let (p2, se2) = two_point_collision_mc(0.3, 0.05, 0.0025, n, 8);
        assert!((p1 - p2).abs() < 3.0 * (se1 * se1 + se2 * se2).sqrt());
    }

    #[test]
    fn coalescence_is_monotone_and_sticks() {
        let g = uniform_grid(0.5, 500);
        let xs: Vec<(f64, f64)> = (0..10).map(|k| (0.0, k as f64 / 10.0)).collect();
        for seed in 0..20 {
            let s = simulate_coalescing(&xs, &g, seed).unwrap();
            assert!(s.distinct.windows(2).all(|w| w[1] <= w[0]));
            for j in 0..10 {
                for k in 0..j {
                    if let Some(tc) = s.collision_time(j, k) {
                        let i0 = g.iter().position(|&t| t == tc).unwrap();
                        let d = s.paths[j][i0] - s.paths[k][i0];
                        assert!((d - d.round()).abs() < 1e-12);
                        for i in i0..g.len() {
                            assert!((s.paths[j][i] - s.paths[k][i] - d).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn martingale_checks() {
        let g = uniform_grid(0.2, 40);
        let sys: Vec<_> = (0..4000).map(|s| simulate_coalescing(&[(0.0, 0.1), (0.0, 0.1), (0.0, 0.6)], &g, s).unwrap()).collect();
        let r = martingale_audit(&sys, &[0, 2], &[(0, 1), (0, 2)], &[10, 20, 40], 4.0);
        assert!(r.passed, "{:?}", r.rows);
        // coalesced from the start: ZʲZᵏ − t equals the squared single path case
        for s in &sys[..10] {
            for c in [10, 40] {
                let lhs = s.paths[0][c] * s.paths[1][c] - g[c];
                let rhs = s.paths[0][c].powi(2) - g[c];
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
        // far apart over a short horizon, the product is that of independent paths
        let g2 = uniform_grid(1e-3, 10);
        for seed in 0..50 {
            let s = simulate_coalescing(&[(0.0, 0.0), (0.0, 0.5)], &g2, seed).unwrap();
            assert!(s.collision_time(0, 1).is_none());
            let a = simulate_coalescing(&[(0.0, 0.0)], &g2, seed).unwrap();
            assert!((s.paths[0][10] - a.paths[0][10]).abs() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_exchangeable(seed in any::<u64>(), perm_seed in any::<u64>()) {
            let g = uniform_grid(0.2, 100);
            let starts: Vec<(f64, f64)> = (0..6).map(|k| (0.0, (k as f64 * 0.17) % 1.0)).collect();
            let ids: Vec<u64> = (0..6).collect();
            let mut perm: Vec<usize> = (0..6).collect();
            let mut r = rng::stream(perm_seed, 0);
            for i in (1..6).rev() {
                let j = r.gen_range(0..=i);
                perm.swap(i, j);
            }
            let a = simulate_coalescing_keyed(&starts, &ids, &g, seed, true).unwrap();
            let ps: Vec<(f64, f64)> = perm.iter().map(|&p| starts[p]).collect();
            let pi: Vec<u64> = perm.iter().map(|&p| ids[p]).collect();
            let b = simulate_coalescing_keyed(&ps, &pi, &g, seed, true).unwrap();
            for (k, &p) in perm.iter().enumerate() {
                prop_assert_eq!(&b.paths[k], &a.paths[p]);
            }
        }
    }
}
