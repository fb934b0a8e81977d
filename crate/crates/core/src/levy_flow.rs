//! Lévy flows on the circle: Poisson events, flow assembly, n-point motions
//! and fast simulators for statistics.

use crate::circle_maps::{BucketEval, CircleMapError, MonotoneCircleMap, Side};
use crate::flow_space::{Event, EventFlow, FlowError, Interval, IntervalFlow};
use crate::rng;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevyError {
    #[error("rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("window [{0}, {1}] is reversed")]
    InvalidWindow(f64, f64),
    #[error(transparent)]
    Map(#[from] CircleMapError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonEvents {
    pub rho: f64,
    pub window: (f64, f64),
    pub atoms: Vec<(f64, f64)>,
    pub seed: u64,
    pub stream: u64,
}

pub fn sample_events(rho: f64, window: (f64, f64), seed: u64) -> Result<PoissonEvents, LevyError> {
    sample_events_stream(rho, window, seed, 0)
}

pub fn sample_events_stream(rho: f64, window: (f64, f64), seed: u64, stream: u64) -> Result<PoissonEvents, LevyError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(LevyError::InvalidRate(rho));
    }
    if !(window.0 <= window.1) {
        return Err(LevyError::InvalidWindow(window.0, window.1));
    }
    let mut g = rng::stream(seed, stream);
    let mut atoms = Vec::new();
    let mut t = window.0;
    loop {
        let e: f64 = Exp1.sample(&mut g);
        let next = t + e / rho;
        if next > window.1 {
            break;
        }
        if next <= t {
            // spacing lost to rounding: redraw
            continue;
        }
        t = next;
        atoms.push((t, g.gen::<f64>()));
    }
    Ok(PoissonEvents { rho, window, atoms, seed, stream })
}

/// ρ and β only (the localization constant is not needed to build a flow).
pub fn rate_and_drift(f: &MonotoneCircleMap) -> Result<(f64, f64), LevyError> {
    let sq = f.integral_tilde_sq();
    if !(sq > 1e-300) {
        return Err(CircleMapError::IdentityMap.into());
    }
    let rho = 1.0 / sq;
    Ok((rho, rho * f.integral_tilde()))
}

pub fn build_flow(f: &MonotoneCircleMap, events: &PoissonEvents) -> Result<EventFlow, LevyError> {
    let (_, beta) = rate_and_drift(f)?;
    build_flow_with_beta(f, events, beta)
}

pub fn build_flow_with_beta(f: &MonotoneCircleMap, events: &PoissonEvents, beta: f64) -> Result<EventFlow, LevyError> {
    let ev = events.atoms.iter().map(|&(t, z)| Event { time: t, rotation: z, map: 0 }).collect();
    Ok(EventFlow::new(vec![f.clone()], ev, beta, events.window)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMotion {
    pub start: (f64, f64),
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// event times at which the point sat exactly on a jump of the event map,
    /// so that the left and right evaluations differ; continued from the right
    pub ties: Vec<f64>,
}

/// Lifted paths X_t = X_{(s,t]}(x) at the grid times t ≥ s of each start.
pub fn n_point_motion(flow: &EventFlow, starts: &[(f64, f64)], grid: &[f64]) -> Result<Vec<PointMotion>, LevyError> {
    let (h0, h1) = flow.horizon();
    let mut g: Vec<f64> = grid.to_vec();
    g.sort_by(f64::total_cmp);
    let beta = flow.beta();
    let mut out = Vec::with_capacity(starts.len());
    for &(s, x) in starts {
        let last = g.last().copied().unwrap_or(s);
        if s < h0 || last > h1 {
            return Err(FlowError::OutOfHorizon { lo: s, hi: last, h0, h1 }.into());
        }
        let mut y = x + beta * s;
        let mut prev = Interval::oc(s, s);
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut ties = Vec::new();
        for &t in g.iter().filter(|&&t| t >= s) {
            let step = Interval::oc(prev.hi, t);
            let (a, b) = flow.event_range(&step);
            for e in a..b {
                let r = flow.apply_range(e, e + 1, y, Side::Right);
                if flow.apply_range(e, e + 1, y, Side::Left) != r {
                    ties.push(flow.events()[e].time);
                }
                y = r;
            }
            times.push(t);
            values.push(y - beta * t);
            prev = step;
        }
        out.push(PointMotion { start: (s, x), times, values, ties });
    }
    Ok(out)
}

/// Times at which two lifted paths first differ by an integer (within `tol`),
/// read off on the common grid.
pub fn first_integer_difference(a: &PointMotion, b: &PointMotion, tol: f64) -> Option<f64> {
    let off = a.times.len().saturating_sub(b.times.len());
    let offb = b.times.len().saturating_sub(a.times.len());
    for k in 0..a.times.len().min(b.times.len()) {
        let d = a.values[k + off] - b.values[k + offb];
        if (d - d.round()).abs() <= tol {
            return Some(a.times[k + off]);
        }
    }
    None
}

/// χ(θ) = ρ∫₀¹ (e^{iθf̃} − 1 − iθf̃) dz by adaptive Simpson on each linear piece.
pub fn characteristic_exponent(f: &MonotoneCircleMap, theta: f64) -> Result<Complex64, LevyError> {
    let (rho, _) = rate_and_drift(f)?;
    let mut total = Complex64::new(0.0, 0.0);
    for (x0, x1) in pieces(f) {
        let l0 = f.tilde(x0, Side::Right);
        let r0 = f.tilde(x1, Side::Left);
        let lin = |x: f64| {
            let v = l0 + (r0 - l0) * (x - x0) / (x1 - x0);
            Complex64::new(0.0, theta * v).exp() - 1.0 - Complex64::new(0.0, theta * v)
        };
        total += adaptive_simpson(&lin, x0, x1, 1e-13, 40);
    }
    Ok(rho * total)
}

/// Closed form of the same integral, linear piece by linear piece.
pub fn characteristic_exponent_exact(f: &MonotoneCircleMap, theta: f64) -> Result<Complex64, LevyError> {
    let (rho, _) = rate_and_drift(f)?;
    let mut total = Complex64::new(0.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    for (x0, x1) in pieces(f) {
        let a = f.tilde(x0, Side::Right);
        let b = f.tilde(x1, Side::Left);
        let l = x1 - x0;
        let d = theta * (b - a);
        // ∫₀¹ e^{iθ(a+(b−a)u)} du
        let e = if d.abs() < 1e-6 {
            let ia = (i * theta * a).exp();
            ia * (1.0 + i * d / 2.0 - d * d / 6.0 - i * d * d * d / 24.0)
        } else {
            ((i * theta * b).exp() - (i * theta * a).exp()) / (i * d)
        };
        total += l * (e - 1.0 - i * theta * (a + b) / 2.0);
    }
    Ok(rho * total)
}

fn pieces(f: &MonotoneCircleMap) -> Vec<(f64, f64)> {
    let k = f.knots();
    (0..k.len()).map(|j| (k[j].x, if j + 1 < k.len() { k[j + 1].x } else { k[0].x + 1.0 })).collect()
}

fn adaptive_simpson<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, eps: f64, depth: u32) -> Complex64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, eps, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    fa: Complex64,
    fm: Complex64,
    fb: Complex64,
    whole: Complex64,
    eps: f64,
    depth: u32,
) -> Complex64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// b(x, x') = ρ∫₀¹ f̃(x−z) f̃(x'−z) dz.
pub fn pair_covariance_drift(f: &MonotoneCircleMap, x: f64, xp: f64) -> Result<f64, LevyError> {
    let (rho, _) = rate_and_drift(f)?;
    Ok(rho * f.correlation(xp - x, false))
}

/// Arcs [a, b) of [0,1) outside which f̃ vanishes.
pub fn support_arcs(f: &MonotoneCircleMap) -> Vec<(f64, f64)> {
    let k = f.knots();
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    for j in 0..k.len() {
        let (x0, x1) = (k[j].x, if j + 1 < k.len() { k[j + 1].x } else { k[0].x + 1.0 });
        let a = k[j].y_plus - k[j].x;
        let b = if j + 1 < k.len() { k[j + 1].y_minus - x1 } else { k[0].y_minus + 1.0 - x1 };
        if a != 0.0 || b != 0.0 {
            match arcs.last_mut() {
                Some(last) if last.1 == x0 => last.1 = x1,
                _ => arcs.push((x0, x1)),
            }
        }
    }
    if arcs.len() > 1 && arcs[0].0 == k[0].x && arcs[arcs.len() - 1].1 == k[0].x + 1.0 {
        let last = arcs.pop().unwrap();
        arcs[0].0 = last.0 - 1.0;
    }
    arcs
}

/// Simulates points of a Lévy flow in the drifted frame, drawing only the
/// events that move at least one point (thinning by the support of f̃).
pub struct SupportSim {
    map: MonotoneCircleMap,
    fast: BucketEval,
    arcs: Vec<(f64, f64)>,
    pub rho: f64,
    pub beta: f64,
}

impl SupportSim {
    pub fn new(f: &MonotoneCircleMap) -> Result<Self, LevyError> {
        let (rho, beta) = rate_and_drift(f)?;
        Ok(SupportSim { map: f.clone(), fast: BucketEval::new(f), arcs: support_arcs(f), rho, beta })
    }

    /// Hitting set {w : y−w mod 1 ∈ supp} over all points, as sorted disjoint
    /// subintervals of [0,1).
    fn hitting_set(&self, ys: &[f64], buf: &mut Vec<(f64, f64)>) -> f64 {
        buf.clear();
        for &y in ys {
            for &(a, b) in &self.arcs {
                if b - a >= 1.0 {
                    buf.clear();
                    buf.push((0.0, 1.0));
                    return 1.0;
                }
                let lo = y - b;
                let lo = lo - lo.floor();
                let hi = lo + (b - a);
                if hi > 1.0 {
                    buf.push((lo, 1.0));
                    buf.push((0.0, hi - 1.0));
                } else {
                    buf.push((lo, hi));
                }
            }
        }
        buf.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut w = 0;
        for r in 1..buf.len() {
            if buf[r].0 <= buf[w].1 {
                buf[w].1 = buf[w].1.max(buf[r].1);
            } else {
                w += 1;
                buf[w] = buf[r];
            }
        }
        buf.truncate(w + 1);
        buf.iter().map(|p| p.1 - p.0).sum()
    }

    fn draw_in(buf: &[(f64, f64)], total: f64, u: f64) -> f64 {
        let mut v = u * total;
        for &(a, b) in buf {
            if v < b - a {
                return a + v;
            }
            v -= b - a;
        }
        buf[buf.len() - 1].1
    }

    #[inline]
    fn apply(&self, w: f64, y: f64) -> f64 {
        w + self.fast.eval(y - w)
    }

    /// Positions X_t of all points started at time 0 from `xs`, at time t.
    pub fn run<R: Rng>(&self, xs: &[f64], t: f64, rng: &mut R) -> Vec<f64> {
        let mut ys = xs.to_vec();
        let mut buf = Vec::new();
        let mut now = 0.0;
        loop {
            let total = self.hitting_set(&ys, &mut buf);
            if total <= 0.0 {
                break;
            }
            let e: f64 = Exp1.sample(rng);
            now += e / (self.rho * total);
            if now > t {
                break;
            }
            let w = Self::draw_in(&buf, total, rng.gen());
            for y in ys.iter_mut() {
                *y = self.apply(w, *y);
            }
        }
        ys.iter().map(|y| y - self.beta * t).collect()
    }

    /// Positions at each time of an increasing grid starting at 0; one row
    /// per point. The exponential clock restarts at each grid time.
    pub fn paths<R: Rng>(&self, xs: &[f64], grid: &[f64], rng: &mut R) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(grid.len()); xs.len()];
        let mut ys = xs.to_vec();
        let mut buf = Vec::new();
        let mut now = 0.0;
        for &t in grid {
            loop {
                let total = self.hitting_set(&ys, &mut buf);
                if total <= 0.0 {
                    break;
                }
                let e: f64 = Exp1.sample(rng);
                let next = now + e / (self.rho * total);
                if next > t {
                    break;
                }
                now = next;
                let w = Self::draw_in(&buf, total, rng.gen());
                for y in ys.iter_mut() {
                    *y = self.apply(w, *y);
                }
            }
            now = t;
            for (o, &y) in out.iter_mut().zip(&ys) {
                o.push(y - self.beta * t);
            }
        }
        out
    }

    /// First time two points started at x1, x2 differ by an integer, or None
    /// if they stay apart up to `horizon`.
    pub fn collision_time<R: Rng>(&self, x1: f64, x2: f64, horizon: f64, tol: f64, rng: &mut R) -> Option<f64> {
        let mut ys = [x1, x2];
        let mut buf = Vec::new();
        let mut now = 0.0;
        loop {
            let d = ys[1] - ys[0];
            if (d - d.round()).abs() <= tol {
                return Some(now);
            }
            let total = self.hitting_set(&ys, &mut buf);
            let e: f64 = Exp1.sample(rng);
            now += e / (self.rho * total);
            if now > horizon {
                return None;
            }
            let w = Self::draw_in(&buf, total, rng.gen());
            ys[0] = self.apply(w, ys[0]);
            ys[1] = self.apply(w, ys[1]);
        }
    }

    /// Same simulation driven by a full event list (no thinning): used to
    /// check that skipping non-hitting events changes nothing.
    pub fn run_on_events(&self, xs: &[f64], events: &PoissonEvents, t: f64) -> Vec<f64> {
        let mut ys = xs.to_vec();
        for &(time, z) in &events.atoms {
            if time > t {
                break;
            }
            let w = z - self.beta * time;
            for y in ys.iter_mut() {
                *y = w + self.map.eval(*y - w, Side::Right);
            }
        }
        ys.iter().map(|y| y - self.beta * t).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle_maps::random_map;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn paths_end_where_run_ends() {
        let sim = SupportSim::new(&random_map(&mut stream(3, 1), 6, 0.3, 0.3)).unwrap();
        let xs = [0.1, 0.4, 0.75];
        let a = sim.paths(&xs, &[0.7], &mut stream(8, 0));
        let b = sim.run(&xs, 0.7, &mut stream(8, 0));
        for (p, y) in a.iter().zip(&b) {
            assert_eq!(p.len(), 1);
            assert!((p[0] - y).abs() < 1e-12);
        }
        let g: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
        let p = sim.paths(&xs, &g, &mut stream(8, 1));
        for (l, &x) in p.iter().zip(&xs) {
            assert_eq!(l.len(), g.len());
            assert_eq!(l[0], x);
        }
    }

    #[test]
    fn sample_events_examples() {
        let a = sample_events(1000.0, (0.0, 1.0), 5).unwrap();
        let b = sample_events(1000.0, (0.0, 1.0), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.atoms.windows(2).all(|w| w[1].0 > w[0].0));
        assert!(sample_events(10.0, (0.5, 0.5), 1).unwrap().atoms.is_empty());
        assert_eq!(sample_events(0.0, (0.0, 1.0), 1), Err(LevyError::InvalidRate(0.0)));
        let counts: Vec<f64> =
            (0..1000).map(|s| sample_events_stream(1000.0, (0.0, 1.0), 77, s).unwrap().atoms.len() as f64).collect();
        let m = counts.iter().sum::<f64>() / 1000.0;
        let v = counts.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 999.0;
        assert!((m - 1000.0).abs() < 4.0 * (1000.0f64 / 1000.0).sqrt());
        assert!((v - 1000.0).abs() < 100.0);
    }

    #[test]
    fn build_flow_examples() {
        let f = MonotoneCircleMap::corollary_family(0.2);
        let none = PoissonEvents { rho: 1.0, window: (0.0, 1.0), atoms: vec![], seed: 0, stream: 0 };
        let fl = build_flow_with_beta(&f, &none, 0.0).unwrap();
        assert_eq!(fl.eval(&Interval::oc(0.0, 1.0), 0.3, Side::Right).unwrap(), 0.3);
        let one = PoissonEvents { atoms: vec![(0.5, 0.25)], ..none.clone() };
        let fl = build_flow_with_beta(&f, &one, 0.0).unwrap();
        let r = f.rotate(0.25);
        for k in 0..20 {
            let x = k as f64 / 20.0 + 0.01;
            assert!((fl.eval(&Interval::oc(0.0, 1.0), x, Side::Right).unwrap() - r.eval_right(x)).abs() < 1e-14);
        }
        assert!(matches!(build_flow(&MonotoneCircleMap::identity(), &one), Err(LevyError::Map(CircleMapError::IdentityMap))));
        // odd f̃ gives β = 0
        let odd = MonotoneCircleMap::new(vec![
            crate::circle_maps::Knot { x: 0.0, y_minus: -0.05, y_plus: 0.05 },
            crate::circle_maps::Knot::cont(0.2, 0.2),
            crate::circle_maps::Knot::cont(0.8, 0.8),
        ])
        .unwrap();
        assert!(build_flow(&odd, &one).unwrap().beta().abs() < 1e-12);
    }

    #[test]
    fn n_point_examples() {
        let f = MonotoneCircleMap::corollary_family(0.1);
        let ev = sample_events(3000.0, (0.0, 1.0), 3).unwrap();
        let fl = build_flow(&f, &ev).unwrap();
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 / 50.0).collect();
        let m = n_point_motion(&fl, &[(0.0, 0.3), (0.0, 0.3), (0.0, 1.3), (0.2, 0.7)], &grid).unwrap();
        assert_eq!(m[0].values, m[1].values);
        for k in 0..m[0].values.len() {
            assert!((m[2].values[k] - m[0].values[k] - 1.0).abs() < 1e-12);
        }
        assert_eq!(m[3].times[0], 0.2);
        for (k, &t) in m[0].times.iter().enumerate() {
            let direct = fl.eval(&Interval::oc(0.0, t), 0.3, Side::Right).unwrap();
            assert!((direct - m[0].values[k]).abs() < 1e-12);
        }
        assert!(n_point_motion(&fl, &[(-1.0, 0.0)], &grid).is_err());
        assert!(m.iter().all(|p| p.ties.is_empty()));
    }

    #[test]
    fn event_on_a_jump_is_logged() {
        let ev = PoissonEvents { rho: 1.0, window: (0.0, 1.0), atoms: vec![(0.5, 0.25)], seed: 0, stream: 0 };
        let fl = build_flow_with_beta(&MonotoneCircleMap::unit_jump(), &ev, 0.0).unwrap();
        let m = n_point_motion(&fl, &[(0.0, 0.25), (0.0, 0.4)], &[1.0]).unwrap();
        assert_eq!(m[0].ties, vec![0.5]);
        assert_eq!(m[0].values, vec![1.25]);
        assert!(m[1].ties.is_empty());
    }

    #[test]
    fn non_crossing_and_stick() {
        let f = MonotoneCircleMap::corollary_family(0.1);
        let grid: Vec<f64> = (0..=400).map(|k| k as f64 / 400.0).collect();
        let mut rng = stream(9, 1);
        for s in 0..30 {
            let ev = sample_events(3000.0, (0.0, 1.0), 100 + s).unwrap();
            let fl = build_flow(&f, &ev).unwrap();
            let (x1, x2) = (rng.gen::<f64>(), rng.gen::<f64>());
            let m = n_point_motion(&fl, &[(0.0, x1), (0.0, x2)], &grid).unwrap();
            let d0 = x1 - x2;
            for n in -2..=2 {
                let sign0 = (d0 + n as f64).signum();
                for k in 0..grid.len() {
                    let d = m[0].values[k] - m[1].values[k] + n as f64;
                    assert!(d == 0.0 || d.signum() == sign0 || d.abs() < 1e-12);
                }
            }
            if let Some(tc) = first_integer_difference(&m[0], &m[1], 1e-12) {
                let k0 = grid.iter().position(|&t| t == tc).unwrap();
                let d = m[0].values[k0] - m[1].values[k0];
                for k in k0..grid.len() {
                    assert!((m[0].values[k] - m[1].values[k] - d).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn characteristic_exponent_examples() {
        let f = MonotoneCircleMap::corollary_family(0.1);
        assert!(characteristic_exponent(&f, 0.0).unwrap().norm() < 1e-15);
        let th = 1e-3;
        let c = characteristic_exponent(&f, th).unwrap();
        assert!((c.re / (th * th) + 0.5).abs() < 1e-3);
        for &t in &[1.0, 2.0, 5.0, 17.0] {
            let a = characteristic_exponent(&f, t).unwrap();
            let b = characteristic_exponent_exact(&f, t).unwrap();
            assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()), "θ={t} {a} {b}");
            assert!(a.re <= 0.0);
        }
        let g = random_map(&mut stream(3, 3), 9, 0.3, 0.2);
        let a = characteristic_exponent(&g, 3.0).unwrap();
        let b = characteristic_exponent_exact(&g, 3.0).unwrap();
        assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()));
    }

    #[test]
    fn empirical_characteristic_function() {
        let f = MonotoneCircleMap::corollary_family(0.1);
        let sim = SupportSim::new(&f).unwrap();
        let t = 0.2;
        let n = 100_000;
        let mut rng = stream(21, 0);
        let inc: Vec<f64> = (0..n).map(|_| sim.run(&[0.4], t, &mut rng)[0] - 0.4).collect();
        for &th in &[1.0, 2.0, 5.0] {
            let target = (t * characteristic_exponent_exact(&f, th).unwrap()).exp();
            let (mut re, mut im, mut re2, mut im2) = (0.0, 0.0, 0.0, 0.0);
            for &v in &inc {
                let (c, s) = ((th * v).cos(), (th * v).sin());
                re += c;
                im += s;
                re2 += c * c;
                im2 += s * s;
            }
            let nf = n as f64;
            let (mr, mi) = (re / nf, im / nf);
            let (ser, sei) = (((re2 / nf - mr * mr) / nf).sqrt(), ((im2 / nf - mi * mi) / nf).sqrt());
            assert!((mr - target.re).abs() <= 3.0 * ser + 1e-12, "θ={th}");
            assert!((mi - target.im).abs() <= 3.0 * sei + 1e-12, "θ={th}");
        }
    }

    #[test]
    fn pair_covariance_examples() {
        let f = MonotoneCircleMap::corollary_family(0.1);
        assert!((pair_covariance_drift(&f, 0.3, 0.3).unwrap() - 1.0).abs() < 1e-12);
        assert!(pair_covariance_drift(&f, 0.0, 0.5).unwrap().abs() < 1e-15);
        let fl = f.functionals().unwrap();
        for k in 0..100 {
            let a = fl.lambda_loc + (1.0 - 2.0 * fl.lambda_loc) * k as f64 / 99.0;
            assert!(pair_covariance_drift(&f, 0.0, a).unwrap().abs() <= fl.lambda_loc + 1e-12);
        }
    }

    #[test]
    fn support_of_corollary_family() {
        let arcs = support_arcs(&MonotoneCircleMap::corollary_family(0.1));
        assert_eq!(arcs, vec![(0.0, 0.1)]);
        assert!(support_arcs(&MonotoneCircleMap::identity()).is_empty());
    }

    #[test]
    fn thinning_changes_nothing_pathwise() {
        let f = MonotoneCircleMap::corollary_family(0.05);
        let sim = SupportSim::new(&f).unwrap();
        let ev = sample_events(sim.rho, (0.0, 0.5), 4).unwrap();
        let fl = build_flow(&f, &ev).unwrap();
        let xs = [0.1, 0.35, 0.8];
        let a = sim.run_on_events(&xs, &ev, 0.5);
        for (k, &x) in xs.iter().enumerate() {
            let b = fl.eval(&Interval::oc(0.0, 0.5), x, Side::Right).unwrap();
            assert!((a[k] - b).abs() < 1e-10);
        }
    }

    #[test]
    fn thinning_moments() {
        let f = MonotoneCircleMap::corollary_family(0.1);
        let sim = SupportSim::new(&f).unwrap();
        let mut rng = stream(5, 5);
        let n = 20_000;
        let t = 0.3;
        let v: Vec<f64> = (0..n).map(|_| sim.run(&[0.0], t, &mut rng)[0]).collect();
        let m = v.iter().sum::<f64>() / n as f64;
        let m2 = v.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!(m.abs() < 4.0 * (t / n as f64).sqrt());
        assert!((m2 - t).abs() < 0.05 * t);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_jumps_bounded(seed in any::<u64>()) {
            let f = MonotoneCircleMap::corollary_family(0.1);
            let fl = f.functionals().unwrap();
            let ev = sample_events(fl.rho, (0.0, 0.2), seed).unwrap();
            let flow = build_flow(&f, &ev).unwrap();
            let mut prev = 0.5;
            let mut prev_t = 0.0;
            for &(t, _) in &ev.atoms {
                let now = flow.eval(&Interval::closed(0.0, t), 0.5, Side::Right).unwrap();
                let jump = now - prev + fl.beta * (t - prev_t);
                prop_assert!(jump <= fl.sup_tilde + 1e-12);
                prop_assert!(fl.sup_tilde <= 2.0 * fl.rho.powf(-1.0 / 3.0));
                prev = now;
                prev_t = t;
            }
        }
    }
}
