//! Non-decreasing degree-1 circle maps (the space 𝒟) and period-1
//! contractions (the space 𝒮), stored as piecewise-linear breakpoint lists.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Positions closer than this are treated as the same breakpoint.
pub const KNOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircleMapError {
    #[error("map has no breakpoints")]
    Empty,
    #[error("breakpoint {index}: {reason}")]
    InvalidBreakpoint { index: usize, reason: String },
    #[error("values decrease after breakpoint {0}")]
    NotMonotone(usize),
    #[error("flat piece at level {level} meets a jump of the outer map")]
    DegenerateComposition { level: f64 },
    #[error("functionals are undefined for the identity")]
    IdentityMap,
    #[error("segment {0} has slope larger than 1 in absolute value")]
    NotContraction(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub x: f64,
    pub y_minus: f64,
    pub y_plus: f64,
}

impl Knot {
    pub fn cont(x: f64, y: f64) -> Self {
        Knot { x, y_minus: y, y_plus: y }
    }
}

/// A map f with f(x+1) = f(x)+1, affine from (x_i, y⁺_i) to (x_{i+1}, y⁻_{i+1}),
/// the last segment ending at (x_0+1, y⁻_0+1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCircleMap {
    knots: Vec<Knot>,
}

/// f^×, stored as periodic breakpoints (t, s) with t in [0,1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    knots: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowFunctionals {
    pub rho: f64,
    pub beta: f64,
    pub lambda_loc: f64,
    pub sup_tilde: f64,
}

fn split_lift(x: f64) -> (f64, f64) {
    let mut n = x.floor();
    let mut r = x - n;
    if r >= 1.0 {
        r -= 1.0;
        n += 1.0;
    }
    (n, r)
}

impl MonotoneCircleMap {
    pub fn new(knots: Vec<Knot>) -> Result<Self, CircleMapError> {
        if knots.is_empty() {
            return Err(CircleMapError::Empty);
        }
        let tol = 1e-12;
        for (i, k) in knots.iter().enumerate() {
            if !(k.x.is_finite() && k.y_minus.is_finite() && k.y_plus.is_finite()) {
                return Err(CircleMapError::InvalidBreakpoint { index: i, reason: "non-finite".into() });
            }
            if !(0.0..1.0).contains(&k.x) {
                return Err(CircleMapError::InvalidBreakpoint { index: i, reason: format!("x={} outside [0,1)", k.x) });
            }
            if i > 0 && k.x <= knots[i - 1].x {
                return Err(CircleMapError::InvalidBreakpoint { index: i, reason: "positions not increasing".into() });
            }
            if k.y_minus > k.y_plus + tol * (1.0 + k.y_plus.abs()) {
                return Err(CircleMapError::InvalidBreakpoint { index: i, reason: "y_minus > y_plus".into() });
            }
        }
        let n = knots.len();
        for i in 0..n {
            let next = if i + 1 < n { knots[i + 1].y_minus } else { knots[0].y_minus + 1.0 };
            if knots[i].y_plus > next + tol * (1.0 + next.abs()) {
                return Err(CircleMapError::NotMonotone(i));
            }
        }
        Ok(MonotoneCircleMap { knots })
    }

    pub fn identity() -> Self {
        MonotoneCircleMap { knots: vec![Knot::cont(0.0, 0.0)] }
    }

    pub fn translation(c: f64) -> Self {
        MonotoneCircleMap { knots: vec![Knot::cont(0.0, c)] }
    }

    /// The map x ↦ ⌊x⌋+1 (right version), a single unit jump at 0.
    pub fn unit_jump() -> Self {
        MonotoneCircleMap { knots: vec![Knot { x: 0.0, y_minus: 0.0, y_plus: 1.0 }] }
    }

    /// f⁺(x) = x ∨ r on [0,1), i.e. f̃ = (r−x)∨0.
    pub fn corollary_family(r: f64) -> Self {
        assert!(r > 0.0 && r < 1.0);
        MonotoneCircleMap { knots: vec![Knot { x: 0.0, y_minus: 0.0, y_plus: r }, Knot::cont(r, r)] }
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Segment i as (x0, y0, x1, y1) in lifted coordinates.
    fn segment(&self, i: usize) -> (f64, f64, f64, f64) {
        let k = &self.knots[i];
        if i + 1 < self.knots.len() {
            let n = &self.knots[i + 1];
            (k.x, k.y_plus, n.x, n.y_minus)
        } else {
            let n = &self.knots[0];
            (k.x, k.y_plus, n.x + 1.0, n.y_minus + 1.0)
        }
    }

    pub fn eval(&self, x: f64, side: Side) -> f64 {
        let (n, r) = split_lift(x);
        n + self.eval_reduced(r, side)
    }

    fn eval_reduced(&self, r: f64, side: Side) -> f64 {
        let ks = &self.knots;
        let pick = |k: &Knot| match side {
            Side::Left => k.y_minus,
            Side::Right => k.y_plus,
        };
        let idx = ks.partition_point(|k| k.x <= r);
        // Snap to a neighbouring breakpoint, including across the wrap.
        if idx > 0 && r - ks[idx - 1].x <= KNOT_TOL {
            return pick(&ks[idx - 1]);
        }
        if idx < ks.len() && ks[idx].x - r <= KNOT_TOL {
            return pick(&ks[idx]);
        }
        if idx == ks.len() && ks[0].x + 1.0 - r <= KNOT_TOL {
            return pick(&ks[0]) + 1.0;
        }
        if idx == 0 && r - (ks[ks.len() - 1].x - 1.0) <= KNOT_TOL {
            return pick(&ks[ks.len() - 1]) - 1.0;
        }
        let (seg, shift) = if idx == 0 { (ks.len() - 1, 1.0) } else { (idx - 1, 0.0) };
        let (x0, y0, x1, y1) = self.segment(seg);
        let rr = r + shift;
        let v = y0 + (y1 - y0) * (rr - x0) / (x1 - x0);
        v - shift
    }

    pub fn eval_right(&self, x: f64) -> f64 {
        self.eval(x, Side::Right)
    }

    pub fn tilde(&self, x: f64, side: Side) -> f64 {
        self.eval(x, side) - x
    }

    /// Vertices of the completed graph over one period, starting at x_0.
    fn graph_vertices(&self) -> Vec<(f64, f64)> {
        let mut v = Vec::with_capacity(2 * self.knots.len());
        for k in &self.knots {
            v.push((k.x, k.y_minus));
            if k.y_plus > k.y_minus {
                v.push((k.x, k.y_plus));
            }
        }
        v
    }

    pub fn cross_transform(&self) -> Contraction {
        let pts: Vec<(f64, f64)> = self
            .graph_vertices()
            .into_iter()
            .map(|(x, y)| (0.5 * (x + y), 0.5 * (y - x)))
            .collect();
        Contraction::from_periodic_points(pts)
    }

    pub fn invert(&self) -> MonotoneCircleMap {
        let chain: Vec<(f64, f64)> = self.graph_vertices().into_iter().map(|(x, y)| (y, x)).collect();
        from_chain(&chain)
    }

    pub fn rotate(&self, z: f64) -> MonotoneCircleMap {
        let (_, zr) = split_lift(z);
        if zr == 0.0 {
            return self.clone();
        }
        let mut ks: Vec<Knot> = self
            .knots
            .iter()
            .map(|k| {
                let (n, x) = split_lift(k.x + zr);
                Knot { x, y_minus: k.y_minus + zr - n, y_plus: k.y_plus + zr - n }
            })
            .collect();
        ks.sort_by(|a, b| a.x.total_cmp(&b.x));
        let mut out: Vec<Knot> = Vec::with_capacity(ks.len());
        for k in ks {
            match out.last_mut() {
                Some(p) if k.x - p.x <= 1e-15 => {
                    p.y_minus = p.y_minus.min(k.y_minus);
                    p.y_plus = p.y_plus.max(k.y_plus);
                }
                _ => out.push(k),
            }
        }
        MonotoneCircleMap { knots: out }
    }

    /// f2 ∘ f1 with f2 = self, as the pair {f2⁻∘f1⁻, f2⁺∘f1⁺}.
    pub fn compose(&self, f1: &MonotoneCircleMap) -> Result<MonotoneCircleMap, CircleMapError> {
        compose(self, f1)
    }

    /// Removes continuity breakpoints whose neighbours are collinear with them.
    pub fn simplify(&self) -> MonotoneCircleMap {
        let n = self.knots.len();
        if n <= 1 {
            return self.clone();
        }
        let keep: Vec<bool> = (0..n)
            .map(|i| {
                let k = &self.knots[i];
                if k.y_plus != k.y_minus {
                    return true;
                }
                let (px, py) = if i == 0 {
                    let p = &self.knots[n - 1];
                    (p.x - 1.0, p.y_plus - 1.0)
                } else {
                    (self.knots[i - 1].x, self.knots[i - 1].y_plus)
                };
                let (qx, qy) = if i + 1 == n {
                    let q = &self.knots[0];
                    (q.x + 1.0, q.y_minus + 1.0)
                } else {
                    (self.knots[i + 1].x, self.knots[i + 1].y_minus)
                };
                let interp = py + (qy - py) * (k.x - px) / (qx - px);
                (interp - k.y_minus).abs() > 1e-14 * (1.0 + k.y_minus.abs())
            })
            .collect();
        let knots: Vec<Knot> = self.knots.iter().zip(&keep).filter(|(_, &k)| k).map(|(k, _)| *k).collect();
        if knots.is_empty() {
            MonotoneCircleMap { knots: vec![self.knots[0]] }
        } else {
            MonotoneCircleMap { knots }
        }
    }

    /// Per-segment data (length, f̃ at start, f̃ at end).
    fn tilde_segments(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        (0..self.knots.len()).map(move |i| {
            let (x0, y0, x1, y1) = self.segment(i);
            (x0, x1 - x0, y0 - x0, y1 - x1)
        })
    }

    pub fn integral_tilde(&self) -> f64 {
        self.tilde_segments().map(|(_, l, a, b)| l * (a + b) / 2.0).sum()
    }

    pub fn integral_tilde_sq(&self) -> f64 {
        self.tilde_segments().map(|(_, l, a, b)| l * (a * a + a * b + b * b) / 3.0).sum()
    }

    pub fn sup_tilde(&self) -> f64 {
        self.tilde_segments().fold(0.0f64, |m, (_, _, a, b)| m.max(a.abs()).max(b.abs()))
    }

    /// ∫₀¹ f̃(x+a) f̃(x) dx (signed) or its absolute-value version, computed
    /// exactly on the merged breakpoint grid.
    pub fn correlation(&self, a: f64, absolute: bool) -> f64 {
        let (_, a) = split_lift(a);
        let mut cuts: Vec<f64> = Vec::with_capacity(2 * self.knots.len() + 2);
        for k in &self.knots {
            cuts.push(k.x);
            let (_, s) = split_lift(k.x - a);
            cuts.push(s);
        }
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (l, r) = (w[0], w[1]);
            if r - l <= 0.0 {
                continue;
            }
            let m = 0.5 * (l + r);
            let (p0, p1) = self.linear_tilde_on(l, r, m);
            let (q0, q1) = self.linear_tilde_on(l + a, r + a, m + a);
            total += piece_product_integral(r - l, p0, p1, q0, q1, absolute);
        }
        total
    }

    /// Linear f̃ on [l, r] (known to contain no breakpoint in its interior):
    /// returns the values at the ends, using the segment containing m.
    fn linear_tilde_on(&self, l: f64, r: f64, m: f64) -> (f64, f64) {
        let (n, mr) = split_lift(m);
        let ks = &self.knots;
        let idx = ks.partition_point(|k| k.x <= mr);
        let (seg, shift) = if idx == 0 { (ks.len() - 1, 1.0) } else { (idx - 1, 0.0) };
        let (x0, y0, x1, y1) = self.segment(seg);
        let off = n - shift;
        let slope = (y1 - y0) / (x1 - x0);
        let at = |x: f64| {
            let u = x - off;
            y0 + slope * (u - x0) - u
        };
        (at(l), at(r))
    }

    pub fn functionals(&self) -> Result<FlowFunctionals, CircleMapError> {
        self.functionals_with(&LocalizationOptions::default())
    }

    pub fn functionals_with(&self, opts: &LocalizationOptions) -> Result<FlowFunctionals, CircleMapError> {
        let sq = self.integral_tilde_sq();
        if !(sq > 1e-300) {
            return Err(CircleMapError::IdentityMap);
        }
        let rho = 1.0 / sq;
        Ok(FlowFunctionals {
            rho,
            beta: rho * self.integral_tilde(),
            lambda_loc: self.localization(rho, opts),
            sup_tilde: self.sup_tilde(),
        })
    }

    /// Candidate separations a in (0, 1/2] on which the correlation is scanned.
    pub fn localization_candidates(&self, opts: &LocalizationOptions) -> Vec<f64> {
        let mut a: Vec<f64> = (1..=opts.uniform).map(|i| 0.5 * i as f64 / opts.uniform as f64).collect();
        let h = 0.5 / opts.uniform as f64;
        let mut g = h;
        for _ in 0..opts.geometric {
            g *= 0.8;
            a.push(g);
        }
        if self.knots.len() <= opts.knot_pairs_up_to {
            for p in &self.knots {
                for q in &self.knots {
                    let (_, d) = split_lift(q.x - p.x);
                    let d = d.min(1.0 - d);
                    if d > 0.0 {
                        a.push(d);
                        a.push((d + 1.0e-9).min(0.5));
                    }
                }
            }
        }
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    }

    fn localization(&self, rho: f64, opts: &LocalizationOptions) -> f64 {
        let cand = self.localization_candidates(opts);
        let c: Vec<f64> = cand.iter().map(|&a| rho * self.correlation(a, true)).collect();
        localization_from_table(&cand, &c, opts.resolution, |lam| rho * self.correlation(lam, true))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# monotone-circle-map v1");
        let _ = writeln!(s, "count {}", self.knots.len());
        for k in &self.knots {
            let _ = writeln!(s, "{:e} {:e} {:e}", k.x, k.y_minus, k.y_plus);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CircleMapError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let perr = |line: usize, msg: &str| CircleMapError::Parse { line: line + 1, msg: msg.into() };
        let (ln, head) = lines.next().ok_or_else(|| perr(0, "empty input"))?;
        if head.trim() != "# monotone-circle-map v1" {
            return Err(perr(ln, "unknown header"));
        }
        let (ln, count) = lines.next().ok_or_else(|| perr(ln, "missing count"))?;
        let count: usize = count
            .trim()
            .strip_prefix("count ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| perr(ln, "bad count line"))?;
        let mut knots = Vec::with_capacity(count);
        for (ln, l) in lines {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| perr(ln, "bad number"))?;
            if v.len() != 3 {
                return Err(perr(ln, "expected three numbers"));
            }
            knots.push(Knot { x: v[0], y_minus: v[1], y_plus: v[2] });
        }
        if knots.len() != count {
            return Err(perr(0, "count mismatch"));
        }
        MonotoneCircleMap::new(knots)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationOptions {
    pub uniform: usize,
    pub geometric: usize,
    pub knot_pairs_up_to: usize,
    pub resolution: f64,
}

impl Default for LocalizationOptions {
    fn default() -> Self {
        LocalizationOptions { uniform: 4096, geometric: 40, knot_pairs_up_to: 64, resolution: 1e-4 }
    }
}

/// Smallest λ (to `resolution`, upper bracket) with C(a) ≤ λ for all a ≥ λ,
/// the sup being taken over the table of C on increasing separations in
/// (0, 1/2] together with the point a = λ itself.
pub fn localization_from_table<F: Fn(f64) -> f64>(a: &[f64], c: &[f64], resolution: f64, at: F) -> f64 {
    let mut suffix = vec![0.0f64; a.len() + 1];
    for i in (0..a.len()).rev() {
        suffix[i] = suffix[i + 1].max(c[i]);
    }
    let feasible = |lam: f64| {
        let i = a.partition_point(|&v| v < lam);
        suffix[i] <= lam && at(lam) <= lam
    };
    if !feasible(0.5) {
        return 0.5;
    }
    let (mut lo, mut hi) = (0.0, 0.5);
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// ∫₀ᴸ p(x) q(x) dx (or of |pq|) for linear p, q given by their end values.
fn piece_product_integral(len: f64, p0: f64, p1: f64, q0: f64, q1: f64, absolute: bool) -> f64 {
    let simpson = |u0: f64, u1: f64| {
        // parameter range [u0,u1] ⊂ [0,1]
        let p = |u: f64| p0 + (p1 - p0) * u;
        let q = |u: f64| q0 + (q1 - q0) * u;
        let m = 0.5 * (u0 + u1);
        (u1 - u0) * (p(u0) * q(u0) + 4.0 * p(m) * q(m) + p(u1) * q(u1)) / 6.0
    };
    if !absolute {
        return len * simpson(0.0, 1.0);
    }
    let mut cuts = [0.0, 1.0, 0.0, 0.0];
    let mut n = 2;
    for (a, b) in [(p0, p1), (q0, q1)] {
        if (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0) {
            cuts[n] = a / (a - b);
            n += 1;
        }
    }
    let cuts = &mut cuts[..n];
    cuts.sort_by(f64::total_cmp);
    let mut s = 0.0;
    for w in cuts.windows(2) {
        s += simpson(w[0], w[1]).abs();
    }
    len * s
}

/// Builds a map from a monotone chain of completed-graph vertices covering one
/// period (the vertex after the last is the first shifted by (1,1)).
fn from_chain(chain: &[(f64, f64)]) -> MonotoneCircleMap {
    let m = chain.len();
    let at = |j: usize| -> (f64, f64) {
        let (q, r) = (j / m, j % m);
        (chain[r].0 + q as f64, chain[r].1 + q as f64)
    };
    // find a vertex that starts a new x-group
    let start = (0..m)
        .find(|&j| {
            let prev = if j == 0 { (chain[m - 1].0 - 1.0, chain[m - 1].1 - 1.0) } else { chain[j - 1] };
            chain[j].0 - prev.0 > KNOT_TOL
        })
        .unwrap_or(0);
    let mut knots: Vec<Knot> = Vec::new();
    let mut j = start;
    let end = start + m;
    while j < end {
        let (x, y0) = at(j);
        let mut y1 = y0;
        let mut k = j + 1;
        while k < end && at(k).0 - x <= KNOT_TOL {
            y1 = at(k).1;
            k += 1;
        }
        let (n, xr) = split_lift(x);
        knots.push(Knot { x: xr, y_minus: y0 - n, y_plus: y1 - n });
        j = k;
    }
    knots.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut out: Vec<Knot> = Vec::with_capacity(knots.len());
    for k in knots {
        match out.last_mut() {
            Some(p) if k.x - p.x <= 1e-15 => p.y_plus = p.y_plus.max(k.y_plus),
            _ => out.push(k),
        }
    }
    if out.len() > 1 && out[0].x + 1.0 - out[out.len() - 1].x <= 1e-15 {
        let last = out.pop().unwrap();
        out[0].y_minus = out[0].y_minus.min(last.y_minus - 1.0);
    }
    MonotoneCircleMap { knots: out }
}

pub fn compose(f2: &MonotoneCircleMap, f1: &MonotoneCircleMap) -> Result<MonotoneCircleMap, CircleMapError> {
    let k2 = &f2.knots;
    let mut out: Vec<Knot> = Vec::with_capacity(f1.knots.len() + k2.len() + 2);
    for i in 0..f1.knots.len() {
        let k = &f1.knots[i];
        out.push(Knot { x: k.x, y_minus: f2.eval(k.y_minus, Side::Left), y_plus: f2.eval(k.y_plus, Side::Right) });
        let (x0, y0, x1, y1) = f1.segment(i);
        if y1 - y0 <= KNOT_TOL * (1.0 + y0.abs()) {
            // flat piece: forbidden on a jump of f2
            let (_, v) = split_lift(y0);
            for q in k2 {
                let d = (q.x - v).abs().min((q.x + 1.0 - v).abs()).min((v + 1.0 - q.x).abs());
                if d <= KNOT_TOL && q.y_plus - q.y_minus > KNOT_TOL {
                    return Err(CircleMapError::DegenerateComposition { level: y0 });
                }
            }
            continue;
        }
        // breakpoints of f2 crossed strictly inside this segment
        let base = y0.floor();
        let mut lift = base;
        while lift <= y1 {
            for q in k2 {
                let u = q.x + lift;
                if u - y0 > KNOT_TOL && y1 - u > KNOT_TOL {
                    let x = x0 + (u - y0) * (x1 - x0) / (y1 - y0);
                    if x - x0 > KNOT_TOL && x1 - x > KNOT_TOL {
                        let (n, xr) = split_lift(x);
                        out.push(Knot { x: xr, y_minus: q.y_minus + lift - n, y_plus: q.y_plus + lift - n });
                    }
                }
            }
            lift += 1.0;
        }
    }
    out.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut merged: Vec<Knot> = Vec::with_capacity(out.len());
    for k in out {
        match merged.last_mut() {
            Some(p) if k.x - p.x <= KNOT_TOL => {
                p.y_minus = p.y_minus.min(k.y_minus);
                p.y_plus = p.y_plus.max(k.y_plus);
            }
            _ => merged.push(k),
        }
    }
    if merged.len() > 1 && merged[0].x + 1.0 - merged[merged.len() - 1].x <= KNOT_TOL {
        let last = merged.pop().unwrap();
        merged[0].y_minus = merged[0].y_minus.min(last.y_minus - 1.0);
    }
    Ok(MonotoneCircleMap { knots: merged }.simplify())
}

pub fn metric_dd(f: &MonotoneCircleMap, g: &MonotoneCircleMap) -> f64 {
    f.cross_transform().sup_distance(&g.cross_transform())
}

/// The cross coordinate t where |g^× − f^×| peaks, the graph point
/// x = t − g^×(t) of g there, and the signed gap g^× − f^×.
pub fn metric_witness(f: &MonotoneCircleMap, g: &MonotoneCircleMap) -> (f64, f64, f64) {
    let (fc, gc) = (f.cross_transform(), g.cross_transform());
    let mut best: (f64, f64, f64) = (0.0, 0.0, 0.0);
    for t in fc.knots.iter().map(|k| k.0).chain(gc.knots.iter().map(|k| k.0)) {
        let d = gc.eval(t) - fc.eval(t);
        if d.abs() > best.2.abs() {
            best = (t, t - gc.eval(t), d);
        }
    }
    best
}

/// Largest violation of f⁻(x−ε)−ε ≤ g⁻(x) ≤ g⁺(x) ≤ f⁺(x+ε)+ε over xs;
/// non-positive when the sandwich holds.
pub fn sandwich_violation(f: &MonotoneCircleMap, g: &MonotoneCircleMap, eps: f64, xs: &[f64]) -> f64 {
    let mut v = f64::NEG_INFINITY;
    for &x in xs {
        let lo = f.eval(x - eps, Side::Left) - eps - g.eval(x, Side::Left);
        let hi = g.eval(x, Side::Right) - f.eval(x + eps, Side::Right) - eps;
        v = v.max(lo).max(hi);
    }
    v
}

impl Contraction {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, CircleMapError> {
        if knots.is_empty() {
            return Err(CircleMapError::Empty);
        }
        for (i, &(t, s)) in knots.iter().enumerate() {
            if !(t.is_finite() && s.is_finite()) || !(0.0..1.0).contains(&t) {
                return Err(CircleMapError::InvalidBreakpoint { index: i, reason: "bad position".into() });
            }
            if i > 0 && t <= knots[i - 1].0 {
                return Err(CircleMapError::InvalidBreakpoint { index: i, reason: "positions not increasing".into() });
            }
        }
        let c = Contraction { knots };
        for i in 0..c.knots.len() {
            let (t0, s0, t1, s1) = c.segment(i);
            if (s1 - s0).abs() > (t1 - t0) * (1.0 + 1e-9) + 1e-12 {
                return Err(CircleMapError::NotContraction(i));
            }
        }
        Ok(c)
    }

    pub fn constant(c: f64) -> Self {
        Contraction { knots: vec![(0.0, c)] }
    }

    fn from_periodic_points(pts: Vec<(f64, f64)>) -> Self {
        let mut v: Vec<(f64, f64)> = pts
            .into_iter()
            .map(|(t, s)| {
                let (_, tr) = split_lift(t);
                (tr, s)
            })
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for p in v {
            match out.last() {
                Some(q) if p.0 - q.0 <= 1e-15 => {}
                _ => out.push(p),
            }
        }
        if out.len() > 1 && out[0].0 + 1.0 - out[out.len() - 1].0 <= 1e-15 {
            out.pop();
        }
        Contraction { knots: out }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    fn segment(&self, i: usize) -> (f64, f64, f64, f64) {
        let (t0, s0) = self.knots[i];
        let (t1, s1) = if i + 1 < self.knots.len() {
            self.knots[i + 1]
        } else {
            (self.knots[0].0 + 1.0, self.knots[0].1)
        };
        (t0, s0, t1, s1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (_, r) = split_lift(t);
        let ks = &self.knots;
        let idx = ks.partition_point(|k| k.0 <= r);
        let (seg, shift) = if idx == 0 { (ks.len() - 1, 1.0) } else { (idx - 1, 0.0) };
        let (t0, s0, t1, s1) = self.segment(seg);
        s0 + (s1 - s0) * (r + shift - t0) / (t1 - t0)
    }

    pub fn neg(&self) -> Contraction {
        Contraction { knots: self.knots.iter().map(|&(t, s)| (t, -s)).collect() }
    }

    /// Largest slope magnitude over all breakpoint pairs (equals the
    /// largest segment slope for a piecewise-linear function).
    pub fn lipschitz(&self) -> f64 {
        (0..self.knots.len())
            .map(|i| {
                let (t0, s0, t1, s1) = self.segment(i);
                (s1 - s0).abs() / (t1 - t0)
            })
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.knots.iter().fold(0.0f64, |m, k| m.max(k.1.abs()))
    }

    pub fn sup_distance(&self, other: &Contraction) -> f64 {
        let mut m = 0.0f64;
        for &(t, s) in &self.knots {
            m = m.max((s - other.eval(t)).abs());
        }
        for &(t, s) in &other.knots {
            m = m.max((self.eval(t) - s).abs());
        }
        m
    }

    pub fn inverse_cross_transform(&self) -> MonotoneCircleMap {
        let chain: Vec<(f64, f64)> = self.knots.iter().map(|&(t, s)| (t - s, t + s)).collect();
        from_chain(&chain)
    }
}

/// Fast right-continuous evaluator for maps with many breakpoints, used in
/// simulation inner loops. No snapping to breakpoints.
#[derive(Clone, Debug)]
pub struct BucketEval {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
    start: Vec<u32>,
    nb: f64,
}

impl BucketEval {
    pub fn new(f: &MonotoneCircleMap) -> Self {
        let n = f.knots.len();
        let mut x = Vec::with_capacity(n + 1);
        let mut y = Vec::with_capacity(n + 1);
        let mut slope = Vec::with_capacity(n + 1);
        // a virtual segment in front covers [0, x_0)
        let (lx0, ly0, lx1, ly1) = f.segment(n - 1);
        x.push(lx0 - 1.0);
        y.push(ly0 - 1.0);
        slope.push((ly1 - ly0) / (lx1 - lx0));
        for i in 0..n {
            let (x0, y0, x1, y1) = f.segment(i);
            x.push(x0);
            y.push(y0);
            slope.push((y1 - y0) / (x1 - x0));
        }
        let nbu = (4 * n).clamp(256, 1 << 20);
        let mut start = Vec::with_capacity(nbu);
        let mut i = 0usize;
        for b in 0..nbu {
            let l = b as f64 / nbu as f64;
            while i + 1 < x.len() && x[i + 1] <= l {
                i += 1;
            }
            start.push(i as u32);
        }
        BucketEval { x, y, slope, start, nb: nbu as f64 }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        let n = v.floor();
        let r = v - n;
        let b = ((r * self.nb) as usize).min(self.start.len() - 1);
        let mut i = self.start[b] as usize;
        while i + 1 < self.x.len() && self.x[i + 1] <= r {
            i += 1;
        }
        n + self.y[i] + self.slope[i] * (r - self.x[i])
    }
}

/// Random valid map with `n` breakpoints; jumps and flats occur with the
/// given probabilities.
pub fn random_map<R: Rng>(rng: &mut R, n: usize, p_jump: f64, p_flat: f64) -> MonotoneCircleMap {
    let n = n.max(1);
    let mut xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    if rng.gen_bool(0.2) {
        xs[0] = 0.0;
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let n = xs.len();
    let mut jumps = vec![0.0; n];
    let mut rises = vec![0.0; n];
    for i in 0..n {
        if rng.gen_bool(p_jump) {
            jumps[i] = rng.gen::<f64>();
        }
        if !rng.gen_bool(p_flat) {
            rises[i] = rng.gen::<f64>() + 0.05;
        }
    }
    if jumps.iter().chain(&rises).all(|&v| v == 0.0) {
        rises[0] = 1.0;
    }
    let scale = 1.0 / (jumps.iter().sum::<f64>() + rises.iter().sum::<f64>());
    let mut y = rng.gen::<f64>() - 0.5 + xs[0];
    let mut knots = Vec::with_capacity(n);
    for i in 0..n {
        let ym = y;
        let yp = ym + jumps[i] * scale;
        knots.push(Knot { x: xs[i], y_minus: ym, y_plus: yp });
        y = yp + rises[i] * scale;
    }
    MonotoneCircleMap::new(knots).expect("random map construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn grid(n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| (i as f64 + 0.37) / n as f64)
    }

    #[test]
    fn identity_and_translation_cross() {
        let c = MonotoneCircleMap::identity().cross_transform();
        assert!(c.sup_norm() < 1e-15);
        let c = MonotoneCircleMap::translation(0.3).cross_transform();
        for t in grid(50) {
            assert!((c.eval(t) - 0.15).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_jump_cross_is_triangle_wave() {
        let c = MonotoneCircleMap::unit_jump().cross_transform();
        for t in grid(101) {
            assert!((c.eval(t) - t.min(1.0 - t)).abs() < 1e-14, "t={t}");
        }
        let back = Contraction::new(vec![(0.0, 0.0), (0.5, 0.5)]).unwrap().inverse_cross_transform();
        assert_eq!(back.knots().len(), 1);
        assert!((back.knots()[0].y_plus - 1.0).abs() < 1e-15);
        assert!(back.knots()[0].y_minus.abs() < 1e-15);
    }

    #[test]
    fn cross_matches_pointwise_solve() {
        // solve (x+f(x))/2 = t by bisection on x
        let f = random_map(&mut stream(1, 0), 12, 0.3, 0.2);
        let c = f.cross_transform();
        for t in grid(200) {
            let (mut lo, mut hi) = (t - 2.0, t + 2.0);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if 0.5 * (m + f.eval(m, Side::Left)) > t {
                    hi = m;
                } else {
                    lo = m;
                }
            }
            let x = 0.5 * (lo + hi);
            assert!((c.eval(t) - (t - x)).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn inverse_cross_rejects_non_contraction() {
        assert!(matches!(Contraction::new(vec![(0.0, 0.0), (0.1, 0.3)]), Err(CircleMapError::NotContraction(0))));
    }

    #[test]
    fn validation_errors() {
        assert_eq!(MonotoneCircleMap::new(vec![]), Err(CircleMapError::Empty));
        assert!(MonotoneCircleMap::new(vec![Knot { x: 0.0, y_minus: 1.0, y_plus: 0.5 }]).is_err());
        assert!(MonotoneCircleMap::new(vec![Knot::cont(0.0, 0.0), Knot::cont(0.5, -0.1)]).is_err());
        assert!(MonotoneCircleMap::new(vec![Knot::cont(0.0, 0.0), Knot::cont(0.5, 1.2)]).is_err());
    }

    #[test]
    fn metric_examples() {
        let id = MonotoneCircleMap::identity();
        assert_eq!(metric_dd(&id, &id), 0.0);
        let t = MonotoneCircleMap::translation(-0.42);
        assert!((metric_dd(&id, &t) - 0.21).abs() < 1e-15);
    }

    #[test]
    fn metric_equals_dense_grid_sup() {
        let mut rng = stream(2, 0);
        for _ in 0..5 {
            let f = random_map(&mut rng, 20, 0.3, 0.2);
            let g = random_map(&mut rng, 30, 0.3, 0.2);
            let (cf, cg) = (f.cross_transform(), g.cross_transform());
            let exact = metric_dd(&f, &g);
            let mut dense = 0.0f64;
            for i in 0..1_000_000 {
                let t = i as f64 / 1e6;
                dense = dense.max((cf.eval(t) - cg.eval(t)).abs());
            }
            for &(t, _) in cf.knots().iter().chain(cg.knots()) {
                dense = dense.max((cf.eval(t) - cg.eval(t)).abs());
            }
            assert!((dense - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_examples() {
        let f = random_map(&mut stream(3, 0), 9, 0.3, 0.3);
        let id = MonotoneCircleMap::identity();
        let c = compose(&id, &f).unwrap();
        for x in grid(300) {
            assert!((c.eval(x, Side::Right) - f.eval(x, Side::Right)).abs() < 1e-12);
            assert!((c.eval(x, Side::Left) - f.eval(x, Side::Left)).abs() < 1e-12);
        }
        let ab = compose(&MonotoneCircleMap::translation(0.7), &MonotoneCircleMap::translation(0.45)).unwrap();
        for x in grid(20) {
            assert!((ab.eval_right(x) - x - 1.15).abs() < 1e-14);
        }
        let flat = MonotoneCircleMap::new(vec![Knot::cont(0.0, 0.0), Knot::cont(0.2, 0.5), Knot::cont(0.4, 0.5)]).unwrap();
        let jump = MonotoneCircleMap::new(vec![Knot::cont(0.0, 0.0), Knot { x: 0.5, y_minus: 0.4, y_plus: 0.6 }]).unwrap();
        assert!(matches!(compose(&jump, &flat), Err(CircleMapError::DegenerateComposition { .. })));
    }

    #[test]
    fn invert_examples() {
        let id = MonotoneCircleMap::identity();
        assert!(metric_dd(&id.invert(), &id) < 1e-15);
        let t = MonotoneCircleMap::translation(0.3).invert();
        for x in grid(20) {
            assert!((t.eval_right(x) - (x - 0.3)).abs() < 1e-15);
        }
        // jumps and flats swap roles
        let g = MonotoneCircleMap::corollary_family(0.1).invert();
        assert!((g.eval(0.05, Side::Right)).abs() < 1e-15);
        assert!((g.eval(0.1, Side::Right) - 0.1).abs() < 1e-15);
        assert!((g.eval(0.1, Side::Left)).abs() < 1e-15);
    }

    #[test]
    fn rotate_examples() {
        let f = random_map(&mut stream(4, 0), 7, 0.3, 0.3);
        assert_eq!(f.rotate(0.0), f);
        let id = MonotoneCircleMap::identity().rotate(0.37);
        for x in grid(30) {
            assert!((id.eval_right(x) - x).abs() < 1e-15);
        }
        let a = f.rotate(0.3).rotate(0.9);
        let b = f.rotate(0.2);
        let c = f.rotate(-0.8);
        for x in grid(301) {
            assert!((a.eval_right(x) - b.eval_right(x)).abs() < 1e-12);
            assert!((c.eval_right(x) - b.eval_right(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn corollary_family_functionals() {
        let f = MonotoneCircleMap::corollary_family(0.1);
        let fl = f.functionals().unwrap();
        assert!((fl.rho - 3000.0).abs() / 3000.0 < 1e-12);
        assert!((fl.beta - 15.0).abs() < 1e-10);
        assert!(fl.lambda_loc <= 0.1);
        assert!((fl.sup_tilde - 0.1).abs() < 1e-15);
        assert_eq!(MonotoneCircleMap::identity().functionals(), Err(CircleMapError::IdentityMap));
    }

    #[test]
    fn correlation_matches_quadrature() {
        let f = random_map(&mut stream(5, 0), 15, 0.3, 0.2);
        for &a in &[0.0, 0.013, 0.25, 0.61] {
            for &abs in &[false, true] {
                let n = 400_000;
                let mut q = 0.0;
                for i in 0..n {
                    let x = (i as f64 + 0.5) / n as f64;
                    let p = f.tilde(x + a, Side::Right) * f.tilde(x, Side::Right);
                    q += if abs { p.abs() } else { p };
                }
                q /= n as f64;
                assert!((q - f.correlation(a, abs)).abs() < 1e-5, "a={a}");
            }
        }
    }

    #[test]
    fn localization_predicate_is_monotone() {
        let f = random_map(&mut stream(6, 0), 10, 0.3, 0.2);
        let opts = LocalizationOptions::default();
        let cand = f.localization_candidates(&opts);
        let rho = 1.0 / f.integral_tilde_sq();
        let c: Vec<f64> = cand.iter().map(|&a| rho * f.correlation(a, true)).collect();
        let mut prev = false;
        for i in 1..=1000 {
            let lam = 0.5 * i as f64 / 1000.0;
            let i0 = cand.partition_point(|&v| v < lam);
            let ok = c[i0..].iter().all(|&v| v <= lam);
            assert!(!prev || ok, "predicate not monotone at {lam}");
            prev = ok;
        }
    }

    #[test]
    fn text_round_trip() {
        let f = random_map(&mut stream(7, 0), 25, 0.3, 0.2);
        let g = MonotoneCircleMap::from_text(&f.to_text()).unwrap();
        assert_eq!(f, g);
        assert!(MonotoneCircleMap::from_text("# other\ncount 0\n").is_err());
    }

    #[test]
    fn bucket_eval_agrees() {
        let f = random_map(&mut stream(8, 0), 200, 0.3, 0.2);
        let b = BucketEval::new(&f);
        for i in 0..10_000 {
            let x = -3.0 + 7.0 * (i as f64 + 0.123) / 10_000.0;
            assert!((b.eval(x) - f.eval_right(x)).abs() < 1e-12);
        }
    }

    fn arb_map() -> impl Strategy<Value = MonotoneCircleMap> {
        (any::<u64>(), 1usize..40).prop_map(|(s, n)| random_map(&mut stream(s, 99), n, 0.3, 0.25))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_round_trip(f in arb_map()) {
            let g = f.cross_transform().inverse_cross_transform();
            for x in grid(257) {
                prop_assert!((f.eval(x, Side::Right) - g.eval(x, Side::Right)).abs() < 1e-9);
            }
            for k in f.knots() {
                prop_assert!((f.eval(k.x, Side::Left) - g.eval(k.x, Side::Left)).abs() < 1e-9);
                prop_assert!((f.eval(k.x, Side::Right) - g.eval(k.x, Side::Right)).abs() < 1e-9);
            }
        }

        #[test]
        fn prop_cross_is_contraction(f in arb_map()) {
            prop_assert!(f.cross_transform().lipschitz() <= 1.0 + 1e-9);
        }

        #[test]
        fn prop_inverse_negates_cross(f in arb_map()) {
            let d = f.invert().cross_transform().sup_distance(&f.cross_transform().neg());
            prop_assert!(d < 1e-9);
            prop_assert!(metric_dd(&f.invert().invert(), &f) < 1e-9);
        }

        #[test]
        fn prop_inversion_isometry(f in arb_map(), g in arb_map()) {
            prop_assert!((metric_dd(&f.invert(), &g.invert()) - metric_dd(&f, &g)).abs() < 1e-9);
        }

        #[test]
        fn prop_sandwich_characterizes_metric(f in arb_map(), g in arb_map()) {
            let eps = metric_dd(&f, &g);
            let (_, xw, _) = metric_witness(&f, &g);
            let mut xs: Vec<f64> = grid(512).collect();
            xs.extend(f.knots().iter().chain(g.knots()).map(|k| k.x));
            xs.push(xw);
            prop_assert!(sandwich_violation(&f, &g, eps, &xs) <= 1e-9);
            prop_assert!(sandwich_violation(&g, &f, eps, &xs) <= 1e-9);
            if eps > 1e-6 {
                prop_assert!(sandwich_violation(&f, &g, eps - 1e-6, &[xw]) > 1e-6 - 1e-9);
            }
        }

        #[test]
        fn prop_distance_to_identity(f in arb_map()) {
            let d = metric_dd(&f, &MonotoneCircleMap::identity());
            prop_assert!((2.0 * d - f.sup_tilde()).abs() < 1e-9);
        }

        #[test]
        fn prop_sup_bound(f in arb_map()) {
            let rho = 1.0 / f.integral_tilde_sq();
            if rho >= 1.0 {
                prop_assert!(f.sup_tilde() <= 2.0 * rho.powf(-1.0 / 3.0) + 1e-9);
            }
        }

        #[test]
        fn prop_compose_associative(s in any::<u64>()) {
            let mut rng = stream(s, 5);
            let f = random_map(&mut rng, 8, 0.3, 0.0);
            let g = random_map(&mut rng, 8, 0.3, 0.0);
            let h = random_map(&mut rng, 8, 0.3, 0.0);
            let a = compose(&compose(&h, &g).unwrap(), &f).unwrap();
            let b = compose(&h, &compose(&g, &f).unwrap()).unwrap();
            prop_assert!(metric_dd(&a, &b) < 1e-9);
            for x in grid(101) {
                let direct = h.eval_right(g.eval_right(f.eval_right(x)));
                prop_assert!((a.eval_right(x) - direct).abs() < 1e-9);
            }
        }

        #[test]
        fn prop_degree_one(f in arb_map(), x in -5.0f64..5.0, n in -3i32..3) {
            let lhs = f.eval(x + n as f64, Side::Right);
            prop_assert!((lhs - f.eval(x, Side::Right) - n as f64).abs() < 1e-9);
        }
    }
}
