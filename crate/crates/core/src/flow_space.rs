//! Weak flows over 𝒟 indexed by intervals, their verification, time
//! reversal, and the time-warped distance between two flows.

use crate::circle_maps::{compose, metric_dd, CircleMapError, Contraction, MonotoneCircleMap, Side};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("interval [{lo}, {hi}] leaves the horizon [{h0}, {h1}]")]
    OutOfHorizon { lo: f64, hi: f64, h0: f64, h1: f64 },
    #[error(transparent)]
    Map(#[from] CircleMapError),
    #[error("invalid event list: {0}")]
    InvalidEvents(String),
    #[error("split {0} is not a concatenation")]
    InvalidSplit(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Self {
        Interval { lo, hi, lo_closed, hi_closed }
    }
    /// (s, t]
    pub fn oc(s: f64, t: f64) -> Self {
        Interval::new(s, t, false, true)
    }
    pub fn closed(s: f64, t: f64) -> Self {
        Interval::new(s, t, true, true)
    }
    pub fn open(s: f64, t: f64) -> Self {
        Interval::new(s, t, false, false)
    }
    pub fn singleton(t: f64) -> Self {
        Interval::closed(t, t)
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn contains(&self, t: f64) -> bool {
        let l = if self.lo_closed { t >= self.lo } else { t > self.lo };
        let r = if self.hi_closed { t <= self.hi } else { t < self.hi };
        l && r
    }

    pub fn neg(&self) -> Interval {
        Interval::new(-self.hi, -self.lo, self.hi_closed, self.lo_closed)
    }

    /// Splits at u; the point u goes to the left part iff `u_left`.
    pub fn split_at(&self, u: f64, u_left: bool) -> (Interval, Interval) {
        (Interval::new(self.lo, u, self.lo_closed, u_left), Interval::new(u, self.hi, !u_left, self.hi_closed))
    }

    /// True if self = a ⊕ b (disjoint, adjacent, union is self).
    pub fn is_concatenation(&self, a: &Interval, b: &Interval) -> bool {
        a.lo == self.lo
            && a.lo_closed == self.lo_closed
            && b.hi == self.hi
            && b.hi_closed == self.hi_closed
            && a.hi == b.lo
            && a.hi_closed != b.lo_closed
    }

    /// R = sup I ∨ (−inf I) and the cutoff 0 ∨ (n+1−R) ∧ 1.
    pub fn cutoff(&self, n: u32) -> f64 {
        let r = self.hi.max(-self.lo);
        (n as f64 + 1.0 - r).clamp(0.0, 1.0)
    }
}

pub trait IntervalFlow {
    fn horizon(&self) -> (f64, f64);
    fn eval(&self, i: &Interval, x: f64, side: Side) -> Result<f64, FlowError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub rotation: f64,
    pub map: usize,
}

/// A flow composing rotated copies of basic maps at event times, with the
/// drift rule X_I(x) = X^β_I(x + β inf I) − β sup I.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventFlow {
    maps: Vec<MonotoneCircleMap>,
    events: Vec<Event>,
    beta: f64,
    horizon: (f64, f64),
}

impl EventFlow {
    pub fn new(
        maps: Vec<MonotoneCircleMap>,
        events: Vec<Event>,
        beta: f64,
        horizon: (f64, f64),
    ) -> Result<Self, FlowError> {
        if !(horizon.0 <= horizon.1) {
            return Err(FlowError::InvalidEvents("horizon reversed".into()));
        }
        for (i, e) in events.iter().enumerate() {
            if e.map >= maps.len() {
                return Err(FlowError::InvalidEvents(format!("event {i} refers to missing map {}", e.map)));
            }
            if i > 0 && e.time <= events[i - 1].time {
                return Err(FlowError::InvalidEvents(format!("event {i} not strictly after its predecessor")));
            }
            if e.time < horizon.0 || e.time > horizon.1 {
                return Err(FlowError::InvalidEvents(format!("event {i} outside horizon")));
            }
        }
        Ok(EventFlow { maps, events, beta, horizon })
    }

    pub fn empty(horizon: (f64, f64)) -> Self {
        EventFlow { maps: vec![], events: vec![], beta: 0.0, horizon }
    }

    pub fn maps(&self) -> &[MonotoneCircleMap] {
        &self.maps
    }
    pub fn events(&self) -> &[Event] {
        &self.events
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Indices [a, b) of the events lying in I.
    pub fn event_range(&self, i: &Interval) -> (usize, usize) {
        if i.is_empty() {
            return (0, 0);
        }
        let a = if i.lo_closed {
            self.events.partition_point(|e| e.time < i.lo)
        } else {
            self.events.partition_point(|e| e.time <= i.lo)
        };
        let b = if i.hi_closed {
            self.events.partition_point(|e| e.time <= i.hi)
        } else {
            self.events.partition_point(|e| e.time < i.hi)
        };
        (a, b.max(a))
    }

    fn check(&self, i: &Interval) -> Result<(), FlowError> {
        if !i.is_empty() && (i.lo < self.horizon.0 || i.hi > self.horizon.1) {
            return Err(FlowError::OutOfHorizon { lo: i.lo, hi: i.hi, h0: self.horizon.0, h1: self.horizon.1 });
        }
        Ok(())
    }

    /// Applies events [a, b) to a value in the drifted frame.
    pub fn apply_range(&self, a: usize, b: usize, mut y: f64, side: Side) -> f64 {
        for e in &self.events[a..b] {
            let w = e.rotation - self.beta * e.time;
            y = w + self.maps[e.map].eval(y - w, side);
        }
        y
    }

    /// φ_I as an explicit element of 𝒟.
    pub fn map_on(&self, i: &Interval) -> Result<MonotoneCircleMap, FlowError> {
        self.check(i)?;
        if i.is_empty() {
            return Ok(MonotoneCircleMap::identity());
        }
        let (a, b) = self.event_range(i);
        let mut m = MonotoneCircleMap::translation(self.beta * i.lo);
        for e in &self.events[a..b] {
            let w = e.rotation - self.beta * e.time;
            m = compose(&self.maps[e.map].rotate(w), &m)?;
        }
        Ok(compose(&MonotoneCircleMap::translation(-self.beta * i.hi), &m)?)
    }

    /// Composition of the rotated event maps [a, b) without drift terms.
    fn range_map(&self, a: usize, b: usize) -> Result<MonotoneCircleMap, FlowError> {
        let mut m = MonotoneCircleMap::identity();
        for e in &self.events[a..b] {
            let w = e.rotation - self.beta * e.time;
            m = compose(&self.maps[e.map].rotate(w), &m)?;
        }
        Ok(m)
    }

    pub fn time_reverse(&self) -> EventFlow {
        let maps = self.maps.iter().map(|m| m.invert()).collect();
        let events = self.events.iter().rev().map(|e| Event { time: -e.time, rotation: e.rotation, map: e.map }).collect();
        EventFlow { maps, events, beta: -self.beta, horizon: (-self.horizon.1, -self.horizon.0) }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# event-flow v1");
        let _ = writeln!(s, "beta {:e}", self.beta);
        let _ = writeln!(s, "horizon {:e} {:e}", self.horizon.0, self.horizon.1);
        let _ = writeln!(s, "maps {}", self.maps.len());
        for m in &self.maps {
            s.push_str(&m.to_text());
        }
        let _ = writeln!(s, "events {}", self.events.len());
        for e in &self.events {
            let _ = writeln!(s, "{:e} {:e} {}", e.time, e.rotation, e.map);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, FlowError> {
        let lines: Vec<&str> = text.lines().collect();
        let perr = |line: usize, msg: &str| FlowError::Parse { line: line + 1, msg: msg.into() };
        let mut p = 0usize;
        let next = |p: &mut usize| -> Result<(usize, &str), FlowError> {
            while *p < lines.len() && lines[*p].trim().is_empty() {
                *p += 1;
            }
            if *p >= lines.len() {
                return Err(perr(*p, "unexpected end of input"));
            }
            *p += 1;
            Ok((*p - 1, lines[*p - 1].trim()))
        };
        let (ln, h) = next(&mut p)?;
        if h != "# event-flow v1" {
            return Err(perr(ln, "unknown header"));
        }
        let field = |ln: usize, l: &str, key: &str| -> Result<Vec<String>, FlowError> {
            let rest = l.strip_prefix(key).ok_or_else(|| perr(ln, &format!("expected {key}")))?;
            Ok(rest.split_whitespace().map(String::from).collect())
        };
        let num = |ln: usize, t: &str| t.parse::<f64>().map_err(|_| perr(ln, "bad number"));
        let (ln, l) = next(&mut p)?;
        let beta = num(ln, field(ln, l, "beta ")?.first().map(String::as_str).unwrap_or(""))?;
        let (ln, l) = next(&mut p)?;
        let hz = field(ln, l, "horizon ")?;
        if hz.len() != 2 {
            return Err(perr(ln, "horizon needs two numbers"));
        }
        let horizon = (num(ln, &hz[0])?, num(ln, &hz[1])?);
        let (ln, l) = next(&mut p)?;
        let nmaps: usize = field(ln, l, "maps ")?.first().and_then(|v| v.parse().ok()).ok_or_else(|| perr(ln, "bad map count"))?;
        let mut maps = Vec::with_capacity(nmaps);
        for _ in 0..nmaps {
            let (ln0, head) = next(&mut p)?;
            let (ln1, count) = next(&mut p)?;
            let c: usize = count.strip_prefix("count ").and_then(|v| v.trim().parse().ok()).ok_or_else(|| perr(ln1, "bad count"))?;
            let mut block = format!("{head}\n{count}\n");
            for _ in 0..c {
                let (_, l) = next(&mut p)?;
                block.push_str(l);
                block.push('\n');
            }
            maps.push(MonotoneCircleMap::from_text(&block).map_err(|e| perr(ln0, &e.to_string()))?);
        }
        let (ln, l) = next(&mut p)?;
        let nev: usize = field(ln, l, "events ")?.first().and_then(|v| v.parse().ok()).ok_or_else(|| perr(ln, "bad event count"))?;
        let mut events = Vec::with_capacity(nev);
        for _ in 0..nev {
            let (ln, l) = next(&mut p)?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(perr(ln, "expected time rotation map"));
            }
            let map = t[2].parse().map_err(|_| perr(ln, "bad map index"))?;
            events.push(Event { time: num(ln, t[0])?, rotation: num(ln, t[1])?, map });
        }
        EventFlow::new(maps, events, beta, horizon)
    }
}

impl IntervalFlow for EventFlow {
    fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    fn eval(&self, i: &Interval, x: f64, side: Side) -> Result<f64, FlowError> {
        self.check(i)?;
        if i.is_empty() {
            return Ok(x);
        }
        let (a, b) = self.event_range(i);
        let y = self.apply_range(a, b, x + self.beta * i.lo, side);
        Ok(y - self.beta * i.hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub split: usize,
    pub x: f64,
    /// φ⁻_{I₂}∘φ⁻_{I₁}, φ⁻_I, φ⁺_I, φ⁺_{I₂}∘φ⁺_{I₁}
    pub terms: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFlowReport {
    pub checks: usize,
    pub max_gap: f64,
    pub first_violation: Option<Violation>,
}

impl WeakFlowReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Checks φ⁻_{I₂}∘φ⁻_{I₁} ≤ φ⁻_I ≤ φ⁺_I ≤ φ⁺_{I₂}∘φ⁺_{I₁} at every x of the grid.
pub fn verify_weak_flow<F: IntervalFlow + ?Sized>(
    flow: &F,
    splits: &[(Interval, Interval, Interval)],
    xs: &[f64],
    tol: f64,
) -> Result<WeakFlowReport, FlowError> {
    let mut report = WeakFlowReport { checks: 0, max_gap: 0.0, first_violation: None };
    for (k, (i, i1, i2)) in splits.iter().enumerate() {
        if !i.is_concatenation(i1, i2) {
            return Err(FlowError::InvalidSplit(k));
        }
        for &x in xs {
            let lo = flow.eval(i2, flow.eval(i1, x, Side::Left)?, Side::Left)?;
            let m = flow.eval(i, x, Side::Left)?;
            let p = flow.eval(i, x, Side::Right)?;
            let hi = flow.eval(i2, flow.eval(i1, x, Side::Right)?, Side::Right)?;
            report.checks += 1;
            let gap = (lo - m).max(m - p).max(p - hi);
            report.max_gap = report.max_gap.max(gap);
            if gap > tol && report.first_violation.is_none() {
                report.first_violation = Some(Violation { split: k, x, terms: [lo, m, p, hi] });
            }
        }
    }
    Ok(report)
}

/// Increasing piecewise-linear homeomorphism of ℝ with slope 1 outside its knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeChange {
    pub knots: Vec<(f64, f64)>,
}

impl TimeChange {
    pub fn identity() -> Self {
        TimeChange { knots: vec![] }
    }

    pub fn shift(h: f64) -> Self {
        TimeChange { knots: vec![(0.0, h)] }
    }

    pub fn apply(&self, t: f64) -> f64 {
        let k = &self.knots;
        if k.is_empty() {
            return t;
        }
        if t <= k[0].0 {
            return k[0].1 + (t - k[0].0);
        }
        let last = k[k.len() - 1];
        if t >= last.0 {
            return last.1 + (t - last.0);
        }
        let j = k.partition_point(|p| p.0 <= t);
        let (u0, v0) = k[j - 1];
        let (u1, v1) = k[j];
        v0 + (v1 - v0) * (t - u0) / (u1 - u0)
    }

    pub fn inverse(&self) -> TimeChange {
        TimeChange { knots: self.knots.iter().map(|&(u, v)| (v, u)).collect() }
    }

    pub fn is_increasing(&self) -> bool {
        self.knots.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1)
    }

    /// γ(λ) = sup|λ(t)−t| ∨ sup|log slope|.
    pub fn gamma(&self) -> f64 {
        let mut g = 0.0f64;
        for &(u, v) in &self.knots {
            g = g.max((v - u).abs());
        }
        for w in self.knots.windows(2) {
            let s = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            g = g.max(s.ln().abs());
        }
        g
    }

    pub fn map_interval(&self, i: &Interval) -> Interval {
        Interval::new(self.apply(i.lo), self.apply(i.hi), i.lo_closed, i.hi_closed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDistanceReport {
    pub n: u32,
    /// γ(λ) ∨ sup_I ‖χ_n(I)φ_I^× − χ_n(λI)ψ_{λI}^×‖ for the witness λ.
    pub value: f64,
    pub identity_value: f64,
    pub gamma: f64,
    pub sup_term: f64,
    pub witness: TimeChange,
    /// False when the drift makes the sup over intervals a sampled lower estimate.
    pub exact_sup: bool,
}

struct DistanceCtx<'a> {
    phi: &'a EventFlow,
    psi: &'a EventFlow,
    n: u32,
    phi_cache: HashMap<(usize, usize), Contraction>,
    psi_cache: HashMap<(usize, usize), Contraction>,
    memo: HashMap<(usize, usize, usize, usize, u64, u64), f64>,
}

fn range_contraction(
    flow: &EventFlow,
    cache: &mut HashMap<(usize, usize), Contraction>,
    r: (usize, usize),
) -> Result<Contraction, FlowError> {
    if let Some(c) = cache.get(&r) {
        return Ok(c.clone());
    }
    let c = flow.range_map(r.0, r.1)?.cross_transform();
    cache.insert(r, c.clone());
    Ok(c)
}

impl<'a> DistanceCtx<'a> {
    /// ‖χ_n(I)φ_I^× − χ_n(J)ψ_J^×‖ for J = λ(I).
    fn term(&mut self, i: &Interval, j: &Interval) -> Result<f64, FlowError> {
        let c1 = if i.is_empty() { 0.0 } else { i.cutoff(self.n) };
        let c2 = if j.is_empty() { 0.0 } else { j.cutoff(self.n) };
        if c1 == 0.0 && c2 == 0.0 {
            return Ok(0.0);
        }
        let drift = self.phi.beta != 0.0 || self.psi.beta != 0.0;
        if drift {
            let a = if c1 > 0.0 { self.phi.map_on(i)?.cross_transform() } else { Contraction::constant(0.0) };
            let b = if c2 > 0.0 { self.psi.map_on(j)?.cross_transform() } else { Contraction::constant(0.0) };
            return Ok(scaled_distance(c1, &a, c2, &b));
        }
        let r1 = if c1 > 0.0 { self.phi.event_range(i) } else { (0, 0) };
        let r2 = if c2 > 0.0 { self.psi.event_range(j) } else { (0, 0) };
        let key = (r1.0, r1.1, r2.0, r2.1, c1.to_bits(), c2.to_bits());
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let a = range_contraction(self.phi, &mut self.phi_cache, r1)?;
        let b = range_contraction(self.psi, &mut self.psi_cache, r2)?;
        let v = scaled_distance(c1, &a, c2, &b);
        self.memo.insert(key, v);
        Ok(v)
    }

    fn sup_term(&mut self, lam: &TimeChange) -> Result<f64, FlowError> {
        let cand = self.candidates(lam);
        let inv = lam.inverse();
        let mut best = 0.0f64;
        let nn = self.n as f64 + 1.0;
        for (ai, &lo) in cand.iter().enumerate() {
            let mut his: Vec<f64> = cand[ai..].to_vec();
            his.push(-lo);
            his.push(inv.apply(-lam.apply(lo)));
            for &hi in &his {
                if hi < lo || hi > nn.max(inv.apply(nn)) || lo < (-nn).min(inv.apply(-nn)) {
                    continue;
                }
                for (lc, hc) in [(true, true), (true, false), (false, true), (false, false)] {
                    let i = Interval::new(lo, hi, lc, hc);
                    if i.is_empty() {
                        continue;
                    }
                    let j = lam.map_interval(&i);
                    best = best.max(self.term(&i, &j)?);
                }
            }
        }
        Ok(best)
    }

    /// Endpoint candidates: event times, their λ-preimages, cutoff kinks,
    /// time-change knots, negatives, and the roots of λ(t)+λ(−t).
    fn candidates(&self, lam: &TimeChange) -> Vec<f64> {
        let inv = lam.inverse();
        let n = self.n as f64;
        let mut c: Vec<f64> = Vec::new();
        let lim = n + 1.0 + lam.gamma() + 1.0;
        for e in &self.phi.events {
            c.push(e.time);
        }
        for e in &self.psi.events {
            c.push(inv.apply(e.time));
        }
        for v in [n, n + 1.0, -n, -(n + 1.0)] {
            c.push(v);
            c.push(inv.apply(v));
        }
        for &(u, _) in &lam.knots {
            c.push(u);
        }
        let base: Vec<f64> = c.clone();
        for v in base {
            c.push(-v);
            c.push(inv.apply(-lam.apply(v)));
        }
        // zeros of h(t) = λ(t) + λ(−t) between its breakpoints
        let mut bp: Vec<f64> = lam.knots.iter().flat_map(|&(u, _)| [u, -u]).collect();
        bp.push(-lim);
        bp.push(lim);
        bp.sort_by(f64::total_cmp);
        let h = |t: f64| lam.apply(t) + lam.apply(-t);
        for w in bp.windows(2) {
            let (a, b) = (h(w[0]), h(w[1]));
            if a == 0.0 {
                c.push(w[0]);
            }
            if (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0) {
                c.push(w[0] + (w[1] - w[0]) * a / (a - b));
            }
        }
        c.retain(|v| v.is_finite() && v.abs() <= lim);
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

fn scaled_distance(c1: f64, a: &Contraction, c2: f64, b: &Contraction) -> f64 {
    let mut m = 0.0f64;
    for &(t, s) in a.knots() {
        m = m.max((c1 * s - c2 * b.eval(t)).abs());
    }
    for &(t, s) in b.knots() {
        m = m.max((c1 * a.eval(t) - c2 * s).abs());
    }
    m
}

/// Objective γ(λ) ∨ sup-term for a fixed λ.
pub fn distance_for(phi: &EventFlow, psi: &EventFlow, n: u32, lam: &TimeChange) -> Result<(f64, f64), FlowError> {
    let mut ctx = DistanceCtx {
        phi,
        psi,
        n,
        phi_cache: HashMap::new(),
        psi_cache: HashMap::new(),
        memo: HashMap::new(),
    };
    let g = lam.gamma();
    let s = ctx.sup_term(lam)?;
    Ok((g, s))
}

/// Upper bound for d_D^{(n)}(φ, ψ) by coordinate descent over piecewise-linear
/// time changes with knots at φ's event times plus `knot_budget` extra knots.
pub fn flow_distance(phi: &EventFlow, psi: &EventFlow, n: u32, knot_budget: usize) -> Result<FlowDistanceReport, FlowError> {
    let need = n as f64 + 1.0;
    for f in [phi, psi] {
        let h = f.horizon();
        if h.0 > -need || h.1 < need {
            return Err(FlowError::OutOfHorizon { lo: -need, hi: need, h0: h.0, h1: h.1 });
        }
    }
    let mut ctx = DistanceCtx {
        phi,
        psi,
        n,
        phi_cache: HashMap::new(),
        psi_cache: HashMap::new(),
        memo: HashMap::new(),
    };
    let id = TimeChange::identity();
    let id_sup = ctx.sup_term(&id)?;
    let mut best = (id_sup, id.clone(), 0.0, id_sup);

    let window: Vec<f64> =
        phi.events.iter().map(|e| e.time).filter(|t| t.abs() <= need + 1.0).collect();
    let mut starts: Vec<TimeChange> = Vec::new();
    let mut knots: Vec<(f64, f64)> = window.iter().map(|&t| (t, t)).collect();
    let mut extra = Vec::new();
    for k in 0..knot_budget {
        extra.push(-need + 2.0 * need * (k as f64 + 0.5) / knot_budget as f64);
    }
    knots.extend(extra.iter().map(|&t| (t, t)));
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    knots.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12);
    starts.push(TimeChange { knots: knots.clone() });
    // match events of φ to events of ψ in order inside the window
    let psi_window: Vec<f64> = psi.events.iter().map(|e| e.time).filter(|t| t.abs() <= need + 1.0).collect();
    if psi_window.len() == window.len() && !window.is_empty() {
        let mut matched: Vec<(f64, f64)> = window.iter().cloned().zip(psi_window.iter().cloned()).collect();
        let shift = matched[0].1 - matched[0].0;
        for &t in &extra {
            if t < matched[0].0 || t > matched[matched.len() - 1].0 {
                continue;
            }
            let j = matched.partition_point(|p| p.0 <= t);
            let (u0, v0) = matched[j - 1];
            let (u1, v1) = matched[j];
            matched.push((t, v0 + (v1 - v0) * (t - u0) / (u1 - u0)));
            matched.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let _ = shift;
        let tc = TimeChange { knots: matched };
        if tc.is_increasing() {
            starts.push(tc);
        }
    }

    for start in starts {
        let mut lam = start;
        let mut cur = {
            let g = lam.gamma();
            g.max(ctx.sup_term(&lam)?)
        };
        let mut step = 0.25;
        for _sweep in 0..6 {
            let mut improved = false;
            for k in 0..lam.knots.len() {
                let lo = if k == 0 { f64::NEG_INFINITY } else { lam.knots[k - 1].1 };
                let hi = if k + 1 == lam.knots.len() { f64::INFINITY } else { lam.knots[k + 1].1 };
                let v0 = lam.knots[k].1;
                for &d in &[-step, -step / 4.0, step / 4.0, step] {
                    let v = v0 + d;
                    if !(v > lo && v < hi) {
                        continue;
                    }
                    let mut trial = lam.clone();
                    trial.knots[k].1 = v;
                    let g = trial.gamma();
                    if g >= cur {
                        continue;
                    }
                    let val = g.max(ctx.sup_term(&trial)?);
                    if val < cur {
                        cur = val;
                        lam = trial;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if cur < best.0 {
            let g = lam.gamma();
            let s = ctx.sup_term(&lam)?;
            best = (cur, lam, g, s);
        }
    }
    Ok(FlowDistanceReport {
        n,
        value: best.0,
        identity_value: id_sup,
        gamma: best.2,
        sup_term: best.3,
        witness: best.1,
        exact_sup: phi.beta == 0.0 && psi.beta == 0.0,
    })
}

/// Σ_{n ≤ n_max} 2^{−n}(d_D^{(n)} ∧ 1); the omitted tail is at most 2^{−n_max}.
pub fn flow_metric(phi: &EventFlow, psi: &EventFlow, n_max: u32, knot_budget: usize) -> Result<(f64, f64), FlowError> {
    let mut s = 0.0;
    for n in 1..=n_max {
        s += 0.5f64.powi(n as i32) * flow_distance(phi, psi, n, knot_budget)?.value.min(1.0);
    }
    Ok((s, 0.5f64.powi(n_max as i32)))
}

/// d_𝒟(φ_I, ψ_I) with both cutoffs applied and λ = id, by direct composition.
pub fn direct_term(phi: &EventFlow, psi: &EventFlow, n: u32, i: &Interval) -> Result<f64, FlowError> {
    if i.is_empty() {
        return Ok(0.0);
    }
    let c = i.cutoff(n);
    let a = phi.map_on(i)?;
    let b = psi.map_on(i)?;
    if c == 1.0 {
        return Ok(metric_dd(&a, &b));
    }
    Ok(scaled_distance(c, &a.cross_transform(), c, &b.cross_transform()))
}
