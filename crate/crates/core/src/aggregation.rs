//! Planar aggregation: slit and lune particle maps, clusters grown by
//! composing rotated copies, the induced boundary circle maps and their flow.

use crate::circle_maps::{compose, BucketEval, CircleMapError, Knot, LocalizationOptions, MonotoneCircleMap, Side};
use crate::flow_space::{Event, EventFlow, FlowError, Interval, IntervalFlow};
use crate::rng;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

type C64 = Complex64;
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggError {
    #[error("particle diameter {0} not in (0,1]")]
    InvalidDelta(f64),
    #[error("point ({re}, {im}) lies in the closed cluster")]
    InsideCluster { re: f64, im: f64 },
    #[error("mesh point budget {cap} exhausted with {open} gaps above tolerance")]
    MeshBudgetExceeded { cap: usize, open: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Map(#[from] CircleMapError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticleKind {
    Slit,
    Lune,
}

impl std::str::FromStr for ParticleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "slit" => Ok(ParticleKind::Slit),
            "lune" => Ok(ParticleKind::Lune),
            _ => Err(format!("unknown particle kind `{s}`")),
        }
    }
}

impl std::fmt::Display for ParticleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ParticleKind::Slit => "slit",
            ParticleKind::Lune => "lune",
        })
    }
}

/// A particle attached to the unit disc at 1 together with G (exterior of
/// disc plus particle onto exterior of disc) and F = G⁻¹.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleMap {
    pub kind: ParticleKind,
    pub delta: f64,
    /// slit: δ/(2+δ), the slit height after the first Möbius step
    pub s: f64,
    /// slit: s²
    pub t: f64,
    /// slit: 1/√(1−t)
    pub scale: f64,
    /// lune: half-angle of the base arc
    pub theta: f64,
    /// lune: power opening the exterior corner
    pub a: f64,
    /// lune: centre and radius of the outer arc
    pub center: f64,
    pub radius: f64,
}

/// Root with Im ≥ 0; real roots take the sign of `hint`.
fn sqrt_upper(v: C64, hint: f64) -> C64 {
    let r = v.sqrt();
    if r.im < 0.0 || (r.im == 0.0 && hint < 0.0) {
        -r
    } else {
        r
    }
}

/// Rounding can leave images of boundary points just below the real axis.
fn closed_upper(w: C64) -> C64 {
    if w.im > 0.0 {
        w
    } else {
        C64::new(w.re, 0.0)
    }
}

fn ln_1p(x: C64) -> C64 {
    if x.norm() < 1e-4 {
        x - x * x / 2.0 + x * x * x / 3.0 - x * x * x * x / 4.0
    } else {
        (x + 1.0).ln()
    }
}

fn exp_m1(x: C64) -> C64 {
    if x.norm() < 1e-4 {
        x + x * x / 2.0 + x * x * x / 6.0 + x * x * x * x / 24.0
    } else {
        x.exp() - 1.0
    }
}

impl ParticleMap {
    pub fn new(kind: ParticleKind, delta: f64) -> Result<Self, AggError> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(AggError::InvalidDelta(delta));
        }
        let mut p = ParticleMap { kind, delta, s: 0.0, t: 0.0, scale: 1.0, theta: 0.0, a: 1.0, center: 0.0, radius: 0.0 };
        match kind {
            ParticleKind::Slit => {
                p.s = delta / (2.0 + delta);
                p.t = p.s * p.s;
                p.scale = 1.0 / (1.0 - p.t).sqrt();
                p.theta = 2.0 * (p.scale * p.s).atan();
            }
            ParticleKind::Lune => {
                let gamma = (delta / 2.0).acos();
                p.theta = 2.0 * (delta * (1.0 - delta * delta / 4.0).sqrt()).atan();
                p.a = PI / (PI - gamma);
                let sg = (p.theta + gamma).sin();
                p.center = gamma.sin() / sg;
                p.radius = p.theta.sin() / sg;
            }
        }
        Ok(p)
    }

    pub fn slit(delta: f64) -> Result<Self, AggError> {
        Self::new(ParticleKind::Slit, delta)
    }

    pub fn lune(delta: f64) -> Result<Self, AggError> {
        Self::new(ParticleKind::Lune, delta)
    }

    /// Half-angle of the arc the particle's boundary is sent to by G.
    pub fn image_half_angle(&self) -> f64 {
        match self.kind {
            ParticleKind::Slit => self.theta,
            ParticleKind::Lune => self.a * self.theta,
        }
    }

    /// True when z lies in the closed disc or the closed particle.
    pub fn contains(&self, z: C64) -> bool {
        let eps = 1e-13;
        if z.norm() < 1.0 - eps {
            return true;
        }
        match self.kind {
            ParticleKind::Slit => z.im.abs() <= eps && z.re >= 1.0 - eps && z.re <= 1.0 + self.delta + eps,
            ParticleKind::Lune => z.norm() <= 1.0 + eps && (z - self.center).norm() <= self.radius + eps && z.re > 0.0
                || (z - self.center).norm() < self.radius - eps,
        }
    }

    /// G at z outside the cluster; boundary points of the disc are allowed.
    pub fn g_map(&self, z: C64) -> Result<C64, AggError> {
        if z.norm() < 1.0 - 1e-13 || self.interior_of_particle(z) {
            return Err(AggError::InsideCluster { re: z.re, im: z.im });
        }
        Ok(self.g_unchecked(z))
    }

    fn interior_of_particle(&self, z: C64) -> bool {
        match self.kind {
            ParticleKind::Slit => z.im == 0.0 && z.re > 1.0 && z.re < 1.0 + self.delta,
            ParticleKind::Lune => (z - self.center).norm() < self.radius - 1e-13 && z.norm() > 1.0,
        }
    }

    fn g_unchecked(&self, z: C64) -> C64 {
        if (z + 1.0).norm() < 1e-300 {
            return C64::new(-1.0, 0.0);
        }
        match self.kind {
            ParticleKind::Slit => {
                let w1 = closed_upper(I * (z - 1.0) / (z + 1.0));
                let mut rad = w1 * w1 + self.t;
                if rad.norm() < 0.5 * self.t {
                    // near the tip: w1 − is formed from z, vanishing exactly there
                    let near = 2.0 * I * (z - (1.0 + self.delta)) / ((z + 1.0) * (2.0 + self.delta));
                    rad = (w1 + I * self.s) * near;
                }
                let w2 = sqrt_upper(rad, w1.re);
                let w3 = w2 * self.scale;
                (I + w3) / (I - w3)
            }
            ParticleKind::Lune => {
                let e = C64::from_polar(1.0, self.theta);
                let m1 = (e.conj() - e) / (z - e.conj());
                let one_minus_q = -exp_m1(ln_1p(m1) * self.a);
                let at = self.a * self.theta;
                I * (2.0 * at.sin()) / one_minus_q + C64::from_polar(1.0, -at)
            }
        }
    }

    /// F = G⁻¹ on |w| ≥ 1.
    pub fn f_map(&self, w: C64) -> C64 {
        match self.kind {
            ParticleKind::Slit => {
                if (w + 1.0).norm() < 1e-300 {
                    return C64::new(-1.0, 0.0);
                }
                let u = closed_upper(I * (w - 1.0) / (w + 1.0) / self.scale);
                let r = sqrt_upper(u * u - self.t, u.re);
                (I + r) / (I - r)
            }
            ParticleKind::Lune => {
                let at = self.a * self.theta;
                let ea = C64::from_polar(1.0, at);
                let q1 = (ea.conj() - ea) / (w - ea.conj());
                let m1 = exp_m1(ln_1p(q1) / self.a);
                let e = C64::from_polar(1.0, self.theta);
                if m1.norm() == 0.0 {
                    return C64::new(f64::INFINITY, 0.0);
                }
                e.conj() - (e - e.conj()) / m1
            }
        }
    }

    /// The particle point sent to 1 by G.
    pub fn tip(&self) -> C64 {
        match self.kind {
            ParticleKind::Slit => C64::new(1.0 + self.delta, 0.0),
            ParticleKind::Lune => C64::new(self.center + self.radius, 0.0),
        }
    }

    pub fn capacity_closed_form(&self) -> f64 {
        match self.kind {
            ParticleKind::Slit => -(-self.t).ln_1p(),
            ParticleKind::Lune => (self.a * self.theta.sin() / (self.a * self.theta).sin()).ln(),
        }
    }

    /// −lim log(G(R)/R), by Richardson extrapolation from R = 10³, 10⁴.
    pub fn capacity_extrapolated(&self) -> f64 {
        let l = |r: f64| (self.g_unchecked(C64::new(r, 0.0)) / r).norm().ln();
        let (l3, l4) = (l(1e3), l(1e4));
        -(10.0 * l4 - l3) / 9.0
    }

    /// g on the part of the circle that stays on the boundary, as a lift
    /// with values in (0,1). For the slit, x = 0 gives the right limit.
    pub fn boundary_value(&self, x: f64) -> f64 {
        match self.kind {
            ParticleKind::Slit => {
                let (s, c) = (PI * x).sin_cos();
                (self.scale * (s * s + self.t * c * c).sqrt()).atan2(c) / PI
            }
            ParticleKind::Lune => {
                let w = self.g_unchecked(C64::from_polar(1.0, 2.0 * PI * x));
                let mut a = w.im.atan2(w.re);
                if a < 0.0 {
                    a += 2.0 * PI;
                }
                a / (2.0 * PI)
            }
        }
    }

    /// g ∈ 𝒟 sampled on a mesh graded towards the attachment point, with the
    /// exact jump at 0 and, for the lune, flats over the covered base arc.
    pub fn boundary_map(&self, resolution: usize) -> Result<MonotoneCircleMap, AggError> {
        if resolution < 256 {
            return Err(AggError::InvalidParameter(format!("resolution {resolution} below 256")));
        }
        let m = resolution / 2;
        let x_lo = match self.kind {
            ParticleKind::Slit => 0.0,
            ParticleKind::Lune => self.theta / (2.0 * PI),
        };
        let j0 = self.image_half_angle() / (2.0 * PI);
        let half: Vec<(f64, f64)> = (0..=m)
            .map(|j| {
                let u = j as f64 / m as f64;
                let x = x_lo + (0.5 - x_lo) * u * u;
                let y = if j == 0 { j0 } else if j == m { 0.5 } else { self.boundary_value(x) };
                (x, y)
            })
            .collect();
        let mut knots = vec![Knot { x: 0.0, y_minus: -j0, y_plus: j0 }];
        let first = if self.kind == ParticleKind::Slit { 1 } else { 0 };
        for &(x, y) in &half[first..] {
            knots.push(Knot::cont(x, y));
        }
        for &(x, y) in half[first..m].iter().rev() {
            knots.push(Knot::cont(1.0 - x, 1.0 - y));
        }
        Ok(MonotoneCircleMap::new(knots)?)
    }
}

pub fn slit_g(delta: f64, z: C64) -> Result<C64, AggError> {
    ParticleMap::slit(delta)?.g_map(z)
}

pub fn lune_g(delta: f64, z: C64) -> Result<C64, AggError> {
    ParticleMap::lune(delta)?.g_map(z)
}

/// θ_δ, from G(1) = g₄(±λ√t).
pub fn slit_half_angle(delta: f64) -> Result<f64, AggError> {
    let p = ParticleMap::slit(delta)?;
    let w = p.g_unchecked(C64::new(1.0, 0.0));
    Ok(w.im.atan2(w.re).abs())
}

pub fn capacity(p: &ParticleMap) -> f64 {
    match p.kind {
        ParticleKind::Slit => p.capacity_extrapolated(),
        ParticleKind::Lune => p.capacity_closed_form(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub checked: usize,
    pub max_ratio: f64,
    /// (x, |g̃(x)|, bound) where the bound fails
    pub violations: Vec<(f64, f64, f64)>,
}

/// |g̃(x)| ≤ 3·cap/(4π sin πx) on the knots with cδ ≤ x ≤ 1−cδ.
pub fn lawler_envelope(p: &ParticleMap, g: &MonotoneCircleMap, c: f64) -> EnvelopeReport {
    let cap = p.capacity_closed_form();
    let lo = c * p.delta;
    let mut rep = EnvelopeReport { checked: 0, max_ratio: 0.0, violations: vec![] };
    for k in g.knots() {
        if k.x < lo || k.x > 1.0 - lo {
            continue;
        }
        let v = (k.y_plus - k.x).abs();
        let b = 3.0 * cap / (4.0 * PI * (PI * k.x).sin());
        rep.checked += 1;
        rep.max_ratio = rep.max_ratio.max(v / b);
        if v > b {
            rep.violations.push((k.x, v, b));
        }
    }
    rep
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embedding {
    /// arrival k at time k/ρ
    Deterministic,
    /// arrivals at the points of a rate-ρ Poisson process
    Poissonized,
}

/// The harmonic-measure flow: arrivals (time, angle) acting on the circle by
/// rotated copies of g.
#[derive(Clone, Debug)]
pub struct BoundaryFlow {
    pub g: MonotoneCircleMap,
    fast: BucketEval,
    pub rho: f64,
    pub times: Vec<f64>,
    pub angles: Vec<f64>,
    pub horizon: f64,
    pub embedding: Embedding,
}

impl BoundaryFlow {
    pub fn new(g: &MonotoneCircleMap, rho: f64, horizon: f64, embedding: Embedding, seed: u64) -> Result<Self, AggError> {
        if !(rho > 0.0 && horizon >= 0.0) {
            return Err(AggError::InvalidParameter("rate and horizon must be positive".into()));
        }
        let mut r = rng::stream(seed, 0xA66);
        let mut times = Vec::new();
        match embedding {
            Embedding::Deterministic => {
                let n = (rho * horizon).floor() as usize;
                times.extend((1..=n).map(|k| k as f64 / rho));
            }
            Embedding::Poissonized => {
                let mut now = 0.0;
                loop {
                    let e: f64 = Exp1.sample(&mut r);
                    now += e / rho;
                    if now > horizon {
                        break;
                    }
                    times.push(now);
                }
            }
        }
        let angles = (0..times.len()).map(|_| r.gen::<f64>()).collect();
        Ok(BoundaryFlow { g: g.clone(), fast: BucketEval::new(g), rho, times, angles, horizon, embedding })
    }

    pub fn from_angles(g: &MonotoneCircleMap, rho: f64, angles: Vec<f64>) -> Self {
        let times: Vec<f64> = (1..=angles.len()).map(|k| k as f64 / rho).collect();
        let horizon = times.last().copied().unwrap_or(0.0);
        BoundaryFlow { g: g.clone(), fast: BucketEval::new(g), rho, times, angles, horizon, embedding: Embedding::Deterministic }
    }

    /// Arrival indices [a, b) with times in I.
    pub fn arrival_range(&self, i: &Interval) -> (usize, usize) {
        if i.is_empty() {
            return (0, 0);
        }
        let ts = &self.times;
        let a = if i.lo_closed { ts.partition_point(|&t| t < i.lo) } else { ts.partition_point(|&t| t <= i.lo) };
        let b = if i.hi_closed { ts.partition_point(|&t| t <= i.hi) } else { ts.partition_point(|&t| t < i.hi) };
        (a, b.max(a))
    }

    /// Γ_I(x) with the fast right-continuous evaluator.
    pub fn eval_fast(&self, i: &Interval, x: f64) -> f64 {
        let (a, b) = self.arrival_range(i);
        self.apply_fast(a, b, x)
    }

    pub fn apply_fast(&self, a: usize, b: usize, mut x: f64) -> f64 {
        for &z in &self.angles[a..b] {
            x = z + self.fast.eval(x - z);
        }
        x
    }

    /// Γ_I as an explicit element of 𝒟.
    pub fn map_on(&self, i: &Interval) -> Result<MonotoneCircleMap, AggError> {
        let (a, b) = self.arrival_range(i);
        gamma_flow(&self.g, &self.angles[a..b])
    }

    /// The same flow as an event flow, optionally de-spun at speed β.
    pub fn to_event_flow(&self, beta: f64) -> Result<EventFlow, AggError> {
        let events = self.times.iter().zip(&self.angles).map(|(&time, &z)| Event { time, rotation: z + beta * time, map: 0 }).collect();
        Ok(EventFlow::new(vec![self.g.clone()], events, beta, (0.0, self.horizon))?)
    }
}

impl IntervalFlow for BoundaryFlow {
    fn horizon(&self) -> (f64, f64) {
        (0.0, self.horizon)
    }

    fn eval(&self, i: &Interval, x: f64, side: Side) -> Result<f64, FlowError> {
        let (a, b) = self.arrival_range(i);
        let mut y = x;
        for &z in &self.angles[a..b] {
            y = z + self.g.eval(y - z, side);
        }
        Ok(y)
    }
}

/// G_b ∘ … ∘ G_a on the circle for arrivals with the given angles, in 𝒟.
pub fn gamma_flow(g: &MonotoneCircleMap, angles: &[f64]) -> Result<MonotoneCircleMap, AggError> {
    let mut m = MonotoneCircleMap::identity();
    for &z in angles {
        m = compose(&g.rotate(z), &m)?;
    }
    Ok(m)
}

/// H_t^k = Γ(x_k) − Γ(x_{k−1}) with x_0 = x_n − 1, for anchors increasing in [0,1).
pub fn harmonic_measures(flow: &BoundaryFlow, anchors: &[f64], t: f64) -> Vec<f64> {
    let (a, b) = flow.arrival_range(&Interval::oc(0.0, t));
    let ys: Vec<f64> = anchors.iter().map(|&x| flow.apply_fast(a, b, x)).collect();
    let h = gaps(&ys);
    assert!(h.iter().all(|&v| v >= -1e-12), "flow lines crossed: {h:?}");
    h
}

/// Consecutive gaps of lifted, ordered positions around the circle.
pub fn gaps(ys: &[f64]) -> Vec<f64> {
    let n = ys.len();
    (0..n)
        .map(|k| {
            let prev = if k == 0 { ys[n - 1] - 1.0 } else { ys[k - 1] };
            ys[k] - prev
        })
        .collect()
}

/// Streaming simulation of the flow of boundary maps under the
/// deterministic embedding, storing nothing but the current positions.
#[derive(Clone, Debug)]
pub struct AggregationSim {
    fast: BucketEval,
    pub rho: f64,
}

impl AggregationSim {
    pub fn new(g: &MonotoneCircleMap, rho: f64) -> Self {
        AggregationSim { fast: BucketEval::new(g), rho }
    }

    #[inline]
    fn step(&self, z: f64, x: f64) -> f64 {
        z + self.fast.eval(x - z)
    }

    pub fn run<R: Rng>(&self, xs: &[f64], t: f64, rng: &mut R) -> Vec<f64> {
        let n = (self.rho * t).floor() as u64;
        let mut ys = xs.to_vec();
        for _ in 0..n {
            let z: f64 = rng.gen();
            for y in ys.iter_mut() {
                *y = self.step(z, *y);
            }
        }
        ys
    }

    /// Lines from `xs` recorded at each time of an increasing grid starting
    /// at 0; one row per line.
    pub fn paths<R: Rng>(&self, xs: &[f64], grid: &[f64], rng: &mut R) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(grid.len()); xs.len()];
        let mut ys = xs.to_vec();
        let mut done = 0u64;
        for &t in grid {
            let n = (self.rho * t).floor() as u64;
            while done < n {
                let z: f64 = rng.gen();
                for y in ys.iter_mut() {
                    *y = self.step(z, *y);
                }
                done += 1;
            }
            for (o, &y) in out.iter_mut().zip(&ys) {
                o.push(y);
            }
        }
        out
    }

    /// First arrival time at which the two lines are within `tol` on the circle.
    pub fn collision_time<R: Rng>(&self, x1: f64, x2: f64, horizon: f64, tol: f64, rng: &mut R) -> Option<f64> {
        let n = (self.rho * horizon).floor() as u64;
        let (mut a, mut b) = (x1, x2);
        for k in 1..=n {
            let z: f64 = rng.gen();
            a = self.step(z, a);
            b = self.step(z, b);
            let d = b - a;
            if (d - d.round()).abs() <= tol {
                return Some(k as f64 / self.rho);
            }
        }
        None
    }

    /// Number of distinct lines at time t from ordered starts in [0,1).
    /// Lines closer than `tol` on the circle are merged.
    pub fn surviving<R: Rng>(&self, xs: &[f64], t: f64, tol: f64, rng: &mut R) -> usize {
        let n = (self.rho * t).floor() as u64;
        let mut ys = xs.to_vec();
        merge_close(&mut ys, tol);
        for _ in 0..n {
            if ys.len() <= 1 {
                break;
            }
            let z: f64 = rng.gen();
            for y in ys.iter_mut() {
                *y = self.step(z, *y);
            }
            merge_close(&mut ys, tol);
        }
        ys.len()
    }
}

/// Drops lines that coincide with their cyclic predecessor up to `tol`.
fn merge_close(ys: &mut Vec<f64>, tol: f64) {
    let mut k = 1;
    while k < ys.len() {
        if ys[k] - ys[k - 1] <= tol {
            ys.remove(k);
        } else {
            k += 1;
        }
    }
    if ys.len() > 1 && ys[0] + 1.0 - ys[ys.len() - 1] <= tol {
        ys.pop();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub mesh_initial: usize,
    pub mesh_cap: usize,
    /// maximal distance between consecutive boundary mesh images
    pub tolerance: f64,
    pub epochs: usize,
    /// points per particle outline (2 = attachment point and tip)
    pub outline: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions { mesh_initial: 256, mesh_cap: 4096, tolerance: 0.02, epochs: 5, outline: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub particle: ParticleMap,
    pub seed: u64,
    pub angles: Vec<f64>,
    pub epochs: Vec<usize>,
    /// circle parameter and image under Φ_n
    pub mesh: Vec<(f64, (f64, f64))>,
    /// outline of each particle in the final cluster
    pub outlines: Vec<Vec<(f64, f64)>>,
    pub tips: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
    pub mesh_complete: bool,
}

/// F_k = R_k∘F∘R_k⁻¹, applied innermost first: Φ_m(w) = F_1∘…∘F_m(w).
fn phi(p: &ParticleMap, rots: &[C64], mut w: C64) -> C64 {
    for r in rots.iter().rev() {
        w = r * p.f_map(r.conj() * w);
    }
    w
}

pub fn grow_cluster(p: &ParticleMap, n: usize, seed: u64, opts: &ClusterOptions) -> Result<ClusterState, AggError> {
    let mut r = rng::stream(seed, 0xC1);
    let angles: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
    let rots: Vec<C64> = angles.iter().map(|&z| C64::from_polar(1.0, 2.0 * PI * z)).collect();
    let epochs: Vec<usize> = (0..n).map(|k| k * opts.epochs.max(1) / n.max(1)).collect();
    let h = p.image_half_angle();
    let m = opts.outline.max(2);
    let phis: Vec<f64> = if m == 2 { vec![h, 0.0] } else { (0..m).map(|j| h * (1.0 - 2.0 * j as f64 / (m - 1) as f64)).collect() };
    let mut outlines = Vec::with_capacity(n);
    let mut tips = Vec::with_capacity(n);
    for k in 0..n {
        let pts: Vec<(f64, f64)> = phis
            .iter()
            .map(|&ph| {
                let w = phi(p, &rots[..k], rots[k] * p.f_map(C64::from_polar(1.0, ph)));
                (w.re, w.im)
            })
            .collect();
        let tip = *pts.iter().max_by(|a, b| (a.0.hypot(a.1)).total_cmp(&b.0.hypot(b.1))).unwrap();
        tips.push(tip);
        outlines.push(pts);
    }
    let (mesh, complete, open) = boundary_mesh(&|x: f64| phi(p, &rots, C64::from_polar(1.0, 2.0 * PI * x)), opts);
    let mut warnings = Vec::new();
    if !complete {
        warnings.push(AggError::MeshBudgetExceeded { cap: opts.mesh_cap, open }.to_string());
    }
    Ok(ClusterState {
        particle: p.clone(),
        seed,
        angles,
        epochs,
        mesh: mesh.into_iter().map(|(x, w)| (x, (w.re, w.im))).collect(),
        outlines,
        tips,
        warnings,
        mesh_complete: complete,
    })
}

/// Bisects circle parameters until consecutive images are within tolerance
/// or the point cap is reached.
fn boundary_mesh(f: &dyn Fn(f64) -> C64, opts: &ClusterOptions) -> (Vec<(f64, C64)>, bool, usize) {
    let m0 = opts.mesh_initial.max(4).min(opts.mesh_cap.max(4));
    let mut mesh: Vec<(f64, C64)> = (0..m0).map(|i| i as f64 / m0 as f64).map(|x| (x, f(x))).collect();
    loop {
        let n = mesh.len();
        let open: Vec<usize> = (0..n)
            .filter(|&i| {
                let b = if i + 1 < n { mesh[i + 1].1 } else { mesh[0].1 };
                (mesh[i].1 - b).norm() > opts.tolerance
            })
            .collect();
        if open.is_empty() {
            return (mesh, true, 0);
        }
        if n >= opts.mesh_cap {
            return (mesh, false, open.len());
        }
        let room = opts.mesh_cap - n;
        let mut add = Vec::new();
        for &i in open.iter().take(room) {
            let x1 = if i + 1 < n { mesh[i + 1].0 } else { 1.0 };
            let x = 0.5 * (mesh[i].0 + x1);
            add.push((x, f(x)));
        }
        mesh.extend(add);
        mesh.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
}

impl ClusterState {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// log Φ_n′(∞), extracted from Φ_n(R)/R at R = 10⁴, 10⁵.
    pub fn log_derivative_at_infinity(&self) -> f64 {
        let rots: Vec<C64> = self.angles.iter().map(|&z| C64::from_polar(1.0, 2.0 * PI * z)).collect();
        let l = |r: f64| (phi(&self.particle, &rots, C64::new(r, 0.0)) / r).norm().ln();
        (10.0 * l(1e5) - l(1e4)) / 9.0
    }

    /// Max tip radius in each of `sectors` equal angular sectors.
    pub fn radius_band(&self, sectors: usize) -> RadiusBand {
        let mut radii = vec![0.0f64; sectors];
        for &(x, y) in &self.tips {
            let mut a = y.atan2(x) / (2.0 * PI);
            if a < 0.0 {
                a += 1.0;
            }
            let s = ((a * sectors as f64) as usize).min(sectors - 1);
            radii[s] = radii[s].max(x.hypot(y));
        }
        let mean = radii.iter().sum::<f64>() / sectors as f64;
        let lo = radii.iter().cloned().fold(f64::INFINITY, f64::min) / mean;
        let hi = radii.iter().cloned().fold(0.0, f64::max) / mean;
        RadiusBand { radii, mean, min_ratio: lo, max_ratio: hi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusBand {
    pub radii: Vec<f64>,
    pub mean: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl RadiusBand {
    pub fn within(&self, tol: f64) -> bool {
        self.min_ratio >= 1.0 - tol && self.max_ratio <= 1.0 + tol
    }
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

pub fn render_cluster_svg(c: &ClusterState, with_mesh: bool) -> String {
    let mut ext = 1.0f64;
    for o in &c.outlines {
        for &(x, y) in o {
            ext = ext.max(x.abs()).max(y.abs());
        }
    }
    let ext = ext * 1.05;
    let size = 800.0;
    let sc = size / (2.0 * ext);
    let px = |x: f64, y: f64| ((x + ext) * sc, (ext - y) * sc);
    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(s, "<!-- aggflow {} -->", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">");
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let (cx, cy) = px(0.0, 0.0);
    let _ = writeln!(s, "<circle cx=\"{cx:.3}\" cy=\"{cy:.3}\" r=\"{:.3}\" fill=\"#dddddd\" stroke=\"black\" stroke-width=\"0.5\"/>", sc);
    let width = (0.6 * c.particle.delta * sc).clamp(0.3, 3.0);
    for (k, o) in c.outlines.iter().enumerate() {
        let col = PALETTE[c.epochs[k] % PALETTE.len()];
        let pts: Vec<String> = o
            .iter()
            .map(|&(x, y)| {
                let (a, b) = px(x, y);
                format!("{a:.3},{b:.3}")
            })
            .collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{col}\" stroke-width=\"{width:.3}\"/>", pts.join(" "));
    }
    if with_mesh && !c.mesh.is_empty() {
        let pts: Vec<String> = c
            .mesh
            .iter()
            .map(|&(_, (x, y))| {
                let (a, b) = px(x, y);
                format!("{a:.3},{b:.3}")
            })
            .collect();
        let _ = writeln!(s, "<polygon points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"0.3\"/>", pts.join(" "));
    }
    let _ = writeln!(s, "</svg>");
    s
}

/// Flow lines t ↦ X_t(x) reduced to [0,1), plotted with time upwards.
pub fn render_flow_lines_svg(grid: &[f64], paths: &[Vec<f64>]) -> String {
    let (w, h) = (800.0, 600.0);
    let t1 = grid.last().copied().unwrap_or(1.0).max(1e-300);
    let t0 = grid.first().copied().unwrap_or(0.0);
    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(s, "<!-- aggflow {} -->", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">");
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for (k, p) in paths.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        let mut seg: Vec<String> = Vec::new();
        let mut prev: Option<f64> = None;
        let flush = |seg: &mut Vec<String>, s: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{col}\" stroke-width=\"0.8\"/>", seg.join(" "));
            }
            seg.clear();
        };
        for (i, &v) in p.iter().enumerate() {
            let r = v - v.floor();
            if let Some(q) = prev {
                if (r - q).abs() > 0.5 {
                    flush(&mut seg, &mut s);
                }
            }
            prev = Some(r);
            let x = r * w;
            let y = h - (grid[i] - t0) / (t1 - t0).max(1e-300) * h;
            seg.push(format!("{x:.3},{y:.3}"));
        }
        flush(&mut seg, &mut s);
    }
    let _ = writeln!(s, "</svg>");
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdlRow {
    pub kind: ParticleKind,
    pub delta: f64,
    pub rho: f64,
    pub rho_delta3: f64,
    pub lambda: f64,
    pub lambda_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdlReport {
    pub rows: Vec<GdlRow>,
    /// per kind: (kind, max/min of ρδ³, within factor 4, slope of λ/δ^{1/4} along the sweep, trend ok)
    pub bands: Vec<(ParticleKind, f64, bool, f64, bool)>,
}

impl GdlReport {
    pub fn passed(&self) -> bool {
        self.bands.iter().all(|b| b.2 && b.4)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("kind,delta,rho,rho_delta3,lambda,lambda_over_delta_quarter\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", r.kind, r.delta, r.rho, r.rho_delta3, r.lambda, r.lambda_ratio);
        }
        s
    }
}

/// Least-squares slope of v against its index.
pub fn index_slope(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = v.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &y) in v.iter().enumerate() {
        num += (i as f64 - mx) * (y - my);
        den += (i as f64 - mx).powi(2);
    }
    num / den
}

pub fn gdl_audit(
    kinds: &[ParticleKind],
    deltas: &[f64],
    resolution: usize,
    opts: &LocalizationOptions,
) -> Result<GdlReport, AggError> {
    let mut rows = Vec::new();
    let mut bands = Vec::new();
    for &kind in kinds {
        let mut mine = Vec::new();
        for &d in deltas {
            let p = ParticleMap::new(kind, d)?;
            let g = p.boundary_map(resolution)?;
            let f = g.functionals_with(opts)?;
            mine.push(GdlRow {
                kind,
                delta: d,
                rho: f.rho,
                rho_delta3: f.rho * d.powi(3),
                lambda: f.lambda_loc,
                lambda_ratio: f.lambda_loc / d.powf(0.25),
            });
        }
        let hi = mine.iter().map(|r| r.rho_delta3).fold(0.0, f64::max);
        let lo = mine.iter().map(|r| r.rho_delta3).fold(f64::INFINITY, f64::min);
        let slope = index_slope(&mine.iter().map(|r| r.lambda_ratio).collect::<Vec<_>>());
        bands.push((kind, hi / lo, hi / lo <= 4.0, slope, slope <= 0.0));
        rows.extend(mine);
    }
    Ok(GdlReport { rows, bands })
}
