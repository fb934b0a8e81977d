//! Configuration and file emission for the `aggflow` command line.
//!
//! Every command writes its outputs, the fully resolved configuration
//! (`config.resolved.toml`) and a `manifest.json` into one directory.

use crate::acceptance::{self, Suite};
use crate::aggregation::{self, AggregationSim, ClusterOptions, ClusterState, ParticleKind, ParticleMap};
use crate::circle_maps::{LocalizationOptions, MonotoneCircleMap};
use crate::coalescing_oracle;
use crate::levy_flow::SupportSim;
use crate::rng;
use crate::stats_harness;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    /// 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub cluster: ClusterConfig,
    pub flow: FlowConfig,
    pub verify: VerifyConfig,
    pub gdl: GdlConfig,
    pub render: RenderConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            cluster: ClusterConfig::default(),
            flow: FlowConfig::default(),
            verify: VerifyConfig::default(),
            gdl: GdlConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub kind: ParticleKind,
    pub delta: f64,
    pub n: usize,
    pub mesh_initial: usize,
    pub mesh_cap: usize,
    pub mesh_tolerance: f64,
    pub epochs: usize,
    pub outline: usize,
    pub with_mesh: bool,
    pub sectors: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let o = ClusterOptions::default();
        ClusterConfig {
            kind: ParticleKind::Slit,
            delta: 0.02,
            n: 20_000,
            mesh_initial: o.mesh_initial,
            mesh_cap: o.mesh_cap,
            mesh_tolerance: o.tolerance,
            epochs: o.epochs,
            outline: o.outline,
            with_mesh: false,
            sectors: acceptance::BALL_SECTORS,
        }
    }
}

impl ClusterConfig {
    pub fn options(&self) -> ClusterOptions {
        ClusterOptions {
            mesh_initial: self.mesh_initial,
            mesh_cap: self.mesh_cap,
            tolerance: self.mesh_tolerance,
            epochs: self.epochs,
            outline: self.outline,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSource {
    Aggregation,
    Levy,
    Oracle,
}

impl FromStr for FlowSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "aggregation" => Ok(FlowSource::Aggregation),
            "levy" => Ok(FlowSource::Levy),
            "oracle" => Ok(FlowSource::Oracle),
            _ => Err(format!("unknown flow source `{s}` (aggregation, levy, oracle)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub source: FlowSource,
    /// particle for the aggregation source
    pub kind: ParticleKind,
    pub delta: f64,
    /// rate override for the aggregation source; 1/∫g̃² when absent
    pub rho: Option<f64>,
    /// corollary-family parameter for the levy source
    pub r: f64,
    pub anchors: usize,
    pub horizon: f64,
    /// number of output times, including 0 and the horizon
    pub points: usize,
    pub resolution: usize,
    /// grid step of the oracle source
    pub oracle_step: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            source: FlowSource::Aggregation,
            kind: ParticleKind::Slit,
            delta: 0.02,
            rho: None,
            r: 0.01,
            anchors: 100,
            horizon: 0.05,
            points: 201,
            resolution: acceptance::BOUNDARY_RESOLUTION,
            oracle_step: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub suite: Suite,
    /// explicit criterion ids; empty means the whole suite
    pub criteria: Vec<u32>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { suite: Suite::All, criteria: vec![] }
    }
}

impl VerifyConfig {
    pub fn ids(&self) -> Vec<u32> {
        let suite = self.suite.criteria();
        if self.criteria.is_empty() {
            suite.to_vec()
        } else {
            self.criteria.iter().copied().filter(|c| suite.contains(c)).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdlConfig {
    pub kinds: Vec<ParticleKind>,
    pub deltas: Vec<f64>,
    pub resolution: usize,
    /// uniform part of the λ scan
    pub uniform: usize,
}

impl Default for GdlConfig {
    fn default() -> Self {
        GdlConfig {
            kinds: vec![ParticleKind::Slit, ParticleKind::Lune],
            deltas: acceptance::GDL_DELTAS.to_vec(),
            resolution: acceptance::BOUNDARY_RESOLUTION,
            uniform: acceptance::gdl_localization().uniform,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// a cluster.json or flow_lines.csv written by an earlier run
    pub input: Option<PathBuf>,
    pub with_mesh: bool,
}

fn check(cond: bool, msg: &str) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

fn delta_ok(d: f64) -> bool {
    d > 0.0 && d <= 1.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.cluster;
        check(delta_ok(c.delta), "cluster.delta must lie in (0, 1]")?;
        check(c.sectors >= 1, "cluster.sectors must be positive")?;
        check(c.mesh_cap >= 4 && c.mesh_initial >= 4, "cluster mesh sizes must be at least 4")?;
        check(c.mesh_tolerance > 0.0, "cluster.mesh_tolerance must be positive")?;
        check(c.epochs >= 1, "cluster.epochs must be positive")?;
        let f = &self.flow;
        check(delta_ok(f.delta), "flow.delta must lie in (0, 1]")?;
        check(f.r > 0.0 && f.r < 1.0, "flow.r must lie in (0, 1)")?;
        check(f.rho.is_none_or(|r| r > 0.0 && r.is_finite()), "flow.rho must be positive")?;
        check(f.anchors >= 1, "flow.anchors must be positive")?;
        check(f.horizon > 0.0 && f.horizon.is_finite(), "flow.horizon must be positive")?;
        check(f.points >= 2, "flow.points must be at least 2")?;
        check(f.resolution >= 256, "flow.resolution must be at least 256")?;
        check(f.oracle_step > 0.0, "flow.oracle_step must be positive")?;
        check(self.verify.criteria.iter().all(|c| (1..=10).contains(c)), "verify.criteria ids lie in 1..=10")?;
        let g = &self.gdl;
        check(!g.kinds.is_empty() && !g.deltas.is_empty(), "gdl needs at least one kind and one delta")?;
        check(g.deltas.iter().all(|&d| delta_ok(d)), "gdl.deltas must lie in (0, 1]")?;
        check(g.resolution >= 256 && g.uniform >= 2, "gdl.resolution must be at least 256")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SimulateCluster,
    SimulateFlow,
    Verify,
    GdlSweep,
    Render,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateCluster => "simulate-cluster",
            Command::SimulateFlow => "simulate-flow",
            Command::Verify => "verify",
            Command::GdlSweep => "gdl-sweep",
            Command::Render => "render",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    /// false when a check the command performs failed (verify, gdl-sweep)
    pub ok: bool,
    pub summary: String,
}

#[derive(Serialize)]
struct ManifestEntry {
    name: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    ok: bool,
    files: Vec<ManifestEntry>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let p = self.dir.join(name);
        std::fs::write(&p, contents).map_err(|source| CliError::Io { path: p.clone(), source })?;
        self.files.push(p);
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Validates the config, runs the command and writes its outputs into `out`.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig, out: &Path, progress: &mut dyn FnMut(&str)) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    if cmd == Command::Render && cfg.render.input.is_none() {
        return Err(CliError::Config("render needs render.input or --input".into()));
    }
    std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    let mut w = Writer { dir: out, files: vec![] };
    w.write("config.resolved.toml", &cfg.to_toml())?;
    let (ok, summary) = match cmd {
        Command::SimulateCluster => simulate_cluster(cfg, &mut w)?,
        Command::SimulateFlow => simulate_flow(cfg, &mut w)?,
        Command::Verify => verify(cfg, &mut w, progress)?,
        Command::GdlSweep => gdl_sweep(cfg, &mut w)?,
        Command::Render => render(cfg, &mut w)?,
    };
    let mut entries = Vec::new();
    for p in &w.files {
        let bytes = std::fs::metadata(p).map_err(|source| CliError::Io { path: p.clone(), source })?.len();
        entries.push(ManifestEntry { name: p.file_name().unwrap_or_default().to_string_lossy().into_owned(), bytes });
    }
    let m = Manifest { command: cmd.name(), version: env!("CARGO_PKG_VERSION"), seed: cfg.seed, ok, files: entries };
    w.write("manifest.json", &serde_json::to_string_pretty(&m).expect("manifest serializes"))?;
    Ok(RunOutput { files: w.files, ok, summary })
}

fn simulate_cluster(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let c = &cfg.cluster;
    let p = ParticleMap::new(c.kind, c.delta).map_err(|e| CliError::Config(e.to_string()))?;
    let st = aggregation::grow_cluster(&p, c.n, cfg.seed, &c.options()).map_err(run_err)?;
    w.write("cluster.svg", &aggregation::render_cluster_svg(&st, c.with_mesh))?;
    let mut mesh = String::from("u,re,im\n");
    for &(u, (x, y)) in &st.mesh {
        let _ = writeln!(mesh, "{},{},{}", num(u), num(x), num(y));
    }
    w.write("mesh.csv", &mesh)?;
    let mut parts = String::from("k,angle,epoch,tip_re,tip_im\n");
    for k in 0..st.len() {
        let _ = writeln!(parts, "{k},{},{},{},{}", num(st.angles[k]), st.epochs[k], num(st.tips[k].0), num(st.tips[k].1));
    }
    w.write("particles.csv", &parts)?;
    w.write("cluster.json", &serde_json::to_string(&st).expect("cluster serializes"))?;
    let mut s = format!("{} particles, mesh {} points", st.len(), st.mesh.len());
    if !st.is_empty() {
        let b = st.radius_band(c.sectors);
        let _ = write!(s, ", mean tip radius {:.4e}, sector ratio range [{:.3}, {:.3}]", b.mean, b.min_ratio, b.max_ratio);
    }
    for warn in &st.warnings {
        let _ = write!(s, "\nwarning: {warn}");
    }
    Ok((true, s))
}

/// Output grid, one row per line, and a description of the source.
pub type FlowPaths = (Vec<f64>, Vec<Vec<f64>>, String);

/// Lines from the anchors on the output grid, one row per line.
pub fn flow_paths(f: &FlowConfig, seed: u64) -> Result<FlowPaths, CliError> {
    let m = f.points - 1;
    let grid: Vec<f64> = (0..=m).map(|i| f.horizon * i as f64 / m as f64).collect();
    let xs: Vec<f64> = (0..f.anchors).map(|k| k as f64 / f.anchors as f64).collect();
    let mut r = rng::stream(seed, 0xF10);
    match f.source {
        FlowSource::Aggregation => {
            let g = ParticleMap::new(f.kind, f.delta).and_then(|p| p.boundary_map(f.resolution)).map_err(run_err)?;
            let rho = f.rho.unwrap_or_else(|| 1.0 / g.integral_tilde_sq());
            let paths = AggregationSim::new(&g, rho).paths(&xs, &grid, &mut r);
            Ok((grid, paths, format!("aggregation flow, {} delta={} rho={rho:.6e}", f.kind, f.delta)))
        }
        FlowSource::Levy => {
            let sim = SupportSim::new(&MonotoneCircleMap::corollary_family(f.r)).map_err(run_err)?;
            let paths = sim.paths(&xs, &grid, &mut r);
            Ok((grid, paths, format!("levy flow, r={} rho={:.6e}", f.r, sim.rho)))
        }
        FlowSource::Oracle => {
            let sub = ((f.horizon / m as f64) / f.oracle_step).ceil().max(1.0) as usize;
            let fine: Vec<f64> = (0..=m * sub).map(|i| f.horizon * i as f64 / (m * sub) as f64).collect();
            let starts: Vec<(f64, f64)> = xs.iter().map(|&x| (0.0, x)).collect();
            let sys = coalescing_oracle::simulate_coalescing(&starts, &fine, seed).map_err(run_err)?;
            let paths = sys.paths.iter().map(|p| p.iter().step_by(sub).copied().collect()).collect();
            Ok((grid, paths, format!("coalescing oracle, step {:.3e}", f.horizon / (m * sub) as f64)))
        }
    }
}

fn distinct_on_circle(ys: &[f64]) -> usize {
    let mut v: Vec<f64> = ys.iter().map(|y| y - y.floor()).collect();
    v.sort_by(f64::total_cmp);
    let mut n = v.len().min(1);
    for k in 1..v.len() {
        if v[k] - v[k - 1] > 1e-12 {
            n += 1;
        }
    }
    if n > 1 && v[0] + 1.0 - v[v.len() - 1] <= 1e-12 {
        n -= 1;
    }
    n
}

fn simulate_flow(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let (grid, paths, what) = flow_paths(&cfg.flow, cfg.seed)?;
    let mut csv = String::from("t");
    for k in 0..paths.len() {
        let _ = write!(csv, ",line{k}");
    }
    csv.push('\n');
    for (i, &t) in grid.iter().enumerate() {
        csv.push_str(&num(t));
        for p in &paths {
            csv.push(',');
            csv.push_str(&num(p[i]));
        }
        csv.push('\n');
    }
    w.write("flow_lines.csv", &csv)?;
    w.write("flow.svg", &aggregation::render_flow_lines_svg(&grid, &paths))?;
    let last: Vec<f64> = paths.iter().map(|p| p[p.len() - 1]).collect();
    Ok((true, format!("{what}: {} of {} lines distinct at t={}", distinct_on_circle(&last), paths.len(), cfg.flow.horizon)))
}

fn verify(cfg: &ExperimentConfig, w: &mut Writer, progress: &mut dyn FnMut(&str)) -> Result<(bool, String), CliError> {
    let ids = cfg.verify.ids();
    if ids.is_empty() {
        return Err(CliError::Config("no criteria selected".into()));
    }
    let results = acceptance::run_suite(&ids, cfg.seed, Some(w.dir), |r| {
        progress(&r.line());
    });
    let reports: Vec<_> = results.iter().flat_map(|r| r.reports.iter().cloned()).collect();
    let (jsonl, summary) = stats_harness::write_reports(&reports);
    w.write("reports.jsonl", &jsonl)?;
    let mut text = String::new();
    for r in &results {
        let _ = writeln!(text, "{}", r.line());
    }
    let stat = results.iter().filter(|r| r.statistical).count();
    let _ = writeln!(text, "statistical criteria run: {stat}");
    text.push_str(&summary);
    w.write("summary.txt", &text)?;
    w.write("timings.json", &serde_json::to_string_pretty(&results).expect("results serialize"))?;
    if let Ok(rd) = std::fs::read_dir(w.dir) {
        let mut renders: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("cluster_delta") && n.ends_with(".svg")))
            .collect();
        renders.sort();
        w.files.extend(renders);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    Ok((failed == 0, format!("{} criteria, {} failed, {stat} statistical", results.len(), failed)))
}

fn gdl_sweep(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let g = &cfg.gdl;
    let opts = LocalizationOptions { uniform: g.uniform, ..Default::default() };
    let rep = aggregation::gdl_audit(&g.kinds, &g.deltas, g.resolution, &opts).map_err(run_err)?;
    w.write("gdl_table.csv", &rep.to_table())?;
    let mut bands = String::from("kind,rho_delta3_spread,band_ok,lambda_ratio_slope,trend_ok\n");
    for &(kind, spread, b, slope, t) in &rep.bands {
        let _ = writeln!(bands, "{kind},{},{b},{},{t}", num(spread), num(slope));
    }
    w.write("gdl_bands.csv", &bands)?;
    let s = rep
        .bands
        .iter()
        .map(|&(k, spread, b, slope, t)| format!("{k}: rho*delta^3 spread {spread:.3} ({}), lambda trend slope {slope:.3e} ({})", flag(b), flag(t)))
        .collect::<Vec<_>>()
        .join("\n");
    Ok((rep.passed(), s))
}

fn flag(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "out of band"
    }
}

/// Reads a flow_lines.csv back into its grid and per-line paths.
pub fn read_flow_csv(text: &str) -> Result<(Vec<f64>, Vec<Vec<f64>>), CliError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::Config("empty flow csv".into()))?;
    let n = header.split(',').count().saturating_sub(1);
    let mut grid = Vec::new();
    let mut paths = vec![Vec::new(); n];
    for (row, l) in lines.enumerate() {
        let vals: Result<Vec<f64>, _> = l.split(',').map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| CliError::Config(format!("flow csv row {}: {e}", row + 2)))?;
        if vals.len() != n + 1 {
            return Err(CliError::Config(format!("flow csv row {} has {} fields, expected {}", row + 2, vals.len(), n + 1)));
        }
        grid.push(vals[0]);
        for (p, &v) in paths.iter_mut().zip(&vals[1..]) {
            p.push(v);
        }
    }
    Ok((grid, paths))
}

fn render(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let input = cfg.render.input.as_ref().expect("checked");
    let text = std::fs::read_to_string(input).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    match input.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let st: ClusterState = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
            w.write("cluster.svg", &aggregation::render_cluster_svg(&st, cfg.render.with_mesh))?;
            Ok((true, format!("rendered cluster of {} particles", st.len())))
        }
        Some("csv") => {
            let (grid, paths) = read_flow_csv(&text)?;
            w.write("flow.svg", &aggregation::render_flow_lines_svg(&grid, &paths))?;
            Ok((true, format!("rendered {} flow lines", paths.len())))
        }
        _ => Err(CliError::Config(format!("{}: expected a .json cluster or .csv flow file", input.display()))),
    }
}
