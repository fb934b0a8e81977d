use aggflow::acceptance::Suite;
use aggflow::aggregation::ParticleKind;
use aggflow::cli_io::{self, CliError, Command, ExperimentConfig, FlowSource};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "aggflow", version, about = "Aggregation flows, Levy flows and coalescing Brownian motions on the circle")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// TOML experiment configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grow a cluster and write its render, mesh and particle table
    SimulateCluster {
        #[arg(long)]
        kind: Option<ParticleKind>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        with_mesh: bool,
    },
    /// Write flow lines from equally spaced anchors as CSV and SVG
    SimulateFlow {
        #[arg(long)]
        source: Option<FlowSource>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        anchors: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Run the acceptance criteria; exits 1 if any fails
    Verify {
        /// exact, statistical or all
        #[arg(long)]
        suite: Option<Suite>,
        /// comma-separated criterion ids within the suite
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u32>>,
    },
    /// Tabulate rate and localization over particle sizes
    GdlSweep {
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<ParticleKind>>,
    },
    /// Re-render a cluster.json or flow_lines.csv
    Render {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        with_mesh: bool,
    },
}

fn resolve(cli: Cli) -> Result<(Command, ExperimentConfig, PathBuf, Option<usize>), CliError> {
    let mut cfg = match &cli.global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    let cmd = match cli.cmd {
        Cmd::SimulateCluster { kind, delta, n, with_mesh } => {
            let c = &mut cfg.cluster;
            c.kind = kind.unwrap_or(c.kind);
            c.delta = delta.unwrap_or(c.delta);
            c.n = n.unwrap_or(c.n);
            c.with_mesh |= with_mesh;
            Command::SimulateCluster
        }
        Cmd::SimulateFlow { source, delta, r, anchors, horizon } => {
            let f = &mut cfg.flow;
            f.source = source.unwrap_or(f.source);
            f.delta = delta.unwrap_or(f.delta);
            f.r = r.unwrap_or(f.r);
            f.anchors = anchors.unwrap_or(f.anchors);
            f.horizon = horizon.unwrap_or(f.horizon);
            Command::SimulateFlow
        }
        Cmd::Verify { suite, criteria } => {
            if let Some(s) = suite {
                cfg.verify.suite = s;
            }
            if let Some(c) = criteria {
                cfg.verify.criteria = c;
            }
            Command::Verify
        }
        Cmd::GdlSweep { deltas, kinds } => {
            if let Some(d) = deltas {
                cfg.gdl.deltas = d;
            }
            if let Some(k) = kinds {
                cfg.gdl.kinds = k;
            }
            Command::GdlSweep
        }
        Cmd::Render { input, with_mesh } => {
            if input.is_some() {
                cfg.render.input = input;
            }
            cfg.render.with_mesh |= with_mesh;
            Command::Render
        }
    };
    Ok((cmd, cfg, cli.global.out_dir, cli.global.threads))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, cfg, out, threads) = match resolve(cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("aggflow: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("aggflow: config error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match cli_io::run_command(cmd, &cfg, &out, &mut |line: &str| println!("{line}")) {
        Ok(r) => {
            println!("{}", r.summary);
            println!("wrote {} files to {}", r.files.len(), out.display());
            if r.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("aggflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
