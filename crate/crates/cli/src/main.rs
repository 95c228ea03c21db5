use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use whrt_core::config::RunConfig;
use whrt_core::constraints::{LossSequence, WhrtConstraint};
use whrt_core::graph::{build_graph, build_lifted_graph, export_dot, GraphError, WhrtGraph};
use whrt_core::lmi::{
    analyze_lifted_controller, analyze_nonlifted, synthesize, AnalysisCertificate,
    CertificateFile, Controller, LmiError,
};
use whrt_core::sim::{
    empirical_gain, random_admissible, random_disturbance, simulate_controller, step_disturbance,
    step_sweep, worst_case_search_seeded, SimError, SimulationTrace,
};
use whrt_core::systems::{closed_loop, lift};

mod format;

use format::{matrix_text, sig4};

#[derive(Parser)]
#[command(name = "whrt", version, about = "l2-performance tools for control loops with weakly-hard input losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the constraint graph and report its size or export it.
    Graph {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        constraint: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Lifted graph with loss-count labels.
        #[arg(long)]
        lifted: bool,
        /// Print `nodes=N edges=M`.
        #[arg(long)]
        stats: bool,
        #[arg(long)]
        dot_out: Option<PathBuf>,
        /// Line-based dump of nodes and edges.
        #[arg(long)]
        dump_out: Option<PathBuf>,
    },
    /// Certify an l2 gain for the configured controller.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Use the per-step graph instead of the lifted one.
        #[arg(long)]
        non_lifted: bool,
        /// Controller from a synthesis result file instead of `K`.
        #[arg(long)]
        controller: Option<PathBuf>,
        /// Certificate output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a state-feedback gain minimizing the certified gain.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        /// One gain per lifted-graph node.
        #[arg(long)]
        switched: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the loop and report the empirical gain.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// `periodic:<bits>`, `random`, or `worst`.
        #[arg(long, default_value = "periodic:101")]
        mu: String,
        /// Number of random runs, or search budget for `worst`.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, value_enum)]
        disturbance: Option<Disturbance>,
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Check a loss sequence against a constraint.
    Check {
        #[arg(long)]
        mu: String,
        #[arg(long)]
        constraint: String,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Disturbance {
    /// Unit step of swept length (periodic sequences) or half the horizon.
    Step,
    Zero,
    /// Seeded uniform samples in [-1, 1].
    Random,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<LmiError> for Failure {
    fn from(e: LmiError) -> Self {
        let code = match e {
            LmiError::Infeasible => 3,
            LmiError::SolverFailure(_) | LmiError::IllConditionedG { .. } => 4,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Self::usage(e)
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Graph {
            constraint,
            config,
            lifted,
            stats,
            dot_out,
            dump_out,
        } => cmd_graph(constraint, config, lifted, stats, dot_out, dump_out),
        Command::Analyze {
            config,
            non_lifted,
            controller,
            out,
        } => cmd_analyze(&config, non_lifted, controller, out),
        Command::Synthesize {
            config,
            switched,
            out,
        } => cmd_synthesize(&config, switched, out),
        Command::Simulate {
            config,
            mu,
            seeds,
            disturbance,
            controller,
            csv_out,
        } => cmd_simulate(&config, &mu, seeds, disturbance, controller, csv_out),
        Command::Check { mu, constraint } => cmd_check(&mu, &constraint),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Failure::usage(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn lifted_graph(c: &WhrtConstraint) -> Result<WhrtGraph, Failure> {
    build_lifted_graph(c).map_err(|e| Failure::usage(format!("{c}: {e}")))
}

fn cmd_graph(
    constraint: Option<String>,
    config: Option<PathBuf>,
    lifted: bool,
    stats: bool,
    dot_out: Option<PathBuf>,
    dump_out: Option<PathBuf>,
) -> CmdResult {
    let c: WhrtConstraint = match (constraint, config) {
        (Some(text), _) => text.parse().map_err(Failure::usage)?,
        (None, Some(path)) => load_config(&path)?.constraint,
        (None, None) => return Err(Failure::usage("give --constraint or --config")),
    };
    let g = if lifted {
        lifted_graph(&c)?
    } else {
        build_graph(&c).map_err(|e| Failure::usage(format!("{c}: {e}")))?
    };
    if let Some(path) = &dot_out {
        write_atomic(path, export_dot(&g).as_bytes())?;
    }
    if let Some(path) = &dump_out {
        write_atomic(path, g.to_string().as_bytes())?;
    }
    if stats || (dot_out.is_none() && dump_out.is_none()) {
        println!("nodes={} edges={}", g.node_count(), g.edge_count());
    }
    Ok(0)
}

fn read_controller(path: &Path) -> Result<Controller, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    CertificateFile::from_text(&text)
        .and_then(|f| f.controller())
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        .ok_or_else(|| Failure::usage(format!("{}: file holds no controller", path.display())))
}

fn configured_controller(cfg: &RunConfig, file: Option<PathBuf>) -> Result<Controller, Failure> {
    match (file, &cfg.k) {
        (Some(path), _) => read_controller(&path),
        (None, Some(k)) => Ok(Controller::Static(k.clone())),
        (None, None) => Err(Failure::usage("config has no controller `K`")),
    }
}

fn report_certificate(cert: &AnalysisCertificate, g: &WhrtGraph) {
    println!("gamma = {}", sig4(cert.gamma));
    println!("graph: nodes={} edges={}", g.node_count(), g.edge_count());
    println!("min edge eigenvalue = {:.3e} (margin {:.3e})", cert.min_eigenvalue, cert.epsilon);
}

fn cmd_analyze(
    config: &Path,
    non_lifted: bool,
    controller: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CmdResult {
    let cfg = load_config(config)?;
    let controller = configured_controller(&cfg, controller)?;
    let lifted = match build_lifted_graph(&cfg.constraint) {
        Ok(g) => Some(g),
        Err(GraphError::UnboundedLossRun) if !controller.is_switched() => {
            println!("note: {} allows unbounded loss runs; using the per-step graph", cfg.constraint);
            None
        }
        Err(e) => return Err(Failure::usage(format!("{}: {e}", cfg.constraint))),
    };
    let started = Instant::now();
    let (cert, graph) = match lifted {
        Some(lifted) if !non_lifted => {
            let family = lift(&cfg.plant, &cfg.strategy, lifted.labels());
            (
                analyze_lifted_controller(&family, &controller, &lifted, &cfg.solver)?,
                lifted,
            )
        }
        _ => {
            let Controller::Static(k) = &controller else {
                return Err(Failure::usage(
                    "the per-step analysis needs a static controller",
                ));
            };
            let cl = closed_loop(&cfg.plant, k, &cfg.strategy).map_err(Failure::usage)?;
            let g = build_graph(&cfg.constraint).map_err(Failure::usage)?;
            (analyze_nonlifted(&cl, &g, &cfg.solver)?, g)
        }
    };
    eprintln!("time: {:.3} s (non-deterministic)", started.elapsed().as_secs_f64());
    report_certificate(&cert, &graph);
    if let Some(path) = out {
        write_atomic(&path, CertificateFile::from_analysis(&cert).to_text().as_bytes())?;
    }
    Ok(0)
}

fn cmd_synthesize(config: &Path, switched: bool, out: Option<PathBuf>) -> CmdResult {
    let cfg = load_config(config)?;
    let lifted = lifted_graph(&cfg.constraint)?;
    let family = lift(&cfg.plant, &cfg.strategy, lifted.labels());
    let started = Instant::now();
    let res = synthesize(&family, &lifted, switched, &cfg.solver)?;
    eprintln!("time: {:.3} s (non-deterministic)", started.elapsed().as_secs_f64());
    match &res.controller {
        Controller::Static(k) => println!("K = {}", matrix_text(k)),
        Controller::Switched(ks) => {
            for (i, k) in ks.iter().enumerate() {
                println!("K_v{} = {}", i + 1, matrix_text(k));
            }
        }
    }
    report_certificate(&res.certificate, &lifted);
    if let Some(path) = out {
        write_atomic(&path, CertificateFile::from_synthesis(&res).to_text().as_bytes())?;
    }
    Ok(0)
}

enum MuSource {
    Periodic(LossSequence),
    Random,
    Worst,
}

fn parse_mu_source(text: &str) -> Result<MuSource, Failure> {
    match text.trim() {
        "random" => Ok(MuSource::Random),
        "worst" => Ok(MuSource::Worst),
        other => {
            let bits = other
                .strip_prefix("periodic:")
                .ok_or_else(|| Failure::usage(format!("unknown mu source `{other}`")))?;
            let pattern: LossSequence = bits.parse().map_err(Failure::usage)?;
            if pattern.bits().first() != Some(&true) {
                return Err(Failure::usage("the pattern must start with a success (1)"));
            }
            Ok(MuSource::Periodic(pattern))
        }
    }
}

fn cmd_simulate(
    config: &Path,
    mu: &str,
    seeds: Option<u64>,
    disturbance: Option<Disturbance>,
    controller: Option<PathBuf>,
    csv_out: Option<PathBuf>,
) -> CmdResult {
    let cfg = load_config(config)?;
    let source = parse_mu_source(mu)?;
    let controller = configured_controller(&cfg, controller)?;
    let lifted = build_lifted_graph(&cfg.constraint).ok();
    let opts = cfg.simulation;
    let seeds = seeds.unwrap_or(opts.seeds).max(1);
    let (q, n, horizon) = (cfg.plant.q(), cfg.plant.n(), opts.horizon);
    let x0 = DVector::zeros(n);
    let run = |mu: &LossSequence, w: &[DVector<f64>]| -> Result<SimulationTrace, Failure> {
        Ok(simulate_controller(&cfg.plant, &controller, lifted.as_ref(), &cfg.strategy, mu, w, &x0)?)
    };

    let (gain, trace) = match source {
        MuSource::Periodic(pattern) => match disturbance.unwrap_or(Disturbance::Step) {
            Disturbance::Step => {
                let sweep = step_sweep(
                    &cfg.plant,
                    &controller,
                    lifted.as_ref(),
                    &cfg.strategy,
                    &pattern,
                    opts.t_sweep,
                )?;
                println!("best step length T = {}", sweep.best_t);
                (sweep.gain, sweep.trace)
            }
            kind => {
                let mu = LossSequence::periodic(&pattern, horizon);
                let mut traces = Vec::new();
                for seed in 0..seeds {
                    traces.push(run(&mu, &disturbance_signal(kind, q, horizon, seed))?);
                }
                best_of(traces)?
            }
        },
        MuSource::Random => {
            let kind = disturbance.unwrap_or(Disturbance::Random);
            let mut traces = Vec::new();
            for seed in 0..seeds {
                let mu = random_admissible(&cfg.constraint, horizon, seed)?;
                traces.push(run(&mu, &disturbance_signal(kind, q, horizon, seed))?);
            }
            best_of(traces)?
        }
        MuSource::Worst => {
            let Controller::Static(k) = &controller else {
                return Err(Failure::usage("worst-case search needs a static controller"));
            };
            if disturbance.is_some() {
                return Err(Failure::usage(
                    "worst-case search chooses its own disturbance; drop --disturbance",
                ));
            }
            let budget = usize::try_from(seeds).unwrap_or(usize::MAX);
            let res = worst_case_search_seeded(
                &cfg.plant,
                k,
                &cfg.strategy,
                &cfg.constraint,
                horizon,
                budget,
                0,
            )?;
            if res.budget_exhausted {
                println!("note: search budget exhausted; result is the best found");
            }
            println!("candidates = {}", res.candidates.len());
            let trace = run(&res.mu, &res.w)?;
            (empirical_gain(std::slice::from_ref(&trace))?, trace)
        }
    };
    println!("gamma_sim = {}", sig4(gain));
    if let Some(path) = csv_out {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        write_atomic(&path, &buf)?;
    }
    Ok(0)
}

fn disturbance_signal(kind: Disturbance, q: usize, horizon: usize, seed: u64) -> Vec<DVector<f64>> {
    match kind {
        Disturbance::Step => step_disturbance(q, horizon / 2, horizon),
        Disturbance::Zero => vec![DVector::zeros(q); horizon],
        Disturbance::Random => random_disturbance(q, horizon, seed),
    }
}

fn best_of(traces: Vec<SimulationTrace>) -> Result<(f64, SimulationTrace), Failure> {
    let mut best: Option<(f64, SimulationTrace)> = None;
    for t in traces {
        let g = empirical_gain(std::slice::from_ref(&t))?;
        if best.as_ref().is_none_or(|(b, _)| g > *b) {
            best = Some((g, t));
        }
    }
    best.ok_or_else(|| Failure::usage("no simulation was run"))
}

fn cmd_check(mu: &str, constraint: &str) -> CmdResult {
    let c: WhrtConstraint = constraint.parse().map_err(Failure::usage)?;
    let seq: LossSequence = mu.parse().map_err(Failure::usage)?;
    if seq.is_empty() {
        return Err(Failure::usage("empty loss sequence"));
    }
    match c.first_violation(&seq) {
        None => {
            println!("satisfied: {seq} meets {c}");
            Ok(0)
        }
        Some(start) => {
            println!(
                "violated: window [{start},{}] of {seq} breaks {c}",
                start + c.s() - 1
            );
            Ok(1)
        }
    }
}
