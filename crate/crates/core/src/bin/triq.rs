use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use triq::cli::{self, ExperimentConfig, ExperimentKind, HullChoice, RunReport};
use triq::graphdist::{GraphExperiment, GraphKind, GraphModelKind};
use triq::gvf::{EnvKind, GvfHead, SplitMode};
use triq::nearness::{NearnessSolver, NeuralNearness};
use triq::norm2d::Norm2dModel;
use triq::Error;

#[derive(Parser)]
#[command(name = "triq", version, about = "Train and evaluate neural norms and metrics")]
struct Cli {
    /// TOML experiment config; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a norm to a 2D convex hull.
    Norm2d(Norm2dArgs),
    /// Metric nearness with triangle fixing and neural solvers.
    Nearness(NearnessArgs),
    /// Shortest-path regression on synthetic graphs.
    Graph(GraphArgs),
    /// Goal-conditioned values on gridworlds.
    Gvf(GvfArgs),
    /// Sampled axiom checks on every head family at random init.
    Axioms(AxiomsArgs),
    /// Embed the four-cycle with Euclidean, Deep Norm and Wide Norm heads.
    Figure1,
    /// Consolidate run directories into comparison tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct Norm2dArgs {
    #[arg(long)]
    model: Option<Norm2dModel>,
    /// square, diamond or random.
    #[arg(long)]
    hull: Option<String>,
    /// Asymmetric random hull.
    #[arg(long)]
    asym: bool,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct NearnessArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    asym: bool,
    /// Comma-separated subset of tf, eucl, wn, dn.
    #[arg(long, value_delimiter = ',')]
    solver: Vec<NearnessSolver>,
    /// Narrower networks for small instances.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    kind: Option<GraphKind>,
    #[arg(long)]
    model: Option<GraphModelKind>,
    /// Desk-scale graph, dataset and schedule.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct GvfArgs {
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    asym: bool,
    #[arg(long)]
    head: Option<GvfHead>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct AxiomsArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories (or report.json files).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn kind_of(command: &Command) -> Option<ExperimentKind> {
    Some(match command {
        Command::Norm2d(_) => ExperimentKind::Norm2d,
        Command::Nearness(_) => ExperimentKind::Nearness,
        Command::Graph(_) => ExperimentKind::Graph,
        Command::Gvf(_) => ExperimentKind::Gvf,
        Command::Axioms(_) => ExperimentKind::Axioms,
        Command::Figure1 => ExperimentKind::Figure1,
        Command::Report(_) => return None,
    })
}

fn build_config(cli: &Cli, kind: ExperimentKind) -> triq::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if cfg.experiment != kind {
                return Err(Error::InvalidConfig(format!(
                    "field `experiment`: config is for '{}' but the '{}' subcommand was used",
                    cfg.experiment.name(),
                    kind.name()
                )));
            }
            cfg
        }
        None => ExperimentConfig::new(kind),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    match &cli.command {
        Command::Norm2d(a) => {
            let s = &mut cfg.norm2d;
            if let Some(m) = a.model {
                s.model = m;
            }
            if let Some(h) = &a.hull {
                s.hull = match h.as_str() {
                    "square" => HullChoice::Square,
                    "diamond" => HullChoice::Diamond,
                    "random" => HullChoice::Random,
                    other => return Err(Error::InvalidConfig(format!("--hull: unknown hull '{other}'"))),
                };
            }
            if a.asym {
                s.symmetric = false;
            }
            if let Some(t) = a.train_size {
                s.train_size = t;
            }
            if let Some(e) = a.epochs {
                s.training.epochs = e;
            }
        }
        Command::Nearness(a) => {
            let s = &mut cfg.nearness;
            if a.desk {
                s.neural = NeuralNearness::desk();
                s.n = 50;
            }
            if let Some(n) = a.n {
                s.n = n;
            }
            if a.asym {
                s.symmetric = false;
            }
            if !a.solver.is_empty() {
                s.solvers = a.solver.clone();
            }
            if let Some(e) = a.epochs {
                s.neural.schedule.epochs = e;
            }
        }
        Command::Graph(a) => {
            let g = &mut cfg.graph;
            let kind = a.kind.unwrap_or(g.kind);
            let model = a.model.unwrap_or(g.model);
            if a.desk {
                *g = GraphExperiment::desk(kind, model);
            } else if a.kind.is_some() {
                *g = GraphExperiment { kind, model, ..GraphExperiment::full(kind, model) };
            }
            g.kind = kind;
            g.model = model;
            if let Some(s) = a.size {
                g.size = s;
            }
            if let Some(t) = a.train_size {
                g.train_size = t;
            }
            if let Some(e) = a.epochs {
                g.schedule.epochs = e;
            }
        }
        Command::Gvf(a) => {
            let g = &mut cfg.gvf;
            if let Some(e) = a.env {
                g.env = e;
            }
            if a.asym {
                g.asymmetric = true;
            }
            if let Some(h) = a.head {
                g.head = h;
            }
            if let Some(f) = a.fraction {
                g.fraction = f;
            }
            if let Some(s) = a.split {
                g.split = s;
            }
            if let Some(e) = a.epochs {
                g.td.epochs = e;
            }
        }
        Command::Axioms(a) => {
            if let Some(d) = a.dim {
                cfg.axioms.dim = d;
            }
            if let Some(s) = a.samples {
                cfg.axioms.samples = s;
            }
        }
        Command::Figure1 | Command::Report(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &RunReport) {
    for s in &report.seeds {
        match &s.error {
            Some(e) => eprintln!("seed {}: failed: {e}", s.seed),
            None => {
                let line: Vec<String> = s.metrics.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
                println!("seed {} ({:.1}s): {}", s.seed, s.wall_time_s, line.join(" "));
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match kind_of(&cli.command) {
        Some(kind) => {
            let cfg = match build_config(&cli, kind) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            match cli::run(&cfg) {
                Ok(report) => {
                    print_report(&report);
                    println!("report written to {}", cfg.out.join(cli::REPORT_FILE).display());
                    if report.failed() {
                        ExitCode::from(2)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e @ Error::InvalidConfig(_)) => {
                    eprintln!("config error: {e}");
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(2)
                }
            }
        }
        None => {
            let Command::Report(args) = &cli.command else { unreachable!("only report has no experiment kind") };
            let runs: Result<Vec<RunReport>, _> = args.runs.iter().map(|p| RunReport::load(p)).collect();
            let runs = match runs {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("config error: cannot read run report: {e}");
                    return ExitCode::from(1);
                }
            };
            let tables = match cli::report(&runs) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            for t in &tables {
                println!("{}", t.to_text());
            }
            if let Some(out) = &cli.out {
                let write = || -> triq::Result<()> {
                    std::fs::create_dir_all(out)?;
                    for t in &tables {
                        let name = t.title.to_lowercase().replace([' ', ':'], "_").replace("__", "_");
                        std::fs::write(out.join(format!("{name}.csv")), t.to_csv()?)?;
                        std::fs::write(out.join(format!("{name}.txt")), t.to_text())?;
                    }
                    Ok(())
                };
                if let Err(e) = write() {
                    eprintln!("run failed: {e}");
                    return ExitCode::from(2);
                }
            }
            ExitCode::SUCCESS
        }
    }
}
