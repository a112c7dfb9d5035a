use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vaxsim::harness::{self, RunOptions};
use vaxsim::io;
use vaxsim::net::{Geometry, NetworkParams, PopulationDist, SynthParams};
use vaxsim::policy::Policy;
use vaxsim::scenario::{load_world, Instance, ScenarioConfig, WorldSpec};
use vaxsim::{Error, Result};

#[derive(Parser)]
#[command(name = "vaxsim", version, about = "Metapopulation vaccine allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a mobility network from files or a synthetic grid and write it out.
    BuildNet(BuildNet),
    /// Run one scenario and export its traces.
    Simulate(Simulate),
    /// Run independently seeded instances and export summary tables.
    Replicate(Replicate),
    /// Compare a run against a population-based baseline run.
    Gains(Gains),
}

#[derive(Args)]
struct BuildNet {
    /// Take the world and network parameters from a scenario file.
    #[arg(long, conflicts_with_all = ["nodes", "synthetic"])]
    config: Option<PathBuf>,
    /// Node table `id,lat,lon,population,agent_id`.
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Airport table `id,lat,lon`.
    #[arg(long, requires = "nodes")]
    airports: Option<PathBuf>,
    /// Flight table `origin,destination,flow` between airport ids.
    #[arg(long, requires = "airports")]
    flights: Option<PathBuf>,
    /// Flight rows are undirected totals.
    #[arg(long, requires = "flights")]
    undirected_flights: bool,
    #[arg(long, value_enum, default_value_t = GeometryArg::Spherical)]
    geometry: GeometryArg,
    /// Generate a planar grid world instead of reading files.
    #[arg(long, conflicts_with = "nodes")]
    synthetic: bool,
    #[arg(long, default_value_t = 200)]
    n_nodes: usize,
    #[arg(long, default_value_t = 5)]
    agents: usize,
    #[arg(long, default_value_t = 4)]
    n_airports: usize,
    #[arg(long, default_value_t = 50.0)]
    spacing_km: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ground_radius_km: Option<f64>,
    #[arg(long)]
    commute_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Spherical,
    Planar,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct Simulate {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<Policy>,
    #[arg(long, value_enum)]
    sharing: Option<Toggle>,
    #[arg(long)]
    budget_multiplier: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Solve agents one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct Replicate {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<Policy>,
    #[arg(long, value_enum)]
    sharing: Option<Toggle>,
    #[arg(long)]
    budget_multiplier: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct Gains {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    /// Also write the report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_policy(s: &str) -> std::result::Result<Policy, String> {
    s.parse()
}

fn apply_overrides(
    cfg: &mut ScenarioConfig,
    policy: Option<Policy>,
    sharing: Option<Toggle>,
    multiplier: Option<f64>,
) -> Result<()> {
    if let Some(p) = policy {
        cfg.policy = p;
    }
    if let Some(s) = sharing {
        cfg.sharing = matches!(s, Toggle::On);
    }
    if let Some(m) = multiplier {
        cfg.budget_multiplier = m;
    }
    cfg.validate()
}

fn build_net(args: BuildNet) -> Result<()> {
    let (spec, mut params) = if let Some(path) = &args.config {
        let cfg = ScenarioConfig::load(path)?;
        (cfg.world, cfg.network)
    } else if args.synthetic {
        let synth = SynthParams {
            nodes: args.n_nodes,
            agents: args.agents,
            spacing_km: args.spacing_km,
            population: PopulationDist::default(),
            airports: args.n_airports,
            air_fraction: 0.01,
            seed: args.seed,
        };
        (WorldSpec::Synthetic(synth), NetworkParams::default())
    } else if let Some(nodes) = args.nodes {
        let geometry = match args.geometry {
            GeometryArg::Spherical => Geometry::Spherical,
            GeometryArg::Planar => Geometry::Planar,
        };
        let spec = WorldSpec::Files {
            nodes,
            airports: args.airports,
            flights: args.flights,
            geometry,
            undirected_flights: args.undirected_flights,
        };
        (spec, NetworkParams::default())
    } else {
        return Err(Error::Invalid("one of --config, --nodes or --synthetic is required".into()));
    };
    if let Some(r) = args.ground_radius_km {
        params.ground_radius_km = r;
    }
    if let Some(a) = args.commute_fraction {
        params.commute_fraction = a;
    }
    let net = load_world(&spec, &params)?;
    io::write_network(&net, &args.out, args.overwrite)?;
    println!(
        "{} nodes, {} agents, {} arcs, rho = {:.6} -> {}",
        net.nodes.len(),
        net.agent_count(),
        net.flows.edge_count(),
        net.flows.rho(),
        args.out.display()
    );
    Ok(())
}

fn simulate(args: Simulate) -> Result<()> {
    let mut cfg = ScenarioConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    apply_overrides(&mut cfg, args.policy, args.sharing, args.budget_multiplier)?;
    let start = Instant::now();
    let net = load_world(&cfg.world, &cfg.network)?;
    let instance = Instance::generate(&cfg, &net)?;
    let result = harness::run(&cfg, &net, &instance, RunOptions { parallel_agents: !args.sequential })?;
    let elapsed = start.elapsed();
    io::export_run(&result, &args.out, args.overwrite)?;
    let last = result.final_totals();
    println!(
        "policy {} seed {} sharing {}: {} periods in {:.2?}",
        cfg.policy,
        cfg.seed,
        if cfg.sharing { "on" } else { "off" },
        cfg.horizon,
        elapsed
    );
    println!("final S {:.1}  I {:.1}  R {:.1}  D {:.1}", last.s, last.i, last.r, last.d);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn replicate(args: Replicate) -> Result<()> {
    if args.n == 0 {
        return Err(Error::Invalid("--n must be at least 1".into()));
    }
    let mut cfg = ScenarioConfig::load(&args.config)?;
    apply_overrides(&mut cfg, args.policy, args.sharing, args.budget_multiplier)?;
    let start = Instant::now();
    let net = load_world(&cfg.world, &cfg.network)?;
    let seeds: Vec<u64> = (0..args.n as u64).map(|k| args.seed_base + k).collect();
    let stats = harness::replicate(&cfg, &net, &seeds)?;
    let files = io::export_replicate(&stats, &cfg, &args.out, args.overwrite)?;
    println!("{} instances of policy {} in {:.2?}", args.n, cfg.policy, start.elapsed());
    if let Some(world) = stats.gains.first() {
        println!(
            "world gain vs pb: cumulative {:.3}% (sd {:.3}), last period {:.3}% (sd {:.3})",
            world.cumulative.mean, world.cumulative.std, world.last.mean, world.last.std
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn gains(args: Gains) -> Result<()> {
    let run = io::import_run(&args.run)?;
    let base = io::import_run(&args.baseline)?;
    let report = harness::gains(&run, &base)?;
    println!("{:<12} {:>14} {:>14}", "region", "cumulative_%", "last_%");
    for r in &report.regions {
        println!("{:<12} {:>14.4} {:>14.4}", r.region, r.cumulative_pct, r.last_pct);
    }
    if let Some(path) = &args.out {
        io::write_gains(path, &report)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildNet(a) => build_net(a),
        Command::Simulate(a) => simulate(a),
        Command::Replicate(a) => replicate(a),
        Command::Gains(a) => gains(a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
