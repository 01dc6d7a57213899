use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use floodwatch::ingest::{measure_pool_sweep, CaptureConfig, SweepRow};
use floodwatch::registry::CameraRegistry;
use floodwatch::service::pipeline::load_registry;
use floodwatch::service::{run_pipeline, Pipeline, PipelineConfig, RoundMetrics};
use floodwatch::simulator::scenario::{reference_scenario, SimScenario};
use floodwatch::simulator::{spawn_fleet_on, FleetHandle};
use tokio::sync::watch;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "floodwatch", version, about = "Waterlogging sensing over a traffic-camera fleet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheduled pipeline and the read API until interrupted.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        /// Overrides `listen_address`.
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Run capture, classification, mapping and notification a fixed number of times.
    Round {
        #[command(flatten)]
        source: ConfigSource,
        /// Run exactly one round.
        #[arg(long, conflicts_with = "count")]
        once: bool,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        count: u32,
        /// Print metrics as JSON lines instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Serve a synthetic camera fleet and write a registry pointing at it.
    Simulate {
        #[command(flatten)]
        fleet: FleetSource,
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: SocketAddr,
        /// Where to write the registry document for the served fleet.
        #[arg(long)]
        registry_out: Option<PathBuf>,
        /// Stop after this many seconds instead of waiting for Ctrl-C.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Time one capture round per pool size.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        pools: Vec<usize>,
        /// Registry to capture from; without it a simulated fleet is served.
        #[arg(long, conflicts_with_all = ["scenario", "seed"])]
        registry: Option<PathBuf>,
        #[command(flatten)]
        fleet: FleetSource,
        /// Per-stream deadline in seconds.
        #[arg(long, default_value_t = 15.0)]
        deadline: f64,
    },
    /// Parse a registry document and print its network summary.
    ValidateRegistry {
        path: PathBuf,
        /// Accept a `Name =` prefix, `...` placeholders and trailing commas.
        #[arg(long)]
        lenient: bool,
    },
}

#[derive(Args)]
struct ConfigSource {
    #[arg(long, short, conflicts_with_all = ["registry", "data_dir"])]
    config: Option<PathBuf>,
    /// Registry for a config-less run with the stub classifier.
    #[arg(long, requires = "data_dir")]
    registry: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    pool: Option<usize>,
    /// Per-stream deadline in seconds.
    #[arg(long)]
    deadline: Option<f64>,
}

#[derive(Args)]
struct FleetSource {
    /// Scenario JSON file; the reference fleet when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Placement seed for the reference fleet.
    #[arg(long)]
    seed: Option<u64>,
}

impl FleetSource {
    fn load(&self) -> Result<SimScenario> {
        match &self.scenario {
            Some(path) => {
                if self.seed.is_some() {
                    bail!("--seed only applies to the reference fleet");
                }
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))
            }
            None => Ok(reference_scenario(self.seed.unwrap_or(0))),
        }
    }
}

impl ConfigSource {
    fn load(&self) -> Result<PipelineConfig> {
        let mut config = match (&self.config, &self.registry, &self.data_dir) {
            (Some(path), _, _) => PipelineConfig::load(path)?,
            (None, Some(reg), Some(data)) => {
                let mut c = PipelineConfig::new(reg, data);
                c.apply_env(|k| std::env::var(k).ok())?;
                c
            }
            _ => bail!("either --config or --registry with --data-dir is required"),
        };
        if let Some(pool) = self.pool {
            config.capture.pool_size = pool;
        }
        if let Some(d) = self.deadline {
            config.capture.per_stream_deadline = seconds(d)?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn seconds(s: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(s).map_err(|_| anyhow::anyhow!("invalid duration {s}"))
}

fn shutdown_on_ctrl_c() -> watch::Receiver<bool> {
    let (tx, rx) = watch::channel(false);
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            tracing::info!("interrupt received, finishing the current round");
            let _ = tx.send(true);
        }
    });
    rx
}

fn print_metrics(m: &RoundMetrics) {
    println!(
        "round {}: {} frames, capture {} ms, classify {} ms, water level {} ms, map {} ms, notify {} ms, total {} ms",
        m.round_id,
        m.frames,
        m.capture_wall_ms,
        m.classify_wall_ms,
        m.level_wall_ms,
        m.map_wall_ms,
        m.notify_wall_ms,
        m.total_wall_ms
    );
    let s = &m.statuses;
    println!(
        "  flood {}  normal {}  unknown {}  no video {}  deliveries {}",
        s.flood, s.normal, s.unknown, s.no_video, m.deliveries
    );
    for (kind, n) in &m.failures {
        println!("  {kind}: {n}");
    }
}

fn print_sweep(rows: &[SweepRow]) {
    println!("{:>6} {:>10} {:>8} {:>9} {:>6}", "pool", "wall_ms", "frames", "failures", "peak");
    for r in rows {
        println!(
            "{:>6} {:>10} {:>8} {:>9} {:>6}",
            r.pool_size,
            r.wall.as_millis(),
            r.frames,
            r.failures,
            r.peak_in_flight
        );
    }
}

async fn serve_fleet(source: &FleetSource, bind: SocketAddr) -> Result<(SimScenario, FleetHandle, CameraRegistry)> {
    let scenario = source.load()?;
    let (_, fleet) = spawn_fleet_on(&scenario, bind).await?;
    let registry = fleet.registry(&scenario)?;
    Ok((scenario, fleet, registry))
}

fn write_registry(path: &Path, registry: &CameraRegistry) -> Result<()> {
    // Readers poll for the file, so it must appear complete.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, registry.to_document()).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

async fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, listen } => {
            let mut config = PipelineConfig::load(&config)?;
            if let Some(addr) = listen {
                config.listen_address = addr;
            }
            run_pipeline(config, shutdown_on_ctrl_c(), None).await?;
        }
        Command::Round { source, once, count, json } => {
            let pipeline = Pipeline::new(source.load()?)?;
            let rounds = if once { 1 } else { count };
            for _ in 0..rounds {
                let out = pipeline.run_round_once().await?;
                if json {
                    println!("{}", serde_json::to_string(&out.metrics)?);
                } else {
                    print_metrics(&out.metrics);
                }
            }
        }
        Command::Simulate {
            fleet,
            bind,
            registry_out,
            duration,
        } => {
            let (scenario, handle, registry) = serve_fleet(&fleet, bind).await?;
            if let Some(path) = &registry_out {
                write_registry(path, &registry)?;
            }
            println!("serving {} cameras on {}", scenario.cameras.len(), handle.base_url());
            for (network, n) in registry.network_summary() {
                println!("  {network}: {n}");
            }
            match duration {
                Some(s) => tokio::time::sleep(seconds(s)?).await,
                None => tokio::signal::ctrl_c().await?,
            }
            handle.shutdown();
        }
        Command::Sweep {
            pools,
            registry,
            fleet,
            deadline,
        } => {
            if pools.contains(&0) {
                bail!("pool sizes must be positive");
            }
            let base = CaptureConfig::default().with_deadline(seconds(deadline)?);
            let (registry, handle) = match registry {
                Some(path) => (load_registry(&path, false)?, None),
                None => {
                    let (_, handle, registry) = serve_fleet(&fleet, "127.0.0.1:0".parse()?).await?;
                    (registry, Some(handle))
                }
            };
            let rows = measure_pool_sweep(&registry, &pools, &base).await?;
            print_sweep(&rows);
            if let Some(h) = handle {
                h.shutdown();
            }
        }
        Command::ValidateRegistry { path, lenient } => {
            let registry = load_registry(&path, lenient)?;
            println!("{}: {} cameras", path.display(), registry.len());
            for (network, n) in registry.network_summary() {
                println!("  {network}: {n}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
