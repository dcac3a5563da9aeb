use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tastebud::catalog::{encode_rows, items_to_json_lines, DietType, KernelConfig};
use tastebud::elicitation::{Phase, StrategyConfig, Strategy};
use tastebud::rng::derive_seed;
use tastebud::simulation::{run_experiment, run_session, ExperimentConfig, SessionConfig, SimulatedUser};
use tastebud::synthetic::{SyntheticData, SyntheticSpec};
use tastebud_service::{system_clock, Engines, Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "tastebud", version, about = "Meal recommendation from image preferences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "TASTEBUD_CONFIG")]
        config: PathBuf,
    },
    /// Run the simulated-user experiment and write a JSON report.
    Simulate {
        /// Experiment config as JSON; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-cell accuracy and entropy CSVs with this prefix.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Validate a catalog and embedding file and print load statistics.
    Ingest {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Exit non-zero if any diet fails to load.
        #[arg(long)]
        check: bool,
    },
    /// Time elicitation steps on a real catalog.
    Bench {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "none")]
        diet: DietType,
        #[arg(long, default_value_t = 20)]
        sessions: usize,
        #[arg(long, default_value_t = 15)]
        iterations: u32,
    },
    /// Write a synthetic catalog and embedding file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        items: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 20)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { config } => serve(config),
        Command::Simulate { config, out, csv } => simulate(config, out, csv),
        Command::Ingest { catalog, embeddings, check } => ingest(catalog, embeddings, check),
        Command::Bench { catalog, embeddings, diet, sessions, iterations } => {
            bench(catalog, embeddings, diet, sessions, iterations)
        }
        Command::Synth { out, items, dim, clusters, seed } => synth(out, items, dim, clusters, seed),
    }
}

fn serve(path: PathBuf) -> Result<()> {
    let config = ServiceConfig::load(&path)?;
    let engines = Engines::load(&config.catalog_path, &config.embeddings_path, &config.diets, &config.kernel())?;
    for s in engines.summaries() {
        match &s.error {
            None => tracing::info!(diet = %s.diet, items = s.items, edges = s.edges, "diet loaded"),
            Some(e) => tracing::warn!(diet = %s.diet, error = %e, "diet unavailable"),
        }
    }
    let bind = config.bind.clone();
    let service = Arc::new(Service::new(config, Arc::new(engines), system_clock())?);
    tracing::info!(sessions = service.session_ids().len(), "sessions recovered");

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let sweeper = service.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                let s = sweeper.clone();
                if let Ok(n) = tokio::task::spawn_blocking(move || s.sweep_idle()).await {
                    if n > 0 {
                        tracing::info!(count = n, "idle sessions abandoned");
                    }
                }
            }
        });
        let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
        tracing::info!(%bind, "listening");
        axum::serve(listener, tastebud_service::http::router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn simulate(config: Option<PathBuf>, out: PathBuf, csv: Option<PathBuf>) -> Result<()> {
    let config: ExperimentConfig = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let report = run_experiment(&config)?;
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    if let Some(prefix) = csv {
        let base = prefix.display().to_string();
        std::fs::write(format!("{base}_accuracy.csv"), report.to_csv())?;
        std::fs::write(format!("{base}_entropy.csv"), report.entropy_csv())?;
    }
    for cell in &report.cells {
        println!("{:<14} accuracy {:.3}", cell.label(), cell.mean_accuracy);
    }
    Ok(())
}

fn ingest(catalog: PathBuf, embeddings: PathBuf, check: bool) -> Result<()> {
    let engines = Engines::load(&catalog, &embeddings, &DietType::ALL, &KernelConfig::default())?;
    println!("{}", serde_json::to_string_pretty(engines.summaries())?);
    if check && engines.summaries().iter().any(|s| s.error.is_some()) {
        bail!("some diets could not be loaded");
    }
    Ok(())
}

fn millis(d: &mut [Duration], q: f64) -> f64 {
    if d.is_empty() {
        return f64::NAN;
    }
    d.sort();
    let k = ((d.len() - 1) as f64 * q).round() as usize;
    d[k].as_secs_f64() * 1e3
}

fn bench(catalog: PathBuf, embeddings: PathBuf, diet: DietType, sessions: usize, iterations: u32) -> Result<()> {
    let engines = Engines::load(&catalog, &embeddings, &[diet], &KernelConfig::default())?;
    let engine = engines.get(diet).context("diet did not load")?;
    let space = engine.space();
    let config = SessionConfig::new(StrategyConfig::new(Strategy::LE_EE), iterations);
    let (mut grid, mut pair) = (Vec::new(), Vec::new());
    for s in 0..sessions {
        let user = SimulatedUser::sample(space, 0.1, derive_seed(0, &[b"bench-user", &s.to_le_bytes()]));
        let result = run_session(space, &user, &config, derive_seed(0, &[b"bench", &s.to_le_bytes()]))?;
        for t in result.timings {
            match t.phase {
                Phase::Grid10 => grid.push(t.total()),
                Phase::Pair => pair.push(t.total()),
            }
        }
    }
    println!("items {}  edges {}", space.len(), space.index().edge_count());
    println!("grid  median {:.3} ms  p95 {:.3} ms", millis(&mut grid, 0.5), millis(&mut grid, 0.95));
    println!("pair  median {:.3} ms  p95 {:.3} ms", millis(&mut pair, 0.5), millis(&mut pair, 0.95));
    Ok(())
}

fn synth(out: PathBuf, items: usize, dim: usize, clusters: usize, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        items,
        dim,
        clusters,
        seed,
        ..SyntheticSpec::default()
    };
    let data = SyntheticData::generate(&spec);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("catalog.jsonl"), items_to_json_lines(&data.items))?;
    let rows = data.rows.iter().map(|(id, v)| (id.as_str(), v.as_slice()));
    std::fs::write(out.join("embeddings.bin"), encode_rows(dim, rows))?;
    println!("wrote {} items to {}", data.items.len(), out.display());
    Ok(())
}
