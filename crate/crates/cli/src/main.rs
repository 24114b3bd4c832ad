//! `repsel` command line. Every analysis command talks to the HTTP service:
//! the one named by `--server`, or a private one started in-process.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use repsel_client::Client;
use repsel_core::api::VoiRequest;
use repsel_core::ensemble::{self, SyntheticSpec, VoiFile};
use repsel_core::geometry::Point3;
use repsel_core::representative::Action;
use repsel_core::session::{ClusterParams, SessionFile};
use repsel_server::AppState;

#[derive(Parser)]
#[command(name = "repsel", version, about = "Representative model selection for reservoir ensembles")]
struct Cli {
    /// Service to talk to; a private in-process server when omitted.
    #[arg(long, global = true, env = "REPSEL_SERVER")]
    server: Option<String>,
    /// Directory that relative manifest paths resolve against.
    #[arg(long, global = true, env = "REPSEL_DATA_DIR", default_value = ".")]
    data_dir: PathBuf,
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic three-family dataset.
    Generate(GenerateArgs),
    /// Load an ensemble and summarize its variance model.
    Variance(SessionArgs),
    /// Cluster over the VOI and print the graph.
    Cluster(ClusterArgs),
    /// Cluster and print only the initial representative set.
    AutoSelect(ClusterArgs),
    /// Variance change from adding a candidate (the top outlier by default).
    Evaluate(EvaluateArgs),
    /// Accept or reject a candidate.
    Decide(DecideArgs),
    /// Fold a controller trace through the gesture engine.
    Replay(ReplayArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Save the current session for later replay.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory; relative to the data directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().seed)]
    seed: u64,
    /// Realizations per family.
    #[arg(long, default_value_t = SyntheticSpec::default().realizations_per_family)]
    per_family: usize,
    /// Grid size as NI,NJ,NK.
    #[arg(long, value_parser = parse_dims, default_value = "20,20,5")]
    dims: (usize, usize, usize),
}

#[derive(Args, Clone)]
struct SessionArgs {
    /// Manifest to load; keeps the server's current session when omitted.
    #[arg(long)]
    manifest: Option<String>,
    /// Restrict variance and evaluation to these properties.
    #[arg(long, value_delimiter = ',')]
    properties: Option<Vec<String>>,
    /// Exported session to import instead of loading a manifest.
    #[arg(long, conflicts_with = "manifest")]
    import: Option<PathBuf>,
    /// VOI file (`{"cells": [{"i":..,"j":..,"k":..}, ..]}`).
    #[arg(long)]
    voi: Option<PathBuf>,
    /// VOI as the cells centered in a box: X0,Y0,Z0,X1,Y1,Z1.
    #[arg(long, value_parser = parse_box, conflicts_with = "voi")]
    voi_box: Option<(Point3, Point3)>,
}

#[derive(Args, Clone)]
struct ClusterArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Histogram bins per axis.
    #[arg(long, default_value_t = ClusterParams::default().bins)]
    bins: usize,
    /// Kernel bandwidth; median pairwise distance when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    /// Property compared by mutual information.
    #[arg(long)]
    property: Option<String>,
    /// Reuse the server's current graph instead of clustering again.
    #[arg(long)]
    no_cluster: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    cluster: ClusterArgs,
    #[arg(long)]
    candidate: Option<usize>,
}

#[derive(Args)]
struct DecideArgs {
    #[command(flatten)]
    cluster: ClusterArgs,
    #[arg(long)]
    candidate: Option<usize>,
    #[arg(long, value_enum)]
    action: ActionArg,
    /// Write the resulting session here.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActionArg {
    Accept,
    Reject,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    /// Compare against this command file and fail on any difference.
    #[arg(long)]
    golden: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    cluster: ClusterArgs,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad dimension {t:?}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected NI,NJ,NK".into()),
    }
}

fn parse_box(s: &str) -> Result<(Point3, Point3), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad coordinate {t:?}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c, d, e, f] => Ok((Point3::new(a, b, c), Point3::new(d, e, f))),
        _ => Err("expected X0,Y0,Z0,X1,Y1,Z1".into()),
    }
}

fn print<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        println!("{}", text());
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

async fn connect(cli: &Cli) -> Result<Client> {
    if let Some(url) = &cli.server {
        return Ok(Client::new(url.clone()));
    }
    let addr: SocketAddr = "127.0.0.1:0".parse()?;
    let bound = repsel_server::spawn(addr, AppState::new(&cli.data_dir)).await?;
    Ok(Client::new(format!("http://{bound}")))
}

async fn prepare(client: &Client, args: &SessionArgs) -> Result<()> {
    if let Some(m) = &args.manifest {
        client.load_ensemble(m, args.properties.clone()).await?;
    } else if let Some(path) = &args.import {
        let file: SessionFile = read_json(path)?;
        client.import(&file).await?;
    }
    if let Some(path) = &args.voi {
        let voi: VoiFile = read_json(path)?;
        client.set_voi(&VoiRequest::Cells { cells: voi.cells }).await?;
    } else if let Some((anchor, free)) = args.voi_box {
        client.set_voi(&VoiRequest::Volume { anchor, free }).await?;
    }
    Ok(())
}

/// Prepares the session and clusters unless told to reuse the current graph
/// or a session was just imported.
async fn clustered(client: &Client, args: &ClusterArgs) -> Result<repsel_core::api::GraphView> {
    prepare(client, &args.session).await?;
    let reuse = args.no_cluster || (args.session.import.is_some() && args.session.voi.is_none() && args.session.voi_box.is_none());
    if reuse {
        return Ok(client.graph().await?);
    }
    let params = ClusterParams {
        k: args.k,
        seed: args.seed,
        bins: args.bins,
        sigma: args.sigma,
        property: args.property.clone(),
    };
    Ok(client.cluster(&params).await?)
}

async fn top_candidate(client: &Client, candidate: Option<usize>) -> Result<usize> {
    if let Some(c) = candidate {
        return Ok(c);
    }
    match client.graph().await?.ranking.first() {
        Some((c, _)) => Ok(*c),
        None => bail!("every realization is already a member"),
    }
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let json = cli.json;
    match &cli.command {
        Command::Generate(a) => {
            let spec = SyntheticSpec {
                seed: a.seed,
                realizations_per_family: a.per_family,
                dims: a.dims,
                ..SyntheticSpec::default()
            };
            let out = cli.data_dir.join(&a.out);
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let syn = ensemble::generate_synthetic_ensemble(&spec)?;
            let manifest = ensemble::write_dataset(&out, &syn, &spec)?;
            println!("{}", manifest.display());
        }
        Command::Variance(args) => {
            let client = connect(&cli).await?;
            prepare(&client, args).await?;
            let v = client.variance().await?;
            print(json, &v, || {
                let n = v.values.len().max(1) as f64;
                let mean = v.values.iter().sum::<f64>() / n;
                let max = v.values.iter().copied().fold(0.0, f64::max);
                format!(
                    "cells {}  properties {}  realizations {}\nmean {mean:.6}  max {max:.6}",
                    v.cells.len(),
                    v.properties.join(","),
                    v.subset.len()
                )
            })?;
        }
        Command::Cluster(args) => {
            let client = connect(&cli).await?;
            let view = clustered(&client, args).await?;
            print(json, &view, || {
                let mut out = format!("k {}  objective {:.6}  stale {}\n", view.graph.k, view.graph.objective, view.stale);
                for n in &view.graph.nodes {
                    out.push_str(&format!(
                        "{:>4} cluster {} score {:.6}{}\n",
                        n.id,
                        n.cluster,
                        n.score,
                        if n.is_center { " center" } else { "" }
                    ));
                }
                out.push_str(&format!("members {:?}", view.members));
                out
            })?;
        }
        Command::AutoSelect(args) => {
            let client = connect(&cli).await?;
            let view = clustered(&client, args).await?;
            let members = view.members.clone();
            print(json, &members, || {
                members.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" ")
            })?;
        }
        Command::Evaluate(args) => {
            let client = connect(&cli).await?;
            clustered(&client, &args.cluster).await?;
            let c = top_candidate(&client, args.candidate).await?;
            let r = client.evaluate(c).await?;
            print(json, &r, || {
                let a = &r.delta.aggregates;
                format!(
                    "candidate {}  outlier score {:.6}\nmean |delta| {:.6e}  max |delta| {:.6e}  changed fraction {:.4}",
                    r.candidate, r.outlier_score, a.mean_abs_change, a.max_abs_change, a.changed_fraction
                )
            })?;
        }
        Command::Decide(args) => {
            let client = connect(&cli).await?;
            clustered(&client, &args.cluster).await?;
            let c = top_candidate(&client, args.candidate).await?;
            let action = match args.action {
                ActionArg::Accept => Action::Accept,
                ActionArg::Reject => Action::Reject,
            };
            let r = client.decide(c, action).await?;
            if let Some(path) = &args.export {
                write_session(&client, path).await?;
            }
            print(json, &r, || format!("{} {c}\nmembers {:?}", action_name(action), r.members))?;
        }
        Command::Replay(a) => {
            let trace = std::fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
            let client = connect(&cli).await?;
            let commands = client.replay(&trace, None).await?;
            print!("{commands}");
            if let Some(g) = &a.golden {
                let golden = std::fs::read_to_string(g).with_context(|| format!("reading {}", g.display()))?;
                if golden != commands {
                    eprintln!("output differs from {}", g.display());
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Command::Serve(a) => {
            let listener = tokio::net::TcpListener::bind(a.addr).await?;
            // first stdout line announces the bound address
            println!("listening on {}", listener.local_addr()?);
            repsel_server::serve(listener, AppState::new(&cli.data_dir)).await?;
        }
        Command::Export(a) => {
            let client = connect(&cli).await?;
            let args = ClusterArgs {
                no_cluster: a.cluster.no_cluster || a.cluster.session.manifest.is_none(),
                ..a.cluster.clone()
            };
            clustered(&client, &args).await?;
            write_session(&client, &a.out).await?;
            println!("{}", a.out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn action_name(a: Action) -> &'static str {
    match a {
        Action::Accept => "accepted",
        Action::Reject => "rejected",
    }
}

async fn write_session(client: &Client, path: &Path) -> Result<()> {
    let file = client.export().await?;
    std::fs::write(path, serde_json::to_string_pretty(&file)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
