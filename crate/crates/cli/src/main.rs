use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use sparse_depth::config::RunConfig;
use sparse_depth::runner::{run_experiment, Kind, PoseSource, RunRequest};
use sparse_depth::{Error, Result};

/// Depth from optical flow with sparse supervision: data generation,
/// training, evaluation and the comparative experiments.
#[derive(Parser, Debug)]
#[command(name = "sparse-depth", version)]
struct Cli {
    /// generate, train, eval, sparsity, intrinsics, flow, ablation, probe,
    /// triangulate, dump-filters, or `sweep` together with --kind
    kind: String,
    /// JSON run configuration; missing fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides train.seed and runs experiments on this seed only
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (for triangulate: the depth PFM file)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment of `sweep`: sparsity, intrinsics, flow or ablation
    #[arg(long = "kind", value_name = "KIND")]
    sweep_kind: Option<String>,
    /// Model checkpoint (eval, probe, dump-filters, triangulate --pose probe)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory written by `generate` (eval)
    #[arg(long)]
    data: Option<PathBuf>,
    /// scratch-mlp, pretrained-mlp, scratch-full or pretrained-full
    #[arg(long)]
    regime: Option<String>,
    /// Sample record (.json) written by `generate` (triangulate)
    #[arg(long)]
    pair: Option<PathBuf>,
    /// gt or probe (triangulate)
    #[arg(long, default_value = "gt")]
    pose: String,
    /// Probe weights written by `probe` (triangulate --pose probe)
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Print a training progress line every this many iterations (0 = silent)
    #[arg(long, default_value_t = 100)]
    progress: usize,
}

fn resolve_kind(cli: &Cli) -> Result<Kind> {
    match (cli.kind.as_str(), &cli.sweep_kind) {
        ("sweep", Some(k)) => {
            let kind: Kind = k.parse()?;
            match kind {
                Kind::Sparsity | Kind::Intrinsics | Kind::Flow | Kind::Ablation => Ok(kind),
                _ => Err(Error::Usage(format!("`{k}` is not a sweep"))),
            }
        }
        ("sweep", None) => Err(Error::Usage("sweep needs --kind".into())),
        (k, None) => k.parse(),
        (_, Some(_)) => Err(Error::Usage("--kind only goes with sweep".into())),
    }
}

fn request(cli: &Cli) -> Result<(Kind, RunRequest)> {
    let kind = resolve_kind(cli)?;
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.experiment.seeds = vec![seed];
        overrides.push(format!("--seed {seed}"));
    }
    config.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| match kind {
        Kind::Triangulate => PathBuf::from("depth.pfm"),
        k => PathBuf::from(format!("runs/{k}")),
    });
    if cli.out.is_some() {
        overrides.push(format!("--out {}", out.display()));
    }
    let req = RunRequest {
        config,
        out,
        checkpoint: cli.checkpoint.clone(),
        data_dir: cli.data.clone(),
        regime: cli.regime.as_deref().map(str::parse).transpose()?,
        pair: cli.pair.clone(),
        pose: cli.pose.parse::<PoseSource>()?,
        probe: cli.probe.clone(),
        overrides,
        progress_every: cli.progress,
    };
    Ok((kind, req))
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
    match e {
        Error::MissingFile(p) => body["path"] = json!(p.display().to_string()),
        Error::Field { field, .. } => body["field"] = json!(field),
        _ => {}
    }
    json!({ "error": body })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = request(&cli).and_then(|(kind, req)| run_experiment(kind, &req));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(1)
        }
    }
}
