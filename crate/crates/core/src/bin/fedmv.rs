//! Experiment front door.
//!
//! `fedmv run` trains one variant and writes its artifacts; `fedmv
//! check-config` resolves and validates a configuration without running;
//! `fedmv gen-data` stages a synthetic interaction corpus in the standard
//! file layout.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the
//! `--config` file (`key = value` lines), `FEDMV_*` environment variables,
//! then command-line flags. `check-config` prints the fully resolved
//! configuration in config-file syntax.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedmv_core::data::synthetic::{write_synthetic_dataset, SynthParams};
use fedmv_core::experiment::{env_overrides, parse_config_file, run, ExperimentSpec};
use fedmv_core::Error;

#[derive(Parser)]
#[command(
    name = "fedmv",
    about = "Federated multi-view two-tower recommendation experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a variant and write metrics, curves and checkpoints.
    Run(ConfigArgs),
    /// Resolve and validate a configuration, printing the echo.
    CheckConfig(ConfigArgs),
    /// Write a synthetic interaction corpus in the standard layout.
    GenData(GenDataArgs),
}

/// Flags mirror config-file keys one to one; anything not given here falls
/// back to the environment, the config file, then the defaults.
#[derive(Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; omit to stage a synthetic corpus under OUT/data.
    #[arg(long)]
    data_dir: Option<String>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: Option<String>,
    /// fl-mv-dssm, semi, fl-dssm-v1, fl-dssm-v2, centralized-v1 or
    /// centralized-v2.
    #[arg(long)]
    variant: Option<String>,
    /// random, cs-users, cs-items or cs-users-items.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    /// Repeated model builds with distinct derived seeds.
    #[arg(long)]
    builds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Softmax sharpness of the relevance posterior.
    #[arg(long)]
    gamma: Option<String>,
    /// Negatives sampled per positive.
    #[arg(long)]
    neg: Option<String>,
    /// Noise multiplier; 0 disables the privacy mechanism.
    #[arg(long)]
    dp_sigma: Option<String>,
    #[arg(long)]
    dp_clip: Option<String>,
    #[arg(long)]
    dp_delta: Option<String>,
    /// Views subsampled per local aggregation; 0 means all.
    #[arg(long)]
    dp_batch: Option<String>,
    /// true routes server aggregation through the masked-sum protocol.
    #[arg(long)]
    secure_agg: Option<String>,
    /// true, false, or auto (variant decides).
    #[arg(long)]
    aggregate_user: Option<String>,
    #[arg(long)]
    clients_per_round: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    client_lr: Option<String>,
    #[arg(long)]
    server_lr: Option<String>,
    /// adam or sgd.
    #[arg(long)]
    server_opt: Option<String>,
    #[arg(long)]
    local_steps: Option<String>,
    /// Latent view dimensionality.
    #[arg(long)]
    svd_dim: Option<String>,
    #[arg(long)]
    svd_iters: Option<String>,
    /// Evaluate every N rounds (the final round always evaluates).
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    topk: Option<String>,
    /// Sampled non-interacted items per held-out positive in the AUC.
    #[arg(long)]
    eval_negatives: Option<String>,
    /// Comma-separated hidden layer widths, e.g. 64,32,16.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    synth_users: Option<String>,
    #[arg(long)]
    synth_items: Option<String>,
    #[arg(long)]
    synth_interactions: Option<String>,
}

impl ConfigArgs {
    fn flag_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::new();
        let mut push = |key: &str, value: &Option<String>| {
            if let Some(v) = value {
                pairs.push((key.to_string(), v.clone()));
            }
        };
        push("data-dir", &self.data_dir);
        push("out", &self.out);
        push("variant", &self.variant);
        push("scenario", &self.scenario);
        push("rounds", &self.rounds);
        push("builds", &self.builds);
        push("seed", &self.seed);
        push("gamma", &self.gamma);
        push("neg", &self.neg);
        push("dp-sigma", &self.dp_sigma);
        push("dp-clip", &self.dp_clip);
        push("dp-delta", &self.dp_delta);
        push("dp-batch", &self.dp_batch);
        push("secure-agg", &self.secure_agg);
        push("aggregate-user", &self.aggregate_user);
        push("clients-per-round", &self.clients_per_round);
        push("batch-size", &self.batch_size);
        push("client-lr", &self.client_lr);
        push("server-lr", &self.server_lr);
        push("server-opt", &self.server_opt);
        push("local-steps", &self.local_steps);
        push("svd-dim", &self.svd_dim);
        push("svd-iters", &self.svd_iters);
        push("eval-every", &self.eval_every);
        push("topk", &self.topk);
        push("eval-negatives", &self.eval_negatives);
        push("hidden", &self.hidden);
        push("synth-users", &self.synth_users);
        push("synth-items", &self.synth_items);
        push("synth-interactions", &self.synth_interactions);
        pairs
    }

    fn resolve(&self) -> Result<ExperimentSpec, Error> {
        let mut spec = ExperimentSpec::default();
        if let Some(path) = &self.config {
            let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            spec.apply(&parse_config_file(&body, &path.display().to_string())?)?;
        }
        spec.apply(&env_overrides())?;
        spec.apply(&self.flag_pairs())?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Directory to write the corpus files into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 943)]
    users: usize,
    #[arg(long, default_value_t = 1682)]
    items: usize,
    #[arg(long, default_value_t = 100_000)]
    interactions: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

fn report(err: &Error) {
    match err {
        Error::Config(list) => {
            eprintln!("configuration errors:");
            for e in list {
                eprintln!("  - {e}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run(args) => {
            let spec = match args.resolve() {
                Ok(s) => s,
                Err(e) => {
                    report(&e);
                    return ExitCode::from(2);
                }
            };
            match run(&spec) {
                Ok(summary) => {
                    println!(
                        "variant={} scenario={} rounds={} builds={}",
                        spec.variant.name(),
                        spec.scenario.name(),
                        spec.rounds,
                        spec.builds
                    );
                    let k = spec.topk;
                    let m = &summary.metrics;
                    println!("precision@{k} mean={:.6} std={:.6}", m.precision.mean, m.precision.std);
                    println!("recall@{k} mean={:.6} std={:.6}", m.recall.mean, m.recall.std);
                    println!("ndcg@{k} mean={:.6} std={:.6}", m.ndcg.mean, m.ndcg.std);
                    println!("auc mean={:.6} std={:.6}", m.auc.mean, m.auc.std);
                    if let Some(eps) = summary.final_epsilon {
                        println!("epsilon={:.6}", eps);
                    }
                    println!("artifacts: {}", summary.out_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    report(&e);
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::CheckConfig(args) => match args.resolve() {
            Ok(spec) => {
                print!("{}", spec.echo());
                ExitCode::SUCCESS
            }
            Err(e) => {
                report(&e);
                ExitCode::from(2)
            }
        },
        Cmd::GenData(args) => {
            let params = SynthParams {
                users: args.users,
                items: args.items,
                interactions: args.interactions,
                seed: args.seed,
            };
            match std::fs::create_dir_all(&args.out)
                .map_err(|e| Error::io(&args.out, e))
                .and_then(|()| write_synthetic_dataset(&args.out, &params))
            {
                Ok(ds) => {
                    println!(
                        "wrote {} users, {} items, {} interactions to {}",
                        ds.users.len(),
                        ds.items.len(),
                        ds.interactions.len(),
                        args.out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    report(&e);
                    ExitCode::FAILURE
                }
            }
        }
    }
}
