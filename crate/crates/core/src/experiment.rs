//! Experiment orchestration: resolve a configuration, stage data, train one
//! variant across repeated builds, and write every artifact needed to
//! reproduce or compare runs.
//!
//! Configuration comes from four layers, later ones winning: built-in
//! defaults, a line-oriented `key = value` config file, environment
//! variables prefixed `FEDMV_` (key upper-cased, `-` replaced by `_`), and
//! command-line flags. The fully resolved configuration is echoed to
//! `config.echo` in config-file syntax, so any run can be replayed exactly
//! from its own echo.
//!
//! Artifacts, all under the output directory:
//!
//! * `config.echo`: resolved configuration, one sorted `key = value` line
//!   per setting;
//! * `split_manifest.json`: split sizes and cold entity lists;
//! * `curves_b<i>.csv`: long-format `round,metric,value` per build;
//! * `metrics.csv`: `round,variant,metric,mean,std,n_builds` across builds;
//! * `privacy.csv`: `round,epsilon` accounting when a privacy budget is on;
//! * `summary.json`: final metrics, mean and standard deviation per metric;
//! * `item_tower_b<i>.bin` / `user_tower_v<v>_b<i>.bin`: trained weights.
//!
//! Everything written is a pure function of the resolved configuration;
//! re-running a spec reproduces each file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::data::synthetic::{write_synthetic_dataset, SynthParams};
use crate::data::{
    item_features, load_dataset, split_dataset, view1_features, Dataset, Scenario, Split,
    TrigramCatalog, VIEW1_DIM,
};
use crate::dp::DpParams;
use crate::federation::{
    build_clients, run_pooled, run_training, EvalConfig, EvalResult, FederationConfig,
    PooledData, ServerOpt, TrainOutcome,
};
use crate::nn::save_tower;
use crate::rng::{derive_seed, TAG_BUILD};
use crate::svd::{truncated_svd, ImplicitMatrix};
use crate::{Error, Result};

/// Which model family and training regime to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Two views, everything federated.
    FlMvDssm,
    /// Two views, item tower federated, user towers personal.
    Semi,
    /// Single view (demographics), everything federated.
    FlDssmV1,
    /// Single view (latent interaction vector), everything federated.
    FlDssmV2,
    /// Single view (demographics), pooled non-federated training.
    CentralizedV1,
    /// Single view (latent interaction vector), pooled training.
    CentralizedV2,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::FlMvDssm,
        Variant::Semi,
        Variant::FlDssmV1,
        Variant::FlDssmV2,
        Variant::CentralizedV1,
        Variant::CentralizedV2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FlMvDssm => "fl-mv-dssm",
            Variant::Semi => "semi",
            Variant::FlDssmV1 => "fl-dssm-v1",
            Variant::FlDssmV2 => "fl-dssm-v2",
            Variant::CentralizedV1 => "centralized-v1",
            Variant::CentralizedV2 => "centralized-v2",
        }
    }

    /// Views this variant trains on: indices into `[demographics, latent]`.
    fn views(self) -> &'static [usize] {
        match self {
            Variant::FlMvDssm | Variant::Semi => &[0, 1],
            Variant::FlDssmV1 | Variant::CentralizedV1 => &[0],
            Variant::FlDssmV2 | Variant::CentralizedV2 => &[1],
        }
    }

    fn is_pooled(self) -> bool {
        matches!(self, Variant::CentralizedV1 | Variant::CentralizedV2)
    }

    fn default_aggregate_user(self) -> bool {
        !matches!(self, Variant::Semi)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fl-mv-dssm" => Ok(Variant::FlMvDssm),
            "semi" | "semi-fl-mv-dssm" => Ok(Variant::Semi),
            "fl-dssm-v1" => Ok(Variant::FlDssmV1),
            "fl-dssm-v2" => Ok(Variant::FlDssmV2),
            "centralized-v1" => Ok(Variant::CentralizedV1),
            "centralized-v2" => Ok(Variant::CentralizedV2),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant '{other}' (expected fl-mv-dssm, semi, fl-dssm-v1, \
                 fl-dssm-v2, centralized-v1 or centralized-v2)"
            ))),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Scenario::Random8020),
            "cs-users" => Ok(Scenario::ColdUsers),
            "cs-items" => Ok(Scenario::ColdItems),
            "cs-users-items" => Ok(Scenario::ColdUsersItems),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario '{other}' (expected random, cs-users, cs-items \
                 or cs-users-items)"
            ))),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Dataset directory; when absent a synthetic corpus is staged under
    /// `<out>/data`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub variant: Variant,
    pub scenario: Scenario,
    pub rounds: usize,
    pub builds: usize,
    pub seed: u64,
    pub gamma: f64,
    pub n_neg: usize,
    /// Noise multiplier; 0 disables the privacy mechanism entirely.
    pub dp_sigma: f64,
    pub dp_clip: f64,
    pub dp_delta: f64,
    /// Views subsampled per aggregation; 0 means all.
    pub dp_batch: usize,
    pub secure_agg: bool,
    /// Overrides the variant's user-tower aggregation behavior when set.
    pub aggregate_user: Option<bool>,
    pub clients_per_round: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    pub server_lr: f64,
    /// `adam` or `sgd`.
    pub server_opt: String,
    pub local_steps: usize,
    pub svd_dim: usize,
    pub svd_iters: usize,
    pub eval_every: usize,
    pub topk: usize,
    pub eval_negatives: usize,
    /// Hidden layer widths appended after each tower's input layer.
    pub hidden: Vec<usize>,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_interactions: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            data_dir: None,
            out_dir: PathBuf::from("out"),
            variant: Variant::FlMvDssm,
            scenario: Scenario::Random8020,
            rounds: 100,
            builds: 3,
            seed: 17,
            gamma: 1.0,
            n_neg: 4,
            dp_sigma: 0.0,
            dp_clip: 0.5,
            dp_delta: 1e-3,
            dp_batch: 0,
            secure_agg: false,
            aggregate_user: None,
            clients_per_round: 100,
            batch_size: 20,
            client_lr: 0.2,
            server_lr: 0.001,
            server_opt: "adam".into(),
            local_steps: 1,
            svd_dim: 30,
            svd_iters: 6,
            eval_every: 10,
            topk: 10,
            eval_negatives: 100,
            hidden: vec![64, 32, 16],
            synth_users: 943,
            synth_items: 1682,
            synth_interactions: 100_000,
        }
    }
}

/// Every recognized configuration key, in echo order.
const KEYS: &[&str] = &[
    "aggregate-user",
    "batch-size",
    "builds",
    "client-lr",
    "clients-per-round",
    "data-dir",
    "dp-batch",
    "dp-clip",
    "dp-delta",
    "dp-sigma",
    "eval-every",
    "eval-negatives",
    "gamma",
    "hidden",
    "local-steps",
    "neg",
    "out",
    "rounds",
    "scenario",
    "secure-agg",
    "seed",
    "server-lr",
    "server-opt",
    "svd-dim",
    "svd-iters",
    "synth-interactions",
    "synth-items",
    "synth-users",
    "topk",
    "variant",
];

/// Parses a line-oriented `key = value` config file body. `#` starts a
/// comment; blank lines are skipped.
pub fn parse_config_file(body: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in body.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                file: source.to_string(),
                line: lineno + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            });
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Reads `FEDMV_*` environment overrides for every known key.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for key in KEYS {
        let var = format!("FEDMV_{}", key.to_uppercase().replace('-', "_"));
        if let Ok(v) = std::env::var(&var) {
            pairs.push((key.to_string(), v));
        }
    }
    pairs
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(format!("expected a boolean, got '{other}'")),
    }
}

impl ExperimentSpec {
    /// Applies raw `(key, value)` overrides in order on top of `self`,
    /// reporting every bad key or value together.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut errors = Vec::new();
        for (key, value) in pairs {
            let r: std::result::Result<(), String> = match key.as_str() {
                "data-dir" => {
                    self.data_dir = if value.is_empty() {
                        None
                    } else {
                        Some(PathBuf::from(value))
                    };
                    Ok(())
                }
                "out" => {
                    self.out_dir = PathBuf::from(value);
                    Ok(())
                }
                "variant" => value.parse().map(|v| self.variant = v).map_err(|e: Error| e.to_string()),
                "scenario" => value.parse().map(|s| self.scenario = s).map_err(|e: Error| e.to_string()),
                "rounds" => value.parse().map(|v| self.rounds = v).map_err(|e| format!("{e}")),
                "builds" => value.parse().map(|v| self.builds = v).map_err(|e| format!("{e}")),
                "seed" => value.parse().map(|v| self.seed = v).map_err(|e| format!("{e}")),
                "gamma" => value.parse().map(|v| self.gamma = v).map_err(|e| format!("{e}")),
                "neg" => value.parse().map(|v| self.n_neg = v).map_err(|e| format!("{e}")),
                "dp-sigma" => value.parse().map(|v| self.dp_sigma = v).map_err(|e| format!("{e}")),
                "dp-clip" => value.parse().map(|v| self.dp_clip = v).map_err(|e| format!("{e}")),
                "dp-delta" => value.parse().map(|v| self.dp_delta = v).map_err(|e| format!("{e}")),
                "dp-batch" => value.parse().map(|v| self.dp_batch = v).map_err(|e| format!("{e}")),
                "secure-agg" => parse_bool(value).map(|v| self.secure_agg = v),
                "aggregate-user" => {
                    if value.is_empty() || value == "auto" {
                        self.aggregate_user = None;
                        Ok(())
                    } else {
                        parse_bool(value).map(|v| self.aggregate_user = Some(v))
                    }
                }
                "clients-per-round" => value
                    .parse()
                    .map(|v| self.clients_per_round = v)
                    .map_err(|e| format!("{e}")),
                "batch-size" => value.parse().map(|v| self.batch_size = v).map_err(|e| format!("{e}")),
                "client-lr" => value.parse().map(|v| self.client_lr = v).map_err(|e| format!("{e}")),
                "server-lr" => value.parse().map(|v| self.server_lr = v).map_err(|e| format!("{e}")),
                "server-opt" => match value.as_str() {
                    "adam" | "sgd" => {
                        self.server_opt = value.clone();
                        Ok(())
                    }
                    other => Err(format!("expected adam or sgd, got '{other}'")),
                },
                "local-steps" => value.parse().map(|v| self.local_steps = v).map_err(|e| format!("{e}")),
                "svd-dim" => value.parse().map(|v| self.svd_dim = v).map_err(|e| format!("{e}")),
                "svd-iters" => value.parse().map(|v| self.svd_iters = v).map_err(|e| format!("{e}")),
                "eval-every" => value.parse().map(|v| self.eval_every = v).map_err(|e| format!("{e}")),
                "topk" => value.parse().map(|v| self.topk = v).map_err(|e| format!("{e}")),
                "eval-negatives" => value
                    .parse()
                    .map(|v| self.eval_negatives = v)
                    .map_err(|e| format!("{e}")),
                "hidden" => {
                    let dims: std::result::Result<Vec<usize>, _> =
                        value.split(',').map(|d| d.trim().parse()).collect();
                    match dims {
                        Ok(d) if !d.is_empty() => {
                            self.hidden = d;
                            Ok(())
                        }
                        Ok(_) => Err("hidden layer list is empty".into()),
                        Err(e) => Err(format!("{e}")),
                    }
                }
                "synth-users" => value.parse().map(|v| self.synth_users = v).map_err(|e| format!("{e}")),
                "synth-items" => value.parse().map(|v| self.synth_items = v).map_err(|e| format!("{e}")),
                "synth-interactions" => value
                    .parse()
                    .map(|v| self.synth_interactions = v)
                    .map_err(|e| format!("{e}")),
                unknown => Err(format!("unknown key '{unknown}'")),
            };
            if let Err(msg) = r {
                errors.push(format!("{key}: {msg}"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Semantic validation after all overrides are applied. Problems are
    /// reported together rather than one at a time.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.rounds == 0 {
            errors.push("rounds must be at least 1".into());
        }
        if self.builds == 0 {
            errors.push("builds must be at least 1".into());
        }
        if !(self.gamma > 0.0) {
            errors.push("gamma must be positive".into());
        }
        if self.n_neg == 0 {
            errors.push("neg must be at least 1".into());
        }
        if self.dp_sigma < 0.0 {
            errors.push("dp-sigma must be nonnegative".into());
        }
        if self.dp_sigma > 0.0 && !(self.dp_clip > 0.0) {
            errors.push("dp-clip must be positive when dp-sigma is on".into());
        }
        if self.dp_sigma > 0.0 && !(self.dp_delta > 0.0 && self.dp_delta < 1.0) {
            errors.push("dp-delta must lie in (0, 1)".into());
        }
        let n_views = self.variant.views().len();
        if self.dp_batch > n_views {
            errors.push(format!(
                "dp-batch ({}) exceeds the number of views ({n_views})",
                self.dp_batch
            ));
        }
        if self.clients_per_round == 0 {
            errors.push("clients-per-round must be at least 1".into());
        }
        if self.batch_size == 0 {
            errors.push("batch-size must be at least 1".into());
        }
        if !(self.client_lr > 0.0) || !(self.server_lr > 0.0) {
            errors.push("client-lr and server-lr must be positive".into());
        }
        if self.local_steps == 0 {
            errors.push("local-steps must be at least 1".into());
        }
        if self.svd_dim == 0 {
            errors.push("svd-dim must be at least 1".into());
        }
        if self.svd_iters < 2 {
            errors.push("svd-iters must be at least 2".into());
        }
        if self.topk == 0 {
            errors.push("topk must be at least 1".into());
        }
        if self.eval_negatives == 0 {
            errors.push("eval-negatives must be at least 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            errors.push("hidden must list positive layer widths".into());
        }
        if self.variant.is_pooled() && self.aggregate_user == Some(false) {
            errors.push("aggregate-user = false has no meaning for pooled variants".into());
        }
        if self.variant.is_pooled() && self.secure_agg {
            errors.push("secure-agg has no meaning for pooled variants".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The resolved configuration in config-file syntax, keys sorted.
    /// Feeding this back as a config file reproduces the run.
    pub fn echo(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert(
            "aggregate-user",
            match self.aggregate_user {
                None => "auto".to_string(),
                Some(b) => b.to_string(),
            },
        );
        map.insert("batch-size", self.batch_size.to_string());
        map.insert("builds", self.builds.to_string());
        map.insert("client-lr", format!("{}", self.client_lr));
        map.insert("clients-per-round", self.clients_per_round.to_string());
        map.insert(
            "data-dir",
            self.data_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        map.insert("dp-batch", self.dp_batch.to_string());
        map.insert("dp-clip", format!("{}", self.dp_clip));
        map.insert("dp-delta", format!("{}", self.dp_delta));
        map.insert("dp-sigma", format!("{}", self.dp_sigma));
        map.insert("eval-every", self.eval_every.to_string());
        map.insert("eval-negatives", self.eval_negatives.to_string());
        map.insert("gamma", format!("{}", self.gamma));
        map.insert(
            "hidden",
            self.hidden
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("local-steps", self.local_steps.to_string());
        map.insert("neg", self.n_neg.to_string());
        map.insert("out", self.out_dir.display().to_string());
        map.insert("rounds", self.rounds.to_string());
        map.insert("scenario", self.scenario.name().to_string());
        map.insert("secure-agg", self.secure_agg.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("server-lr", format!("{}", self.server_lr));
        map.insert("server-opt", self.server_opt.clone());
        map.insert("svd-dim", self.svd_dim.to_string());
        map.insert("svd-iters", self.svd_iters.to_string());
        map.insert("synth-interactions", self.synth_interactions.to_string());
        map.insert("synth-items", self.synth_items.to_string());
        map.insert("synth-users", self.synth_users.to_string());
        map.insert("topk", self.topk.to_string());
        map.insert("variant", self.variant.name().to_string());
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn dp(&self) -> Option<DpParams> {
        (self.dp_sigma > 0.0).then(|| DpParams {
            clip: self.dp_clip,
            sigma: self.dp_sigma,
            delta: self.dp_delta,
            batch: self.dp_batch,
        })
    }

    fn server_opt(&self) -> ServerOpt {
        if self.server_opt == "sgd" {
            ServerOpt::Sgd { lr: self.server_lr }
        } else {
            ServerOpt::Adam { lr: self.server_lr }
        }
    }

    fn tower_dims(&self, input: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend_from_slice(&self.hidden);
        dims
    }
}

/// One metric's spread across builds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> MetricStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() >= 2 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MetricStat { mean, std }
}

/// Final metrics aggregated across builds.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryMetrics {
    pub precision: MetricStat,
    pub recall: MetricStat,
    pub ndcg: MetricStat,
    pub auc: MetricStat,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryFile {
    variant: String,
    scenario: String,
    rounds: usize,
    builds: usize,
    seed: u64,
    topk: usize,
    n_eval_clients: usize,
    metrics: SummaryMetrics,
    final_epsilon: Option<f64>,
}

/// Everything a run produced, as returned to callers. The same content is
/// persisted under the output directory.
#[derive(Debug)]
pub struct RunSummary {
    /// Final-round evaluation per build.
    pub per_build: Vec<EvalResult>,
    pub metrics: SummaryMetrics,
    /// Privacy spend after the last round, when the mechanism was on.
    pub final_epsilon: Option<f64>,
    /// Uploaded tensor counts, summed across builds.
    pub uploaded_item_tensors: usize,
    pub uploaded_user_tensors: usize,
    pub out_dir: PathBuf,
}

/// Staged dataset, split and features, shared by every build of a run.
pub struct StagedData {
    pub dataset: Dataset,
    pub split: Split,
    /// Per-view user features: `[demographics, latent][user]`.
    pub user_views: [Vec<Vec<f64>>; 2],
    pub item_feats: Vec<crate::nn::SparseVec>,
}

/// Loads the configured dataset (or synthesizes one), splits it, and builds
/// all features. The latent view comes from a truncated SVD of the binary
/// train-interaction matrix only, so held-out users have exactly zero
/// latent vectors.
pub fn stage_data(spec: &ExperimentSpec) -> Result<StagedData> {
    let dataset = match &spec.data_dir {
        Some(dir) => load_dataset(dir)?,
        None => {
            let dir = spec.out_dir.join("data");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_synthetic_dataset(
                &dir,
                &SynthParams {
                    users: spec.synth_users,
                    items: spec.synth_items,
                    interactions: spec.synth_interactions,
                    seed: spec.seed,
                },
            )?
        }
    };
    let split = split_dataset(&dataset, spec.scenario, spec.seed);
    if split.test.is_empty() {
        return Err(Error::InvalidArgument(
            "split produced an empty test set".into(),
        ));
    }

    let demo = view1_features(&dataset.users);
    let train_pairs: Vec<(u32, u32)> = split.train.iter().map(|r| (r.user, r.item)).collect();
    let matrix = ImplicitMatrix::from_pairs(dataset.users.len(), dataset.items.len(), &train_pairs)?;
    let k = spec.svd_dim.min(dataset.users.len().min(dataset.items.len()));
    let svd = truncated_svd(&matrix, k, spec.svd_iters, spec.seed)?;
    let latent = svd.user_vectors();

    let catalog = TrigramCatalog::build(&dataset.items);
    let item_feats = item_features(&dataset.items, &catalog);

    Ok(StagedData {
        dataset,
        split,
        user_views: [demo, latent],
        item_feats,
    })
}

/// Per-round curve values for one build.
struct BuildCurves {
    /// `(round, loss)` every round.
    loss: Vec<(usize, f64)>,
    /// `(round, eval)` at evaluation rounds.
    evals: Vec<(usize, EvalResult)>,
    /// `(round, epsilon)` when the privacy mechanism is on.
    epsilon: Vec<(usize, f64)>,
}

fn federation_config(spec: &ExperimentSpec, staged: &StagedData, build_seed: u64) -> FederationConfig {
    let views = spec.variant.views();
    let user_dims: Vec<Vec<usize>> = views
        .iter()
        .map(|&v| {
            let input = if v == 0 {
                VIEW1_DIM
            } else {
                staged.user_views[1][0].len()
            };
            spec.tower_dims(input)
        })
        .collect();
    FederationConfig {
        item_dims: spec.tower_dims(staged.item_feats[0].dim()),
        user_dims,
        aggregate_user: spec
            .aggregate_user
            .unwrap_or_else(|| spec.variant.default_aggregate_user()),
        clients_per_round: spec.clients_per_round,
        rounds: spec.rounds,
        batch_size: spec.batch_size,
        n_neg: spec.n_neg,
        gamma: spec.gamma,
        client_lr: spec.client_lr,
        local_steps: spec.local_steps,
        server_opt: spec.server_opt(),
        dp: spec.dp(),
        secure_agg: spec.secure_agg,
        seed: build_seed,
        eval_every: spec.eval_every,
    }
}

fn run_build(
    spec: &ExperimentSpec,
    staged: &StagedData,
    build: usize,
) -> Result<(TrainOutcome, BuildCurves)> {
    let build_seed = derive_seed(spec.seed, &[TAG_BUILD, build as u64]);
    let views = spec.variant.views();
    let per_view: Vec<Vec<Vec<f64>>> = views
        .iter()
        .map(|&v| staged.user_views[v].clone())
        .collect();
    let train_pairs: Vec<(u32, u32)> =
        staged.split.train.iter().map(|r| (r.user, r.item)).collect();
    let test_pairs: Vec<(u32, u32)> =
        staged.split.test.iter().map(|r| (r.user, r.item)).collect();
    let clients = build_clients(
        staged.dataset.users.len(),
        &per_view,
        &train_pairs,
        &test_pairs,
    )?;
    let cfg = federation_config(spec, staged, build_seed);
    let eval_cfg = EvalConfig {
        topk: spec.topk,
        neg_samples: spec.eval_negatives,
        exclude_train: true,
        gamma: spec.gamma,
        seed: build_seed,
    };
    let outcome = if spec.variant.is_pooled() {
        let pool = PooledData::from_clients(&clients, &train_pairs)?;
        run_pooled(&pool, &clients, &staged.item_feats, &cfg, Some(&eval_cfg))?
    } else {
        run_training(&clients, &staged.item_feats, &cfg, Some(&eval_cfg))?
    };

    let curves = BuildCurves {
        loss: outcome.rounds.iter().map(|r| (r.round, r.mean_loss)).collect(),
        evals: outcome.evals.clone(),
        epsilon: outcome
            .rounds
            .iter()
            .filter_map(|r| r.epsilon.map(|e| (r.round, e)))
            .collect(),
    };
    Ok((outcome, curves))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Runs the experiment described by `spec` and writes all artifacts under
/// `spec.out_dir`.
pub fn run(spec: &ExperimentSpec) -> Result<RunSummary> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir).map_err(|e| Error::io(&spec.out_dir, e))?;
    write_file(&spec.out_dir.join("config.echo"), &spec.echo())?;

    let staged = stage_data(spec)?;
    let manifest = serde_json::to_string_pretty(&staged.split.manifest())
        .map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
    write_file(&spec.out_dir.join("split_manifest.json"), &manifest)?;

    let mut per_build_eval = Vec::with_capacity(spec.builds);
    let mut all_curves = Vec::with_capacity(spec.builds);
    let mut item_tensors = 0;
    let mut user_tensors = 0;
    let mut final_epsilon = None;
    for b in 0..spec.builds {
        let (outcome, curves) = run_build(spec, &staged, b)?;
        let (_, final_eval) = *outcome
            .evals
            .last()
            .ok_or_else(|| Error::InvalidArgument("run produced no evaluation".into()))?;
        per_build_eval.push(final_eval);
        item_tensors += outcome.transfer.item_tensors;
        user_tensors += outcome.transfer.user_tensors;
        if let Some((_, e)) = curves.epsilon.last() {
            final_epsilon = Some(*e);
        }

        let mut csv = String::from("round,metric,value\n");
        for &(round, loss) in &curves.loss {
            let _ = writeln!(csv, "{round},loss,{}", fmt6(loss));
        }
        for (round, ev) in &curves.evals {
            let k = spec.topk;
            let _ = writeln!(csv, "{round},precision@{k},{}", fmt6(ev.precision));
            let _ = writeln!(csv, "{round},recall@{k},{}", fmt6(ev.recall));
            let _ = writeln!(csv, "{round},ndcg@{k},{}", fmt6(ev.ndcg));
            let _ = writeln!(csv, "{round},auc,{}", fmt6(ev.auc));
        }
        for &(round, eps) in &curves.epsilon {
            let _ = writeln!(csv, "{round},epsilon,{}", fmt6(eps));
        }
        write_file(&spec.out_dir.join(format!("curves_b{b}.csv")), &csv)?;

        save_tower(
            &outcome.model.item,
            &spec.out_dir.join(format!("item_tower_b{b}.bin")),
        )?;
        for (v, tower) in outcome.model.user.iter().enumerate() {
            save_tower(
                tower,
                &spec.out_dir.join(format!("user_tower_v{v}_b{b}.bin")),
            )?;
        }
        all_curves.push(curves);
    }

    // Cross-build metric table: one row per (round, metric).
    let mut csv = String::from("round,variant,metric,mean,std,n_builds\n");
    let vname = spec.variant.name();
    let n = spec.builds;
    let std_field = |s: &MetricStat| {
        if n >= 2 {
            fmt6(s.std)
        } else {
            String::new()
        }
    };
    for i in 0..all_curves[0].loss.len() {
        let round = all_curves[0].loss[i].0;
        let vals: Vec<f64> = all_curves.iter().map(|c| c.loss[i].1).collect();
        let s = stat(&vals);
        let _ = writeln!(csv, "{round},{vname},loss,{},{},{n}", fmt6(s.mean), std_field(&s));
    }
    let metric_names = [
        (format!("precision@{}", spec.topk), 0),
        (format!("recall@{}", spec.topk), 1),
        (format!("ndcg@{}", spec.topk), 2),
        ("auc".to_string(), 3),
    ];
    for i in 0..all_curves[0].evals.len() {
        let round = all_curves[0].evals[i].0;
        for (name, field) in &metric_names {
            let vals: Vec<f64> = all_curves
                .iter()
                .map(|c| match field {
                    0 => c.evals[i].1.precision,
                    1 => c.evals[i].1.recall,
                    2 => c.evals[i].1.ndcg,
                    _ => c.evals[i].1.auc,
                })
                .collect();
            let s = stat(&vals);
            let _ = writeln!(csv, "{round},{vname},{name},{},{},{n}", fmt6(s.mean), std_field(&s));
        }
    }
    write_file(&spec.out_dir.join("metrics.csv"), &csv)?;

    // Privacy spend (identical across builds; from the first).
    let mut csv = String::from("round,epsilon\n");
    for &(round, eps) in &all_curves[0].epsilon {
        let _ = writeln!(csv, "{round},{}", fmt6(eps));
    }
    write_file(&spec.out_dir.join("privacy.csv"), &csv)?;

    let metrics = SummaryMetrics {
        precision: stat(&per_build_eval.iter().map(|e| e.precision).collect::<Vec<_>>()),
        recall: stat(&per_build_eval.iter().map(|e| e.recall).collect::<Vec<_>>()),
        ndcg: stat(&per_build_eval.iter().map(|e| e.ndcg).collect::<Vec<_>>()),
        auc: stat(&per_build_eval.iter().map(|e| e.auc).collect::<Vec<_>>()),
    };
    let summary = SummaryFile {
        variant: vname.to_string(),
        scenario: spec.scenario.name().to_string(),
        rounds: spec.rounds,
        builds: spec.builds,
        seed: spec.seed,
        topk: spec.topk,
        n_eval_clients: per_build_eval.first().map(|e| e.n_clients).unwrap_or(0),
        metrics: metrics.clone(),
        final_epsilon,
    };
    let body = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidArgument(format!("summary serialization: {e}")))?;
    write_file(&spec.out_dir.join("summary.json"), &body)?;

    Ok(RunSummary {
        per_build: per_build_eval,
        metrics,
        final_epsilon,
        uploaded_item_tensors: item_tensors,
        uploaded_user_tensors: user_tensors,
        out_dir: spec.out_dir.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(out: &Path) -> ExperimentSpec {
        ExperimentSpec {
            out_dir: out.to_path_buf(),
            rounds: 3,
            builds: 2,
            clients_per_round: 5,
            batch_size: 4,
            n_neg: 2,
            eval_every: 2,
            eval_negatives: 5,
            svd_dim: 8,
            hidden: vec![16, 8],
            synth_users: 30,
            synth_items: 120,
            synth_interactions: 700,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn run_writes_all_artifacts_and_is_byte_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let summary = run(&small_spec(&out_a)).unwrap();
        assert_eq!(summary.per_build.len(), 2);
        for name in [
            "config.echo",
            "split_manifest.json",
            "curves_b0.csv",
            "curves_b1.csv",
            "metrics.csv",
            "privacy.csv",
            "summary.json",
            "item_tower_b0.bin",
            "user_tower_v0_b0.bin",
            "user_tower_v1_b1.bin",
        ] {
            assert!(out_a.join(name).exists(), "missing artifact {name}");
        }
        // Replaying the echoed config into a fresh spec reproduces the
        // metrics CSV byte for byte.
        let echo = std::fs::read_to_string(out_a.join("config.echo")).unwrap();
        let pairs = parse_config_file(&echo, "config.echo").unwrap();
        let mut replay = ExperimentSpec::default();
        replay.apply(&pairs).unwrap();
        replay.out_dir = out_b.clone();
        replay.data_dir = None;
        run(&replay).unwrap();
        let a = std::fs::read(out_a.join("metrics.csv")).unwrap();
        let b = std::fs::read(out_b.join("metrics.csv")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(out_a.join("curves_b0.csv")).unwrap();
        let b = std::fs::read(out_b.join("curves_b0.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pooled_variant_runs_and_writes_summary() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec(&dir.path().join("c"));
        spec.variant = Variant::CentralizedV1;
        spec.builds = 1;
        let summary = run(&spec).unwrap();
        assert_eq!(summary.uploaded_item_tensors, 0);
        assert_eq!(summary.uploaded_user_tensors, 0);
        let body = std::fs::read_to_string(spec.out_dir.join("summary.json")).unwrap();
        assert!(body.contains("\"variant\": \"centralized-v1\""));
        // Single-view variants save exactly one user tower per build.
        assert!(spec.out_dir.join("user_tower_v0_b0.bin").exists());
        assert!(!spec.out_dir.join("user_tower_v1_b0.bin").exists());
    }

    #[test]
    fn defaults_echo_and_reparse_round_trip() {
        let spec = ExperimentSpec::default();
        let echo = spec.echo();
        let pairs = parse_config_file(&echo, "echo").unwrap();
        let mut reparsed = ExperimentSpec::default();
        reparsed.apply(&pairs).unwrap();
        assert_eq!(reparsed.echo(), echo);
    }

    #[test]
    fn apply_reports_all_errors_together() {
        let mut spec = ExperimentSpec::default();
        let pairs = vec![
            ("rounds".to_string(), "abc".to_string()),
            ("variant".to_string(), "bogus".to_string()),
            ("nonsense-key".to_string(), "1".to_string()),
        ];
        let err = spec.apply(&pairs).unwrap_err();
        match err {
            Error::Config(list) => assert_eq!(list.len(), 3),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn validate_aggregates_semantic_errors() {
        let mut spec = ExperimentSpec::default();
        spec.rounds = 0;
        spec.gamma = -1.0;
        spec.dp_sigma = 1.0;
        spec.dp_batch = 5;
        let err = spec.validate().unwrap_err();
        match err {
            Error::Config(list) => assert!(list.len() >= 3, "got {list:?}"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn config_file_parsing_handles_comments_and_errors() {
        let body = "# comment\nrounds = 5\n\nvariant = semi # trailing\n";
        let pairs = parse_config_file(body, "test.conf").unwrap();
        assert_eq!(
            pairs,
            vec![
                ("rounds".to_string(), "5".to_string()),
                ("variant".to_string(), "semi".to_string()),
            ]
        );
        assert!(parse_config_file("just words\n", "bad.conf").is_err());
    }

    #[test]
    fn variant_and_scenario_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        for s in [
            Scenario::Random8020,
            Scenario::ColdUsers,
            Scenario::ColdItems,
            Scenario::ColdUsersItems,
        ] {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert_eq!("semi-fl-mv-dssm".parse::<Variant>().unwrap(), Variant::Semi);
    }

    // Calibration probe, not a correctness test: after a full-scale run,
    // compare the model's own ranking against the best per-user direction
    // the trained item tower supports (centroid of the user's train-item
    // embeddings). The gap is the personalization headroom at that point in
    // training. Run with --ignored --nocapture --release.
    #[test]
    #[ignore]
    fn probe_personalization_headroom() {
        use crate::nn::Input;
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::default();
        spec.out_dir = dir.path().to_path_buf();
        spec.variant = Variant::FlMvDssm;
        spec.builds = 1;
        let staged = stage_data(&spec).unwrap();
        let (outcome, _) = run_build(&spec, &staged, 0).unwrap();
        let (_, model_eval) = *outcome.evals.last().unwrap();

        let embs: Vec<Vec<f64>> = staged
            .item_feats
            .iter()
            .map(|f| outcome.model.item.forward(Input::Sparse(f)).unwrap().0)
            .collect();
        let train_pairs: Vec<(u32, u32)> =
            staged.split.train.iter().map(|r| (r.user, r.item)).collect();
        let test_pairs: Vec<(u32, u32)> =
            staged.split.test.iter().map(|r| (r.user, r.item)).collect();
        let views: Vec<Vec<Vec<f64>>> =
            vec![staged.user_views[0].clone(), staged.user_views[1].clone()];
        let clients =
            build_clients(staged.dataset.users.len(), &views, &train_pairs, &test_pairs).unwrap();

        let dim = embs[0].len();
        let unit: Vec<Vec<f64>> = embs
            .iter()
            .map(|e| {
                let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                e.iter().map(|x| x / norm).collect()
            })
            .collect();
        let mut global_mean = vec![0.0f64; dim];
        for e in &unit {
            for (g, x) in global_mean.iter_mut().zip(e) {
                *g += x / unit.len() as f64;
            }
        }
        let (mut acc, mut n) = (0.0, 0usize);
        for c in &clients {
            if c.test_items.is_empty() || c.train_items.is_empty() {
                continue;
            }
            // contrastive direction: train centroid minus the catalog mean,
            // which is what the pair-vs-negatives objective converges to
            let mut dir_vec = vec![0.0f64; dim];
            for &it in &c.train_set {
                for (d, x) in dir_vec.iter_mut().zip(&unit[it as usize]) {
                    *d += x / c.train_set.len() as f64;
                }
            }
            for (d, g) in dir_vec.iter_mut().zip(&global_mean) {
                *d -= g;
            }
            let mut scored: Vec<(f64, u32)> = (0..embs.len() as u32)
                .filter(|j| c.train_set.binary_search(j).is_err())
                .map(|j| {
                    let dot: f64 =
                        dir_vec.iter().zip(&unit[j as usize]).map(|(a, b)| a * b).sum();
                    (dot, j)
                })
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let test: std::collections::HashSet<u32> = c.test_items.iter().copied().collect();
            let hits = scored.iter().take(10).filter(|(_, j)| test.contains(j)).count();
            acc += hits as f64 / 10.0;
            n += 1;
        }
        // Same centroid ranking in raw feature space, bypassing the item
        // tower: separates input-collision limits from training limits.
        let raw: Vec<Vec<f64>> = staged
            .item_feats
            .iter()
            .map(|f| {
                let d = f.to_dense();
                let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                d.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let rdim = raw[0].len();
        let mut raw_mean = vec![0.0f64; rdim];
        for e in &raw {
            for (g, x) in raw_mean.iter_mut().zip(e) {
                *g += x / raw.len() as f64;
            }
        }
        let (mut racc, mut rn) = (0.0, 0usize);
        for c in &clients {
            if c.test_items.is_empty() || c.train_items.is_empty() {
                continue;
            }
            let mut dir_vec = vec![0.0f64; rdim];
            for &it in &c.train_set {
                for (d, x) in dir_vec.iter_mut().zip(&raw[it as usize]) {
                    *d += x / c.train_set.len() as f64;
                }
            }
            for (d, g) in dir_vec.iter_mut().zip(&raw_mean) {
                *d -= g;
            }
            let mut scored: Vec<(f64, u32)> = (0..raw.len() as u32)
                .filter(|j| c.train_set.binary_search(j).is_err())
                .map(|j| {
                    let dot: f64 =
                        dir_vec.iter().zip(&raw[j as usize]).map(|(a, b)| a * b).sum();
                    (dot, j)
                })
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let test: std::collections::HashSet<u32> = c.test_items.iter().copied().collect();
            let hits = scored.iter().take(10).filter(|(_, j)| test.contains(j)).count();
            racc += hits as f64 / 10.0;
            rn += 1;
        }
        println!(
            "P@10: model={:.4} centroid-headroom={:.4} raw-headroom={:.4} over {n} users",
            model_eval.precision,
            acc / n as f64,
            racc / rn as f64
        );
    }
}
