//! Federated training of two-tower relevance models.
//!
//! One round proceeds as in classic federated averaging, with a local
//! privacy stage spliced in between client computation and upload:
//!
//! 1. the server broadcasts the item tower and, when user towers are
//!    aggregated, the per-view user towers;
//! 2. each selected client runs `local_steps` SGD steps on its own data;
//!    the item gradient is combined across the client's views by the local
//!    aggregation gate ([`crate::dp::local_secure_aggregate`]), picking up
//!    clipping plus Gaussian noise when a privacy budget is configured,
//!    while user-tower gradients stay exact;
//! 3. clients upload weight-`m_k` updates, which the server combines as
//!    `sum(m_k/m * update)` either in the clear (fixed-order tree sum) or
//!    through the masked-sum protocol in [`crate::secure`];
//! 4. the server applies one optimizer step per tower.
//!
//! Setting `aggregate_user = false` keeps user towers out of the uploads
//! entirely: every client with data then advances a persistent personal copy
//! of its user towers each round, fitting them to local taste, and only the
//! sampled clients' item gradients are federated.
//!
//! [`run_pooled`] trains the same model shape on pooled data with one
//! optimizer per tower and `clients_per_round` steps per round. With one
//! client, one view, one local step, SGD on the server, and privacy off it
//! reproduces the federated trajectory bit for bit, which doubles as an
//! integration check on both loops.

pub mod clients;
pub mod eval;

pub use clients::{batch_seed, build_clients, sample_batch, ClientData, PooledData};
pub use eval::{federated_evaluate, predict_topk, EvalConfig, EvalResult};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dp::{account_epsilon, local_secure_aggregate, DpParams};
use crate::dssm::batch_loss_and_grads;
use crate::nn::{Optimizer, SparseVec, Tower, TowerGrads};
use crate::rng::{derive_seed, rng_from, TAG_CLIENT_SELECT, TAG_DP_NOISE, TAG_INIT, TAG_SECURE};
use crate::secure::{run_protocol, DropPhase, SecureAggParams};
use crate::{Error, Result};

/// Server-side optimizer choice, applied independently per tower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServerOpt {
    /// Plain gradient descent with the given learning rate.
    Sgd { lr: f64 },
    /// Adam with the given learning rate and standard defaults.
    Adam { lr: f64 },
}

impl ServerOpt {
    fn build(&self) -> Box<dyn Optimizer + Send> {
        match *self {
            ServerOpt::Sgd { lr } => Box::new(crate::nn::Sgd { lr }),
            ServerOpt::Adam { lr } => Box::new(crate::nn::Adam::new(lr)),
        }
    }
}

/// Everything that shapes a federated run.
#[derive(Debug, Clone)]
pub struct FederationConfig {
    /// Layer widths of the item tower, `[input, hidden.., output]`.
    pub item_dims: Vec<usize>,
    /// Layer widths of each user tower, one entry per view.
    pub user_dims: Vec<Vec<usize>>,
    /// Upload user-tower updates (classic federation) or keep user towers
    /// personal to each client.
    pub aggregate_user: bool,
    /// Clients sampled per round.
    pub clients_per_round: usize,
    /// Total rounds.
    pub rounds: usize,
    /// Pairs per minibatch.
    pub batch_size: usize,
    /// Sampled negatives per positive.
    pub n_neg: usize,
    /// Softmax sharpness for the relevance posterior.
    pub gamma: f64,
    /// Client-side SGD learning rate.
    pub client_lr: f64,
    /// Local SGD steps per client per round.
    pub local_steps: usize,
    /// Server optimizer.
    pub server_opt: ServerOpt,
    /// Local privacy budget; `None` disables clipping and noise.
    pub dp: Option<DpParams>,
    /// Route server aggregation through the masked-sum protocol.
    pub secure_agg: bool,
    /// Master seed; every random decision in the run derives from it.
    pub seed: u64,
    /// Evaluate every this many rounds (and always on the last). 0 disables
    /// periodic evaluation.
    pub eval_every: usize,
}

impl FederationConfig {
    /// Number of views, implied by the user-tower list.
    pub fn n_views(&self) -> usize {
        self.user_dims.len()
    }

    /// Checks structural invariants shared by both trainers.
    pub fn validate(&self) -> Result<()> {
        if self.user_dims.is_empty() {
            return Err(Error::InvalidArgument("at least one view required".into()));
        }
        if self.item_dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "item tower needs at least one layer".into(),
            ));
        }
        let out = *self.item_dims.last().unwrap();
        for (v, dims) in self.user_dims.iter().enumerate() {
            if dims.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "user tower {v} needs at least one layer"
                )));
            }
            if *dims.last().unwrap() != out {
                return Err(Error::Shape(format!(
                    "user tower {v} emits {} dims but item tower emits {out}",
                    dims.last().unwrap()
                )));
            }
        }
        if self.clients_per_round == 0 || self.rounds == 0 {
            return Err(Error::InvalidArgument(
                "clients_per_round and rounds must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.n_neg == 0 || self.local_steps == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, n_neg and local_steps must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0) || !(self.client_lr > 0.0) {
            return Err(Error::InvalidArgument(
                "gamma and client_lr must be positive".into(),
            ));
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }
}

/// Global model state: one shared item tower and one user tower per view.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub item: Tower,
    pub user: Vec<Tower>,
}

impl GlobalModel {
    /// Initializes all towers from the run seed. Tower `0` is the item
    /// tower; user towers follow in view order.
    pub fn init(cfg: &FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let item = Tower::new(&cfg.item_dims, derive_seed(cfg.seed, &[TAG_INIT, 0]))?;
        let user = cfg
            .user_dims
            .iter()
            .enumerate()
            .map(|(v, dims)| Tower::new(dims, derive_seed(cfg.seed, &[TAG_INIT, 1 + v as u64])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { item, user })
    }
}

/// What one client uploads after its local round.
#[derive(Debug, Clone)]
struct ClientUpdate {
    weight: f64,
    item_update: Vec<f64>,
    user_updates: Option<Vec<Vec<f64>>>,
    personal: Option<Vec<Tower>>,
    loss_sum: f64,
    loss_pairs: usize,
}

/// Counts of tensors uploaded to the server over a whole run, by tower kind.
/// Personal user towers never appear in uploads, and this log proves it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferLog {
    pub item_tensors: usize,
    pub user_tensors: usize,
}

/// Per-round training diagnostics.
#[derive(Debug, Clone)]
pub struct RoundLog {
    pub round: usize,
    /// Mean posterior loss per pair across the round's training clients.
    pub mean_loss: f64,
    /// Clients whose updates reached the server this round.
    pub n_clients: usize,
    /// Cumulative privacy cost after this round, when a budget is set.
    pub epsilon: Option<f64>,
}

/// Result of a full training run.
pub struct TrainOutcome {
    pub model: GlobalModel,
    /// Personal user towers by client id; populated only when
    /// `aggregate_user` is off.
    pub personal: HashMap<u32, Vec<Tower>>,
    pub rounds: Vec<RoundLog>,
    /// `(round, result)` for every evaluation performed during training.
    pub evals: Vec<(usize, EvalResult)>,
    pub transfer: TransferLog,
}

/// Runs one client's local round against the broadcast model.
///
/// Returns the update to upload. With `local_steps == 1` the update is the
/// aggregated gradient itself; with more steps it is the parameter delta
/// divided by the client learning rate, which reduces to the same thing at
/// one step but stays well-scaled for longer local work.
fn client_round(
    client: &ClientData,
    model: &GlobalModel,
    personal: Option<&Vec<Tower>>,
    item_feats: &[SparseVec],
    cfg: &FederationConfig,
    round: usize,
    slot: usize,
) -> Result<ClientUpdate> {
    let n_views = cfg.n_views();
    let multi_step = cfg.local_steps > 1;

    // Local working copies. The item tower is only materialized when it
    // will actually be mutated; user towers are mutated whenever they are
    // personal (to persist learning) or when multi-step drift matters.
    let mut local_item = multi_step.then(|| model.item.clone());
    let track_user = multi_step || !cfg.aggregate_user;
    let mut local_user: Vec<Tower> = if track_user {
        match personal {
            Some(p) => p.clone(),
            None => model.user.clone(),
        }
    } else {
        Vec::new()
    };

    let mut item_update = vec![0.0; model.item.param_count()];
    let mut user_updates: Vec<Vec<f64>> = model
        .user
        .iter()
        .map(|t| vec![0.0; t.param_count()])
        .collect();
    let mut loss_sum = 0.0;
    let mut loss_pairs = 0usize;

    for step in 0..cfg.local_steps {
        let item_ref = local_item.as_ref().unwrap_or(&model.item);
        let mut item_grads: Vec<Vec<f64>> = Vec::with_capacity(n_views);
        let mut user_grads: Vec<Vec<f64>> = Vec::with_capacity(n_views);
        for view in 0..n_views {
            let user_ref = if track_user {
                &local_user[view]
            } else {
                &model.user[view]
            };
            let seed = batch_seed(cfg.seed, round, slot, view, step);
            let batch = sample_batch(client, view, item_feats, cfg.batch_size, cfg.n_neg, seed)?;
            let grads = batch_loss_and_grads(user_ref, item_ref, &batch, cfg.gamma)?;
            loss_sum += grads.loss;
            loss_pairs += grads.pairs;
            item_grads.push(grads.item.flatten());
            user_grads.push(grads.user.flatten());
        }

        // Privacy gate: the item gradient is shared across views and later
        // leaves the device, so it alone is clipped and noised. User
        // gradients stay exact; uploads of those are covered by the masked
        // protocol instead.
        let mut dp_rng = rng_from(
            cfg.seed,
            &[TAG_DP_NOISE, round as u64, slot as u64, step as u64, 0],
        );
        let item_step = local_secure_aggregate(&item_grads, cfg.dp.as_ref(), &mut dp_rng)?;
        let user_steps = user_grads;

        if cfg.local_steps == 1 {
            item_update = item_step.clone();
            user_updates = user_steps.clone();
        }
        if let Some(t) = local_item.as_mut() {
            let g = TowerGrads::from_flat(t, &item_step)?;
            t.apply_scaled(&g, cfg.client_lr);
        }
        if track_user {
            for (view, s) in user_steps.iter().enumerate() {
                let g = TowerGrads::from_flat(&local_user[view], s)?;
                local_user[view].apply_scaled(&g, cfg.client_lr);
            }
        }
    }

    if multi_step {
        let start = model.item.flatten();
        let end = local_item.as_ref().unwrap().flatten();
        for (u, (s, e)) in item_update.iter_mut().zip(start.iter().zip(&end)) {
            *u = (s - e) / cfg.client_lr;
        }
        if cfg.aggregate_user {
            for (view, upd) in user_updates.iter_mut().enumerate() {
                let start = model.user[view].flatten();
                let end = local_user[view].flatten();
                for (u, (s, e)) in upd.iter_mut().zip(start.iter().zip(&end)) {
                    *u = (s - e) / cfg.client_lr;
                }
            }
        }
    }

    Ok(ClientUpdate {
        weight: client.weight(),
        item_update,
        user_updates: cfg.aggregate_user.then_some(user_updates),
        personal: (!cfg.aggregate_user).then_some(local_user),
        loss_sum,
        loss_pairs,
    })
}

const TREE_CHUNK: usize = 16;

/// Weighted mean of flat updates in a fixed chunked-tree order, so the
/// result is bit-identical regardless of thread count or client order
/// upstream of the slot assignment.
fn tree_weighted_mean(updates: &[(f64, &[f64])], total_weight: f64) -> Vec<f64> {
    let dim = updates.first().map(|(_, u)| u.len()).unwrap_or(0);
    let mut out = vec![0.0; dim];
    for chunk in updates.chunks(TREE_CHUNK) {
        let mut partial = vec![0.0; dim];
        for (w, u) in chunk {
            let scale = w / total_weight;
            for (p, x) in partial.iter_mut().zip(u.iter()) {
                *p += scale * x;
            }
        }
        for (o, p) in out.iter_mut().zip(&partial) {
            *o += p;
        }
    }
    out
}

/// Combines one tensor across clients, in the clear or through the masked
/// protocol. Inputs are pre-scaled by `m_k/m` in the secure path so the
/// protocol only ever sees the masked weighted terms.
fn aggregate_tensor(
    updates: &[(f64, &[f64])],
    total_weight: f64,
    cfg: &FederationConfig,
    round: usize,
    tensor_idx: u64,
) -> Result<Vec<f64>> {
    if cfg.secure_agg && updates.len() >= 2 {
        let scaled: Vec<Vec<f64>> = updates
            .iter()
            .map(|(w, u)| u.iter().map(|x| x * w / total_weight).collect())
            .collect();
        let params = SecureAggParams::new(
            scaled.len(),
            derive_seed(cfg.seed, &[TAG_SECURE, round as u64, tensor_idx]),
        );
        let drops = vec![DropPhase::Never; scaled.len()];
        let outcome = run_protocol(&scaled, &params, &drops)?;
        Ok(outcome.sum)
    } else {
        Ok(tree_weighted_mean(updates, total_weight))
    }
}

/// Selects this round's client slots among those eligible to train.
fn select_clients(eligible: &[usize], k: usize, seed: u64, round: usize) -> Vec<usize> {
    let mut order: Vec<usize> = eligible.to_vec();
    let mut rng = rng_from(seed, &[TAG_CLIENT_SELECT, round as u64]);
    order.shuffle(&mut rng);
    order.truncate(k.min(order.len()));
    order
}

/// Trains a global model over the given clients.
///
/// `clients` should include every user, even those without training data;
/// such clients are skipped for training but still evaluated. Evaluation
/// (controlled by `eval_every` and `eval_cfg`) runs on the noise-free
/// scoring path.
pub fn run_training(
    clients: &[ClientData],
    item_feats: &[SparseVec],
    cfg: &FederationConfig,
    eval_cfg: Option<&EvalConfig>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::InvalidArgument("no clients".into()));
    }
    for c in clients {
        if c.views.len() != cfg.n_views() {
            return Err(Error::Shape(format!(
                "client {} has {} views, config expects {}",
                c.id,
                c.views.len(),
                cfg.n_views()
            )));
        }
    }

    let mut model = GlobalModel::init(cfg)?;
    let mut item_opt = cfg.server_opt.build();
    let mut user_opts: Vec<_> = (0..cfg.n_views()).map(|_| cfg.server_opt.build()).collect();
    let mut personal: HashMap<u32, Vec<Tower>> = HashMap::new();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut evals = Vec::new();
    let mut transfer = TransferLog::default();

    let eligible: Vec<usize> = clients
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.train_items.is_empty())
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(
            "no client has training interactions".into(),
        ));
    }

    let dp_q = cfg.dp.as_ref().map(|dp| {
        if dp.batch == 0 {
            1.0
        } else {
            (dp.batch as f64 / cfg.n_views() as f64).min(1.0)
        }
    });

    for round in 0..cfg.rounds {
        let selected = select_clients(&eligible, cfg.clients_per_round, cfg.seed, round);
        // With aggregated user towers only the sampled clients do any work:
        // local progress on the others would be thrown away by the next
        // broadcast. With personal towers every client advances its own user
        // towers each round (batches keyed by client id instead of slot) and
        // the sampled subset additionally contributes item gradients.
        let trainers: &[usize] = if cfg.aggregate_user {
            &selected
        } else {
            &eligible
        };
        let updates: Vec<ClientUpdate> = trainers
            .par_iter()
            .enumerate()
            .map(|(slot, &ci)| {
                let key = if cfg.aggregate_user {
                    slot
                } else {
                    clients[ci].id as usize
                };
                client_round(
                    &clients[ci],
                    &model,
                    personal.get(&clients[ci].id),
                    item_feats,
                    cfg,
                    round,
                    key,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let uploading: Vec<&ClientUpdate> = if cfg.aggregate_user {
            updates.iter().collect()
        } else {
            selected
                .iter()
                .map(|ci| {
                    let pos = eligible.binary_search(ci).expect("selected from eligible");
                    &updates[pos]
                })
                .collect()
        };

        let total_weight: f64 = uploading.iter().map(|u| u.weight).sum();
        let item_refs: Vec<(f64, &[f64])> = uploading
            .iter()
            .map(|u| (u.weight, u.item_update.as_slice()))
            .collect();
        let item_agg = aggregate_tensor(&item_refs, total_weight, cfg, round, 0)?;
        transfer.item_tensors += uploading.len();
        let grads = TowerGrads::from_flat(&model.item, &item_agg)?;
        item_opt.step(&mut model.item, &grads);

        if cfg.aggregate_user {
            for view in 0..cfg.n_views() {
                let refs: Vec<(f64, &[f64])> = updates
                    .iter()
                    .map(|u| {
                        (
                            u.weight,
                            u.user_updates.as_ref().expect("aggregated run")[view].as_slice(),
                        )
                    })
                    .collect();
                let agg = aggregate_tensor(&refs, total_weight, cfg, round, 1 + view as u64)?;
                transfer.user_tensors += updates.len();
                let grads = TowerGrads::from_flat(&model.user[view], &agg)?;
                user_opts[view].step(&mut model.user[view], &grads);
            }
        } else {
            for (u, &ci) in updates.iter().zip(trainers) {
                let towers = u.personal.clone().expect("personal run");
                personal.insert(clients[ci].id, towers);
            }
        }

        let total_pairs: usize = updates.iter().map(|u| u.loss_pairs).sum();
        let mean_loss = if total_pairs > 0 {
            updates.iter().map(|u| u.loss_sum).sum::<f64>() / total_pairs as f64
        } else {
            f64::NAN
        };
        let epsilon = match (&cfg.dp, dp_q) {
            (Some(dp), Some(q)) if dp.sigma > 0.0 => {
                let steps = (round + 1) * cfg.local_steps;
                account_epsilon(dp.sigma, dp.delta, steps as u64, q).ok()
            }
            _ => None,
        };
        rounds.push(RoundLog {
            round,
            mean_loss,
            n_clients: uploading.len(),
            epsilon,
        });

        if let Some(ecfg) = eval_cfg {
            let due = cfg.eval_every > 0 && (round + 1) % cfg.eval_every == 0;
            let last = round + 1 == cfg.rounds;
            if due || last {
                let passes = if cfg.aggregate_user { None } else { Some(&personal) };
                let res = federated_evaluate(&model, passes, clients, item_feats, ecfg, round)?;
                evals.push((round, res));
            }
        }
    }

    Ok(TrainOutcome {
        model,
        personal,
        rounds,
        evals,
        transfer,
    })
}

/// Trains the same model shape on pooled interactions: no clients, no
/// aggregation, `clients_per_round` optimizer steps per round on minibatches
/// drawn from the pool. Restricted to a single view.
///
/// Evaluation still scores per user so the numbers are comparable with the
/// federated runs.
pub fn run_pooled(
    pool: &PooledData,
    clients: &[ClientData],
    item_feats: &[SparseVec],
    cfg: &FederationConfig,
    eval_cfg: Option<&EvalConfig>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.n_views() != 1 {
        return Err(Error::InvalidArgument(
            "pooled training supports exactly one view".into(),
        ));
    }
    let mut model = GlobalModel::init(cfg)?;
    let mut item_opt = cfg.server_opt.build();
    let mut user_opt = cfg.server_opt.build();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut evals = Vec::new();

    for round in 0..cfg.rounds {
        let mut loss_sum = 0.0;
        let mut loss_pairs = 0usize;
        for step in 0..cfg.clients_per_round {
            let seed = batch_seed(cfg.seed, round, step, 0, 0);
            let batch = pool.sample_batch(0, item_feats, cfg.batch_size, cfg.n_neg, seed)?;
            let grads = batch_loss_and_grads(&model.user[0], &model.item, &batch, cfg.gamma)?;
            loss_sum += grads.loss;
            loss_pairs += grads.pairs;
            item_opt.step(&mut model.item, &grads.item);
            user_opt.step(&mut model.user[0], &grads.user);
        }
        rounds.push(RoundLog {
            round,
            mean_loss: loss_sum / loss_pairs.max(1) as f64,
            n_clients: 1,
            epsilon: None,
        });
        if let Some(ecfg) = eval_cfg {
            let due = cfg.eval_every > 0 && (round + 1) % cfg.eval_every == 0;
            let last = round + 1 == cfg.rounds;
            if due || last {
                let res = federated_evaluate(&model, None, clients, item_feats, ecfg, round)?;
                evals.push((round, res));
            }
        }
    }

    Ok(TrainOutcome {
        model,
        personal: HashMap::new(),
        rounds,
        evals,
        transfer: TransferLog::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SynthParams};
    use crate::data::{split_dataset, view1_features, Scenario};

    fn tiny_world(n_views: usize) -> (Vec<ClientData>, Vec<SparseVec>, Vec<(u32, u32)>) {
        let params = SynthParams {
            users: 12,
            items: 60,
            interactions: 300,
            seed: 5,
        };
        let ds = generate(&params).unwrap();
        let split = split_dataset(&ds, Scenario::Random8020, 5);
        let catalog = crate::data::TrigramCatalog::build(&ds.items);
        let item_feats = crate::data::item_features(&ds.items, &catalog);
        let v1 = view1_features(&ds.users);
        let mut views = vec![v1.clone()];
        if n_views == 2 {
            let shifted: Vec<Vec<f64>> = v1.iter().map(|r| r.iter().map(|x| x * 0.5).collect()).collect();
            views.push(shifted);
        }
        let train: Vec<(u32, u32)> = split.train.iter().map(|r| (r.user, r.item)).collect();
        let test: Vec<(u32, u32)> = split.test.iter().map(|r| (r.user, r.item)).collect();
        let clients = build_clients(ds.users.len(), &views, &train, &test).unwrap();
        (clients, item_feats, train)
    }

    fn tiny_cfg(n_views: usize, item_dim: usize, user_dim: usize) -> FederationConfig {
        FederationConfig {
            item_dims: vec![item_dim, 16, 8],
            user_dims: vec![vec![user_dim, 16, 8]; n_views],
            aggregate_user: true,
            clients_per_round: 4,
            rounds: 3,
            batch_size: 6,
            n_neg: 3,
            gamma: 1.0,
            client_lr: 0.2,
            local_steps: 1,
            server_opt: ServerOpt::Adam { lr: 0.001 },
            dp: None,
            secure_agg: false,
            seed: 77,
            eval_every: 0,
        }
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let (clients, feats, _) = tiny_world(2);
        let cfg = tiny_cfg(2, feats[0].dim(), clients[0].views[0].len());
        let a = run_training(&clients, &feats, &cfg, None).unwrap();
        let b = run_training(&clients, &feats, &cfg, None).unwrap();
        assert_eq!(a.model.item.flatten(), b.model.item.flatten());
        assert_eq!(a.model.user[0].flatten(), b.model.user[0].flatten());
        assert_eq!(a.rounds.len(), 3);
        assert!(a.rounds.iter().all(|r| r.mean_loss.is_finite()));
        assert_eq!(a.transfer.item_tensors, 12);
        assert_eq!(a.transfer.user_tensors, 24);
    }

    #[test]
    fn personal_mode_uploads_no_user_tensors() {
        let (clients, feats, _) = tiny_world(2);
        let mut cfg = tiny_cfg(2, feats[0].dim(), clients[0].views[0].len());
        cfg.aggregate_user = false;
        cfg.rounds = 2;
        let out = run_training(&clients, &feats, &cfg, None).unwrap();
        assert_eq!(out.transfer.user_tensors, 0);
        assert!(out.transfer.item_tensors > 0);
        assert!(!out.personal.is_empty());
        // Global user towers were never touched by the server.
        let init = GlobalModel::init(&cfg).unwrap();
        assert_eq!(out.model.user[0].flatten(), init.user[0].flatten());
        assert_ne!(out.model.item.flatten(), init.item.flatten());
        // Personal towers did move.
        let some = out.personal.values().next().unwrap();
        assert_ne!(some[0].flatten(), init.user[0].flatten());
    }

    #[test]
    fn federated_single_client_matches_pooled_trajectory() {
        let (clients, feats, train) = tiny_world(1);
        // Restrict to one client's data.
        let one: Vec<ClientData> = clients
            .iter()
            .filter(|c| c.train_items.len() >= 5)
            .take(1)
            .cloned()
            .collect();
        let uid = one[0].id;
        let solo_train: Vec<(u32, u32)> = train.iter().filter(|(u, _)| *u == uid).copied().collect();
        let mut renumbered = one.clone();
        renumbered[0].id = 0;
        let solo_train: Vec<(u32, u32)> = solo_train.iter().map(|&(_, i)| (0, i)).collect();
        let pool = PooledData::from_clients(&renumbered, &solo_train).unwrap();

        let mut cfg = tiny_cfg(1, feats[0].dim(), one[0].views[0].len());
        cfg.clients_per_round = 1;
        cfg.rounds = 20;
        cfg.server_opt = ServerOpt::Sgd { lr: 0.05 };
        let fed = run_training(&renumbered, &feats, &cfg, None).unwrap();
        let pooled = run_pooled(&pool, &renumbered, &feats, &cfg, None).unwrap();

        let fi = fed.model.item.flatten();
        let pi = pooled.model.item.flatten();
        let max_item = fi
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let fu = fed.model.user[0].flatten();
        let pu = pooled.model.user[0].flatten();
        let max_user = fu
            .iter()
            .zip(&pu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_item < 1e-9, "item towers diverged by {max_item}");
        assert!(max_user < 1e-9, "user towers diverged by {max_user}");
        for (a, b) in fed.rounds.iter().zip(&pooled.rounds) {
            assert!((a.mean_loss - b.mean_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn secure_aggregation_matches_clear_aggregation() {
        let (clients, feats, _) = tiny_world(2);
        let mut cfg = tiny_cfg(2, feats[0].dim(), clients[0].views[0].len());
        cfg.rounds = 2;
        cfg.clients_per_round = 4;
        // SGD server steps keep the drift proportional to the fixed-point
        // quantization error; an adaptive optimizer would renormalize it.
        cfg.server_opt = ServerOpt::Sgd { lr: 0.1 };
        let clear = run_training(&clients, &feats, &cfg, None).unwrap();
        cfg.secure_agg = true;
        let masked = run_training(&clients, &feats, &cfg, None).unwrap();
        let a = clear.model.item.flatten();
        let b = masked.model.item.flatten();
        let max = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        // Fixed-point quantization error only.
        assert!(max < 1e-3, "masked aggregation drifted by {max}");
    }

    #[test]
    fn dp_noise_changes_training_but_stays_deterministic() {
        let (clients, feats, _) = tiny_world(2);
        let mut cfg = tiny_cfg(2, feats[0].dim(), clients[0].views[0].len());
        cfg.rounds = 2;
        cfg.dp = Some(DpParams {
            clip: 0.5,
            sigma: 1.0,
            delta: 1e-3,
            batch: 0,
        });
        let a = run_training(&clients, &feats, &cfg, None).unwrap();
        let b = run_training(&clients, &feats, &cfg, None).unwrap();
        assert_eq!(a.model.item.flatten(), b.model.item.flatten());
        assert!(a.rounds.last().unwrap().epsilon.unwrap() > 0.0);
        cfg.dp = None;
        let c = run_training(&clients, &feats, &cfg, None).unwrap();
        assert_ne!(a.model.item.flatten(), c.model.item.flatten());
        assert!(c.rounds.last().unwrap().epsilon.is_none());
    }

    #[test]
    fn multi_step_local_training_moves_further() {
        let (clients, feats, _) = tiny_world(1);
        let mut cfg = tiny_cfg(1, feats[0].dim(), clients[0].views[0].len());
        cfg.rounds = 1;
        cfg.server_opt = ServerOpt::Sgd { lr: 0.2 };
        let one = run_training(&clients, &feats, &cfg, None).unwrap();
        cfg.local_steps = 3;
        let three = run_training(&clients, &feats, &cfg, None).unwrap();
        let init = GlobalModel::init(&cfg).unwrap().item.flatten();
        let d1: f64 = one
            .model
            .item
            .flatten()
            .iter()
            .zip(&init)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let d3: f64 = three
            .model
            .item
            .flatten()
            .iter()
            .zip(&init)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(d3 > d1, "3 local steps ({d3}) should move more than 1 ({d1})");
    }

    #[test]
    fn config_validation_catches_mismatched_towers() {
        let mut cfg = tiny_cfg(1, 10, 8);
        cfg.user_dims[0] = vec![8, 16, 4]; // output 4 != item output 8
        assert!(matches!(cfg.validate(), Err(Error::Shape(_))));
        let mut cfg = tiny_cfg(1, 10, 8);
        cfg.user_dims.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg(1, 10, 8);
        cfg.gamma = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tree_mean_matches_naive_weighted_mean() {
        let mut vecs = Vec::new();
        let mut rng = rng_from(3, &[]);
        use rand::Rng;
        for _ in 0..40 {
            let w: f64 = rng.random_range(1.0..10.0);
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            vecs.push((w, v));
        }
        let total: f64 = vecs.iter().map(|(w, _)| w).sum();
        let refs: Vec<(f64, &[f64])> = vecs.iter().map(|(w, v)| (*w, v.as_slice())).collect();
        let tree = tree_weighted_mean(&refs, total);
        for d in 0..5 {
            let naive: f64 = vecs.iter().map(|(w, v)| w / total * v[d]).sum();
            assert!((tree[d] - naive).abs() < 1e-12);
        }
    }
}
