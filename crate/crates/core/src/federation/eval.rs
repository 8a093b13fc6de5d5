//! Ranking evaluation over federated clients, plus the client-side
//! prediction entry point.
//!
//! Evaluation is strictly per client: each user's held-out items are ranked
//! against the full catalog (minus, by default, items the user already
//! trained on), metrics are computed locally, and only the per-user metric
//! values are averaged. Scores are posterior probabilities per view, then
//! averaged across views.
//!
//! Scoring for evaluation is noise-free even when training used a privacy
//! budget: noise calibrated for gradient uploads is orders of magnitude
//! larger than score gaps and would only measure the noise itself.
//! [`predict_topk`] is the client-facing path and does apply the configured
//! clipping and noise when combining view scores, since its output leaves
//! the device.

use rand::Rng;
use rayon::prelude::*;

use crate::dp::{local_secure_aggregate, DpParams};
use crate::dssm::{cosine, posterior};
use crate::metrics::{auc, ndcg_at_k, precision_at_k, recall_at_k};
use crate::nn::{Input, SparseVec, Tower};
use crate::rng::{rng_from, TAG_EVAL, TAG_PREDICT};
use crate::{Error, Result};

use super::{ClientData, GlobalModel};
use std::collections::{HashMap, HashSet};

/// Evaluation-time knobs.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Cutoff for precision, recall and discounted gain.
    pub topk: usize,
    /// Sampled non-interacted items per held-out positive for the ranking
    /// AUC.
    pub neg_samples: usize,
    /// Drop items the user trained on from the candidate set.
    pub exclude_train: bool,
    /// Softmax sharpness, normally the training value.
    pub gamma: f64,
    /// Seed for negative sampling; derivations add round and client id.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            topk: 10,
            neg_samples: 100,
            exclude_train: true,
            gamma: 1.0,
            seed: 0,
        }
    }
}

/// Metric means over evaluated clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Clients with at least one held-out item.
    pub n_clients: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub auc: f64,
}

/// Embeds every catalog item through the item tower once.
fn embed_items(item_tower: &Tower, item_feats: &[SparseVec]) -> Result<Vec<Vec<f64>>> {
    item_feats
        .iter()
        .map(|f| Ok(item_tower.forward(Input::Sparse(f))?.0))
        .collect()
}

/// Cosine that treats an all-zero embedding as neutral relevance instead of
/// failing. An untrained tower fed an all-zero input (a cold user's latent
/// view before any training) produces exactly zero; scoring it at the
/// midpoint of the cosine range keeps such users rankable.
fn relevance(u: &[f64], v: &[f64]) -> Result<f64> {
    match cosine(u, v) {
        Ok(r) => Ok(r),
        Err(Error::ZeroNorm(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Scores one user against a candidate list under one view: cosine against
/// each embedded item, sharpened into a posterior over the candidates.
fn view_scores(
    user_tower: &Tower,
    user_input: &[f64],
    item_embeds: &[Vec<f64>],
    candidates: &[u32],
    gamma: f64,
) -> Result<Vec<f64>> {
    let (yu, _) = user_tower.forward(Input::Dense(user_input))?;
    let mut rels = Vec::with_capacity(candidates.len());
    for &c in candidates {
        rels.push(relevance(&yu, &item_embeds[c as usize])?);
    }
    Ok(posterior(&rels, gamma))
}

struct ClientMetrics {
    precision: f64,
    recall: f64,
    ndcg: f64,
    auc: f64,
}

fn towers_for<'a>(
    model: &'a GlobalModel,
    personal: Option<&'a HashMap<u32, Vec<Tower>>>,
    client: &ClientData,
) -> &'a [Tower] {
    personal
        .and_then(|p| p.get(&client.id))
        .map(|t| t.as_slice())
        .unwrap_or(&model.user)
}

fn eval_client(
    model: &GlobalModel,
    personal: Option<&HashMap<u32, Vec<Tower>>>,
    client: &ClientData,
    item_embeds: &[Vec<f64>],
    cfg: &EvalConfig,
    round: usize,
) -> Result<ClientMetrics> {
    let n_items = item_embeds.len();
    let candidates: Vec<u32> = (0..n_items as u32)
        .filter(|&i| !(cfg.exclude_train && client.has_trained_on(i)))
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "client {} has no candidate items",
            client.id
        )));
    }
    let user_towers = towers_for(model, personal, client);

    // Mean posterior across views, then a dense lookup by item id.
    let mut mean = vec![0.0; candidates.len()];
    for (view, tower) in user_towers.iter().enumerate() {
        let scores = view_scores(tower, &client.views[view], item_embeds, &candidates, cfg.gamma)?;
        for (m, s) in mean.iter_mut().zip(&scores) {
            *m += s / user_towers.len() as f64;
        }
    }
    let mut score_of = vec![f64::NEG_INFINITY; n_items];
    for (&c, &s) in candidates.iter().zip(&mean) {
        score_of[c as usize] = s;
    }

    // Rank candidates by score, ties broken by item id so results never
    // depend on sort internals.
    let mut ranked = candidates.clone();
    ranked.sort_by(|&a, &b| {
        score_of[b as usize]
            .partial_cmp(&score_of[a as usize])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });

    let relevant: Vec<u32> = client
        .test_items
        .iter()
        .copied()
        .filter(|&i| score_of[i as usize].is_finite())
        .collect();
    let relevant_set: HashSet<u32> = relevant.iter().copied().collect();
    let precision = precision_at_k(&ranked, &relevant_set, cfg.topk);
    let recall = recall_at_k(&ranked, &relevant_set, cfg.topk);
    let ndcg = ndcg_at_k(&ranked, &relevant_set, cfg.topk);

    // Ranking AUC: each held-out positive against sampled items the user
    // never interacted with at all.
    let mut rng = rng_from(cfg.seed, &[TAG_EVAL, round as u64, client.id as u64]);
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();
    for &p in &relevant {
        pos_scores.push(score_of[p as usize]);
        let mut drawn = 0;
        let mut guard = 0;
        while drawn < cfg.neg_samples {
            guard += 1;
            if guard > cfg.neg_samples * 1000 {
                return Err(Error::InvalidArgument(format!(
                    "client {} interacted with nearly every item; cannot sample negatives",
                    client.id
                )));
            }
            let cand = rng.random_range(0..n_items as u32);
            if client.train_set.binary_search(&cand).is_ok()
                || client.test_items.binary_search(&cand).is_ok()
            {
                continue;
            }
            if score_of[cand as usize].is_finite() {
                neg_scores.push(score_of[cand as usize]);
                drawn += 1;
            }
        }
    }
    let auc = if pos_scores.is_empty() {
        0.5
    } else {
        auc(&pos_scores, &neg_scores)
    };

    Ok(ClientMetrics {
        precision,
        recall,
        ndcg,
        auc,
    })
}

/// Evaluates the model across all clients holding test items.
///
/// `personal` supplies per-client user towers for runs that keep user
/// towers local; clients without an entry (never selected for training)
/// fall back to the globals. Metric means are taken in client-id order so
/// the result is independent of thread scheduling.
pub fn federated_evaluate(
    model: &GlobalModel,
    personal: Option<&HashMap<u32, Vec<Tower>>>,
    clients: &[ClientData],
    item_feats: &[SparseVec],
    cfg: &EvalConfig,
    round: usize,
) -> Result<EvalResult> {
    if cfg.topk == 0 || cfg.neg_samples == 0 || !(cfg.gamma > 0.0) {
        return Err(Error::InvalidArgument(
            "topk, neg_samples and gamma must be positive".into(),
        ));
    }
    let item_embeds = embed_items(&model.item, item_feats)?;
    let eval_clients: Vec<&ClientData> = clients
        .iter()
        .filter(|c| !c.test_items.is_empty())
        .collect();
    if eval_clients.is_empty() {
        return Err(Error::InvalidArgument(
            "no client has held-out items".into(),
        ));
    }
    let per_client: Vec<ClientMetrics> = eval_clients
        .par_iter()
        .map(|c| eval_client(model, personal, c, &item_embeds, cfg, round))
        .collect::<Result<Vec<_>>>()?;

    let n = per_client.len() as f64;
    Ok(EvalResult {
        n_clients: per_client.len(),
        precision: per_client.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_client.iter().map(|m| m.recall).sum::<f64>() / n,
        ndcg: per_client.iter().map(|m| m.ndcg).sum::<f64>() / n,
        auc: per_client.iter().map(|m| m.auc).sum::<f64>() / n,
    })
}

/// Client-side top-`k` recommendation.
///
/// Scores every candidate under each of the client's views, passes the
/// per-view score vectors through the same local aggregation gate used for
/// gradient uploads (so a configured privacy budget clips and perturbs the
/// combined scores), and returns `(item, score)` pairs best-first with ties
/// broken by item id. Items the client trained on are excluded when
/// `exclude_train` is set.
#[allow(clippy::too_many_arguments)]
pub fn predict_topk(
    model: &GlobalModel,
    personal: Option<&HashMap<u32, Vec<Tower>>>,
    client: &ClientData,
    item_feats: &[SparseVec],
    k: usize,
    gamma: f64,
    exclude_train: bool,
    dp: Option<&DpParams>,
    seed: u64,
) -> Result<Vec<(u32, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let item_embeds = embed_items(&model.item, item_feats)?;
    let candidates: Vec<u32> = (0..item_feats.len() as u32)
        .filter(|&i| !(exclude_train && client.has_trained_on(i)))
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate items".into()));
    }
    let user_towers = towers_for(model, personal, client);
    let mut per_view = Vec::with_capacity(user_towers.len());
    for (view, tower) in user_towers.iter().enumerate() {
        per_view.push(view_scores(
            tower,
            &client.views[view],
            &item_embeds,
            &candidates,
            gamma,
        )?);
    }
    let mut rng = rng_from(seed, &[TAG_PREDICT, client.id as u64]);
    let combined = local_secure_aggregate(&per_view, dp, &mut rng)?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        combined[b]
            .partial_cmp(&combined[a])
            .expect("scores are finite")
            .then(candidates[a].cmp(&candidates[b]))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| (candidates[i], combined[i]))
        .collect())
}
