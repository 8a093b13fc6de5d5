//! Per-client training data and minibatch sampling.
//!
//! A client owns one user's interactions plus that user's input vector for
//! every view. Minibatches are derived from explicit seeds so that a round
//! can be replayed exactly, and so that the pooled (non-federated) trainer
//! can draw byte-identical batches when it is configured to mirror a
//! single-client federation.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::dssm::{PairExample, TrainingBatch};
use crate::nn::SparseVec;
use crate::rng::{derive_seed, rng_from, TAG_BATCH};
use crate::{Error, Result};

/// One participant: a user, her per-view inputs, and her interaction lists.
#[derive(Debug, Clone)]
pub struct ClientData {
    /// User id this client represents.
    pub id: u32,
    /// Dense user input per view, indexed `[view]`.
    pub views: Vec<Vec<f64>>,
    /// Training items in original record order (drives positive sampling).
    pub train_items: Vec<u32>,
    /// Sorted deduplicated copy of `train_items` for membership tests.
    pub train_set: Vec<u32>,
    /// Held-out items, sorted.
    pub test_items: Vec<u32>,
}

impl ClientData {
    /// Aggregation weight: the number of training interactions held locally.
    pub fn weight(&self) -> f64 {
        self.train_items.len() as f64
    }

    /// True if `item` appears in this client's training set.
    pub fn has_trained_on(&self, item: u32) -> bool {
        self.train_set.binary_search(&item).is_ok()
    }
}

/// Builds one client per user from per-view feature tables and
/// train/test interaction lists.
///
/// `per_view_features[v][u]` is user `u`'s input under view `v`. Users with
/// no training interactions still get a client (they matter for cold-start
/// evaluation); they are simply never eligible for training rounds.
pub fn build_clients(
    n_users: usize,
    per_view_features: &[Vec<Vec<f64>>],
    train: &[(u32, u32)],
    test: &[(u32, u32)],
) -> Result<Vec<ClientData>> {
    if per_view_features.is_empty() {
        return Err(Error::InvalidArgument("at least one view required".into()));
    }
    for (v, table) in per_view_features.iter().enumerate() {
        if table.len() != n_users {
            return Err(Error::Shape(format!(
                "view {v} has {} user rows, expected {n_users}",
                table.len()
            )));
        }
    }
    let mut train_by_user: Vec<Vec<u32>> = vec![Vec::new(); n_users];
    for &(u, i) in train {
        let u = u as usize;
        if u >= n_users {
            return Err(Error::InvalidArgument(format!(
                "train user {u} out of range {n_users}"
            )));
        }
        train_by_user[u].push(i);
    }
    let mut test_by_user: Vec<Vec<u32>> = vec![Vec::new(); n_users];
    for &(u, i) in test {
        let u = u as usize;
        if u >= n_users {
            return Err(Error::InvalidArgument(format!(
                "test user {u} out of range {n_users}"
            )));
        }
        test_by_user[u].push(i);
    }

    let mut clients = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let train_items = std::mem::take(&mut train_by_user[u]);
        let mut train_set = train_items.clone();
        train_set.sort_unstable();
        train_set.dedup();
        let mut test_items = std::mem::take(&mut test_by_user[u]);
        test_items.sort_unstable();
        test_items.dedup();
        clients.push(ClientData {
            id: u as u32,
            views: per_view_features.iter().map(|t| t[u].clone()).collect(),
            train_items,
            train_set,
            test_items,
        });
    }
    Ok(clients)
}

/// Seed for the batch drawn by the participant in `slot` for `view` at
/// local step `step` of `round`.
///
/// Keyed by slot rather than client id: a pooled trainer that performs
/// `clients_per_round` optimizer steps per round re-derives the exact same
/// seeds by treating each step as a slot.
pub fn batch_seed(master: u64, round: usize, slot: usize, view: usize, step: usize) -> u64 {
    derive_seed(
        master,
        &[TAG_BATCH, round as u64, slot as u64, view as u64, step as u64],
    )
}

fn draw_negatives(
    rng: &mut ChaCha12Rng,
    n_items: usize,
    forbidden: &[u32],
    n_neg: usize,
) -> Result<Vec<u32>> {
    if forbidden.len() >= n_items {
        return Err(Error::InvalidArgument(
            "no negative candidates: client interacted with every item".into(),
        ));
    }
    let mut negs = Vec::with_capacity(n_neg);
    while negs.len() < n_neg {
        let cand = rng.random_range(0..n_items as u32);
        if forbidden.binary_search(&cand).is_err() {
            negs.push(cand);
        }
    }
    Ok(negs)
}

/// Samples a training batch for one client and view.
///
/// Positives are drawn uniformly with replacement from the client's training
/// interactions; negatives uniformly from items the client never interacted
/// with in training. Fails if the client has no training data.
pub fn sample_batch(
    client: &ClientData,
    view: usize,
    item_feats: &[SparseVec],
    batch_size: usize,
    n_neg: usize,
    seed: u64,
) -> Result<TrainingBatch> {
    if client.train_items.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "client {} has no training interactions",
            client.id
        )));
    }
    let user_input = client.views.get(view).ok_or_else(|| {
        Error::InvalidArgument(format!("client {} has no view {view}", client.id))
    })?;
    let mut rng = rng_from(seed, &[]);
    let mut pairs = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let pos = client.train_items[rng.random_range(0..client.train_items.len())];
        let negs = draw_negatives(&mut rng, item_feats.len(), &client.train_set, n_neg)?;
        pairs.push(PairExample {
            user_input: user_input.clone(),
            positive: item_feats[pos as usize].clone(),
            negatives: negs.iter().map(|&i| item_feats[i as usize].clone()).collect(),
        });
    }
    Ok(TrainingBatch { pairs })
}

/// All training interactions pooled in one place, for the non-federated
/// reference trainer.
#[derive(Debug, Clone)]
pub struct PooledData {
    /// `(user, item)` training pairs in original record order.
    pub pairs: Vec<(u32, u32)>,
    /// Dense user input per view, indexed `[view][user]`.
    pub user_views: Vec<Vec<Vec<f64>>>,
    /// Sorted training-item set per user, for negative rejection.
    pub user_train: Vec<Vec<u32>>,
}

impl PooledData {
    /// Pools the given clients' training data, preserving `train` record
    /// order so batches match the federated sampler's when the pool holds a
    /// single user.
    pub fn from_clients(clients: &[ClientData], train: &[(u32, u32)]) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::InvalidArgument("no clients to pool".into()));
        }
        let n_views = clients[0].views.len();
        let mut user_views = vec![Vec::with_capacity(clients.len()); n_views];
        let mut user_train = Vec::with_capacity(clients.len());
        for c in clients {
            if c.views.len() != n_views {
                return Err(Error::Shape(format!(
                    "client {} has {} views, expected {n_views}",
                    c.id,
                    c.views.len()
                )));
            }
            for (v, table) in user_views.iter_mut().enumerate() {
                table.push(c.views[v].clone());
            }
            user_train.push(c.train_set.clone());
        }
        for &(u, _) in train {
            if u as usize >= clients.len() {
                return Err(Error::InvalidArgument(format!(
                    "train user {u} out of range {}",
                    clients.len()
                )));
            }
        }
        Ok(Self {
            pairs: train.to_vec(),
            user_views,
            user_train,
        })
    }

    /// Samples a batch from the pooled interactions, mirroring
    /// [`sample_batch`]'s draw sequence.
    pub fn sample_batch(
        &self,
        view: usize,
        item_feats: &[SparseVec],
        batch_size: usize,
        n_neg: usize,
        seed: u64,
    ) -> Result<TrainingBatch> {
        if self.pairs.is_empty() {
            return Err(Error::InvalidArgument("pooled data is empty".into()));
        }
        let table = self.user_views.get(view).ok_or_else(|| {
            Error::InvalidArgument(format!("pooled data has no view {view}"))
        })?;
        let mut rng = rng_from(seed, &[]);
        let mut pairs = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (user, pos) = self.pairs[rng.random_range(0..self.pairs.len())];
            let negs = draw_negatives(
                &mut rng,
                item_feats.len(),
                &self.user_train[user as usize],
                n_neg,
            )?;
            pairs.push(PairExample {
                user_input: table[user as usize].clone(),
                positive: item_feats[pos as usize].clone(),
                negatives: negs.iter().map(|&i| item_feats[i as usize].clone()).collect(),
            });
        }
        Ok(TrainingBatch { pairs })
    }
}
