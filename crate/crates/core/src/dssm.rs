//! Two-tower relevance model: cosine similarity between tower outputs,
//! softmax posterior over one clicked item and sampled negatives, and the
//! negative log likelihood batch loss with gradients for both towers.

use crate::error::{Error, Result};
use crate::nn::{Input, SparseVec, Tower, TowerGrads};

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine over {} vs {} dims", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("cosine of zero-norm vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

/// Cosine together with its gradients w.r.t. both arguments.
pub fn cosine_backward(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let r = cosine(u, v)?;
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let du: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| vi / (nu * nv) - r * ui / (nu * nu))
        .collect();
    let dv: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| ui / (nu * nv) - r * vi / (nv * nv))
        .collect();
    Ok((r, du, dv))
}

/// Smoothed softmax over relevance scores: p_c ∝ exp(gamma * r_c).
pub fn posterior(scores: &[f64], gamma: f64) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&r| (gamma * (r - m)).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// One training pair: the user's features for a single view, the clicked
/// item and its sampled negatives.
#[derive(Clone, Debug)]
pub struct PairExample {
    pub user_input: Vec<f64>,
    pub positive: SparseVec,
    pub negatives: Vec<SparseVec>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingBatch {
    pub pairs: Vec<PairExample>,
}

pub struct BatchGrads {
    pub user: TowerGrads,
    pub item: TowerGrads,
    /// Sum of per-pair losses; divide by `pairs` for the mean.
    pub loss: f64,
    pub pairs: usize,
}

/// Negative log likelihood of the clicked items, with gradients averaged
/// over the batch. The positive always occupies slot 0 of the candidate set.
pub fn batch_loss_and_grads(
    user_tower: &Tower,
    item_tower: &Tower,
    batch: &TrainingBatch,
    gamma: f64,
) -> Result<BatchGrads> {
    if batch.pairs.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let mut g_user = TowerGrads::zeros_like(user_tower);
    let mut g_item = TowerGrads::zeros_like(item_tower);
    let inv = 1.0 / batch.pairs.len() as f64;
    let mut loss = 0.0;

    for pair in &batch.pairs {
        let (yu, cache_u) = user_tower.forward(Input::Dense(&pair.user_input))?;
        let n_cand = 1 + pair.negatives.len();
        let mut embeds = Vec::with_capacity(n_cand);
        let mut caches = Vec::with_capacity(n_cand);
        for c in 0..n_cand {
            let feats = if c == 0 { &pair.positive } else { &pair.negatives[c - 1] };
            let (yi, cache_i) = item_tower.forward(Input::Sparse(feats))?;
            embeds.push(yi);
            caches.push(cache_i);
        }

        let mut scores = Vec::with_capacity(n_cand);
        let mut d_yu_parts = Vec::with_capacity(n_cand);
        let mut d_yi_parts = Vec::with_capacity(n_cand);
        for yi in &embeds {
            let (r, du, dv) = cosine_backward(&yu, yi)?;
            scores.push(r);
            d_yu_parts.push(du);
            d_yi_parts.push(dv);
        }
        let p = posterior(&scores, gamma);
        loss += -p[0].max(f64::MIN_POSITIVE).ln();

        // dL/dr_c = gamma * (p_c - [c = positive])
        let mut d_yu = vec![0.0; yu.len()];
        for c in 0..n_cand {
            let dr = gamma * (p[c] - if c == 0 { 1.0 } else { 0.0 });
            for (acc, &g) in d_yu.iter_mut().zip(&d_yu_parts[c]) {
                *acc += dr * g;
            }
            let d_yi: Vec<f64> = d_yi_parts[c].iter().map(|&g| dr * g * inv).collect();
            item_tower.backward_into(&caches[c], &d_yi, &mut g_item);
        }
        for v in &mut d_yu {
            *v *= inv;
        }
        user_tower.backward_into(&cache_u, &d_yu, &mut g_user);
    }

    Ok(BatchGrads { user: g_user, item: g_item, loss, pairs: batch.pairs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn cosine_known_values() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((cosine(&[2.0, 0.0], &[4.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap()).abs() < 1e-12);
        assert!((cosine(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_norm_and_mismatch() {
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm(_))));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let mut r = rng::rng_from(3, &[0]);
        for _ in 0..20 {
            let u: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
            if u.iter().all(|x| x.abs() < 1e-3) || v.iter().all(|x| x.abs() < 1e-3) {
                continue;
            }
            let (_, du, dv) = cosine_backward(&u, &v).unwrap();
            let eps = 1e-6;
            for i in 0..5 {
                let mut up = u.clone();
                up[i] += eps;
                let mut um = u.clone();
                um[i] -= eps;
                let fd = (cosine(&up, &v).unwrap() - cosine(&um, &v).unwrap()) / (2.0 * eps);
                assert!((fd - du[i]).abs() < 1e-6, "du[{i}] {fd} vs {}", du[i]);
                let mut vp = v.clone();
                vp[i] += eps;
                let mut vm = v.clone();
                vm[i] -= eps;
                let fd = (cosine(&u, &vp).unwrap() - cosine(&u, &vm).unwrap()) / (2.0 * eps);
                assert!((fd - dv[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn posterior_frozen_values() {
        // hand-computed: exp(0.9)/(exp(0.9)+exp(0.1)) at gamma 1
        let p = posterior(&[0.9, 0.1], 1.0);
        assert!((p[0] - 0.6899744811276125).abs() < 1e-12);
        assert!((p[1] - 0.3100255188723876).abs() < 1e-12);
        // gamma sharpens
        let p5 = posterior(&[0.9, 0.1], 5.0);
        assert!(p5[0] > p[0]);
        // sums to one, invariant to score shift
        let a = posterior(&[0.3, -0.2, 0.8], 2.5);
        let b = posterior(&[100.3, 99.8, 100.8], 2.5);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_survives_extreme_scores() {
        let p = posterior(&[1.0, -1.0], 500.0);
        assert!(p[0] > 0.999 && p.iter().all(|v| v.is_finite()));
        let q = posterior(&[-1.0, -1.0, -1.0], 200.0);
        for v in q {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    fn toy_batch(seed: u64, n_pairs: usize, n_neg: usize, user_dim: usize, item_dim: usize) -> TrainingBatch {
        let mut r = rng::rng_from(seed, &[1]);
        let mut pairs = Vec::new();
        for _ in 0..n_pairs {
            let user_input: Vec<f64> = (0..user_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let sparse = |r: &mut rand_chacha::ChaCha12Rng| {
                let nnz = r.random_range(1..4usize);
                let mut pairs: Vec<(u32, f64)> = Vec::new();
                while pairs.len() < nnz {
                    let i = r.random_range(0..item_dim as u32);
                    if !pairs.iter().any(|&(j, _)| j == i) {
                        pairs.push((i, r.random_range(0.5..2.0)));
                    }
                }
                SparseVec::from_pairs(item_dim, pairs).unwrap()
            };
            let positive = sparse(&mut r);
            let negatives = (0..n_neg).map(|_| sparse(&mut r)).collect();
            pairs.push(PairExample { user_input, positive, negatives });
        }
        TrainingBatch { pairs }
    }

    #[test]
    fn loss_is_ln_k_for_indistinguishable_candidates() {
        // same features for positive and negatives -> uniform posterior
        let user_tower = Tower::new(&[4, 3], 2).unwrap();
        let item_tower = Tower::new(&[6, 3], 3).unwrap();
        let feats = SparseVec::from_pairs(6, vec![(1, 1.0), (4, 0.5)]).unwrap();
        let batch = TrainingBatch {
            pairs: vec![PairExample {
                user_input: vec![0.5, -0.25, 1.0, 0.0],
                positive: feats.clone(),
                negatives: vec![feats.clone(), feats.clone(), feats],
            }],
        };
        let out = batch_loss_and_grads(&user_tower, &item_tower, &batch, 1.0).unwrap();
        assert!((out.loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let mut user_tower = Tower::new(&[5, 4, 3], 11).unwrap();
        let mut item_tower = Tower::new(&[12, 4, 3], 13).unwrap();
        let batch = toy_batch(7, 3, 2, 5, 12);
        let gamma = 1.7;
        let out = batch_loss_and_grads(&user_tower, &item_tower, &batch, gamma).unwrap();
        let eps = 1e-6;
        let n_pairs = batch.pairs.len() as f64;

        // user tower weights: gradient w.r.t. mean loss, so compare against fd of loss/n
        for k in 0..user_tower.layers.len() {
            let n = user_tower.layers[k].weights.as_slice().len();
            for idx in (0..n).step_by(3) {
                let orig = user_tower.layers[k].weights.as_slice()[idx];
                user_tower.layers[k].weights.as_mut_slice()[idx] = orig + eps;
                let lp = batch_loss_and_grads(&user_tower, &item_tower, &batch, gamma).unwrap().loss;
                user_tower.layers[k].weights.as_mut_slice()[idx] = orig - eps;
                let lm = batch_loss_and_grads(&user_tower, &item_tower, &batch, gamma).unwrap().loss;
                user_tower.layers[k].weights.as_mut_slice()[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps * n_pairs);
                let ana = out.user.layers[k].d_weights.as_slice()[idx];
                let denom = fd.abs().max(ana.abs()).max(1e-7);
                assert!((fd - ana).abs() / denom < 1e-4, "user layer {k} idx {idx}: {fd} vs {ana}");
            }
        }
        for k in 0..item_tower.layers.len() {
            let n = item_tower.layers[k].weights.as_slice().len();
            for idx in (0..n).step_by(5) {
                let orig = item_tower.layers[k].weights.as_slice()[idx];
                item_tower.layers[k].weights.as_mut_slice()[idx] = orig + eps;
                let lp = batch_loss_and_grads(&user_tower, &item_tower, &batch, gamma).unwrap().loss;
                item_tower.layers[k].weights.as_mut_slice()[idx] = orig - eps;
                let lm = batch_loss_and_grads(&user_tower, &item_tower, &batch, gamma).unwrap().loss;
                item_tower.layers[k].weights.as_mut_slice()[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps * n_pairs);
                let ana = out.item.layers[k].d_weights.as_slice()[idx];
                let denom = fd.abs().max(ana.abs()).max(1e-7);
                assert!((fd - ana).abs() / denom < 1e-4, "item layer {k} idx {idx}: {fd} vs {ana}");
            }
            if let Some(bias) = &item_tower.layers[k].bias {
                for bi in 0..bias.len() {
                    let orig = item_tower.layers[k].bias.as_ref().unwrap()[bi];
                    item_tower.layers[k].bias.as_mut().unwrap()[bi] = orig + eps;
                    let lp = batch_loss_and_grads(&user_tower, &item_tower, &batch, gamma).unwrap().loss;
                    item_tower.layers[k].bias.as_mut().unwrap()[bi] = orig - eps;
                    let lm = batch_loss_and_grads(&user_tower, &item_tower, &batch, gamma).unwrap().loss;
                    item_tower.layers[k].bias.as_mut().unwrap()[bi] = orig;
                    let fd = (lp - lm) / (2.0 * eps * n_pairs);
                    let ana = out.item.layers[k].d_bias.as_ref().unwrap()[bi];
                    let denom = fd.abs().max(ana.abs()).max(1e-7);
                    assert!((fd - ana).abs() / denom < 1e-4);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_gamma_and_empty_batch() {
        let user_tower = Tower::new(&[4, 3], 2).unwrap();
        let item_tower = Tower::new(&[6, 3], 3).unwrap();
        let batch = toy_batch(1, 2, 1, 4, 6);
        assert!(batch_loss_and_grads(&user_tower, &item_tower, &batch, 0.0).is_err());
        assert!(batch_loss_and_grads(&user_tower, &item_tower, &batch, -1.0).is_err());
        let empty = TrainingBatch { pairs: vec![] };
        assert!(batch_loss_and_grads(&user_tower, &item_tower, &empty, 1.0).is_err());
    }
}
