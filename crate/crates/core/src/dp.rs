//! Differentially private local aggregation.
//!
//! Before anything leaves a client, the per-view vectors are subsampled,
//! clipped to an l2 ball and averaged with Gaussian noise:
//!
//!   out = (1/|B|) * (sum_{v in B} clip_C(v) + n),   n ~ N(0, sigma^2 C^2 I)
//!
//! With `dp = None` the same routine degrades to the plain mean of all
//! inputs, which keeps the noiseless code path identical to the noisy one.
//! Privacy spend is tracked with a Renyi-DP accountant for the sampled
//! Gaussian mechanism, converted to (epsilon, delta).

use rand::seq::index::sample as index_sample;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpParams {
    /// l2 clipping bound C.
    pub clip: f64,
    /// Noise multiplier sigma; the per-coordinate noise std is sigma * C.
    pub sigma: f64,
    /// Target delta for the accountant.
    pub delta: f64,
    /// Subsample size |B|; 0 means "all inputs".
    pub batch: usize,
}

impl DpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::InvalidArgument(format!("dp clip must be positive, got {}", self.clip)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("dp sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("dp delta must be in (0,1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Scale `v` into the l2 ball of radius `c` (in place); returns the original
/// norm. Vectors already inside the ball are untouched.
pub fn clip_to_norm(v: &mut [f64], c: f64) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > c {
        let s = c / norm;
        for x in v {
            *x *= s;
        }
    }
    norm
}

/// Clipped, subsampled, noisy mean of the per-view vectors.
///
/// `rng` drives both the subsample and the noise, so the output is a pure
/// function of inputs, parameters and seed. When `dp` is `None` or
/// `sigma == 0` no randomness is consumed for noise and the result with
/// `dp = None` is exactly the arithmetic mean.
pub fn local_secure_aggregate(
    views: &[Vec<f64>],
    dp: Option<&DpParams>,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("no vectors to aggregate".into()));
    }
    let dim = views[0].len();
    if views.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("aggregation inputs differ in length".into()));
    }
    let Some(dp) = dp else {
        let mut out = vec![0.0; dim];
        for v in views {
            for (o, &x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        let inv = 1.0 / views.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        return Ok(out);
    };
    dp.validate()?;

    let take = if dp.batch == 0 || dp.batch >= views.len() { views.len() } else { dp.batch };
    // subsample without replacement; index_sample draws even when taking all,
    // keeping the rng stream layout independent of |B|
    let chosen = index_sample(rng, views.len(), take);

    let mut acc = vec![0.0; dim];
    for i in chosen {
        let mut v = views[i].clone();
        clip_to_norm(&mut v, dp.clip);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    if dp.sigma > 0.0 {
        let noise = Normal::new(0.0, dp.sigma * dp.clip)
            .map_err(|e| Error::InvalidArgument(format!("bad noise parameters: {e}")))?;
        for a in &mut acc {
            *a += noise.sample(rng);
        }
    }
    let inv = 1.0 / take as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Renyi DP of one sampled-Gaussian release at integer order `alpha`,
/// subsampling ratio `q` and noise multiplier `sigma`, computed in log space:
///
///   rdp(alpha) = ln( sum_k C(alpha,k) (1-q)^(alpha-k) q^k e^{k(k-1)/(2 sigma^2)} ) / (alpha - 1)
fn rdp_sampled_gaussian(q: f64, sigma: f64, alpha: u32) -> f64 {
    debug_assert!(alpha >= 2);
    if q >= 1.0 {
        return alpha as f64 / (2.0 * sigma * sigma);
    }
    let a = alpha as f64;
    let mut ln_binom = 0.0; // ln C(alpha, 0)
    let mut max_term = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    for k in 0..=alpha {
        let kf = k as f64;
        let t = ln_binom + (a - kf) * (1.0 - q).ln() + kf * q.ln() + kf * (kf - 1.0) / (2.0 * sigma * sigma);
        // k = 0 term: q^0 = 1 handled by kf * q.ln() = 0 even for q -> 0
        terms.push(t);
        max_term = max_term.max(t);
        ln_binom += ((a - kf) / (kf + 1.0)).ln();
    }
    let sum: f64 = terms.iter().map(|t| (t - max_term).exp()).sum();
    (max_term + sum.ln()) / (a - 1.0)
}

/// (epsilon, best alpha) after `rounds` releases with subsampling ratio `q`,
/// minimized over integer orders 2..=256.
pub fn account_epsilon_detailed(sigma: f64, delta: f64, rounds: u64, q: f64) -> Result<(f64, u32)> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("accountant needs sigma > 0".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must be in (0,1), got {delta}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("sampling ratio must be in (0,1], got {q}")));
    }
    let mut best = (f64::INFINITY, 2u32);
    for alpha in 2..=256u32 {
        let rdp = rounds as f64 * rdp_sampled_gaussian(q, sigma, alpha);
        let eps = rdp + (1.0 / delta).ln() / (alpha as f64 - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    Ok(best)
}

pub fn account_epsilon(sigma: f64, delta: f64, rounds: u64, q: f64) -> Result<f64> {
    account_epsilon_detailed(sigma, delta, rounds, q).map(|(e, _)| e)
}

/// Classic single-release Gaussian mechanism calibration,
/// sigma = sqrt(2 ln(1.25/delta)) / epsilon, inverted for epsilon. Used as an
/// independent reference for the accountant at T = 1, q = 1.
pub fn closed_form_epsilon_single(sigma: f64, delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt() / sigma
}
