//! The aggregation protocol itself.
//!
//! Rounds (all messages go over the [`SimBus`]):
//!   0 dealer -> client: self-mask seed, pairwise seeds, held shares
//!   1 client -> server: masked fixed-point words
//!   2 server -> client: share request for dropped seeds
//!   3 client -> server: held shares for the requested seeds
//!
//! A client that drops before round 1 leaves dangling pairwise streams in
//! everyone else's upload; the server reconstructs those pair seeds from
//! shares and cancels them. A client that drops after round 1 is included in
//! the sum but cannot hand over its self-mask seed, which the server instead
//! reconstructs from the shares held by the remaining clients.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

use super::bus::{Envelope, SimBus, DEALER, SERVER};
use super::codec::FixedPointCodec;
use super::shamir::{reconstruct, share_secret, PrimeField, Share, DEFAULT_PRIME};
use super::SecureAggError;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropPhase {
    /// Crashes before uploading its masked input (excluded from the sum).
    BeforeMask,
    /// Uploads its masked input, then goes silent (included in the sum).
    AfterMask,
    Never,
}

#[derive(Clone, Copy, Debug)]
pub struct SecureAggParams {
    pub n: usize,
    /// Shamir threshold; also the minimum number of delivered inputs and of
    /// live share responders.
    pub t: usize,
    pub codec: FixedPointCodec,
    pub field_prime: u64,
    pub seed: u64,
}

impl SecureAggParams {
    /// Default threshold is ceil(2n/3).
    pub fn new(n: usize, seed: u64) -> Self {
        SecureAggParams {
            n,
            t: (2 * n).div_ceil(3).max(1),
            codec: FixedPointCodec::DEFAULT,
            field_prime: DEFAULT_PRIME,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SecureAggError> {
        if self.n < 2 {
            return Err(SecureAggError::Params("need at least 2 participants".into()));
        }
        if self.t == 0 || self.t > self.n {
            return Err(SecureAggError::Params(format!(
                "threshold {} outside 1..={}",
                self.t, self.n
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Init,
    Keyed,
    Masked,
    Done,
}

struct Participant {
    id: u32,
    n: usize,
    phase: Phase,
    self_seed: u64,
    pair_seeds: BTreeMap<u32, u64>,
    held_self_shares: BTreeMap<u32, Share>,
    held_pair_shares: BTreeMap<(u32, u32), Share>,
}

impl Participant {
    fn new(id: u32, n: usize) -> Self {
        Participant {
            id,
            n,
            phase: Phase::Init,
            self_seed: 0,
            pair_seeds: BTreeMap::new(),
            held_self_shares: BTreeMap::new(),
            held_pair_shares: BTreeMap::new(),
        }
    }

    fn receive_keys(&mut self, payload: &[u8]) -> Result<(), SecureAggError> {
        if self.phase != Phase::Init {
            return Err(SecureAggError::State(format!(
                "client {} got key material in phase {:?}",
                self.id, self.phase
            )));
        }
        let mut r = Reader::new(payload);
        self.self_seed = r.u64()?;
        let n_pairs = r.u32()? as usize;
        for _ in 0..n_pairs {
            let peer = r.u32()?;
            let seed = r.u64()?;
            self.pair_seeds.insert(peer, seed);
        }
        let n_self = r.u32()? as usize;
        for _ in 0..n_self {
            let owner = r.u32()?;
            let share = Share { x: r.u64()?, y: r.u64()? };
            self.held_self_shares.insert(owner, share);
        }
        let n_pair_shares = r.u32()? as usize;
        for _ in 0..n_pair_shares {
            let lo = r.u32()?;
            let hi = r.u32()?;
            let share = Share { x: r.u64()?, y: r.u64()? };
            self.held_pair_shares.insert((lo, hi), share);
        }
        r.finish()?;
        if self.pair_seeds.len() != self.n - 1 {
            return Err(SecureAggError::Frame(format!(
                "client {} got {} pairwise seeds, expected {}",
                self.id,
                self.pair_seeds.len(),
                self.n - 1
            )));
        }
        self.phase = Phase::Keyed;
        Ok(())
    }

    /// Encode + mask the input. Self stream is added; the pair stream with a
    /// higher-id peer is added and with a lower-id peer subtracted, so the
    /// two sides cancel in the server's sum.
    fn masked_words(&mut self, input: &[f64], codec: &FixedPointCodec) -> Result<Vec<u64>, SecureAggError> {
        if self.phase != Phase::Keyed {
            return Err(SecureAggError::State(format!(
                "client {} asked to mask in phase {:?}",
                self.id, self.phase
            )));
        }
        let mut words = codec.encode_vec(input)?;
        let mut self_stream = mask_stream(self.self_seed, words.len(), codec);
        for (w, s) in words.iter_mut().zip(self_stream.drain(..)) {
            *w = codec.add(*w, s);
        }
        for (&peer, &seed) in &self.pair_seeds {
            let stream = mask_stream(seed, words.len(), codec);
            if self.id < peer {
                for (w, s) in words.iter_mut().zip(stream) {
                    *w = codec.add(*w, s);
                }
            } else {
                for (w, s) in words.iter_mut().zip(stream) {
                    *w = codec.sub(*w, s);
                }
            }
        }
        self.phase = Phase::Masked;
        Ok(words)
    }

    fn answer_share_request(&mut self, payload: &[u8]) -> Result<Vec<u8>, SecureAggError> {
        if self.phase != Phase::Masked {
            return Err(SecureAggError::State(format!(
                "client {} got share request in phase {:?}",
                self.id, self.phase
            )));
        }
        let mut r = Reader::new(payload);
        let mut out = Writer::new();
        let n_self = r.u32()? as usize;
        let mut self_items = Vec::new();
        for _ in 0..n_self {
            let owner = r.u32()?;
            if owner == self.id {
                // a client never reveals the share of its own live seed;
                // its self seed is recoverable only when it went silent
                continue;
            }
            if let Some(s) = self.held_self_shares.get(&owner) {
                self_items.push((owner, *s));
            }
        }
        let n_pairs = r.u32()? as usize;
        let mut pair_items = Vec::new();
        for _ in 0..n_pairs {
            let lo = r.u32()?;
            let hi = r.u32()?;
            if let Some(s) = self.held_pair_shares.get(&(lo, hi)) {
                pair_items.push((lo, hi, *s));
            }
        }
        r.finish()?;
        out.u32(self_items.len() as u32);
        for (owner, s) in self_items {
            out.u32(owner);
            out.u64(s.x);
            out.u64(s.y);
        }
        out.u32(pair_items.len() as u32);
        for (lo, hi, s) in pair_items {
            out.u32(lo);
            out.u32(hi);
            out.u64(s.x);
            out.u64(s.y);
        }
        self.phase = Phase::Done;
        Ok(out.into_bytes())
    }
}

/// Deterministic per-seed mask stream over the codec's modulus.
fn mask_stream(seed: u64, len: usize, codec: &FixedPointCodec) -> Vec<u64> {
    let mut prg = ChaCha12Rng::seed_from_u64(seed);
    (0..len).map(|_| codec.wrap(prg.next_u64())).collect()
}

#[derive(Debug)]
pub struct ProtocolOutcome {
    pub sum: Vec<f64>,
    /// Clients whose masked input made it into the sum, ascending.
    pub included: Vec<u32>,
    /// Clients that answered the share request, ascending.
    pub responders: Vec<u32>,
    pub transcript: Vec<u8>,
}

/// Runs the full protocol over an in-process bus and returns the decoded sum
/// of the delivered inputs.
pub fn run_protocol(
    inputs: &[Vec<f64>],
    params: &SecureAggParams,
    drops: &[DropPhase],
) -> Result<ProtocolOutcome, SecureAggError> {
    params.validate()?;
    let n = params.n;
    if inputs.len() != n || drops.len() != n {
        return Err(SecureAggError::Params(format!(
            "{} inputs and {} drop entries for {} participants",
            inputs.len(),
            drops.len(),
            n
        )));
    }
    let dim = inputs[0].len();
    if dim == 0 || inputs.iter().any(|v| v.len() != dim) {
        return Err(SecureAggError::Params("inputs must be nonempty and equally sized".into()));
    }
    let field = PrimeField::new(params.field_prime)?;
    let mut bus = SimBus::new();
    let mut dealer_rng = rng::rng_from(params.seed, &[rng::TAG_SECURE, 0]);

    // --- dealer: draw seeds and Shamir-share all of them
    let self_seeds: Vec<u64> =
        (0..n).map(|_| rand::Rng::random_range(&mut dealer_rng, 0..field.modulus())).collect();
    let mut pair_seeds: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for i in 0..n as u32 {
        for j in (i + 1)..n as u32 {
            pair_seeds.insert((i, j), rand::Rng::random_range(&mut dealer_rng, 0..field.modulus()));
        }
    }
    let self_shares: Vec<Vec<Share>> = self_seeds
        .iter()
        .map(|&s| share_secret(&field, s, params.t, n, &mut dealer_rng))
        .collect::<Result<_, _>>()?;
    let pair_shares: BTreeMap<(u32, u32), Vec<Share>> = pair_seeds
        .iter()
        .map(|(&k, &s)| Ok((k, share_secret(&field, s, params.t, n, &mut dealer_rng)?)))
        .collect::<Result<_, SecureAggError>>()?;

    let mut participants: Vec<Participant> = (0..n).map(|i| Participant::new(i as u32, n)).collect();
    for p in 0..n {
        let mut w = Writer::new();
        w.u64(self_seeds[p]);
        let peers: Vec<u32> = (0..n as u32).filter(|&q| q != p as u32).collect();
        w.u32(peers.len() as u32);
        for q in peers {
            let key = (q.min(p as u32), q.max(p as u32));
            w.u32(q);
            w.u64(pair_seeds[&key]);
        }
        w.u32(n as u32);
        for owner in 0..n as u32 {
            let s = self_shares[owner as usize][p];
            w.u32(owner);
            w.u64(s.x);
            w.u64(s.y);
        }
        w.u32(pair_shares.len() as u32);
        for (&(lo, hi), shares) in &pair_shares {
            let s = shares[p];
            w.u32(lo);
            w.u32(hi);
            w.u64(s.x);
            w.u64(s.y);
        }
        let env = Envelope { from: DEALER, to: p as u32, round: 0, payload: w.into_bytes() };
        participants[p].receive_keys(&env.payload)?;
        bus.send(env);
    }

    // --- round 1: masked uploads (lost entirely for BeforeMask clients)
    let mut masked: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for p in 0..n {
        if drops[p] == DropPhase::BeforeMask {
            continue;
        }
        let words = participants[p].masked_words(&inputs[p], &params.codec)?;
        let mut w = Writer::new();
        w.u32(words.len() as u32);
        for &word in &words {
            w.u64(word);
        }
        bus.send(Envelope { from: p as u32, to: SERVER, round: 1, payload: w.into_bytes() });
        masked.insert(p as u32, words);
    }
    let included: Vec<u32> = masked.keys().copied().collect();
    if included.len() < params.t {
        return Err(SecureAggError::TooFewSurvivors {
            delivered: included.len(),
            threshold: params.t,
        });
    }
    let excluded: Vec<u32> = (0..n as u32).filter(|i| !masked.contains_key(i)).collect();

    // --- round 2/3: collect shares from clients still alive
    let mut request = Writer::new();
    request.u32(included.len() as u32);
    for &i in &included {
        request.u32(i);
    }
    let needed_pairs: Vec<(u32, u32)> = excluded
        .iter()
        .flat_map(|&i| included.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    request.u32(needed_pairs.len() as u32);
    for &(lo, hi) in &needed_pairs {
        request.u32(lo);
        request.u32(hi);
    }
    let request = request.into_bytes();

    let mut self_share_pool: BTreeMap<u32, Vec<Share>> = BTreeMap::new();
    let mut pair_share_pool: BTreeMap<(u32, u32), Vec<Share>> = BTreeMap::new();
    let mut responders = Vec::new();
    for p in 0..n {
        if drops[p] != DropPhase::Never {
            continue;
        }
        bus.send(Envelope { from: SERVER, to: p as u32, round: 2, payload: request.clone() });
        let reply = participants[p].answer_share_request(&request)?;
        bus.send(Envelope { from: p as u32, to: SERVER, round: 3, payload: reply.clone() });
        responders.push(p as u32);

        let mut r = Reader::new(&reply);
        let n_self = r.u32()? as usize;
        for _ in 0..n_self {
            let owner = r.u32()?;
            let share = Share { x: r.u64()?, y: r.u64()? };
            self_share_pool.entry(owner).or_default().push(share);
        }
        let n_pair = r.u32()? as usize;
        for _ in 0..n_pair {
            let key = (r.u32()?, r.u32()?);
            let share = Share { x: r.u64()?, y: r.u64()? };
            pair_share_pool.entry(key).or_default().push(share);
        }
        r.finish()?;
    }
    if responders.len() < params.t {
        return Err(SecureAggError::TooFewResponders {
            responders: responders.len(),
            threshold: params.t,
        });
    }

    // --- unmask: subtract self streams of included clients and dangling
    // pair streams toward excluded clients, then decode
    let mut sum = vec![0u64; dim];
    for words in masked.values() {
        for (acc, &w) in sum.iter_mut().zip(words) {
            *acc = params.codec.add(*acc, w);
        }
    }
    for &i in &included {
        let shares = self_share_pool.get(&i).map(Vec::as_slice).unwrap_or(&[]);
        // a live responder holds its own seed; use it directly and let the
        // shares (if any were returned for it) stay unused
        let seed = if drops[i as usize] == DropPhase::Never {
            participants[i as usize].self_seed
        } else {
            reconstruct(&field, shares, params.t, &format!("self seed of client {i}"))?
        };
        for (acc, s) in sum.iter_mut().zip(mask_stream(seed, dim, &params.codec)) {
            *acc = params.codec.sub(*acc, s);
        }
    }
    for &(lo, hi) in &needed_pairs {
        let shares = pair_share_pool.get(&(lo, hi)).map(Vec::as_slice).unwrap_or(&[]);
        let seed = reconstruct(&field, shares, params.t, &format!("pair seed ({lo},{hi})"))?;
        let stream = mask_stream(seed, dim, &params.codec);
        // the included side added the stream if it has the smaller id
        let included_is_lo = masked.contains_key(&lo);
        for (acc, s) in sum.iter_mut().zip(stream) {
            *acc = if included_is_lo { params.codec.sub(*acc, s) } else { params.codec.add(*acc, s) };
        }
    }

    let sum_f: Vec<f64> = sum.iter().map(|&w| params.codec.decode(w)).collect();
    Ok(ProtocolOutcome { sum: sum_f, included, responders, transcript: bus.dump_transcript() })
}

// --- tiny byte readers/writers for payloads ---

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, off: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SecureAggError> {
        if self.off + n > self.buf.len() {
            return Err(SecureAggError::Frame("truncated payload".into()));
        }
        let s = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SecureAggError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SecureAggError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), SecureAggError> {
        if self.off != self.buf.len() {
            return Err(SecureAggError::Frame(format!(
                "{} trailing bytes in payload",
                self.buf.len() - self.off
            )));
        }
        Ok(())
    }
}
