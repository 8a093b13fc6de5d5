//! Deterministic synthetic corpus in the canonical file layout.
//!
//! The generator plants learnable structure at two grains. Coarse: 18
//! genres with demographic prototypes (keyed by occupation cluster, age
//! band and gender), so cold users are predictable from their profile.
//! Fine: every genre splits into topics; an item belongs to one or two
//! topics, which pick its genre flags and most of its title words, so the
//! trigram features identify topics even for unseen items. Each user's
//! taste over topics mixes the demographic genre mass with a private
//! per-topic component, and interactions are sampled proportionally to
//! item popularity times that taste. The private component is what rewards
//! per-client personalization: users from one demographic cluster agree on
//! genres but split on topics.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use super::{Dataset, Interaction, ItemInfo, UserInfo, GENRES, N_GENRES, OCCUPATIONS};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug)]
pub struct SynthParams {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { users: 943, items: 1682, interactions: 100_000, seed: 0 }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.users < 4 || self.items < 8 {
            return Err(Error::InvalidArgument("need at least 4 users and 8 items".into()));
        }
        let min_per_user = MIN_INTERACTIONS_PER_USER.min(self.items / 2);
        if self.interactions < self.users * min_per_user.max(1) {
            return Err(Error::InvalidArgument(format!(
                "{} interactions cannot give {} users {} each",
                self.interactions,
                self.users,
                min_per_user.max(1)
            )));
        }
        if self.interactions > self.users * (self.items / 2) {
            return Err(Error::InvalidArgument(
                "too many interactions for distinct per-user items".into(),
            ));
        }
        Ok(())
    }
}

const MIN_INTERACTIONS_PER_USER: usize = 20;
/// Demographic mixture weights over genres: prototype, age direction,
/// gender direction, zip region. Normalized again after mixing.
const W_PROTO: f64 = 0.74;
const W_AGE: f64 = 0.10;
const W_GENDER: f64 = 0.06;
const W_REGION: f64 = 0.10;
/// Contrast exponent applied to each profile table row before mixing, so a
/// profile keeps a crisp genre signature instead of washing out in the blend.
const GENRE_CONTRAST: f64 = 8.0;
/// Share of a user's topic taste that is private rather than demographic.
const W_PERSONAL: f64 = 0.85;
/// Topics refining the genres; topic `t` lives in genre `t % 18`.
const N_TOPICS: usize = 126;
/// Vocabulary words owned by each topic, at the front of the vocabulary.
const TOPIC_WORDS: usize = 2;
/// Probability that a title word comes from one of the item's topics.
const P_TOPIC_WORD: f64 = 0.95;
/// Probability that an item carries a second topic.
const P_SECOND_TOPIC: f64 = 0.20;
/// Taste sharpness: weight on topic affinity inside the sampling exponent.
const TASTE_SHARPNESS: f64 = 300.0;
/// Popularity exponent in the sampling weight.
const POPULARITY_MIX: f64 = 1.0;
/// Zipf shape for item popularity.
const ZIPF_S: f64 = 1.0;
const ZIPF_OFFSET: f64 = 10.0;
/// Within-genre topic emphasis, rotated per occupation cluster, so a user's
/// demographics reveal which topics of a genre they lean toward.
const TOPIC_TILT: [f64; 8] = [0.32, 0.20, 0.14, 0.10, 0.08, 0.06, 0.055, 0.045];

fn topics_in_genre(g: usize) -> usize {
    if g < N_TOPICS % 18 {
        N_TOPICS / 18 + 1
    } else {
        N_TOPICS / 18
    }
}

/// Demographic genre mass for a user: what is predictable from the profile
/// alone.
/// Concentrates a profile row on its leading genres before mixing. Sharpening
/// each table separately keeps the mixture linear in the profile attributes,
/// so an additive embedding layer can represent the map exactly; sharpening
/// after mixing would entangle the attributes nonlinearly.
fn sharpen(dir: &[f64; 18]) -> [f64; 18] {
    let mut s = [0.0f64; 18];
    for g in 0..18 {
        s[g] = dir[g].powf(GENRE_CONTRAST);
    }
    normalize(&mut s);
    s
}

fn genre_mix(user: &UserInfo) -> [f64; 18] {
    let proto = sharpen(&PROTOTYPES[OCC_CLUSTER[user.occupation as usize]]);
    let age_dir = sharpen(if user.age < 35 { &AGE_YOUNG } else { &AGE_OLD });
    let gender_dir = sharpen(if user.male { &GENDER_MALE } else { &GENDER_FEMALE });
    let region = user.zip.bytes().next().filter(u8::is_ascii_digit).map_or(0, |b| b - b'0');
    let region_dir = sharpen(&REGION_TASTE[region as usize]);
    let mut m = [0.0f64; 18];
    for g in 0..18 {
        m[g] = W_PROTO * proto[g]
            + W_AGE * age_dir[g]
            + W_GENDER * gender_dir[g]
            + W_REGION * region_dir[g];
    }
    normalize(&mut m);
    m
}

/// The demographic genre mass split over each genre's topics, tilted by the
/// user's occupation cluster.
fn shared_topic_affinity(user: &UserInfo) -> Vec<f64> {
    let m = genre_mix(user);
    let cluster = OCC_CLUSTER[user.occupation as usize];
    (0..N_TOPICS)
        .map(|t| {
            let g = t % 18;
            let k = topics_in_genre(g);
            let rank = (t / 18 + cluster + g) % k;
            let total: f64 = TOPIC_TILT[..k].iter().sum();
            m[g] * TOPIC_TILT[rank] / total
        })
        .collect()
}

/// Taste prototypes over the 18 real genres (unknown excluded), indexed by
/// occupation cluster. Rows roughly sum to one.
const PROTOTYPES: [[f64; 18]; 8] = [
    // students: action, comedy, sci-fi
    [0.22, 0.08, 0.02, 0.03, 0.20, 0.02, 0.01, 0.08, 0.02, 0.01, 0.05, 0.02, 0.02, 0.04, 0.12, 0.05, 0.01, 0.00],
    // technical: sci-fi, thriller, action
    [0.15, 0.05, 0.01, 0.01, 0.08, 0.06, 0.02, 0.10, 0.03, 0.03, 0.04, 0.01, 0.05, 0.03, 0.22, 0.09, 0.01, 0.01],
    // educators and writers: drama, documentary, romance
    [0.03, 0.03, 0.02, 0.03, 0.08, 0.03, 0.10, 0.28, 0.02, 0.03, 0.01, 0.05, 0.04, 0.15, 0.02, 0.05, 0.02, 0.01],
    // artists and entertainment: musical, animation, fantasy
    [0.04, 0.04, 0.14, 0.08, 0.12, 0.02, 0.03, 0.10, 0.09, 0.02, 0.02, 0.13, 0.04, 0.08, 0.03, 0.02, 0.00, 0.00],
    // business: thriller, crime, drama
    [0.08, 0.04, 0.01, 0.01, 0.06, 0.14, 0.02, 0.14, 0.01, 0.04, 0.04, 0.01, 0.08, 0.05, 0.04, 0.21, 0.01, 0.01],
    // medical: drama, romance, comedy
    [0.04, 0.03, 0.02, 0.05, 0.16, 0.04, 0.04, 0.22, 0.02, 0.02, 0.02, 0.04, 0.05, 0.16, 0.03, 0.05, 0.01, 0.00],
    // mixed home/other: comedy, children's, romance
    [0.06, 0.05, 0.06, 0.15, 0.19, 0.02, 0.02, 0.12, 0.04, 0.01, 0.02, 0.05, 0.02, 0.12, 0.03, 0.03, 0.00, 0.01],
    // retired: war, western, film-noir, drama
    [0.04, 0.06, 0.01, 0.02, 0.05, 0.04, 0.04, 0.22, 0.01, 0.08, 0.01, 0.04, 0.06, 0.06, 0.02, 0.05, 0.11, 0.08],
];

/// occupation index -> prototype cluster
const OCC_CLUSTER: [usize; 21] = [
    6, // administrator
    3, // artist
    5, // doctor
    2, // educator
    1, // engineer
    3, // entertainment
    4, // executive
    5, // healthcare
    6, // homemaker
    4, // lawyer
    2, // librarian
    4, // marketing
    6, // none
    6, // other
    1, // programmer
    7, // retired
    4, // salesman
    1, // scientist
    0, // student
    1, // technician
    2, // writer
];

// age directions: young leans action/comedy/sci-fi, old leans drama/war/classics
const AGE_YOUNG: [f64; 18] = [
    0.25, 0.10, 0.05, 0.08, 0.20, 0.02, 0.0, 0.02, 0.05, 0.0, 0.08, 0.02, 0.02, 0.02, 0.12, 0.05, 0.0, 0.0,
];
const AGE_OLD: [f64; 18] = [
    0.02, 0.05, 0.01, 0.01, 0.05, 0.05, 0.08, 0.30, 0.01, 0.08, 0.01, 0.06, 0.05, 0.08, 0.01, 0.04, 0.10, 0.07,
];
const GENDER_MALE: [f64; 18] = [
    0.28, 0.10, 0.01, 0.01, 0.08, 0.08, 0.02, 0.05, 0.01, 0.03, 0.06, 0.01, 0.03, 0.01, 0.12, 0.10, 0.08, 0.04,
];
const GENDER_FEMALE: [f64; 18] = [
    0.03, 0.04, 0.08, 0.10, 0.16, 0.02, 0.04, 0.18, 0.06, 0.01, 0.02, 0.08, 0.04, 0.22, 0.02, 0.02, 0.0, 0.0,
];

/// Regional taste by leading zip digit. Each region leans toward a pair of
/// genres, giving the profile a second strong, well-sampled signal beyond
/// the occupation cluster.
const REGION_TASTE: [[f64; 18]; 10] = [
    // action, thriller
    [0.30, 0.08, 0.01, 0.01, 0.06, 0.05, 0.01, 0.06, 0.01, 0.01, 0.04, 0.01, 0.03, 0.03, 0.07, 0.19, 0.02, 0.01],
    // drama, romance
    [0.03, 0.02, 0.02, 0.03, 0.08, 0.03, 0.03, 0.30, 0.02, 0.02, 0.02, 0.04, 0.03, 0.26, 0.02, 0.03, 0.01, 0.01],
    // comedy, children's
    [0.05, 0.05, 0.08, 0.20, 0.30, 0.01, 0.01, 0.07, 0.05, 0.00, 0.01, 0.06, 0.01, 0.06, 0.02, 0.02, 0.00, 0.00],
    // sci-fi, horror
    [0.08, 0.05, 0.02, 0.01, 0.04, 0.03, 0.01, 0.05, 0.04, 0.02, 0.20, 0.01, 0.04, 0.02, 0.28, 0.08, 0.01, 0.01],
    // western, war
    [0.10, 0.08, 0.01, 0.01, 0.04, 0.03, 0.03, 0.10, 0.01, 0.03, 0.01, 0.01, 0.02, 0.03, 0.02, 0.04, 0.21, 0.22],
    // musical, animation
    [0.02, 0.03, 0.22, 0.10, 0.10, 0.01, 0.02, 0.08, 0.06, 0.01, 0.01, 0.24, 0.01, 0.06, 0.01, 0.01, 0.01, 0.00],
    // crime, mystery
    [0.07, 0.03, 0.01, 0.01, 0.04, 0.25, 0.02, 0.08, 0.01, 0.06, 0.03, 0.01, 0.22, 0.03, 0.03, 0.09, 0.01, 0.00],
    // documentary, drama
    [0.02, 0.02, 0.01, 0.01, 0.05, 0.03, 0.26, 0.28, 0.01, 0.03, 0.01, 0.03, 0.04, 0.10, 0.02, 0.04, 0.03, 0.01],
    // adventure, fantasy
    [0.10, 0.27, 0.04, 0.05, 0.05, 0.01, 0.01, 0.05, 0.22, 0.01, 0.02, 0.02, 0.02, 0.03, 0.07, 0.02, 0.01, 0.00],
    // horror, thriller
    [0.06, 0.02, 0.01, 0.00, 0.03, 0.06, 0.01, 0.05, 0.02, 0.05, 0.28, 0.00, 0.08, 0.02, 0.06, 0.24, 0.01, 0.00],
];

/// Global genre frequency for assigning item genres; loosely matches the
/// usual catalog shape (drama and comedy dominate).
const GENRE_FREQ: [f64; 18] = [
    0.12, 0.06, 0.02, 0.05, 0.17, 0.05, 0.03, 0.24, 0.01, 0.01, 0.04, 0.03, 0.03, 0.10, 0.05, 0.11, 0.035, 0.015,
];

const CONSONANTS: &[u8] = b"bcdfghklmnprstvwz";
const VOWELS: &[u8] = b"aeiou";
/// Number of distinct title words in the vocabulary.
const VOCAB_SIZE: usize = 900;

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v {
            *x /= s;
        }
    }
}

fn occupation_weights() -> [f64; 21] {
    // student-heavy population, like the original survey
    let mut w = [1.0f64; 21];
    w[18] = 6.5; // student
    w[13] = 3.2; // other
    w[3] = 2.9; // educator
    w[0] = 2.4; // administrator
    w[4] = 2.1; // engineer
    w[14] = 2.0; // programmer
    w[10] = 1.6; // librarian
    w[20] = 1.4; // writer
    w[6] = 1.0; // executive
    w[17] = 0.9; // scientist
    w[2] = 0.25; // doctor
    w[8] = 0.25; // homemaker
    w[12] = 0.3; // none
    w
}

fn weighted_index(weights: &[f64], r: &mut ChaCha12Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = r.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn make_syllable(r: &mut ChaCha12Rng) -> String {
    let mut s = String::new();
    s.push(CONSONANTS[r.random_range(0..CONSONANTS.len())] as char);
    s.push(VOWELS[r.random_range(0..VOWELS.len())] as char);
    if r.random_range(0.0..1.0) < 0.35 {
        s.push(CONSONANTS[r.random_range(0..CONSONANTS.len())] as char);
    }
    s
}

fn make_word(r: &mut ChaCha12Rng) -> String {
    let syllables = r.random_range(2..=3usize);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(&make_syllable(r));
    }
    w
}

/// The first `N_TOPICS * TOPIC_WORDS` entries are topic words; all words of
/// one topic share a two-syllable stem, the way franchise titles reuse a
/// keyword, so items from one topic overlap heavily in trigram space.
fn build_vocab(r: &mut ChaCha12Rng) -> Vec<String> {
    let mut vocab = Vec::with_capacity(VOCAB_SIZE);
    let mut seen = std::collections::HashSet::new();
    let mut stems = std::collections::HashSet::new();
    for _ in 0..N_TOPICS {
        let stem = loop {
            let s = format!("{}{}{}", make_syllable(r), make_syllable(r), make_syllable(r));
            if stems.insert(s.clone()) {
                break s;
            }
        };
        let mut made = 0;
        while made < TOPIC_WORDS {
            let w = format!("{stem}{}", make_syllable(r));
            if seen.insert(w.clone()) {
                vocab.push(w);
                made += 1;
            }
        }
    }
    while vocab.len() < VOCAB_SIZE {
        let w = make_word(r);
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }
    vocab
}

/// In-memory generation; `write_synthetic_dataset` serializes the result.
pub fn generate(params: &SynthParams) -> Result<Dataset> {
    generate_parts(params).map(|(ds, _, _, _)| ds)
}

/// Generation plus the latent taste state (per-user topic affinities, item
/// popularity, per-item topics), for calibration probes in this module's
/// tests.
type Parts = (Dataset, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<usize>>);

fn generate_parts(params: &SynthParams) -> Result<Parts> {
    params.validate()?;
    let mut r = rng::rng_from(params.seed, &[rng::TAG_DATA]);

    // uniform allocation: every topic keeps enough items that held-out
    // positives can land in private-taste topics too
    let topic_prior: Vec<f64> = vec![1.0 / N_TOPICS as f64; N_TOPICS];

    // --- users ---
    let occ_w = occupation_weights();
    let mut users = Vec::with_capacity(params.users);
    let mut affinities: Vec<Vec<f64>> = Vec::with_capacity(params.users);
    let personal_noise: Normal<f64> = Normal::new(0.0, 2.4).expect("const params");
    for _ in 0..params.users {
        let occupation = weighted_index(&occ_w, &mut r) as u8;
        let band = r.random_range(0.0..1.0);
        let age: u8 = if band < 0.55 {
            r.random_range(18..=34)
        } else if band < 0.85 {
            r.random_range(35..=50)
        } else {
            r.random_range(51..=73)
        };
        let male = r.random_range(0.0..1.0) < 0.71;
        let zip: String = format!("{:05}", r.random_range(0..100_000u32));
        let info = UserInfo { age, male, occupation, zip };

        let shared = shared_topic_affinity(&info);
        let mut personal = vec![0.0f64; N_TOPICS];
        for p in &mut personal {
            *p = personal_noise.sample(&mut r).exp();
        }
        normalize(&mut personal);
        let aff: Vec<f64> = (0..N_TOPICS)
            .map(|t| (1.0 - W_PERSONAL) * shared[t] + W_PERSONAL * personal[t])
            .collect();
        affinities.push(aff);
        users.push(info);
    }

    // --- items ---
    let vocab = build_vocab(&mut r);
    let mut items = Vec::with_capacity(params.items);
    let mut item_topics: Vec<Vec<usize>> = Vec::with_capacity(params.items);
    for _ in 0..params.items {
        let primary = weighted_index(&topic_prior, &mut r);
        let mut topics = vec![primary];
        if r.random_range(0.0..1.0) < P_SECOND_TOPIC {
            loop {
                let t = weighted_index(&topic_prior, &mut r);
                if t != primary {
                    topics.push(t);
                    break;
                }
            }
        }
        let mut flags = [false; N_GENRES];
        for &t in &topics {
            flags[t % 18 + 1] = true; // slot 0 is "unknown"
        }
        // occasional stray genre keeps the flags from being a pure topic code
        if r.random_range(0.0..1.0) < 0.08 {
            flags[weighted_index(&GENRE_FREQ, &mut r) + 1] = true;
        }
        let year = match r.random_range(0.0..1.0) {
            x if x < 0.70 => r.random_range(1990..=1998),
            x if x < 0.90 => r.random_range(1970..=1989),
            _ => r.random_range(1930..=1969),
        };
        let n_words = match r.random_range(0.0..1.0) {
            x if x < 0.10 => 3,
            x if x < 0.50 => 4,
            x if x < 0.85 => 5,
            _ => 6,
        };
        let mut title_words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            // most words come from the item's own topics, so titles carry
            // the fine-grained signal into the trigram features
            let pick = if r.random_range(0.0..1.0) < P_TOPIC_WORD {
                let t = topics[r.random_range(0..topics.len())];
                r.random_range(t * TOPIC_WORDS..(t + 1) * TOPIC_WORDS)
            } else {
                r.random_range(0..VOCAB_SIZE)
            };
            title_words.push(vocab[pick].clone());
        }
        let mut title = title_words
            .iter()
            .map(|w| {
                let mut c = w.chars();
                let first = c.next().unwrap().to_uppercase().to_string();
                format!("{first}{}", c.as_str())
            })
            .collect::<Vec<_>>()
            .join(" ");
        title.push_str(&format!(" ({year})"));
        items.push(ItemInfo { title, genres: flags });
        item_topics.push(topics);
    }

    // --- popularity: Zipf over a shuffled rank assignment ---
    let ranks = {
        let mut idx: Vec<usize> = (0..params.items).collect();
        for i in (1..idx.len()).rev() {
            let j = r.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    };
    let mut popularity = vec![0.0f64; params.items];
    for (item, &rank) in ranks.iter().enumerate() {
        popularity[item] = 1.0 / (rank as f64 + ZIPF_OFFSET).powf(ZIPF_S);
    }

    // --- per-user interaction counts, summing exactly to the target ---
    let count_dist = LogNormal::new(0.0, 0.55).expect("const params");
    let raw: Vec<f64> = (0..params.users).map(|_| count_dist.sample(&mut r)).collect();
    let raw_sum: f64 = raw.iter().sum();
    let cap = params.items / 2;
    let mut counts: Vec<usize> = raw
        .iter()
        .map(|w| {
            let c = (w / raw_sum * params.interactions as f64).round() as usize;
            c.clamp(MIN_INTERACTIONS_PER_USER.min(cap), cap)
        })
        .collect();
    let mut delta = params.interactions as i64 - counts.iter().sum::<usize>() as i64;
    let mut cursor = 0usize;
    while delta != 0 {
        let u = cursor % params.users;
        if delta > 0 && counts[u] < cap {
            counts[u] += 1;
            delta -= 1;
        } else if delta < 0 && counts[u] > MIN_INTERACTIONS_PER_USER.min(cap) {
            counts[u] -= 1;
            delta += 1;
        }
        cursor += 1;
    }

    // --- interactions: weighted sampling without replacement per user ---
    let mut interactions = Vec::with_capacity(params.interactions);
    let rating_noise = Normal::new(0.0, 0.6).expect("const params");
    let mut ts = 874_000_000u64;
    for u in 0..params.users {
        let aff = &affinities[u];
        // Efraimidis-Spirakis keys: top-k by rand^(1/w)
        let mut keyed: Vec<(f64, u32, f64)> = (0..params.items)
            .map(|j| {
                let s: f64 = item_topics[j].iter().map(|&t| aff[t]).sum::<f64>()
                    / item_topics[j].len() as f64;
                let w = popularity[j].powf(POPULARITY_MIX) * (TASTE_SHARPNESS * s).exp();
                let u01: f64 = r.random_range(f64::MIN_POSITIVE..1.0);
                (u01.powf(1.0 / w), j as u32, s)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for &(_, item, s) in keyed.iter().take(counts[u]) {
            let centered = (TASTE_SHARPNESS * (s - 0.03)).tanh();
            let rating =
                (3.4 + 1.3 * centered + rating_noise.sample(&mut r)).round().clamp(1.0, 5.0) as u8;
            ts += 7;
            interactions.push(Interaction { user: u as u32, item, rating, timestamp: ts });
        }
    }

    Ok((Dataset { users, items, interactions }, affinities, popularity, item_topics))
}

/// Serialize in the canonical layout: u.data, u.user, u.item plus the
/// auxiliary u.info, u.genre and u.occupation files.
pub fn write_synthetic_dataset(dir: &Path, params: &SynthParams) -> Result<Dataset> {
    let ds = generate(params)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut u_data = String::with_capacity(ds.interactions.len() * 24);
    for rec in &ds.interactions {
        u_data.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            rec.user + 1,
            rec.item + 1,
            rec.rating,
            rec.timestamp
        ));
    }
    std::fs::write(dir.join("u.data"), u_data).map_err(|e| Error::io(&dir.join("u.data"), e))?;

    let mut u_user = String::new();
    for (i, u) in ds.users.iter().enumerate() {
        u_user.push_str(&format!(
            "{}|{}|{}|{}|{}\n",
            i + 1,
            u.age,
            if u.male { "M" } else { "F" },
            OCCUPATIONS[u.occupation as usize],
            u.zip
        ));
    }
    std::fs::write(dir.join("u.user"), u_user).map_err(|e| Error::io(&dir.join("u.user"), e))?;

    let mut u_item = String::new();
    for (i, it) in ds.items.iter().enumerate() {
        let year = it
            .title
            .rsplit_once('(')
            .and_then(|(_, y)| y.trim_end_matches(')').parse::<u32>().ok())
            .unwrap_or(1995);
        let flags: Vec<&str> = it.genres.iter().map(|&g| if g { "1" } else { "0" }).collect();
        u_item.push_str(&format!(
            "{}|{}|01-Jan-{}||http://example.org/item/{}|{}\n",
            i + 1,
            it.title,
            year,
            i + 1,
            flags.join("|")
        ));
    }
    std::fs::write(dir.join("u.item"), u_item).map_err(|e| Error::io(&dir.join("u.item"), e))?;

    std::fs::write(
        dir.join("u.info"),
        format!("{} users\n{} items\n{} ratings\n", ds.n_users(), ds.n_items(), ds.interactions.len()),
    )
    .map_err(|e| Error::io(&dir.join("u.info"), e))?;
    let genre_lines: String =
        GENRES.iter().enumerate().map(|(i, g)| format!("{g}|{i}\n")).collect();
    std::fs::write(dir.join("u.genre"), genre_lines).map_err(|e| Error::io(&dir.join("u.genre"), e))?;
    let occ_lines: String = OCCUPATIONS.iter().map(|o| format!("{o}\n")).collect();
    std::fs::write(dir.join("u.occupation"), occ_lines)
        .map_err(|e| Error::io(&dir.join("u.occupation"), e))?;

    Ok(ds)
}
