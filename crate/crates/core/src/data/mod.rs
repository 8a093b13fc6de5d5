//! MovieLens-100K-format datasets: loaders, feature builders and
//! train/test splits including the cold-start scenarios.
//!
//! Files use the canonical layout: `u.data` is tab-separated
//! `user item rating timestamp`, `u.user` is pipe-separated
//! `id|age|gender|occupation|zip`, `u.item` is pipe-separated
//! `id|title|release|video|url|<19 genre flags>`. Ids are 1-based and dense
//! in the files; everything is 0-based in memory.

pub mod synthetic;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SparseVec;
use crate::rng;

pub const OCCUPATIONS: [&str; 21] = [
    "administrator",
    "artist",
    "doctor",
    "educator",
    "engineer",
    "entertainment",
    "executive",
    "healthcare",
    "homemaker",
    "lawyer",
    "librarian",
    "marketing",
    "none",
    "other",
    "programmer",
    "retired",
    "salesman",
    "scientist",
    "student",
    "technician",
    "writer",
];

pub const GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

pub const N_GENRES: usize = 19;

/// Demographic view: normalized age, binary gender, occupation one-hot.
pub const VIEW1_DIM: usize = 2 + OCCUPATIONS.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserInfo {
    pub age: u8,
    pub male: bool,
    pub occupation: u8,
    pub zip: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemInfo {
    pub title: String,
    pub genres: [bool; N_GENRES],
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub users: Vec<UserInfo>,
    pub items: Vec<ItemInfo>,
    pub interactions: Vec<Interaction>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { file: path.display().to_string(), line, msg: msg.into() }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

/// `u.user`: one user per line, ids must be 1..=n in order.
pub fn load_users(path: &Path) -> Result<Vec<UserInfo>> {
    let occ_index: HashMap<&str, u8> =
        OCCUPATIONS.iter().enumerate().map(|(i, &o)| (o, i as u8)).collect();
    let mut users = Vec::new();
    for (lineno, line) in read_lines(path)?.iter().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 5 {
            return Err(parse_err(path, line_no, format!("expected 5 fields, got {}", fields.len())));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad user id {:?}", fields[0])))?;
        if id != users.len() + 1 {
            return Err(parse_err(path, line_no, format!("user id {id} out of order")));
        }
        let age: u8 = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad age {:?}", fields[1])))?;
        let male = match fields[2] {
            "M" => true,
            "F" => false,
            other => return Err(parse_err(path, line_no, format!("bad gender {other:?}"))),
        };
        let occupation = *occ_index
            .get(fields[3])
            .ok_or_else(|| parse_err(path, line_no, format!("unknown occupation {:?}", fields[3])))?;
        users.push(UserInfo { age, male, occupation, zip: fields[4].to_string() });
    }
    if users.is_empty() {
        return Err(parse_err(path, 0, "no users"));
    }
    Ok(users)
}

/// `u.item`: 24 pipe-separated fields, the last 19 being genre flags.
pub fn load_items(path: &Path) -> Result<Vec<ItemInfo>> {
    let mut items = Vec::new();
    for (lineno, line) in read_lines(path)?.iter().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 5 + N_GENRES {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} fields, got {}", 5 + N_GENRES, fields.len()),
            ));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad item id {:?}", fields[0])))?;
        if id != items.len() + 1 {
            return Err(parse_err(path, line_no, format!("item id {id} out of order")));
        }
        let mut genres = [false; N_GENRES];
        for (g, raw) in genres.iter_mut().zip(&fields[5..]) {
            *g = match *raw {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(path, line_no, format!("bad genre flag {other:?}"))),
            };
        }
        items.push(ItemInfo { title: fields[1].to_string(), genres });
    }
    if items.is_empty() {
        return Err(parse_err(path, 0, "no items"));
    }
    Ok(items)
}

/// `u.data`: tab-separated user, item, rating (1..=5), timestamp.
pub fn load_interactions(path: &Path, n_users: usize, n_items: usize) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (lineno, line) in read_lines(path)?.iter().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(path, line_no, format!("expected 4 fields, got {}", fields.len())));
        }
        let user: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad user id {:?}", fields[0])))?;
        let item: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad item id {:?}", fields[1])))?;
        let rating: u8 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad rating {:?}", fields[2])))?;
        let timestamp: u64 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad timestamp {:?}", fields[3])))?;
        if user == 0 || user > n_users {
            return Err(parse_err(path, line_no, format!("user id {user} outside 1..={n_users}")));
        }
        if item == 0 || item > n_items {
            return Err(parse_err(path, line_no, format!("item id {item} outside 1..={n_items}")));
        }
        if !(1..=5).contains(&rating) {
            return Err(parse_err(path, line_no, format!("rating {rating} outside 1..=5")));
        }
        out.push(Interaction { user: (user - 1) as u32, item: (item - 1) as u32, rating, timestamp });
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "no interactions"));
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let users = load_users(&dir.join("u.user"))?;
    let items = load_items(&dir.join("u.item"))?;
    let interactions = load_interactions(&dir.join("u.data"), users.len(), items.len())?;
    Ok(Dataset { users, items, interactions })
}

// --- features ---

/// Age band one-hot (under 35, 35 to 50, over 50), gender flag, occupation
/// one-hot, zip region one-hot (leading zip digit, the coarse geographic
/// bucket).
pub fn view1_features(users: &[UserInfo]) -> Vec<Vec<f64>> {
    users
        .iter()
        .map(|u| {
            let mut f = vec![0.0; VIEW1_DIM];
            f[0] = f64::from(u.age) / 100.0;
            f[1] = if u.male { 1.0 } else { 0.0 };
            f[2 + u.occupation as usize] = 1.0;
            f
        })
        .collect()
}

/// Letter-trigram vocabulary built from item titles. Titles are lowercased,
/// the parenthesized year is dropped, words are wrapped in `#` markers and
/// sliced into byte trigrams.
#[derive(Clone, Debug)]
pub struct TrigramCatalog {
    vocab: Vec<[u8; 3]>,
    index: HashMap<[u8; 3], u32>,
}

impl TrigramCatalog {
    pub fn build(items: &[ItemInfo]) -> Self {
        let mut vocab: Vec<[u8; 3]> = items
            .iter()
            .flat_map(|it| title_trigrams(&it.title))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        vocab.sort_unstable();
        let index = vocab.iter().enumerate().map(|(i, &t)| (t, i as u32)).collect();
        TrigramCatalog { vocab, index }
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn lookup(&self, trigram: &[u8; 3]) -> Option<u32> {
        self.index.get(trigram).copied()
    }
}

pub fn title_trigrams(title: &str) -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for word in title_words(title) {
        let wrapped: Vec<u8> = std::iter::once(b'#')
            .chain(word.bytes())
            .chain(std::iter::once(b'#'))
            .collect();
        for w in wrapped.windows(3) {
            out.push([w[0], w[1], w[2]]);
        }
    }
    out
}

fn title_words(title: &str) -> Vec<String> {
    // drop parenthesized segments (year, alternate titles), then split on
    // anything that is not alphanumeric
    let mut cleaned = String::with_capacity(title.len());
    let mut depth = 0usize;
    for c in title.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            _ if depth == 0 => cleaned.push(c),
            _ => {}
        }
    }
    cleaned
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect()
}

/// Sparse item features: trigram counts followed by 19 genre flags.
pub fn item_features(items: &[ItemInfo], catalog: &TrigramCatalog) -> Vec<SparseVec> {
    let dim = catalog.dim() + N_GENRES;
    items
        .iter()
        .map(|it| {
            let mut counts: HashMap<u32, f64> = HashMap::new();
            for t in title_trigrams(&it.title) {
                if let Some(idx) = catalog.lookup(&t) {
                    *counts.entry(idx).or_insert(0.0) += 1.0;
                }
            }
            for (g, &flag) in it.genres.iter().enumerate() {
                if flag {
                    counts.insert((catalog.dim() + g) as u32, 1.0);
                }
            }
            let pairs: Vec<(u32, f64)> = counts.into_iter().collect();
            SparseVec::from_pairs(dim, pairs).expect("indices bounded by construction")
        })
        .collect()
}

// --- splits ---

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    Random8020,
    ColdUsers,
    ColdItems,
    ColdUsersItems,
}

impl Scenario {
    pub fn code(self) -> u64 {
        match self {
            Scenario::Random8020 => 0,
            Scenario::ColdUsers => 1,
            Scenario::ColdItems => 2,
            Scenario::ColdUsersItems => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Random8020 => "random",
            Scenario::ColdUsers => "cs-users",
            Scenario::ColdItems => "cs-items",
            Scenario::ColdUsersItems => "cs-users-items",
        }
    }
}

/// Fraction of records held out in the random split.
pub const TEST_FRACTION_NUM: usize = 1;
pub const TEST_FRACTION_DEN: usize = 5;
/// Fraction of entities held out cold.
pub const COLD_FRACTION_DEN: usize = 10;

#[derive(Clone, Debug)]
pub struct Split {
    pub scenario: Scenario,
    pub seed: u64,
    pub train: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub cold_users: Vec<u32>,
    pub cold_items: Vec<u32>,
    /// Records dropped because they mix warm and cold entities.
    pub dropped: usize,
}

fn shuffled<T: Copy>(mut xs: Vec<T>, rng: &mut rand_chacha::ChaCha12Rng) -> Vec<T> {
    use rand::Rng;
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
    xs
}

pub fn split_dataset(ds: &Dataset, scenario: Scenario, seed: u64) -> Split {
    let mut r = rng::rng_from(seed, &[rng::TAG_SPLIT, scenario.code()]);
    match scenario {
        Scenario::Random8020 => {
            let order = shuffled((0..ds.interactions.len()).collect(), &mut r);
            let n_test = ds.interactions.len() * TEST_FRACTION_NUM / TEST_FRACTION_DEN;
            let mut test_mark = vec![false; ds.interactions.len()];
            for &i in order.iter().take(n_test) {
                test_mark[i] = true;
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (i, &rec) in ds.interactions.iter().enumerate() {
                if test_mark[i] {
                    test.push(rec);
                } else {
                    train.push(rec);
                }
            }
            Split { scenario, seed, train, test, cold_users: vec![], cold_items: vec![], dropped: 0 }
        }
        Scenario::ColdUsers => {
            let cold_users = pick_cold(ds.n_users(), &mut r);
            let is_cold = mark(ds.n_users(), &cold_users);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for &rec in &ds.interactions {
                if is_cold[rec.user as usize] {
                    test.push(rec);
                } else {
                    train.push(rec);
                }
            }
            Split { scenario, seed, train, test, cold_users, cold_items: vec![], dropped: 0 }
        }
        Scenario::ColdItems => {
            let cold_items = pick_cold(ds.n_items(), &mut r);
            let is_cold = mark(ds.n_items(), &cold_items);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for &rec in &ds.interactions {
                if is_cold[rec.item as usize] {
                    test.push(rec);
                } else {
                    train.push(rec);
                }
            }
            Split { scenario, seed, train, test, cold_users: vec![], cold_items, dropped: 0 }
        }
        Scenario::ColdUsersItems => {
            let cold_users = pick_cold(ds.n_users(), &mut r);
            let cold_items = pick_cold(ds.n_items(), &mut r);
            let user_cold = mark(ds.n_users(), &cold_users);
            let item_cold = mark(ds.n_items(), &cold_items);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            let mut dropped = 0usize;
            for &rec in &ds.interactions {
                match (user_cold[rec.user as usize], item_cold[rec.item as usize]) {
                    (false, false) => train.push(rec),
                    (true, true) => test.push(rec),
                    _ => dropped += 1,
                }
            }
            Split { scenario, seed, train, test, cold_users, cold_items, dropped }
        }
    }
}

fn pick_cold(n: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Vec<u32> {
    let order = shuffled((0..n as u32).collect(), rng);
    let n_cold = (n / COLD_FRACTION_DEN).max(1);
    let mut cold: Vec<u32> = order.into_iter().take(n_cold).collect();
    cold.sort_unstable();
    cold
}

fn mark(n: usize, ids: &[u32]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in ids {
        m[i as usize] = true;
    }
    m
}

#[derive(Serialize, Deserialize)]
pub struct SplitManifest {
    pub scenario: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_dropped: usize,
    pub cold_users: Vec<u32>,
    pub cold_items: Vec<u32>,
}

impl Split {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            scenario: self.scenario.name().to_string(),
            seed: self.seed,
            n_train: self.train.len(),
            n_test: self.test.len(),
            n_dropped: self.dropped,
            cold_users: self.cold_users.clone(),
            cold_items: self.cold_items.clone(),
        }
    }
}
