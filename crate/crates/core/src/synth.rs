//! Synthetic users shaped like a small personality-annotated social-media
//! corpus: 250 users, about 9.9k statuses, a 9/212/29 split over the three
//! concern labels.
//!
//! Status texts are sampled token by token from a small lexicon whose word
//! categories are linked to the traits (neurotic users say "I" and negative
//! words more often, open users use longer and more tentative words, and so
//! on), so text features carry a learnable signal about the scores.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::concern::{
    derive_label, gold_score, ConcernLabel, ConcernScore, ScoreBounds, TraitLabels, TraitScores,
    WeightVector,
};
use crate::error::{invalid, Error, Result};
use crate::features::{tokenize, EmbeddingTable, TopicRow, TopicTable, LDA_DIM, LSI_DIM};
use crate::{rng_from_seed, Rng};

pub const DATASET_HEADER: [&str; 21] = [
    "user_id",
    "status_count",
    "statuses",
    "sNEU",
    "sOPN",
    "sCON",
    "sAGR",
    "sEXT",
    "cNEU",
    "cOPN",
    "cCON",
    "cAGR",
    "cEXT",
    "gold_r",
    "concern_label",
    "netsize",
    "btw",
    "nbtw",
    "den",
    "brkage",
    "nbrkage",
];

const NETWORK_COLUMNS: [&str; 6] = ["netsize", "btw", "nbtw", "den", "brkage", "nbrkage"];

/// Ego-network statistics. Nothing downstream reads them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkFeatures {
    pub netsize: f64,
    pub btw: f64,
    pub nbtw: f64,
    pub den: f64,
    pub brkage: f64,
    pub nbrkage: f64,
}

impl NetworkFeatures {
    fn values(&self) -> [f64; 6] {
        [self.netsize, self.btw, self.nbtw, self.den, self.brkage, self.nbrkage]
    }

    fn from_values(v: [f64; 6]) -> Self {
        Self {
            netsize: v[0],
            btw: v[1],
            nbtw: v[2],
            den: v[3],
            brkage: v[4],
            nbrkage: v[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    pub statuses: Vec<String>,
    pub traits: TraitScores,
    pub labels: TraitLabels,
    pub gold_r: ConcernScore,
    pub concern_label: ConcernLabel,
    pub network: Option<NetworkFeatures>,
}

impl UserRecord {
    /// Checks that the derived fields agree with the scores and labels.
    pub fn check_invariants(&self, weights: &WeightVector) -> Result<()> {
        let expected = gold_score(&self.traits, weights).value();
        if (expected - self.gold_r.value()).abs() > 1e-12 {
            return Err(invalid(format!(
                "user {}: gold_r {} but scores give {expected}",
                self.id,
                self.gold_r.value()
            )));
        }
        let label = derive_label(&self.labels);
        if label != self.concern_label {
            return Err(invalid(format!(
                "user {}: concern label {} but trait labels give {label}",
                self.id, self.concern_label
            )));
        }
        Ok(())
    }

    pub fn text(&self) -> String {
        self.statuses.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_users: usize,
    pub total_statuses: usize,
    /// Users per concern label, indexed by [`ConcernLabel::index`].
    pub label_counts: [usize; 3],
    pub seed: u64,
    pub bounds: ScoreBounds,
    pub network: bool,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_users: 250,
            total_statuses: 9917,
            label_counts: [9, 212, 29],
            seed: 0,
            bounds: ScoreBounds::default(),
            network: true,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: usize = self.label_counts.iter().sum();
        if sum != self.n_users {
            return Err(invalid(format!(
                "label counts {:?} sum to {sum}, not to {} users",
                self.label_counts, self.n_users
            )));
        }
        if self.n_users == 0 {
            return Err(invalid("need at least one user"));
        }
        if self.total_statuses < self.n_users {
            return Err(invalid(format!(
                "{} statuses cannot give each of {} users one",
                self.total_statuses, self.n_users
            )));
        }
        Ok(())
    }
}

/// Word categories with trait-linked usage rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    FirstPersonSingular,
    NegativeEmotion,
    PositiveEmotion,
    Article,
    Negation,
    Discrepancy,
    Achievement,
    Tentative,
    LongWord,
    Social,
    PresentTense,
    Filler,
}

impl Cue {
    pub const ALL: [Cue; 12] = [
        Cue::FirstPersonSingular,
        Cue::NegativeEmotion,
        Cue::PositiveEmotion,
        Cue::Article,
        Cue::Negation,
        Cue::Discrepancy,
        Cue::Achievement,
        Cue::Tentative,
        Cue::LongWord,
        Cue::Social,
        Cue::PresentTense,
        Cue::Filler,
    ];

    /// Relative sampling weight given trait scores rescaled to [0, 1], in
    /// concern order (NEU, OPN, CON, AGR, EXT).
    pub fn weight(self, t: &[f64; 5]) -> f64 {
        let [neu, opn, con, agr, ext] = *t;
        let w = match self {
            Cue::FirstPersonSingular => 1.0 + 2.0 * neu - opn,
            Cue::NegativeEmotion => 1.0 + 2.0 * neu - agr - con,
            Cue::PositiveEmotion => 1.0 + ext + agr,
            Cue::Article => 1.5 - agr,
            Cue::Negation => 1.5 - con,
            Cue::Discrepancy => 1.5 - con,
            Cue::Achievement => 0.5 + 2.0 * con,
            Cue::Tentative => 0.5 + 2.0 * opn,
            Cue::LongWord => 0.5 + 2.0 * opn,
            Cue::Social => 0.5 + 2.0 * ext,
            Cue::PresentTense => 1.5 - opn,
            Cue::Filler => 3.0,
        };
        w.max(0.05)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    words: BTreeMap<Cue, Vec<String>>,
}

impl Default for Lexicon {
    fn default() -> Self {
        let table: [(Cue, &str); 12] = [
            (Cue::FirstPersonSingular, "i me my mine myself im ive"),
            (
                Cue::NegativeEmotion,
                "sad hate awful angry worried hurt lonely tired afraid upset cry stressed nervous bored annoyed",
            ),
            (
                Cue::PositiveEmotion,
                "happy love great fun awesome nice glad good excited lovely amazing yay sweet thanks",
            ),
            (Cue::Article, "a an the"),
            (Cue::Negation, "no not never nothing nobody none cant wont dont"),
            (Cue::Discrepancy, "should would could wish need hope ought"),
            (
                Cue::Achievement,
                "work finished goal plan done win earn success deadline organized",
            ),
            (
                Cue::Tentative,
                "maybe perhaps guess possibly wonder somewhat seems probably unsure",
            ),
            (
                Cue::LongWord,
                "philosophy understanding imagination literature creativity experimental beautiful interesting perspective architecture",
            ),
            (
                Cue::Social,
                "friends party we us together everyone talk family guys tonight",
            ),
            (Cue::PresentTense, "is am are go get do see have"),
            (
                Cue::Filler,
                "today day just like time know back going night home now week still really new",
            ),
        ];
        let words = table
            .into_iter()
            .map(|(c, ws)| (c, ws.split_whitespace().map(str::to_string).collect()))
            .collect();
        Self { words }
    }
}

impl Lexicon {
    pub fn new(words: BTreeMap<Cue, Vec<String>>) -> Result<Self> {
        for c in Cue::ALL {
            if words.get(&c).is_none_or(|w| w.is_empty()) {
                return Err(invalid(format!("lexicon has no words for {c:?}")));
            }
        }
        let mut seen = HashMap::new();
        for (c, ws) in &words {
            for w in ws {
                if tokenize(w) != [w.as_str()] {
                    return Err(invalid(format!("lexicon word `{w}` is not a single token")));
                }
                if let Some(other) = seen.insert(w.clone(), *c) {
                    return Err(invalid(format!("`{w}` listed under {other:?} and {c:?}")));
                }
            }
        }
        Ok(Self { words })
    }

    pub fn words(&self, cue: Cue) -> &[String] {
        &self.words[&cue]
    }

    pub fn cue_of(&self, word: &str) -> Option<Cue> {
        self.words
            .iter()
            .find(|(_, ws)| ws.iter().any(|w| w == word))
            .map(|(c, _)| *c)
    }

    /// Every word, in category then listing order.
    pub fn vocabulary(&self) -> Vec<&str> {
        self.words.values().flatten().map(String::as_str).collect()
    }
}

fn rescale(traits: &TraitScores, bounds: &ScoreBounds) -> [f64; 5] {
    traits
        .values()
        .map(|s| ((s - bounds.lo) / (bounds.hi - bounds.lo)).clamp(0.0, 1.0))
}

pub const MIN_STATUS_TOKENS: usize = 5;
pub const MAX_STATUS_TOKENS: usize = 15;

/// `count` status texts for one user.
pub fn gen_statuses(
    traits: &TraitScores,
    bounds: &ScoreBounds,
    count: usize,
    lexicon: &Lexicon,
    seed: u64,
) -> Vec<String> {
    let t = rescale(traits, bounds);
    let weights: Vec<f64> = Cue::ALL.iter().map(|c| c.weight(&t)).collect();
    let pick = WeightedIndex::new(&weights).expect("cue weights are clamped positive");
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(MIN_STATUS_TOKENS..=MAX_STATUS_TOKENS);
            let tokens: Vec<&str> = (0..len)
                .map(|_| {
                    let cue = Cue::ALL[pick.sample(&mut rng)];
                    lexicon.words(cue).choose(&mut rng).expect("non-empty").as_str()
                })
                .collect();
            tokens.join(" ")
        })
        .collect()
}

/// Samples `N(centre, σ)` restricted to `[lo, hi]` by rejection.
fn truncated_normal(lo: f64, hi: f64, rng: &mut Rng) -> f64 {
    let centre = 0.5 * (lo + hi);
    let normal = Normal::new(centre, (hi - lo) / 6.0).expect("positive width");
    loop {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

fn labels_for(label: ConcernLabel, rng: &mut Rng, medium: &[TraitLabels]) -> TraitLabels {
    match label {
        ConcernLabel::HiPC => TraitLabels([true, true, rng.random(), false, false]),
        ConcernLabel::LoPC => TraitLabels([false, false, rng.random(), true, true]),
        ConcernLabel::MePC => *medium.choose(rng).expect("28 combinations"),
    }
}

fn gen_network(rng: &mut Rng) -> NetworkFeatures {
    let ln = |mu: f64, sigma: f64| LogNormal::new(mu, sigma).expect("valid parameters");
    let netsize = ln(5.0, 0.7).sample(rng).round().max(2.0);
    let btw = ln(8.0, 1.0).sample(rng);
    let den = ln(-2.5, 0.6).sample(rng).min(1.0);
    let brkage = ln(7.5, 1.0).sample(rng);
    // Normalized variants divide by the pair count of the ego network.
    let pairs = netsize * (netsize - 1.0) / 2.0;
    NetworkFeatures {
        netsize,
        btw,
        nbtw: (btw / pairs).min(1.0),
        den,
        brkage,
        nbrkage: (brkage / pairs).min(1.0),
    }
}

/// Generates users with exactly the requested concern-label counts.
pub fn gen_users(spec: &GenSpec) -> Result<Vec<UserRecord>> {
    gen_users_with(spec, &Lexicon::default())
}

pub fn gen_users_with(spec: &GenSpec, lexicon: &Lexicon) -> Result<Vec<UserRecord>> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let weights = WeightVector::default();
    let medium: Vec<TraitLabels> = TraitLabels::all()
        .filter(|l| derive_label(l) == ConcernLabel::MePC)
        .collect();

    let mut assigned: Vec<ConcernLabel> = ConcernLabel::ALL
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, spec.label_counts[l.index()]))
        .collect();
    assigned.shuffle(&mut rng);

    let mut counts = vec![1usize; spec.n_users];
    for _ in spec.n_users..spec.total_statuses {
        counts[rng.random_range(0..spec.n_users)] += 1;
    }

    let b = spec.bounds;
    let width = format!("{}", spec.n_users - 1).len();
    let mut users = Vec::with_capacity(spec.n_users);
    for (i, &label) in assigned.iter().enumerate() {
        let labels = labels_for(label, &mut rng, &medium);
        let mut scores = [0.0; 5];
        for (s, &yes) in scores.iter_mut().zip(&labels.0) {
            *s = if yes {
                truncated_normal(b.mid(), b.hi, &mut rng)
            } else {
                truncated_normal(b.lo, b.mid(), &mut rng)
            };
        }
        let traits = TraitScores::new(scores, b)?;
        let status_seed: u64 = rng.random();
        let network = spec.network.then(|| gen_network(&mut rng));
        users.push(UserRecord {
            id: format!("u{i:0width$}"),
            statuses: gen_statuses(&traits, &b, counts[i], lexicon, status_seed),
            traits,
            labels,
            gold_r: gold_score(&traits, &weights),
            concern_label: derive_label(&labels),
            network,
        });
    }
    Ok(users)
}

/// Word vectors clustered by lexicon category: every word is its category's
/// random centre plus small isotropic noise.
pub fn gen_embeddings(lexicon: &Lexicon, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = rng_from_seed(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut vectors = HashMap::new();
    for cue in Cue::ALL {
        let centre: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        for w in lexicon.words(cue) {
            let v = centre.iter().map(|c| c + 0.2 * unit.sample(&mut rng)).collect();
            vectors.insert(w.clone(), v);
        }
    }
    EmbeddingTable::new(dim, vectors)
}

/// Topic features per user. The LSI block is a fixed Gaussian random
/// projection of the user's unigram distribution over the lexicon; the LDA
/// block is the smoothed distribution of lexicon categories, padded to the
/// block width with the smoothing mass and renormalized.
pub fn gen_topics(users: &[UserRecord], lexicon: &Lexicon, seed: u64) -> Result<TopicTable> {
    const ALPHA: f64 = 0.01;
    let vocab = lexicon.vocabulary();
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let cue_of: Vec<usize> = vocab
        .iter()
        .map(|w| {
            let c = lexicon.cue_of(w).expect("word from lexicon");
            Cue::ALL.iter().position(|&x| x == c).expect("known cue")
        })
        .collect();
    if Cue::ALL.len() > LDA_DIM {
        return Err(invalid("more categories than LDA components"));
    }

    let mut rng = rng_from_seed(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = 1.0 / (vocab.len() as f64).sqrt();
    let projection: Vec<f64> = (0..LSI_DIM * vocab.len())
        .map(|_| unit.sample(&mut rng) * scale)
        .collect();

    let mut rows = HashMap::new();
    for u in users {
        let mut freq = vec![0.0; vocab.len()];
        let mut total = 0.0;
        for tok in u.statuses.iter().flat_map(|s| tokenize(s)) {
            if let Some(&i) = index.get(tok.as_str()) {
                freq[i] += 1.0;
                total += 1.0;
            }
        }
        if total > 0.0 {
            freq.iter_mut().for_each(|f| *f /= total);
        }
        let lsi: Vec<f64> = projection
            .chunks(vocab.len())
            .map(|row| row.iter().zip(&freq).map(|(a, b)| a * b).sum())
            .collect();
        let mut lda = vec![ALPHA; LDA_DIM];
        for (f, &c) in freq.iter().zip(&cue_of) {
            lda[c] += f;
        }
        let z: f64 = lda.iter().sum();
        lda.iter_mut().for_each(|p| *p /= z);
        rows.insert(u.id.clone(), TopicRow { lsi, lda });
    }
    TopicTable::new(rows)
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn write_dataset(users: &[UserRecord], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(out);
    w.write_record(DATASET_HEADER)?;
    for u in users {
        if let Some(s) = u.statuses.iter().find(|s| s.contains('|')) {
            return Err(invalid(format!(
                "user {}: status `{s}` contains the `|` separator",
                u.id
            )));
        }
        if u.statuses.iter().any(String::is_empty) {
            return Err(invalid(format!("user {}: empty status", u.id)));
        }
        let mut row: Vec<String> = vec![
            u.id.clone(),
            u.statuses.len().to_string(),
            u.statuses.join("|"),
        ];
        row.extend(u.traits.values().iter().map(f64::to_string));
        row.extend(u.labels.0.iter().map(|&b| yes_no(b).to_string()));
        row.push(u.gold_r.value().to_string());
        row.push(u.concern_label.to_string());
        match &u.network {
            Some(n) => row.extend(n.values().iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(users: &[UserRecord], path: impl AsRef<Path>) -> Result<()> {
    write_dataset(users, File::create(path)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<UserRecord>> {
    read_dataset(File::open(path)?)
}

/// Parses a dataset CSV. Columns are located by name; the network columns
/// may be absent altogether or empty per row.
pub fn read_dataset(input: impl Read) -> Result<Vec<UserRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = r.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        warn!("dataset is empty");
        return Ok(Vec::new());
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let c_id = required("user_id")?;
    let c_count = required("status_count")?;
    let c_statuses = required("statuses")?;
    let c_scores = ["sNEU", "sOPN", "sCON", "sAGR", "sEXT"]
        .map(required)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let c_labels = ["cNEU", "cOPN", "cCON", "cAGR", "cEXT"]
        .map(required)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let c_gold = required("gold_r")?;
    let c_label = required("concern_label")?;
    let c_net: Vec<Option<usize>> = NETWORK_COLUMNS.iter().map(|n| col(n)).collect();

    let mut users = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fail = |message: String| Error::Parse { line, message };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .trim()
                .parse::<f64>()
                .map_err(|_| fail(format!("`{}` is not a number in column {}", field(i), &headers[i])))
        };

        let id = field(c_id).to_string();
        if id.is_empty() {
            return Err(fail("empty user_id".into()));
        }
        let count: usize = field(c_count)
            .trim()
            .parse()
            .map_err(|_| fail(format!("bad status_count `{}`", field(c_count))))?;
        let statuses: Vec<String> = if field(c_statuses).is_empty() {
            Vec::new()
        } else {
            field(c_statuses).split('|').map(str::to_string).collect()
        };
        if statuses.len() != count {
            return Err(fail(format!(
                "status_count {count} but {} statuses",
                statuses.len()
            )));
        }

        let mut scores = [0.0; 5];
        for (s, &c) in scores.iter_mut().zip(&c_scores) {
            *s = num(c)?;
        }
        let mut labels = [false; 5];
        for (l, &c) in labels.iter_mut().zip(&c_labels) {
            *l = match field(c).trim() {
                "yes" => true,
                "no" => false,
                other => return Err(fail(format!("label `{other}` in {} is not yes/no", &headers[c]))),
            };
        }
        let traits = TraitScores::new(scores, ScoreBounds::default()).map_err(|e| fail(e.to_string()))?;
        let gold_r = ConcernScore::new(num(c_gold)?).map_err(|e| fail(e.to_string()))?;
        let concern_label: ConcernLabel = field(c_label)
            .trim()
            .parse()
            .map_err(|e: Error| fail(e.to_string()))?;
        let labels = TraitLabels(labels);
        if derive_label(&labels) != concern_label {
            return Err(fail(format!(
                "concern_label {concern_label} contradicts the trait labels"
            )));
        }

        let network = if c_net.iter().all(Option::is_some) && c_net.iter().all(|c| !field(c.unwrap()).is_empty()) {
            let mut v = [0.0; 6];
            for (x, c) in v.iter_mut().zip(&c_net) {
                *x = num(c.unwrap())?;
            }
            Some(NetworkFeatures::from_values(v))
        } else {
            None
        };

        users.push(UserRecord {
            id,
            statuses,
            traits,
            labels,
            gold_r,
            concern_label,
            network,
        });
    }
    if users.is_empty() {
        warn!("dataset has a header but no rows");
    }
    Ok(users)
}

pub fn label_histogram(users: &[UserRecord]) -> [usize; 3] {
    let mut h = [0; 3];
    for u in users {
        h[u.concern_label.index()] += 1;
    }
    h
}
