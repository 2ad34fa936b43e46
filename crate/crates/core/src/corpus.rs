//! Data model, JSONL I/O and seeded synthetic corpora.
//!
//! Classification records:
//! `{"id": str, "text": str | "tokens": [str], "label": 0|1, "group"?: "pos"|"hard_neg"|"easy_neg"}`.
//! `text` is split on spaces. Records are always written back with `tokens`.
//!
//! Tagging records: `{"id": str, "tokens": [str], "tags": [str]}` with
//! `B-CAT` / `I-CAT` / `O` tags.
//!
//! The generators draw every random choice from [`crate::rng::seeded`]
//! (ChaCha8), so a `(GenConfig, seed)` pair always yields the same corpus.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Pos,
    HardNeg,
    EasyNeg,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Pos, Group::HardNeg, Group::EasyNeg];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Pos => "pos",
            Group::HardNeg => "hard_neg",
            Group::EasyNeg => "easy_neg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: u8,
    pub group: Option<Group>,
}

impl Example {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, label: u8) -> Result<Self> {
        let ex = Example {
            id: id.into(),
            tokens,
            label,
            group: None,
        };
        ex.validate().map_err(Error::Label)?;
        Ok(ex)
    }

    pub fn from_text(id: impl Into<String>, text: &str, label: u8) -> Result<Self> {
        Self::new(id, tokenize(text), label)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err(format!("example {:?} has no tokens", self.id));
        }
        if self.label > 1 {
            return Err(format!("label {} is not 0 or 1", self.label));
        }
        if let Some(g) = self.group {
            if (g == Group::Pos) != (self.label == 1) {
                return Err(format!(
                    "group {} is inconsistent with label {}",
                    g.as_str(),
                    self.label
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl TaggedExample {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err(format!("example {:?} has no tokens", self.id));
        }
        if self.tokens.len() != self.tags.len() {
            return Err(format!("{} tokens but {} tags", self.tokens.len(), self.tags.len()));
        }
        validate_bio(&self.tags)
    }
}

/// Splits raw text on spaces, dropping empty pieces.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

/// Parsed form of a BIO tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

pub fn parse_bio(tag: &str) -> std::result::Result<Bio<'_>, String> {
    match tag {
        "O" => Ok(Bio::Outside),
        "B" => Ok(Bio::Begin("")),
        "I" => Ok(Bio::Inside("")),
        _ => match tag.split_once('-') {
            Some(("B", cat)) if !cat.is_empty() => Ok(Bio::Begin(cat)),
            Some(("I", cat)) if !cat.is_empty() => Ok(Bio::Inside(cat)),
            _ => Err(format!("malformed tag {tag:?}")),
        },
    }
}

/// Every `I-X` must follow a `B-X` or `I-X`.
pub fn validate_bio<S: AsRef<str>>(tags: &[S]) -> std::result::Result<(), String> {
    let mut prev = Bio::Outside;
    for (i, tag) in tags.iter().enumerate() {
        let cur = parse_bio(tag.as_ref())?;
        if let Bio::Inside(cat) = cur {
            let ok = matches!(prev, Bio::Begin(p) | Bio::Inside(p) if p == cat);
            if !ok {
                return Err(format!(
                    "tag {:?} at position {i} does not continue a span",
                    tag.as_ref()
                ));
            }
        }
        prev = cur;
    }
    Ok(())
}

/// A record type stored one-per-line in JSONL files.
pub trait JsonlRecord: Sized {
    fn from_json(line: &str) -> std::result::Result<Self, String>;
    fn to_json(&self) -> String;
}

#[derive(Deserialize)]
struct RawClassification {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    label: u8,
    #[serde(default)]
    group: Option<Group>,
}

#[derive(Serialize)]
struct ClassificationOut<'a> {
    id: &'a str,
    tokens: &'a [String],
    label: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    group: Option<Group>,
}

impl JsonlRecord for Example {
    fn from_json(line: &str) -> std::result::Result<Self, String> {
        let raw: RawClassification = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let tokens = match (raw.tokens, raw.text) {
            (Some(t), _) => t,
            (None, Some(text)) => tokenize(&text),
            (None, None) => return Err("missing field `text` or `tokens`".into()),
        };
        let ex = Example {
            id: raw.id,
            tokens,
            label: raw.label,
            group: raw.group,
        };
        ex.validate()?;
        Ok(ex)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&ClassificationOut {
            id: &self.id,
            tokens: &self.tokens,
            label: self.label,
            group: self.group,
        })
        .expect("classification record serializes")
    }
}

impl JsonlRecord for TaggedExample {
    fn from_json(line: &str) -> std::result::Result<Self, String> {
        let ex: TaggedExample = serde_json::from_str(line).map_err(|e| e.to_string())?;
        ex.validate()?;
        Ok(ex)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tagging record serializes")
    }
}

/// Reads records in file order. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn load_jsonl<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn parse_jsonl<T: JsonlRecord>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| T::from_json(l).map_err(|message| Error::Parse { line: i + 1, message }))
        .collect()
}

pub fn write_jsonl<T: JsonlRecord>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        writeln!(w, "{}", item.to_json()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Classification,
    Tagging,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Records {
    Classification(Vec<Example>),
    Tagging(Vec<TaggedExample>),
}

pub fn load_records(path: impl AsRef<Path>, kind: RecordKind) -> Result<Records> {
    Ok(match kind {
        RecordKind::Classification => Records::Classification(load_jsonl(path)?),
        RecordKind::Tagging => Records::Tagging(load_jsonl(path)?),
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

impl<T> DatasetSplit<T> {
    pub fn iter_all(&self) -> impl Iterator<Item = &T> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> DatasetSplit<U> {
        DatasetSplit {
            train: self.train.into_iter().map(&mut f).collect(),
            dev: self.dev.into_iter().map(&mut f).collect(),
            test: self.test.into_iter().map(&mut f).collect(),
        }
    }
}

/// Synthetic corpus parameters.
///
/// `n_pos`, `n_hard_neg` and `n_easy_neg` are totals over all three splits.
/// For the tagging corpus they count sentences with gold entities, sentences
/// whose only keywords sit in `O` regions, and plain sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_pos: usize,
    pub n_hard_neg: usize,
    pub n_easy_neg: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    /// Positive sentiment words (classification) or keywords (tagging).
    pub confound_lexicon: Vec<String>,
    pub negative_lexicon: Vec<String>,
    /// Sentiment-free predicate words.
    pub neutral_lexicon: Vec<String>,
    /// Classification only: probability that a negative's target-aspect
    /// clause takes a neutral word instead of a negative one.
    pub neutral_rate: f64,
    /// Probability that a hard negative adds "but" and a target-aspect clause
    /// with a negative or neutral word.
    pub hard_contrast: f64,
    /// Tagging only: probability that an easy-negative sentence contains a
    /// decoy "the <filler> of" fragment.
    pub decoy_rate: f64,
    /// Probability that an easy negative is about a distractor aspect.
    pub easy_distractor_rate: f64,
    pub target_aspects: Vec<String>,
    pub distractor_aspects: Vec<String>,
    /// Inclusive sentence length bounds; fillers pad sentences up to a length
    /// drawn uniformly from this range.
    pub min_len: usize,
    pub max_len: usize,
    /// Zipf exponent used when drawing confound words for positives (and for
    /// gold keyword slots in the tagging corpus). Hard negatives always draw
    /// uniformly. 0 draws uniformly everywhere.
    pub lexicon_skew: f64,
    /// Tagging only: planted keywords per token.
    pub keyword_rate: f64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

pub const POSITIVE_WORDS: &[&str] = &[
    "great",
    "excellent",
    "friendly",
    "helpful",
    "wonderful",
    "nice",
    "lovely",
    "amazing",
    "pleasant",
    "superb",
    "fantastic",
    "perfect",
    "good",
    "outstanding",
    "delightful",
    "charming",
    "courteous",
    "attentive",
    "welcoming",
    "gracious",
    "cheerful",
    "brilliant",
    "terrific",
    "fabulous",
    "marvelous",
    "splendid",
    "polite",
    "warm",
    "kind",
    "professional",
];

pub const NEGATIVE_WORDS: &[&str] = &[
    "surly",
    "rude",
    "unhelpful",
    "terrible",
    "awful",
    "horrible",
    "dismissive",
    "lazy",
    "slow",
    "arrogant",
    "careless",
    "hostile",
    "incompetent",
    "grumpy",
    "indifferent",
    "impolite",
    "sloppy",
    "disappointing",
    "poor",
    "bad",
];

pub const NEUTRAL_WORDS: &[&str] = &[
    "there",
    "busy",
    "new",
    "present",
    "around",
    "young",
    "local",
    "downstairs",
    "available",
    "upstairs",
    "outside",
    "inside",
];

pub const TARGET_ASPECTS: &[&str] = &["staff", "receptionist", "service", "employees", "concierge"];

pub const DISTRACTOR_ASPECTS: &[&str] = &[
    "location",
    "room",
    "breakfast",
    "pool",
    "view",
    "bed",
    "lobby",
    "parking",
    "food",
    "wifi",
    "bathroom",
    "neighborhood",
];

pub const FSI_KEYWORDS: &[&str] = &[
    "revenue",
    "profit",
    "income",
    "sales",
    "cost",
    "expenses",
    "margin",
    "earnings",
    "assets",
    "liabilities",
    "turnover",
    "ebitda",
    "dividends",
    "cashflow",
    "capex",
    "inventory",
    "receivables",
    "payables",
    "depreciation",
    "equity",
];

/// Synthetic indicator names (`metric0`, `metric1`, ...) that pad the
/// tagging lexicon with a long tail.
pub fn extra_keywords(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("metric{i}")).collect()
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_pos: 250,
            n_hard_neg: 450,
            n_easy_neg: 1800,
            vocab_size: 400,
            confound_lexicon: words(POSITIVE_WORDS),
            negative_lexicon: words(NEGATIVE_WORDS),
            neutral_lexicon: words(NEUTRAL_WORDS),
            neutral_rate: 0.5,
            hard_contrast: 0.0,
            decoy_rate: 0.0,
            easy_distractor_rate: 0.5,
            target_aspects: words(TARGET_ASPECTS),
            distractor_aspects: words(DISTRACTOR_ASPECTS),
            min_len: 8,
            max_len: 16,
            lexicon_skew: 0.0,
            keyword_rate: 0.03,
            dev_fraction: 0.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Defaults for the financial tagging corpus.
    pub fn tagging() -> Self {
        let mut confound_lexicon = words(FSI_KEYWORDS);
        confound_lexicon.extend(extra_keywords(300));
        GenConfig {
            n_pos: 600,
            n_hard_neg: 600,
            n_easy_neg: 600,
            confound_lexicon,
            lexicon_skew: 1.0,
            decoy_rate: 1.0,
            negative_lexicon: Vec::new(),
            neutral_lexicon: Vec::new(),
            target_aspects: Vec::new(),
            distractor_aspects: Vec::new(),
            min_len: 10,
            max_len: 18,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        let fr = self.dev_fraction + self.test_fraction;
        if !(0.0..=1.0).contains(&self.dev_fraction) || !(0.0..=1.0).contains(&self.test_fraction) || fr > 1.0 {
            return Err(Error::Config(
                "split fractions must lie in [0,1] and sum to at most 1".into(),
            ));
        }
        if [
            self.neutral_rate,
            self.hard_contrast,
            self.easy_distractor_rate,
            self.decoy_rate,
        ]
        .iter()
        .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config("rates must lie in [0,1]".into()));
        }
        if !self.lexicon_skew.is_finite() || self.lexicon_skew < 0.0 {
            return Err(Error::Config("lexicon_skew must be finite and >= 0".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministic pseudo-words `filler(0)`, `filler(1)`, ... made of three
/// consonant-vowel syllables.
pub fn filler_word(index: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syllables = C.len() * V.len();
    let mut i = index;
    let mut w = String::with_capacity(6);
    for _ in 0..3 {
        let s = i % syllables;
        i /= syllables;
        w.push(C[s / V.len()] as char);
        w.push(V[s % V.len()] as char);
    }
    w
}

fn filler_vocab(n: usize, reserved: &HashSet<&str>) -> Vec<String> {
    (0..)
        .map(filler_word)
        .filter(|w| !reserved.contains(w.as_str()))
        .take(n)
        .collect()
}

/// Zipf-weighted index sampler over `0..n` (exponent 0 is uniform).
struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    fn new(n: usize, exponent: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = (1..=n)
            .map(|r| {
                acc += (r as f64).powf(-exponent);
                acc
            })
            .collect();
        ZipfSampler { cumulative }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty sampler");
        let u = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

fn pick<'a>(rng: &mut Rng, xs: &'a [String]) -> &'a str {
    xs.choose(rng).expect("non-empty word list")
}

fn sentiment_clause(rng: &mut Rng, aspect: &str, sentiment: &str) -> Vec<String> {
    const COPULAS: &[&str] = &["is", "are", "was", "were", "seemed", "felt"];
    const INTENSIFIERS: &[&str] = &["very", "really", "so", "quite"];
    let mut c = vec!["the".to_string(), aspect.to_string()];
    c.push(COPULAS[rng.gen_range(0..COPULAS.len())].to_string());
    if rng.gen_bool(0.3) {
        c.push(INTENSIFIERS[rng.gen_range(0..INTENSIFIERS.len())].to_string());
    }
    c.push(sentiment.to_string());
    c
}

/// Joins segments and pads with fillers (inserted at segment boundaries) up
/// to a length drawn from `[min_len, max_len]`. Returns tokens and a mask
/// marking filler positions.
fn pad_with_fillers(
    rng: &mut Rng,
    segments: Vec<Vec<(String, bool)>>,
    fillers: &[String],
    min_len: usize,
    max_len: usize,
) -> Vec<(String, bool)> {
    let content: usize = segments.iter().map(Vec::len).sum();
    let target = rng.gen_range(min_len..=max_len);
    let n_fill = target.saturating_sub(content);
    let slots = segments.len() + 1;
    let mut per_slot = vec![0usize; slots];
    for _ in 0..n_fill {
        per_slot[rng.gen_range(0..slots)] += 1;
    }
    let mut out = Vec::with_capacity(content + n_fill);
    let mut segs = segments.into_iter();
    for (slot, &k) in per_slot.iter().enumerate() {
        for _ in 0..k {
            out.push((pick(rng, fillers).to_string(), true));
        }
        if slot + 1 < slots {
            out.extend(segs.next().expect("segment per slot"));
        }
    }
    out
}

fn plain(tokens: Vec<String>) -> Vec<(String, bool)> {
    tokens.into_iter().map(|t| (t, false)).collect()
}

/// Stratified split: per group, the first `round(n·test)` items go to test,
/// the next `round(n·dev)` to dev, the rest to train; each split is then
/// shuffled.
fn stratify<T>(rng: &mut Rng, groups: Vec<Vec<T>>, cfg: &GenConfig) -> DatasetSplit<T> {
    let mut split = DatasetSplit {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for items in groups {
        let n = items.len() as f64;
        let n_test = (n * cfg.test_fraction).round() as usize;
        let n_dev = ((n * cfg.dev_fraction).round() as usize).min(items.len() - n_test.min(items.len()));
        for (i, item) in items.into_iter().enumerate() {
            if i < n_test {
                split.test.push(item);
            } else if i < n_test + n_dev {
                split.dev.push(item);
            } else {
                split.train.push(item);
            }
        }
    }
    split.train.shuffle(rng);
    split.dev.shuffle(rng);
    split.test.shuffle(rng);
    split
}

/// Aspect-sentiment corpus with hard negatives that reuse the positive
/// vocabulary.
///
/// * positive: target-aspect clause with a confound (positive) word;
/// * hard negative: distractor-aspect clause with a confound word, joined with
///   probability `hard_contrast` by "but" to a target-aspect clause with a
///   negative or neutral word (either order);
/// * easy negative: a clause about a target aspect (or, with probability
///   `easy_distractor_rate`, a distractor aspect) with a negative or neutral
///   word.
pub fn gen_classification_corpus(cfg: &GenConfig) -> Result<DatasetSplit<Example>> {
    cfg.validate()?;
    if cfg.n_hard_neg > 0 && cfg.confound_lexicon.is_empty() {
        return Err(Error::Config("hard negatives need a non-empty confound lexicon".into()));
    }
    if cfg.n_pos > 0 && cfg.confound_lexicon.is_empty() {
        return Err(Error::Config("positives need a non-empty confound lexicon".into()));
    }
    if cfg.n_hard_neg + cfg.n_easy_neg > 0 && cfg.negative_lexicon.is_empty() {
        return Err(Error::Config("negatives need a non-empty negative lexicon".into()));
    }
    if cfg.neutral_rate > 0.0 && cfg.neutral_lexicon.is_empty() {
        return Err(Error::Config(
            "neutral_rate > 0 needs a non-empty neutral lexicon".into(),
        ));
    }
    if cfg.target_aspects.is_empty() || (cfg.n_hard_neg > 0 && cfg.distractor_aspects.is_empty()) {
        return Err(Error::Config("aspect lists must be non-empty".into()));
    }
    let reserved: HashSet<&str> = cfg
        .confound_lexicon
        .iter()
        .chain(&cfg.negative_lexicon)
        .chain(&cfg.neutral_lexicon)
        .chain(&cfg.target_aspects)
        .chain(&cfg.distractor_aspects)
        .map(String::as_str)
        .collect();
    let fillers = filler_vocab(cfg.vocab_size, &reserved);
    let mut rng = rng::seeded(cfg.seed);
    let zipf = ZipfSampler::new(cfg.confound_lexicon.len().max(1), cfg.lexicon_skew);

    let negative_word = |rng: &mut Rng| -> &str {
        if cfg.neutral_rate > 0.0 && rng.gen_bool(cfg.neutral_rate) {
            pick(rng, &cfg.neutral_lexicon)
        } else {
            pick(rng, &cfg.negative_lexicon)
        }
    };
    let mut next_id = 0usize;
    let mut make = |rng: &mut Rng, group: Group| -> Example {
        let segments = match group {
            Group::Pos => {
                let w = &cfg.confound_lexicon[zipf.sample(rng)];
                let aspect = pick(rng, &cfg.target_aspects);
                vec![plain(sentiment_clause(rng, aspect, w))]
            }
            Group::HardNeg => {
                let pos = pick(rng, &cfg.confound_lexicon).to_string();
                let neg = negative_word(rng).to_string();
                let aspect = pick(rng, &cfg.distractor_aspects);
                let distract = sentiment_clause(rng, aspect, &pos);
                if rng.gen_bool(cfg.hard_contrast) {
                    let aspect = pick(rng, &cfg.target_aspects);
                    let target = sentiment_clause(rng, aspect, &neg);
                    let (mut first, second) = if rng.gen_bool(0.5) {
                        (distract, target)
                    } else {
                        (target, distract)
                    };
                    first.push("but".into());
                    first.extend(second);
                    vec![plain(first)]
                } else {
                    vec![plain(distract)]
                }
            }
            Group::EasyNeg => {
                let neg = negative_word(rng);
                let aspect = if rng.gen_bool(cfg.easy_distractor_rate) {
                    pick(rng, &cfg.distractor_aspects)
                } else {
                    pick(rng, &cfg.target_aspects)
                };
                vec![plain(sentiment_clause(rng, aspect, neg))]
            }
        };
        let tokens = pad_with_fillers(rng, segments, &fillers, cfg.min_len, cfg.max_len)
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        let id = format!("c{next_id:06}");
        next_id += 1;
        Example {
            id,
            tokens,
            label: u8::from(group == Group::Pos),
            group: Some(group),
        }
    };

    let groups: Vec<Vec<Example>> = [
        (Group::Pos, cfg.n_pos),
        (Group::HardNeg, cfg.n_hard_neg),
        (Group::EasyNeg, cfg.n_easy_neg),
    ]
    .into_iter()
    .map(|(g, n)| (0..n).map(|_| make(&mut rng, g)).collect())
    .collect();
    Ok(stratify(&mut rng, groups, cfg))
}

/// Tag inventory of the financial tagging corpus.
pub const TAG_CATEGORIES: &[&str] = &["FSI", "unit", "value", "BoC", "FSI-change", "B&S"];

const BUSINESSES: &[&str] = &[
    "education sector",
    "loan service",
    "retail business",
    "steel segment",
    "property division",
    "insurance unit",
    "logistics service",
    "mining operations",
    "software business",
    "consumer segment",
];
const CHANGES: &[&str] = &["increased", "decreased", "rose", "fell", "grew", "declined"];
const UNITS: &[&str] = &["%", "tons", "kilowatt hours", "million yuan", "units", "billion"];
const BASES: &[&str] = &[
    "the same period of last year",
    "the previous year",
    "last quarter",
    "the prior period",
];

fn span(tokens: &str, category: &str) -> Vec<(String, String)> {
    tokens
        .split(' ')
        .enumerate()
        .map(|(i, t)| {
            let p = if i == 0 { "B" } else { "I" };
            (t.to_string(), format!("{p}-{category}"))
        })
        .collect()
}

fn outside(tokens: &str) -> Vec<(String, String)> {
    tokens.split(' ').map(|t| (t.to_string(), "O".to_string())).collect()
}

/// Financial-statement tagging corpus over [`TAG_CATEGORIES`].
///
/// Positive sentences follow "the FSI of B&S FSI-change by value unit [over
/// BoC]". After all sentences are built, `round(keyword_rate · tokens)`
/// filler tokens are replaced by keywords: one in each hard-negative
/// sentence, the rest at uniformly chosen filler positions of positive and
/// hard-negative sentences. Those planted keywords carry tag `O`. Gold
/// keywords are drawn with `lexicon_skew`, planted ones uniformly, so tail
/// keywords are seen mostly untagged. With probability `decoy_rate` an easy
/// negative carries a "the <filler> of" fragment, so the template context
/// alone does not identify an indicator.
pub fn gen_tagging_corpus(cfg: &GenConfig) -> Result<DatasetSplit<TaggedExample>> {
    cfg.validate()?;
    if cfg.confound_lexicon.is_empty() {
        return Err(Error::Config("tagging corpus needs a non-empty keyword lexicon".into()));
    }
    let mut reserved: HashSet<&str> = cfg.confound_lexicon.iter().map(String::as_str).collect();
    let fixed: Vec<&str> = BUSINESSES
        .iter()
        .chain(CHANGES)
        .chain(UNITS)
        .chain(BASES)
        .flat_map(|s| s.split(' '))
        .chain(["the", "of", "by", "over"])
        .collect();
    reserved.extend(fixed);
    let fillers = filler_vocab(cfg.vocab_size, &reserved);
    let mut rng = rng::seeded(cfg.seed);
    let zipf = ZipfSampler::new(cfg.confound_lexicon.len(), cfg.lexicon_skew);

    // (token, tag, is_filler) per sentence, grouped by kind.
    let sentence = |rng: &mut Rng, group: Group| -> Vec<(String, String, bool)> {
        let segments: Vec<Vec<(String, String)>> = match group {
            Group::Pos => {
                let kw = cfg.confound_lexicon[zipf.sample(rng)].clone();
                let mut s = outside("the");
                s.extend(span(&kw, "FSI"));
                s.extend(outside("of"));
                s.extend(span(BUSINESSES[rng.gen_range(0..BUSINESSES.len())], "B&S"));
                s.extend(span(CHANGES[rng.gen_range(0..CHANGES.len())], "FSI-change"));
                s.extend(outside("by"));
                let value = match rng.gen_range(0..3) {
                    0 => format!("{}", rng.gen_range(1..100)),
                    1 => format!("{}.{}", rng.gen_range(1..100), rng.gen_range(0..10)),
                    _ => format!("{},{:03}", rng.gen_range(1..1000), rng.gen_range(0..1000)),
                };
                s.extend(span(&value, "value"));
                s.extend(span(UNITS[rng.gen_range(0..UNITS.len())], "unit"));
                let mut segs = vec![s];
                if rng.gen_bool(0.6) {
                    let mut boc = outside("over");
                    boc.extend(span(BASES[rng.gen_range(0..BASES.len())], "BoC"));
                    segs.push(boc);
                }
                segs
            }
            Group::EasyNeg if rng.gen_bool(cfg.decoy_rate) => {
                let mut s = outside("the");
                s.push((pick(rng, &fillers).to_string(), "O".to_string()));
                s.extend(outside("of"));
                vec![s]
            }
            Group::HardNeg | Group::EasyNeg => Vec::new(),
        };
        let tagged: Vec<Vec<(String, bool)>> = segments
            .iter()
            .map(|seg| seg.iter().map(|(t, _)| (t.clone(), false)).collect())
            .collect();
        let tags: Vec<String> = segments.into_iter().flatten().map(|(_, tag)| tag).collect();
        let padded = pad_with_fillers(rng, tagged, &fillers, cfg.min_len, cfg.max_len);
        let mut tag_iter = tags.into_iter();
        padded
            .into_iter()
            .map(|(tok, filler)| {
                let tag = if filler {
                    "O".to_string()
                } else {
                    tag_iter.next().expect("tag per content token")
                };
                (tok, tag, filler)
            })
            .collect()
    };

    // (token, tag, is_filler)
    type Sentence = Vec<(String, String, bool)>;
    let mut sentences: Vec<(Group, Sentence)> = Vec::new();
    for (g, n) in [
        (Group::Pos, cfg.n_pos),
        (Group::HardNeg, cfg.n_hard_neg),
        (Group::EasyNeg, cfg.n_easy_neg),
    ] {
        for _ in 0..n {
            let s = sentence(&mut rng, g);
            sentences.push((g, s));
        }
    }

    let total_tokens: usize = sentences.iter().map(|(_, s)| s.len()).sum();
    let n_plant = planted_keyword_target(cfg.keyword_rate, total_tokens);
    if n_plant < cfg.n_hard_neg {
        return Err(Error::Config(format!(
            "keyword_rate plants {n_plant} keywords but {} hard-negative sentences need one each",
            cfg.n_hard_neg
        )));
    }
    let plant = |rng: &mut Rng, tok: &mut String| {
        *tok = pick(rng, &cfg.confound_lexicon).to_string();
    };
    // One keyword per hard-negative sentence first.
    let mut free: Vec<(usize, usize)> = Vec::new();
    for (si, (g, s)) in sentences.iter_mut().enumerate() {
        let fill: Vec<usize> = (0..s.len()).filter(|&i| s[i].2).collect();
        match g {
            Group::HardNeg => {
                let &pos = fill.choose(&mut rng).ok_or_else(|| {
                    Error::Config("min_len leaves no filler position in a hard-negative sentence".into())
                })?;
                plant(&mut rng, &mut s[pos].0);
                s[pos].2 = false;
                free.extend(fill.into_iter().filter(|&i| i != pos).map(|i| (si, i)));
            }
            Group::Pos => free.extend(fill.into_iter().map(|i| (si, i))),
            Group::EasyNeg => {}
        }
    }
    let rest = n_plant - cfg.n_hard_neg;
    if rest > free.len() {
        return Err(Error::Config(format!(
            "keyword_rate needs {rest} more filler positions than the corpus has ({})",
            free.len()
        )));
    }
    for idx in rand::seq::index::sample(&mut rng, free.len(), rest).into_vec() {
        let (si, ti) = free[idx];
        plant(&mut rng, &mut sentences[si].1[ti].0);
    }

    let mut groups: Vec<Vec<TaggedExample>> = vec![Vec::new(), Vec::new(), Vec::new()];
    for (i, (g, s)) in sentences.into_iter().enumerate() {
        let (tokens, tags): (Vec<String>, Vec<String>) = s.into_iter().map(|(t, tag, _)| (t, tag)).unzip();
        let slot = Group::ALL.iter().position(|&x| x == g).expect("known group");
        groups[slot].push(TaggedExample {
            id: format!("t{i:06}"),
            tokens,
            tags,
        });
    }
    Ok(stratify(&mut rng, groups, cfg))
}

/// Number of keywords [`gen_tagging_corpus`] plants into a corpus of
/// `tokens` tokens.
pub fn planted_keyword_target(rate: f64, tokens: usize) -> usize {
    (rate * tokens as f64).round() as usize
}
