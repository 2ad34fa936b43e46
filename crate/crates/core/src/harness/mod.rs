//! Experiment orchestration: configuration, per-seed runs, variant
//! comparison and λ sweeps.
//!
//! Configuration is TOML with the sections `[experiment]`, `[loss]`,
//! `[train]`, `[encoder]`, `[data]`, `[generate]` and `[mining]`.
//! `section.key=value` overrides are applied to the parsed table before it is
//! checked, so command-line flags take precedence over file keys.

mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{write_atomic, SavedModel};
use crate::classifier::{self, Decision, Labeled, LossWeights, TrainConfig};
use crate::corpus::{self, DatasetSplit, Example, GenConfig, TaggedExample};
use crate::crf::{self, LabeledTags};
use crate::encoder::EncoderConfig;
use crate::metrics::{self, mean_sd};
use crate::mining::{self, Lexicon};
use crate::span_qa::{self, QaExample, SpanGenConfig, SpanMiningConfig};
use crate::{Error, Result};

pub use report::{MetricRow, Report, TSV_HEADER};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Classification,
    Tagging,
    SpanQa,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "tagging" => Ok(Task::Tagging),
            "span_qa" => Ok(Task::SpanQa),
            _ => Err(Error::Config(format!(
                "unknown task {s:?} (expected classification, tagging or span_qa)"
            ))),
        }
    }
}

impl Task {
    /// Metric reported by sweeps.
    pub fn primary_metric(self) -> &'static str {
        match self {
            Task::Classification | Task::Tagging => "f1",
            Task::SpanQa => "rouge_l",
        }
    }
}

/// The six compared models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    L1,
    Pipelined,
    L3,
    L1L2,
    L1L3,
    #[default]
    L1L2L3,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::L1,
        Variant::Pipelined,
        Variant::L3,
        Variant::L1L2,
        Variant::L1L3,
        Variant::L1L2L3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::L1 => "L1",
            Variant::Pipelined => "PIPELINED",
            Variant::L3 => "L3",
            Variant::L1L2 => "L1+L2",
            Variant::L1L3 => "L1+L3",
            Variant::L1L2L3 => "L1+L2+L3",
        }
    }

    /// λ used when the config gives none. The pipelined model trains its two
    /// stages on the target loss alone.
    pub fn default_weights(self) -> LossWeights {
        let (l1, l2, l3) = match self {
            Variant::L1 | Variant::Pipelined => (1.0, 0.0, 0.0),
            Variant::L3 => (0.0, 0.0, 1.0),
            Variant::L1L2 => (0.7, 0.3, 0.0),
            Variant::L1L3 => (0.7, 0.0, 0.3),
            Variant::L1L2L3 => (0.4, 0.3, 0.3),
        };
        LossWeights { l1, l2, l3 }
    }

    /// Rejects λ triples the variant cannot use.
    pub fn check_weights(self, w: &LossWeights) -> Result<()> {
        w.validate()?;
        let ok = match self {
            Variant::L1 | Variant::Pipelined => *w == LossWeights::L1_ONLY,
            Variant::L3 => w.l3 == 1.0,
            Variant::L1L2 => w.l3 == 0.0,
            Variant::L1L3 => w.l2 == 0.0,
            Variant::L1L2L3 => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss weights {:?} are inconsistent with variant {}",
                w.as_array(),
                self.name()
            )))
        }
    }

    pub fn supports(self, task: Task) -> bool {
        task == Task::Classification || !matches!(self, Variant::Pipelined | Variant::L3)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(' ', "");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_owned()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub task: Task,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            task: Task::Classification,
            variant: Variant::L1L2L3,
            seeds: vec![0],
            out: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// `(λ₁, λ₂, λ₃)`; the variant default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub joint_update: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            joint_update: t.joint_update,
        }
    }
}

/// JSONL inputs. Without `train` the corpus is generated per seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinerKind {
    /// Any lexicon match makes a negative hard.
    #[default]
    Lexicon,
    /// At least `min_mentions` keyword matches make a negative hard.
    KeywordCount,
    /// Keep the `group` already present on each record.
    Groups,
}

impl FromStr for MinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexicon" => Ok(MinerKind::Lexicon),
            "keyword_count" => Ok(MinerKind::KeywordCount),
            "groups" => Ok(MinerKind::Groups),
            _ => Err(Error::Config(format!("unknown miner {s:?}"))),
        }
    }
}

/// Classification uses `miner`; tagging always mines token-level keyword
/// matches; span QA uses the ROUGE-L fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub miner: MinerKind,
    /// One entry per line. Generated corpora fall back to their own confound
    /// lexicon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    pub min_mentions: usize,
    pub alpha: f64,
    pub max_len: usize,
    pub easy_neg_ratio: usize,
}

impl Default for MiningSection {
    fn default() -> Self {
        let s = SpanMiningConfig::default();
        MiningSection {
            miner: MinerKind::Lexicon,
            lexicon: None,
            min_mentions: 1,
            alpha: s.alpha,
            max_len: s.max_len,
            easy_neg_ratio: s.easy_neg_ratio,
        }
    }
}

impl MiningSection {
    pub fn span_config(&self) -> SpanMiningConfig {
        SpanMiningConfig {
            alpha: self.alpha,
            max_len: self.max_len,
            easy_neg_ratio: self.easy_neg_ratio,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub encoder: EncoderConfig,
    pub data: DataSection,
    /// Overrides of the task's default generator settings.
    pub generate: toml::Table,
    pub mining: MiningSection,
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses `section.key=value`; the value is read as a TOML value and falls
/// back to a bare string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key {path:?} is not section.key")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let entry = table
        .entry(section.to_owned())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sect = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("[{section}] is not a table")))?;
    sect.insert(key.to_owned(), value);
    Ok(())
}

/// Replaces keys of a serialized default; unknown keys are rejected.
fn merge_defaults<T>(base: &T, overrides: &toml::Table, what: &str) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut table = toml::Table::try_from(base).map_err(config_err)?;
    for (k, v) in overrides {
        if !table.contains_key(k) {
            return Err(Error::Config(format!("unknown key {k:?} in [generate] for {what}")));
        }
        table.insert(k.clone(), v.clone());
    }
    table.try_into().map_err(config_err)
}

impl ExperimentConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn task(&self) -> Task {
        self.experiment.task
    }

    pub fn weights(&self) -> Result<LossWeights> {
        let w = match self.loss.lambda {
            Some([l1, l2, l3]) => LossWeights::new(l1, l2, l3)?,
            None => self.experiment.variant.default_weights(),
        };
        self.experiment.variant.check_weights(&w)?;
        Ok(w)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.train.lr,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed,
            weights: self.weights()?,
            encoder: self.encoder,
            joint_update: self.train.joint_update,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn reject_seed_override(&self) -> Result<()> {
        if self.generate.contains_key("seed") {
            return Err(Error::Config(
                "[generate] seed is taken from the run seed; set [experiment] seeds instead".into(),
            ));
        }
        Ok(())
    }

    /// Effective generator settings for a classification or tagging corpus.
    pub fn gen_config(&self, seed: u64) -> Result<GenConfig> {
        self.reject_seed_override()?;
        let base = match self.task() {
            Task::Tagging => GenConfig::tagging(),
            _ => GenConfig::default(),
        };
        let mut g = merge_defaults(&base, &self.generate, "this task")?;
        g.seed = seed;
        g.validate()?;
        Ok(g)
    }

    pub fn span_gen_config(&self, seed: u64) -> Result<SpanGenConfig> {
        self.reject_seed_override()?;
        let mut g = merge_defaults(&SpanGenConfig::default(), &self.generate, "span_qa")?;
        g.seed = seed;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let x = &self.experiment;
        if x.seeds.is_empty() {
            return Err(Error::Config("[experiment] seeds must not be empty".into()));
        }
        if !x.variant.supports(x.task) {
            return Err(Error::Config(format!(
                "variant {} applies to classification only",
                x.variant
            )));
        }
        self.train_config(x.seeds[0])?;
        if self.mining.min_mentions == 0 {
            return Err(Error::Config("min_mentions must be >= 1".into()));
        }
        self.mining.span_config().validate()?;
        match (&self.data.train, &self.data.test) {
            (Some(_), None) => return Err(Error::Config("[data] train needs a test file".into())),
            (None, Some(_)) | (None, None) if self.data.dev.is_some() => {
                return Err(Error::Config("[data] dev needs a train file".into()))
            }
            _ => {}
        }
        if self.data.train.is_none() {
            match self.task() {
                Task::SpanQa => self.span_gen_config(x.seeds[0]).map(|_| ())?,
                _ => self.gen_config(x.seeds[0]).map(|_| ())?,
            }
        }
        Ok(())
    }

    /// The config with `[generate]` expanded to every generator setting.
    pub fn effective(&self) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        if self.data.train.is_none() {
            let seed = self.experiment.seeds.first().copied().unwrap_or(0);
            let mut table = match self.task() {
                Task::SpanQa => toml::Table::try_from(self.span_gen_config(seed)?),
                _ => toml::Table::try_from(self.gen_config(seed)?),
            }
            .map_err(config_err)?;
            table.remove("seed");
            out.generate = table;
        }
        if out.loss.lambda.is_none() {
            out.loss.lambda = Some(self.weights()?.as_array());
        }
        Ok(out)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.effective()?).map_err(config_err)
    }
}

/// Data of one task, split three ways.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskData {
    Classification(DatasetSplit<Example>),
    Tagging(DatasetSplit<TaggedExample>),
    SpanQa(DatasetSplit<QaExample>),
}

/// Data and mining lexicon for one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: TaskData,
    pub lexicon: Option<Lexicon>,
}

fn load_split<T: corpus::JsonlRecord>(d: &DataSection) -> Result<DatasetSplit<T>> {
    let load = |p: &Option<PathBuf>| -> Result<Vec<T>> {
        match p {
            Some(p) => corpus::load_jsonl(p),
            None => Ok(Vec::new()),
        }
    };
    Ok(DatasetSplit {
        train: load(&d.train)?,
        dev: load(&d.dev)?,
        test: load(&d.test)?,
    })
}

/// Loads the configured files, or generates the seed's corpus.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let mut generated: Option<Vec<String>> = None;
    let data = match (cfg.task(), cfg.data.train.is_some()) {
        (Task::Classification, true) => TaskData::Classification(load_split(&cfg.data)?),
        (Task::Tagging, true) => TaskData::Tagging(load_split(&cfg.data)?),
        (Task::SpanQa, true) => TaskData::SpanQa(load_split(&cfg.data)?),
        (Task::Classification, false) => {
            let g = cfg.gen_config(seed)?;
            generated = Some(g.confound_lexicon.clone());
            TaskData::Classification(corpus::gen_classification_corpus(&g)?)
        }
        (Task::Tagging, false) => {
            let g = cfg.gen_config(seed)?;
            generated = Some(g.confound_lexicon.clone());
            TaskData::Tagging(corpus::gen_tagging_corpus(&g)?)
        }
        (Task::SpanQa, false) => TaskData::SpanQa(span_qa::gen_span_corpus(&cfg.span_gen_config(seed)?)?),
    };
    let lexicon = match (&cfg.mining.lexicon, generated) {
        (Some(path), _) => Some(Lexicon::load(path)?),
        (None, Some(words)) => Some(Lexicon::from_words(&words)?),
        (None, None) => None,
    };
    Ok(Prepared { data, lexicon })
}

fn need_lexicon(lexicon: Option<&Lexicon>) -> Result<&Lexicon> {
    lexicon.ok_or_else(|| Error::Config("mining needs a lexicon; set [mining] lexicon".into()))
}

/// Sets the `group` of every example with the configured miner.
pub fn mine_examples(examples: &[Example], mining: &MiningSection, lexicon: Option<&Lexicon>) -> Result<Vec<Example>> {
    match mining.miner {
        MinerKind::Lexicon => mining::mine_lexicon(examples, need_lexicon(lexicon)?),
        MinerKind::KeywordCount => mining::mine_keyword_count(examples, need_lexicon(lexicon)?, mining.min_mentions),
        MinerKind::Groups => {
            if let Some(e) = examples.iter().find(|e| e.group.is_none()) {
                return Err(Error::Label(format!("example {:?} has no group", e.id)));
            }
            Ok(examples.to_vec())
        }
    }
}

pub fn label_classification(mined: &[Example]) -> Result<Vec<Labeled>> {
    mined
        .iter()
        .map(|e| Ok((e.clone(), mining::map_classification(e.group)?)))
        .collect()
}

pub fn label_tagging(data: &[TaggedExample], lexicon: &Lexicon) -> Result<Vec<LabeledTags>> {
    data.iter()
        .map(|e| {
            let hard = mining::mine_token_level(e, lexicon)?;
            Ok((e.clone(), mining::map_tagging(e, &hard)?))
        })
        .collect()
}

/// Mines, maps labels and trains `variant` with weights `w` for one seed.
pub fn train_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    w: LossWeights,
    seed: u64,
    prepared: &Prepared,
) -> Result<SavedModel> {
    variant.check_weights(&w)?;
    let tc = TrainConfig {
        weights: w,
        ..cfg.train_config(seed)?
    };
    let lexicon = prepared.lexicon.as_ref();
    match &prepared.data {
        TaskData::Classification(split) => {
            let train = mine_examples(&split.train, &cfg.mining, lexicon)?;
            let dev = mine_examples(&split.dev, &cfg.mining, lexicon)?;
            if variant == Variant::Pipelined {
                return Ok(SavedModel::Pipelined(classifier::train_pipelined(&train, &dev, &tc)?));
            }
            let (model, _) =
                classifier::train_classifier(&label_classification(&train)?, &label_classification(&dev)?, &tc)?;
            Ok(SavedModel::Classifier {
                model,
                decision: Decision::for_weights(&w),
            })
        }
        TaskData::Tagging(split) => {
            require_variant(variant, Task::Tagging)?;
            let train = label_tagging(&split.train, need_lexicon(lexicon)?)?;
            let (model, _) = crf::train_tagger(&train, &split.dev, &tc)?;
            Ok(SavedModel::Tagger(model))
        }
        TaskData::SpanQa(split) => {
            require_variant(variant, Task::SpanQa)?;
            let span_cfg = cfg.mining.span_config();
            let train = span_qa::mine_spans(&split.train, &span_cfg, seed)?;
            let dev = span_qa::mine_spans(&split.dev, &span_cfg, seed)?;
            let (model, _) = span_qa::train_span_selector(&train, &dev, &tc)?;
            Ok(SavedModel::SpanSelector {
                model,
                max_len: span_cfg.max_len,
            })
        }
    }
}

fn require_variant(v: Variant, task: Task) -> Result<()> {
    if v.supports(task) {
        Ok(())
    } else {
        Err(Error::Config(format!("variant {v} applies to classification only")))
    }
}

/// Binary predictions of a classification model.
pub fn predict_labels(model: &SavedModel, data: &[Example]) -> Result<Vec<u8>> {
    data.iter()
        .map(|e| match model {
            SavedModel::Classifier { model, decision } => Ok(decision.decide(&model.predict_proba(&e.tokens)?)),
            SavedModel::Pipelined(p) => p.predict(&e.tokens),
            _ => Err(Error::Config("model is not a text classifier".into())),
        })
        .collect()
}

/// `(metric, value)` pairs of `model` on one split.
pub fn evaluate(model: &SavedModel, data: &TaskData, split: &str) -> Result<Vec<(String, f64)>> {
    let pick = |s: &str| -> Result<()> {
        match s {
            "train" | "dev" | "test" => Ok(()),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    };
    pick(split)?;
    fn part<'a, T>(s: &'a DatasetSplit<T>, split: &str) -> &'a [T] {
        match split {
            "train" => &s.train,
            "dev" => &s.dev,
            _ => &s.test,
        }
    }
    let out: Vec<(&str, f64)> = match (model, data) {
        (SavedModel::Classifier { .. } | SavedModel::Pipelined(_), TaskData::Classification(s)) => {
            let ex = part(s, split);
            let preds = predict_labels(model, ex)?;
            let golds: Vec<u8> = ex.iter().map(|e| e.label).collect();
            let prf = metrics::binary_prf(&preds, &golds)?;
            vec![
                ("accuracy", metrics::accuracy(&preds, &golds)?),
                ("precision", prf.precision),
                ("recall", prf.recall),
                ("f1", prf.f1),
            ]
        }
        (SavedModel::Tagger(m), TaskData::Tagging(s)) => {
            let prf = crf::evaluate_tagger(m, part(s, split))?;
            vec![("precision", prf.precision), ("recall", prf.recall), ("f1", prf.f1)]
        }
        (SavedModel::SpanSelector { model, max_len }, TaskData::SpanQa(s)) => {
            let r = span_qa::evaluate_spans(model, part(s, split), *max_len)?;
            vec![("rouge_l", r.rouge_l), ("bleu1", r.bleu1), ("bleu4", r.bleu4)]
        }
        _ => return Err(Error::Config("model kind does not match the task data".into())),
    };
    if let Some((m, v)) = out.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!("metric {m} is {v}")));
    }
    Ok(out.into_iter().map(|(m, v)| (m.to_owned(), v)).collect())
}

fn has_dev(data: &TaskData) -> bool {
    match data {
        TaskData::Classification(s) => !s.dev.is_empty(),
        TaskData::Tagging(s) => !s.dev.is_empty(),
        TaskData::SpanQa(s) => !s.dev.is_empty(),
    }
}

/// One model on one seed: rows for dev (when present) and test.
fn run_one(cfg: &ExperimentConfig, variant: Variant, w: LossWeights, name: &str, seed: u64) -> Result<Report> {
    let prepared = prepare(cfg, seed)?;
    let model = train_variant(cfg, variant, w, seed, &prepared)?;
    let mut rows = Vec::new();
    let splits: &[&str] = if has_dev(&prepared.data) {
        &["dev", "test"]
    } else {
        &["test"]
    };
    for split in splits {
        for (metric, value) in evaluate(&model, &prepared.data, split)? {
            rows.push(MetricRow {
                model: name.to_owned(),
                split: (*split).to_owned(),
                metric,
                value,
                seed,
            });
        }
    }
    Ok(Report { rows })
}

fn run_seeds(cfg: &ExperimentConfig, variant: Variant, w: LossWeights, name: &str) -> Result<Report> {
    let reports = cfg
        .experiment
        .seeds
        .par_iter()
        .map(|&seed| run_one(cfg, variant, w, name, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Report::default();
    reports.into_iter().for_each(|r| out.extend(r));
    Ok(out)
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    for (name, body) in files {
        write_atomic(dir.join(name), body.as_bytes())?;
    }
    Ok(())
}

/// Trains and evaluates the configured variant for every seed. With
/// `[experiment] out` set, writes `metrics.tsv` and the effective
/// `config.toml` there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let variant = cfg.experiment.variant;
    let report = run_seeds(cfg, variant, cfg.weights()?, variant.name())?;
    if let Some(dir) = &cfg.experiment.out {
        write_outputs(dir, cfg, &[("metrics.tsv", report.to_tsv())])?;
    }
    Ok(report)
}

/// Runs several variants with their default λ on the same seeds and data.
pub fn compare(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Report> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::Config("compare needs at least one variant".into()));
    }
    let mut report = Report::default();
    for &v in variants {
        require_variant(v, cfg.task())?;
        let mut c = cfg.clone();
        c.experiment.variant = v;
        c.loss.lambda = None;
        report.extend(run_seeds(&c, v, v.default_weights(), v.name())?);
    }
    if let Some(dir) = &cfg.experiment.out {
        write_outputs(dir, cfg, &[("metrics.tsv", report.to_tsv())])?;
    }
    Ok(report)
}

/// Auxiliary loss traded against L1 in a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepPair {
    L2,
    L3,
}

impl FromStr for SweepPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(' ', "").as_str() {
            "L2" | "L1,L2" | "L1+L2" => Ok(SweepPair::L2),
            "L3" | "L1,L3" | "L1+L3" => Ok(SweepPair::L3),
            _ => Err(Error::Config(format!("unknown sweep pair {s:?} (expected L2 or L3)"))),
        }
    }
}

impl SweepPair {
    pub fn variant(self) -> Variant {
        match self {
            SweepPair::L2 => Variant::L1L2,
            SweepPair::L3 => Variant::L1L3,
        }
    }

    /// `L = (1-λ)·L1 + λ·L_aux`.
    pub fn weights(self, lambda: f64) -> Result<LossWeights> {
        match self {
            SweepPair::L2 => LossWeights::new(1.0 - lambda, lambda, 0.0),
            SweepPair::L3 => LossWeights::new(1.0 - lambda, 0.0, lambda),
        }
    }
}

/// 0.0, 0.1, ..., 0.9.
pub fn default_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub pair: SweepPair,
    pub grid: Vec<f64>,
    pub base: ExperimentConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        for &l in &self.grid {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("λ {l} lies outside [0, 1]")));
            }
            if self.pair == SweepPair::L2 && l == 1.0 {
                return Err(Error::Config(
                    "λ = 1 would drop L1 entirely; not allowed for the L2 pair".into(),
                ));
            }
        }
        require_variant(self.pair.variant(), self.base.task())?;
        self.base.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub metric: String,
    pub points: Vec<CurvePoint>,
    /// Index of the highest mean; the smallest λ wins ties.
    pub argmax: usize,
}

impl Curve {
    pub fn best(&self) -> &CurvePoint {
        &self.points[self.argmax]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lambda\tmean\tsd\tis_argmax\n");
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&format!(
                "{:.2}\t{:.6}\t{:.6}\t{}\n",
                p.lambda,
                p.mean,
                p.sd,
                u8::from(i == self.argmax)
            ));
        }
        out
    }
}

/// One run per grid point and seed on the test split's primary metric.
/// With `out` set, writes `curve.tsv`, `metrics.tsv` and `config.toml`.
pub fn sweep_lambda(cfg: &SweepConfig) -> Result<Curve> {
    cfg.validate()?;
    let base = &cfg.base;
    let variant = cfg.pair.variant();
    let metric = base.task().primary_metric();
    let jobs: Vec<(f64, u64)> = cfg
        .grid
        .iter()
        .flat_map(|&l| base.experiment.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(l, seed)| {
            let name = format!("{}@{l:.2}", variant.name());
            run_one(base, variant, cfg.pair.weights(l)?, &name, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all = Report::default();
    reports.into_iter().for_each(|r| all.extend(r));
    let points: Vec<CurvePoint> = cfg
        .grid
        .iter()
        .map(|&l| {
            let values = all.values(&format!("{}@{l:.2}", variant.name()), "test", metric);
            let (mean, sd) = mean_sd(&values);
            CurvePoint {
                lambda: l,
                mean,
                sd,
                values,
            }
        })
        .collect();
    let mut argmax = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean > points[argmax].mean {
            argmax = i;
        }
    }
    let curve = Curve {
        metric: metric.to_owned(),
        points,
        argmax,
    };
    if let Some(dir) = &base.experiment.out {
        write_outputs(
            dir,
            base,
            &[("curve.tsv", curve.to_tsv()), ("metrics.tsv", all.to_tsv())],
        )?;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            v.check_weights(&v.default_weights()).unwrap();
        }
        assert_eq!("pipelined".parse::<Variant>().unwrap(), Variant::Pipelined);
        assert!("L2".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_forces_lambda() {
        let w = LossWeights::new(0.5, 0.3, 0.2).unwrap();
        assert!(Variant::L1.check_weights(&w).is_err());
        assert!(Variant::L1L2.check_weights(&w).is_err());
        assert!(Variant::L1L3.check_weights(&w).is_err());
        Variant::L1L2L3.check_weights(&w).unwrap();
        Variant::L1L2L3.check_weights(&LossWeights::L1_ONLY).unwrap();
    }

    #[test]
    fn parse_with_overrides() {
        let text = "[experiment]\ntask = \"classification\"\nvariant = \"L1\"\nseeds = [1, 2]\n\n[train]\nepochs = 3\n";
        let cfg = ExperimentConfig::parse(text, &["train.lr=0.05".into(), "generate.n_pos=40".into()]).unwrap();
        assert_eq!(cfg.experiment.seeds, vec![1, 2]);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr, 0.05);
        assert_eq!(cfg.weights().unwrap(), LossWeights::L1_ONLY);
        assert_eq!(cfg.gen_config(7).unwrap().n_pos, 40);
        assert_eq!(cfg.gen_config(7).unwrap().seed, 7);
    }

    #[test]
    fn inconsistent_config_is_rejected() {
        let bad = [
            "[experiment]\nvariant = \"L1\"\n[loss]\nlambda = [0.5, 0.5, 0.0]\n",
            "[experiment]\ntask = \"tagging\"\nvariant = \"PIPELINED\"\n",
            "[experiment]\nseeds = []\n",
            "[generate]\nno_such_key = 1\n",
            "[generate]\nseed = 3\n",
            "[train]\nunknown = 1\n",
            "[mining]\nmin_mentions = 0\n",
        ];
        for text in bad {
            assert!(
                matches!(ExperimentConfig::parse(text, &[]), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = ExperimentConfig::parse("[experiment]\ntask = \"span_qa\"\nvariant = \"L1+L2\"\n", &[]).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = ExperimentConfig::parse(&text, &[]).unwrap();
        assert_eq!(again.span_gen_config(0).unwrap(), cfg.span_gen_config(0).unwrap());
        assert_eq!(again.weights().unwrap(), Variant::L1L2.default_weights());
    }

    #[test]
    fn sweep_grid_rules() {
        let base = ExperimentConfig::default();
        assert_eq!(default_grid().len(), 10);
        let sweep = |pair, grid: Vec<f64>| SweepConfig {
            pair,
            grid,
            base: base.clone(),
        };
        assert!(sweep(SweepPair::L2, vec![0.5, 1.0]).validate().is_err());
        sweep(SweepPair::L3, vec![1.0]).validate().unwrap();
        assert!(sweep(SweepPair::L2, vec![]).validate().is_err());
        assert!(sweep(SweepPair::L2, vec![-0.1]).validate().is_err());
    }
}
