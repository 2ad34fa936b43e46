//! Extractive answer selection over pre-chunked passages.
//!
//! The gold span is the passage span with the highest ROUGE-L against the
//! reference answer. Spans scoring above `α` times the gold score are hard
//! negatives; a seeded sample of the rest are easy negatives. Each candidate is
//! a classifier target read out as `[mean H[s..e]; H[s]; H[e-1]]`.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierModel, Instance, Readout, ReadoutKind, Target, TrainConfig, TrainLog};
use crate::corpus::{filler_word, DatasetSplit, JsonlRecord};
use crate::encoder::Vocab;
use crate::metrics::{bleu, rouge_l};
use crate::mining::LabelTriple;
use crate::rng::{self, Rng};
use crate::tensor::softmax;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanGroup {
    Gold,
    HardNeg,
    EasyNeg,
}

impl SpanGroup {
    pub fn labels(self) -> LabelTriple {
        match self {
            SpanGroup::Gold => LabelTriple::POS,
            SpanGroup::HardNeg => LabelTriple::HARD_NEG,
            SpanGroup::EasyNeg => LabelTriple::EASY_NEG,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub start: usize,
    pub end: usize,
    pub rouge: f64,
    pub group: SpanGroup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpanMiningConfig {
    pub alpha: f64,
    pub max_len: usize,
    pub easy_neg_ratio: usize,
}

impl Default for SpanMiningConfig {
    fn default() -> Self {
        SpanMiningConfig {
            alpha: 0.5,
            max_len: 6,
            easy_neg_ratio: 20,
        }
    }
}

impl SpanMiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.max_len == 0 || self.easy_neg_ratio == 0 {
            return Err(Error::Config("max_len and easy_neg_ratio must be >= 1".into()));
        }
        Ok(())
    }
}

/// All `(start, end)` with `1 <= end - start <= max_len`, ordered by start
/// then end.
pub fn enumerate_spans(n: usize, max_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in 0..n {
        for e in s + 1..=(s + max_len).min(n) {
            out.push((s, e));
        }
    }
    out
}

/// Gold, hard negatives and sampled easy negatives, in that order; each group
/// keeps enumeration order.
pub fn label_spans<S: AsRef<str>>(
    passage: &[S],
    answer: &[S],
    cfg: &SpanMiningConfig,
    rng: &mut Rng,
) -> Result<Vec<SpanCandidate>> {
    cfg.validate()?;
    if passage.is_empty() || answer.is_empty() {
        return Err(Error::Shape("passage and answer must be non-empty".into()));
    }
    let answer: Vec<&str> = answer.iter().map(AsRef::as_ref).collect();
    let passage: Vec<&str> = passage.iter().map(AsRef::as_ref).collect();
    let scored: Vec<((usize, usize), f64)> = enumerate_spans(passage.len(), cfg.max_len)
        .into_iter()
        .map(|(s, e)| ((s, e), rouge_l(&passage[s..e], &answer).f))
        .collect();
    let mut gold = 0;
    for (i, (_, r)) in scored.iter().enumerate() {
        if *r > scored[gold].1 {
            gold = i;
        }
    }
    let threshold = cfg.alpha * scored[gold].1;
    let mut hard = Vec::new();
    let mut rest = Vec::new();
    for (i, &(_, r)) in scored.iter().enumerate() {
        if i == gold {
            continue;
        }
        if r > threshold {
            hard.push(i);
        } else {
            rest.push(i);
        }
    }
    let k = cfg.easy_neg_ratio.min(rest.len());
    let mut picked: Vec<usize> = sample(rng, rest.len(), k).into_iter().map(|j| rest[j]).collect();
    picked.sort_unstable();
    let make = |i: usize, group| SpanCandidate {
        start: scored[i].0 .0,
        end: scored[i].0 .1,
        rouge: scored[i].1,
        group,
    };
    let mut out = vec![make(gold, SpanGroup::Gold)];
    out.extend(hard.into_iter().map(|i| make(i, SpanGroup::HardNeg)));
    out.extend(picked.into_iter().map(|i| make(i, SpanGroup::EasyNeg)));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub passage: Vec<String>,
    pub answer: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<SpanCandidate>>,
}

impl JsonlRecord for QaExample {
    fn from_json(line: &str) -> std::result::Result<Self, String> {
        let ex: QaExample = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if ex.passage.is_empty() || ex.answer.is_empty() {
            return Err(format!("example {:?} has an empty passage or answer", ex.id));
        }
        if let Some(spans) = &ex.spans {
            if spans.iter().any(|s| s.start >= s.end || s.end > ex.passage.len()) {
                return Err(format!("example {:?} has a span outside the passage", ex.id));
            }
        }
        Ok(ex)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(self).expect("span record serializes")
    }
}

/// Labels every example with a per-example seed derived from `(seed, id)`.
pub fn mine_spans(data: &[QaExample], cfg: &SpanMiningConfig, seed: u64) -> Result<Vec<QaExample>> {
    data.iter()
        .map(|ex| {
            let mut r = rng::seeded(rng::derive_seed(seed, &ex.id));
            let spans = label_spans(&ex.passage, &ex.answer, cfg, &mut r)?;
            Ok(QaExample {
                spans: Some(spans),
                ..ex.clone()
            })
        })
        .collect()
}

fn span_instances(vocab: &Vocab, data: &[QaExample]) -> Result<Vec<Instance>> {
    data.iter()
        .map(|ex| {
            let spans = ex
                .spans
                .as_ref()
                .ok_or_else(|| Error::Label(format!("example {:?} has no mined spans", ex.id)))?;
            Ok(Instance {
                ids: vocab.ids(&ex.passage),
                targets: spans
                    .iter()
                    .map(|s| Target {
                        readout: Readout::Span {
                            start: s.start,
                            end: s.end,
                        },
                        labels: s.group.labels(),
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Trains the three heads over span read-outs of mined examples.
pub fn train_span_selector(
    train: &[QaExample],
    dev: &[QaExample],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let vocab = Vocab::build(train.iter().flat_map(|e| e.passage.iter().map(String::as_str)));
    let mut init = rng::seeded(rng::derive_seed(cfg.seed, "init"));
    let model = ClassifierModel::init(vocab, &cfg.encoder, ReadoutKind::Span, &mut init)?;
    let tr = span_instances(&model.encoder.vocab, train)?;
    let dv = span_instances(&model.encoder.vocab, dev)?;
    classifier::fit(model, &tr, &dv, cfg)
}

/// Candidate with the highest `p(y=1)`; ties go to the earliest start, then
/// the shortest span.
pub fn predict_span<S: AsRef<str>>(model: &ClassifierModel, passage: &[S], max_len: usize) -> Result<(usize, usize)> {
    if model.readout != ReadoutKind::Span {
        return Err(Error::Config("model is not a span selector".into()));
    }
    let spans = enumerate_spans(passage.len(), max_len);
    if spans.is_empty() {
        return Err(Error::Shape("no candidate spans".into()));
    }
    let enc = model.encoder.encode(passage)?;
    let mut best = spans[0];
    let mut best_p = f64::NEG_INFINITY;
    for &(start, end) in &spans {
        let f = Readout::Span { start, end }.feature(&enc);
        let p = softmax(&model.heads.y.logits(&f))[1];
        if p > best_p {
            best_p = p;
            best = (start, end);
        }
    }
    Ok(best)
}

/// Mean ROUGE-L F, BLEU-1 and BLEU-4 of predicted spans against the answers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu4: f64,
}

pub fn evaluate_spans(model: &ClassifierModel, data: &[QaExample], max_len: usize) -> Result<SpanScores> {
    let mut s = SpanScores::default();
    for ex in data {
        let (a, b) = predict_span(model, &ex.passage, max_len)?;
        let cand = &ex.passage[a..b];
        s.rouge_l += rouge_l(cand, &ex.answer).f;
        s.bleu1 += bleu(cand, &ex.answer, 1)?;
        s.bleu4 += bleu(cand, &ex.answer, 4)?;
    }
    let n = data.len().max(1) as f64;
    Ok(SpanScores {
        rouge_l: s.rouge_l / n,
        bleu1: s.bleu1 / n,
        bleu4: s.bleu4 / n,
    })
}

/// Synthetic passages: the answer follows a cue word, and near-miss copies of
/// the answer (one token swapped) follow decoy cues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpanGenConfig {
    pub n_examples: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_answer: usize,
    pub max_answer: usize,
    pub decoys: usize,
    pub vocab_size: usize,
    /// Probability that the reference drops one answer token.
    pub perturb_rate: f64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SpanGenConfig {
    fn default() -> Self {
        SpanGenConfig {
            n_examples: 600,
            min_len: 18,
            max_len: 28,
            min_answer: 2,
            max_answer: 4,
            decoys: 2,
            vocab_size: 200,
            perturb_rate: 0.3,
            dev_fraction: 1.0 / 6.0,
            test_fraction: 1.0 / 6.0,
            seed: 0,
        }
    }
}

pub const ANSWER_CUE: &str = "named";
pub const DECOY_CUES: &[&str] = &["unlike", "not", "never", "formerly"];

impl SpanGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_answer == 0 || self.min_answer > self.max_answer {
            return Err(Error::Config("answer length range is invalid".into()));
        }
        let needed = (self.decoys + 1) * (self.max_answer + 1);
        if self.min_len > self.max_len || self.min_len < needed {
            return Err(Error::Config(format!("passages need at least {needed} tokens")));
        }
        if self.vocab_size < self.max_answer + 1 {
            return Err(Error::Config("vocab_size too small".into()));
        }
        let held = self.dev_fraction + self.test_fraction;
        if !(0.0..=1.0).contains(&self.perturb_rate)
            || self.dev_fraction < 0.0
            || self.test_fraction < 0.0
            || held >= 1.0
        {
            return Err(Error::Config("invalid rates or split fractions".into()));
        }
        Ok(())
    }
}

pub fn gen_span_corpus(cfg: &SpanGenConfig) -> Result<DatasetSplit<QaExample>> {
    cfg.validate()?;
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, "span-corpus"));
    let vocab: Vec<String> = (0..cfg.vocab_size).map(filler_word).collect();
    let pick = |rng: &mut Rng| vocab[rng.gen_range(0..vocab.len())].clone();
    let mut all = Vec::with_capacity(cfg.n_examples);
    for i in 0..cfg.n_examples {
        let alen = rng.gen_range(cfg.min_answer..=cfg.max_answer);
        let answer: Vec<String> = (0..alen).map(|_| pick(&mut rng)).collect();
        let mut blocks: Vec<Vec<String>> = vec![std::iter::once(ANSWER_CUE.to_owned())
            .chain(answer.iter().cloned())
            .collect()];
        for _ in 0..cfg.decoys {
            let mut near = answer.clone();
            let j = rng.gen_range(0..alen);
            near[j] = pick(&mut rng);
            let cue = DECOY_CUES[rng.gen_range(0..DECOY_CUES.len())].to_owned();
            blocks.push(std::iter::once(cue).chain(near).collect());
        }
        rand::seq::SliceRandom::shuffle(blocks.as_mut_slice(), &mut rng);
        let target = rng.gen_range(cfg.min_len..=cfg.max_len);
        let used: usize = blocks.iter().map(Vec::len).sum();
        let mut gaps = vec![0usize; blocks.len() + 1];
        for _ in 0..target.saturating_sub(used) {
            let g = rng.gen_range(0..gaps.len());
            gaps[g] += 1;
        }
        let mut passage = Vec::with_capacity(target);
        for (b, gap) in blocks.into_iter().zip(&gaps) {
            passage.extend((0..*gap).map(|_| pick(&mut rng)));
            passage.extend(b);
        }
        passage.extend((0..gaps[gaps.len() - 1]).map(|_| pick(&mut rng)));
        let mut reference = answer;
        if reference.len() > 1 && rng.gen_bool(cfg.perturb_rate) {
            let j = rng.gen_range(0..reference.len());
            reference.remove(j);
        }
        all.push(QaExample {
            id: format!("q{i:06}"),
            passage,
            answer: reference,
            spans: None,
        });
    }
    let n = all.len();
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let n_dev = (n as f64 * cfg.dev_fraction).round() as usize;
    let test: Vec<_> = all.drain(..n_test).collect();
    let dev: Vec<_> = all.drain(..n_dev).collect();
    Ok(DatasetSplit { train: all, dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn enumeration() {
        assert_eq!(enumerate_spans(3, 1), vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(enumerate_spans(3, 3).len(), 6);
        assert_eq!(enumerate_spans(10, 4).len(), 34);
        assert_eq!(enumerate_spans(2, 5), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn verbatim_answer_is_gold() {
        let p = toks("a b c d e f");
        let spans = label_spans(&p, &toks("c d"), &SpanMiningConfig::default(), &mut rng::seeded(0)).unwrap();
        assert_eq!((spans[0].start, spans[0].end, spans[0].rouge), (2, 4, 1.0));
        assert_eq!(spans[0].group, SpanGroup::Gold);
        assert_eq!(spans.iter().filter(|s| s.group == SpanGroup::Gold).count(), 1);
    }

    #[test]
    fn no_overlap_means_no_hard_negatives() {
        let p = toks("a b c");
        let cfg = SpanMiningConfig {
            easy_neg_ratio: 100,
            ..Default::default()
        };
        let spans = label_spans(&p, &toks("x"), &cfg, &mut rng::seeded(0)).unwrap();
        assert_eq!(spans[0].rouge, 0.0);
        assert_eq!((spans[0].start, spans[0].end), (0, 1));
        assert!(spans.iter().all(|s| s.group != SpanGroup::HardNeg));
        assert_eq!(spans.len(), 6);
    }

    #[test]
    fn alpha_near_one_leaves_no_hard_negatives() {
        let p = toks("q w a b c r");
        let cfg = SpanMiningConfig {
            alpha: 0.999,
            ..Default::default()
        };
        let spans = label_spans(&p, &toks("a b c"), &cfg, &mut rng::seeded(1)).unwrap();
        assert!(spans.iter().all(|s| s.group != SpanGroup::HardNeg));
    }

    #[test]
    fn easy_sample_size_and_config_errors() {
        let p: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let a = vec!["w3".to_owned()];
        let cfg = SpanMiningConfig {
            easy_neg_ratio: 5,
            ..Default::default()
        };
        let spans = label_spans(&p, &a, &cfg, &mut rng::seeded(2)).unwrap();
        assert_eq!(spans.iter().filter(|s| s.group == SpanGroup::EasyNeg).count(), 5);
        for bad in [0.0, 1.0] {
            let c = SpanMiningConfig {
                alpha: bad,
                ..Default::default()
            };
            assert!(label_spans(&p, &a, &c, &mut rng::seeded(0)).is_err());
        }
        assert!(label_spans::<&str>(&[], &["a"], &cfg, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn record_round_trip() {
        let line = r#"{"id":"q1","passage":["a","b"],"answer":["b"]}"#;
        let ex = QaExample::from_json(line).unwrap();
        assert_eq!(ex.to_json(), line);
        assert!(QaExample::from_json(r#"{"id":"q","passage":[],"answer":["b"]}"#).is_err());
        let bad =
            r#"{"id":"q","passage":["a"],"answer":["a"],"spans":[{"start":0,"end":2,"rouge":1.0,"group":"gold"}]}"#;
        assert!(QaExample::from_json(bad).is_err());
    }

    #[test]
    fn generator_plants_cue_and_decoys() {
        let cfg = SpanGenConfig {
            n_examples: 30,
            ..Default::default()
        };
        let split = gen_span_corpus(&cfg).unwrap();
        assert_eq!(split.train.len() + split.dev.len() + split.test.len(), 30);
        for ex in split.iter_all() {
            assert_eq!(ex.passage.iter().filter(|t| *t == ANSWER_CUE).count(), 1);
            assert!(ex.passage.len() >= cfg.min_len && ex.passage.len() <= cfg.max_len);
        }
        assert_eq!(gen_span_corpus(&cfg).unwrap(), split);
    }
}
