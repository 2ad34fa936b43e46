//! Joint classification objective over the shared encoder.
//!
//! Three softmax heads read the same feature vector: `y` (target, 2 classes),
//! `z` (positives and hard negatives vs. easy negatives, 2 classes) and `l`
//! (easy / positive / hard, 3 classes). The training loss is
//! `λ₁·mean NLL(y) + λ₂·mean NLL(z) + λ₃·mean NLL(l)`; prediction reads `y`
//! only.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Group};
use crate::encoder::{EncoderConfig, EncoderGrads, EncoderParams, Encoding, Vocab};
use crate::mining::LabelTriple;
use crate::rng::{self, Rng};
use crate::tensor::{argmax, axpy, softmax, Matrix};
use crate::{Error, Result};

/// Which output head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Y,
    Z,
    L,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Y, Head::Z, Head::L];

    pub fn num_classes(self) -> usize {
        match self {
            Head::Y | Head::Z => 2,
            Head::L => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self, t: LabelTriple) -> usize {
        match self {
            Head::Y => t.y as usize,
            Head::Z => t.z as usize,
            Head::L => t.l as usize,
        }
    }
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y" => Ok(Head::Y),
            "z" => Ok(Head::Z),
            "l" => Ok(Head::L),
            _ => Err(Error::Config(format!("unknown head {s:?} (expected y, z or l)"))),
        }
    }
}

/// One affine softmax layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(classes: usize, dim: usize) -> Self {
        Dense {
            w: Matrix::zeros(classes, dim),
            b: vec![0.0; classes],
        }
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.w.matvec(h);
        axpy(1.0, &self.b, &mut out);
        out
    }

    fn is_finite(&self) -> bool {
        self.w.is_finite() && self.b.iter().all(|v| v.is_finite())
    }

    fn sgd_step(&mut self, lr: f64, g: &Dense) {
        self.w.add_scaled(-lr, &g.w);
        axpy(-lr, &g.b, &mut self.b);
    }
}

/// `W_y`, `W_z` (2 rows) and `W_l` (3 rows) with bias vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub y: Dense,
    pub z: Dense,
    pub l: Dense,
}

impl HeadParams {
    pub fn zeros(dim: usize) -> Self {
        HeadParams {
            y: Dense::zeros(2, dim),
            z: Dense::zeros(2, dim),
            l: Dense::zeros(3, dim),
        }
    }

    /// Glorot-uniform weights, zero biases; drawn in the order y, z, l.
    pub fn init(dim: usize, rng: &mut Rng) -> Self {
        let mut h = Self::zeros(dim);
        h.y.w = Matrix::glorot(2, dim, rng);
        h.z.w = Matrix::glorot(2, dim, rng);
        h.l.w = Matrix::glorot(3, dim, rng);
        h
    }

    pub fn input_dim(&self) -> usize {
        self.y.w.cols()
    }

    pub fn head(&self, head: Head) -> &Dense {
        match head {
            Head::Y => &self.y,
            Head::Z => &self.z,
            Head::L => &self.l,
        }
    }

    pub fn head_mut(&mut self, head: Head) -> &mut Dense {
        match head {
            Head::Y => &mut self.y,
            Head::Z => &mut self.z,
            Head::L => &mut self.l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.input_dim();
        for head in Head::ALL {
            let d = self.head(head);
            if d.w.shape() != (head.num_classes(), dim) || d.b.len() != head.num_classes() {
                return Err(Error::Shape(format!(
                    "head {head:?} is {:?}, expected ({}, {dim})",
                    d.w.shape(),
                    head.num_classes()
                )));
            }
            if !d.is_finite() {
                return Err(Error::Numeric(format!("non-finite weights in head {head:?}")));
            }
        }
        Ok(())
    }
}

/// Class distributions of the three heads.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub l: Vec<f64>,
}

impl HeadOutput {
    pub fn get(&self, head: Head) -> &[f64] {
        match head {
            Head::Y => &self.y,
            Head::Z => &self.z,
            Head::L => &self.l,
        }
    }
}

pub fn head_forward(h: &[f64], heads: &HeadParams) -> Result<HeadOutput> {
    if h.len() != heads.input_dim() {
        return Err(Error::Shape(format!(
            "feature has {} entries, heads expect {}",
            h.len(),
            heads.input_dim()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature vector".into()));
    }
    Ok(HeadOutput {
        y: softmax(&heads.y.logits(h)),
        z: softmax(&heads.z.logits(h)),
        l: softmax(&heads.l.logits(h)),
    })
}

/// `(λ₁, λ₂, λ₃)`: non-negative and summing to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 0.4,
            l2: 0.3,
            l3: 0.3,
        }
    }
}

impl LossWeights {
    pub const L1_ONLY: LossWeights = LossWeights {
        l1: 1.0,
        l2: 0.0,
        l3: 0.0,
    };

    pub fn new(l1: f64, l2: f64, l3: f64) -> Result<Self> {
        let w = LossWeights { l1, l2, l3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.l1, self.l2, self.l3];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be >= 0, got {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("loss weights must sum to 1, got {all:?}")));
        }
        Ok(())
    }

    pub fn get(&self, head: Head) -> f64 {
        match head {
            Head::Y => self.l1,
            Head::Z => self.l2,
            Head::L => self.l3,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub encoder: EncoderConfig,
    /// Tagger only: sum the three head gradients per batch instead of
    /// visiting the heads one after another.
    pub joint_update: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            weights: LossWeights::default(),
            encoder: EncoderConfig::default(),
            joint_update: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        self.weights.validate()
    }
}

/// How a feature vector is read out of an [`Encoding`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    /// Mean-pooled text vector (`d`).
    Pool,
    /// `[mean H[start..end]; H[start]; H[end-1]]` (`3d`).
    Span { start: usize, end: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    Pool,
    Span,
}

impl ReadoutKind {
    pub fn feature_dim(self, hidden: usize) -> usize {
        match self {
            ReadoutKind::Pool => hidden,
            ReadoutKind::Span => 3 * hidden,
        }
    }
}

impl Readout {
    pub fn kind(self) -> ReadoutKind {
        match self {
            Readout::Pool => ReadoutKind::Pool,
            Readout::Span { .. } => ReadoutKind::Span,
        }
    }

    pub fn feature(self, enc: &Encoding) -> Vec<f64> {
        match self {
            Readout::Pool => enc.pooled.clone(),
            Readout::Span { start, end } => {
                let d = enc.hidden.cols();
                let mut f = vec![0.0; 3 * d];
                let inv = 1.0 / (end - start) as f64;
                for i in start..end {
                    axpy(inv, enc.hidden.row(i), &mut f[..d]);
                }
                f[d..2 * d].copy_from_slice(enc.hidden.row(start));
                f[2 * d..].copy_from_slice(enc.hidden.row(end - 1));
                f
            }
        }
    }

    /// Routes a feature gradient back onto `dH` / `dh_pool`.
    pub fn backward(self, d_feature: &[f64], d_hidden: &mut Matrix, d_pooled: &mut [f64]) {
        match self {
            Readout::Pool => axpy(1.0, d_feature, d_pooled),
            Readout::Span { start, end } => {
                let d = d_hidden.cols();
                let inv = 1.0 / (end - start) as f64;
                for i in start..end {
                    axpy(inv, &d_feature[..d], d_hidden.row_mut(i));
                }
                axpy(1.0, &d_feature[d..2 * d], d_hidden.row_mut(start));
                axpy(1.0, &d_feature[2 * d..], d_hidden.row_mut(end - 1));
            }
        }
    }

    fn check(self, n: usize) -> Result<()> {
        if let Readout::Span { start, end } = self {
            if start >= end || end > n {
                return Err(Error::Shape(format!("span ({start},{end}) invalid for length {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub readout: Readout,
    pub labels: LabelTriple,
}

/// One encoded sequence with one or more labelled read-outs.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub ids: Vec<usize>,
    pub targets: Vec<Target>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub encoder: EncoderParams,
    pub heads: HeadParams,
    pub readout: ReadoutKind,
}

impl ClassifierModel {
    /// Encoder first, then heads, all from `rng`.
    pub fn init(vocab: Vocab, cfg: &EncoderConfig, readout: ReadoutKind, rng: &mut Rng) -> Result<Self> {
        let encoder = EncoderParams::init(vocab, cfg, rng)?;
        let heads = HeadParams::init(readout.feature_dim(cfg.hidden_dim), rng);
        Ok(ClassifierModel {
            encoder,
            heads,
            readout,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.heads.validate()?;
        if self.heads.input_dim() != self.readout.feature_dim(self.encoder.hidden_dim()) {
            return Err(Error::Shape("head input dimension differs from encoder output".into()));
        }
        Ok(())
    }

    pub fn output(&self, enc: &Encoding, readout: Readout) -> Result<HeadOutput> {
        head_forward(&readout.feature(enc), &self.heads)
    }

    pub fn predict_proba<S: AsRef<str>>(&self, tokens: &[S]) -> Result<HeadOutput> {
        let enc = self.encoder.encode(tokens)?;
        self.output(&enc, Readout::Pool)
    }

    /// `argmax p(y|x)`, ties to class 0. `z` and `l` are never read.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<u8> {
        let enc = self.encoder.encode(tokens)?;
        let f = Readout::Pool.feature(&enc);
        Ok(argmax(&softmax(&self.heads.y.logits(&f))) as u8)
    }

    /// Decision through the three-way head: positive iff `argmax p(l|x) = 1`.
    pub fn predict_three_way<S: AsRef<str>>(&self, tokens: &[S]) -> Result<u8> {
        let enc = self.encoder.encode(tokens)?;
        let f = Readout::Pool.feature(&enc);
        Ok(u8::from(argmax(&softmax(&self.heads.l.logits(&f))) == 1))
    }

    pub fn sgd_step(&mut self, lr: f64, g: &ClassifierGrads) {
        self.encoder.sgd_step(lr, &g.encoder);
        for head in Head::ALL {
            self.heads.head_mut(head).sgd_step(lr, g.heads.head(head));
        }
    }
}

/// Which head a trained model decides with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Target,
    ThreeWay,
}

impl Decision {
    pub fn for_weights(w: &LossWeights) -> Self {
        if w.l1 == 0.0 && w.l3 > 0.0 {
            Decision::ThreeWay
        } else {
            Decision::Target
        }
    }

    pub fn decide(self, out: &HeadOutput) -> u8 {
        match self {
            Decision::Target => argmax(&out.y) as u8,
            Decision::ThreeWay => u8::from(argmax(&out.l) == 1),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierGrads {
    pub encoder: EncoderGrads,
    pub heads: HeadParams,
}

impl ClassifierGrads {
    pub fn zeros_like(m: &ClassifierModel) -> Self {
        ClassifierGrads {
            encoder: EncoderGrads::zeros_like(&m.encoder),
            heads: HeadParams::zeros(m.heads.input_dim()),
        }
    }
}

fn nll(p: &[f64], class: usize) -> f64 {
    -p[class].ln()
}

/// Mean per-target losses over `data`, forward only.
pub fn evaluate_loss(model: &ClassifierModel, data: &[Instance], w: &LossWeights) -> Result<LossBreakdown> {
    let mut sums = [0.0; 3];
    let mut count = 0usize;
    for inst in data {
        let enc = model.encoder.encode_ids(&inst.ids);
        for t in &inst.targets {
            let out = model.output(&enc, t.readout)?;
            for head in Head::ALL {
                sums[head.index()] += nll(out.get(head), head.label(t.labels));
            }
            count += 1;
        }
    }
    Ok(combine(sums, count, w))
}

fn combine(sums: [f64; 3], count: usize, w: &LossWeights) -> LossBreakdown {
    let inv = 1.0 / count.max(1) as f64;
    let (l1, l2, l3) = (sums[0] * inv, sums[1] * inv, sums[2] * inv);
    LossBreakdown {
        total: w.l1 * l1 + w.l2 * l2 + w.l3 * l3,
        l1,
        l2,
        l3,
    }
}

fn check_instance(model: &ClassifierModel, inst: &Instance) -> Result<()> {
    if inst.ids.is_empty() {
        return Err(Error::Shape("instance with no tokens".into()));
    }
    if inst.ids.iter().any(|&i| i >= model.encoder.vocab.len()) {
        return Err(Error::Shape("token id outside the vocabulary".into()));
    }
    for t in &inst.targets {
        if t.readout.kind() != model.readout {
            return Err(Error::Config("target read-out differs from the model's".into()));
        }
        t.readout.check(inst.ids.len())?;
        if t.labels.y > 1 || t.labels.z > 1 || t.labels.l > 2 {
            return Err(Error::Label(format!("label triple out of range: {:?}", t.labels)));
        }
    }
    Ok(())
}

/// Weighted mean loss over all targets in `batch` and its exact gradient.
/// Heads with zero weight contribute no gradient.
pub fn batch_loss(
    model: &ClassifierModel,
    batch: &[Instance],
    w: &LossWeights,
) -> Result<(LossBreakdown, ClassifierGrads)> {
    w.validate()?;
    let mut grads = ClassifierGrads::zeros_like(model);
    let count: usize = batch.iter().map(|i| i.targets.len()).sum();
    let inv = 1.0 / count.max(1) as f64;
    let d = model.encoder.hidden_dim();
    let mut sums = [0.0; 3];
    for inst in batch {
        check_instance(model, inst)?;
        let enc = model.encoder.encode_ids(&inst.ids);
        let mut d_hidden = Matrix::zeros(inst.ids.len(), d);
        let mut d_pooled = vec![0.0; d];
        let mut uses_hidden = false;
        for t in &inst.targets {
            let f = t.readout.feature(&enc);
            let out = head_forward(&f, &model.heads)?;
            let mut d_feature = vec![0.0; f.len()];
            for head in Head::ALL {
                let p = out.get(head);
                let class = head.label(t.labels);
                sums[head.index()] += nll(p, class);
                let scale = w.get(head) * inv;
                if scale == 0.0 {
                    continue;
                }
                let mut dlogit = p.to_vec();
                dlogit[class] -= 1.0;
                dlogit.iter_mut().for_each(|v| *v *= scale);
                let g = grads.heads.head_mut(head);
                g.w.add_outer(1.0, &dlogit, &f);
                axpy(1.0, &dlogit, &mut g.b);
                model.heads.head(head).w.t_matvec_add(&dlogit, &mut d_feature);
            }
            uses_hidden |= matches!(t.readout, Readout::Span { .. });
            t.readout.backward(&d_feature, &mut d_hidden, &mut d_pooled);
        }
        model.encoder.accumulate_backward(
            &inst.ids,
            &enc,
            uses_hidden.then_some(&d_hidden),
            Some(&d_pooled),
            &mut grads.encoder,
        );
    }
    let loss = combine(sums, count, w);
    if !loss.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", loss.total)));
    }
    Ok((loss, grads))
}

/// Fraction of targets whose decision matches the gold `y`.
pub fn target_accuracy(model: &ClassifierModel, data: &[Instance], decision: Decision) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for inst in data {
        let enc = model.encoder.encode_ids(&inst.ids);
        for t in &inst.targets {
            let out = model.output(&enc, t.readout)?;
            hits += usize::from(decision.decide(&out) == t.labels.y);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Per-epoch record. Index 0 is the initialised model, index `e` the model
/// after epoch `e`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_loss: Vec<LossBreakdown>,
    pub dev_accuracy: Vec<f64>,
}

fn init_rng(cfg: &TrainConfig) -> Rng {
    rng::seeded(rng::derive_seed(cfg.seed, "init"))
}

fn shuffle_rng(cfg: &TrainConfig) -> Rng {
    rng::seeded(rng::derive_seed(cfg.seed, "shuffle"))
}

/// Mini-batch SGD with a fixed learning rate over seeded shuffles.
pub fn fit(
    mut model: ClassifierModel,
    train: &[Instance],
    dev: &[Instance],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let decision = Decision::for_weights(&cfg.weights);
    let mut log = TrainLog::default();
    log.train_loss.push(evaluate_loss(&model, train, &cfg.weights)?);
    log.dev_accuracy.push(target_accuracy(&model, dev, decision)?);
    let mut rng = shuffle_rng(cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let (_, grads) = batch_loss(&model, &batch, &cfg.weights)?;
            model.sgd_step(cfg.lr, &grads);
        }
        let loss = evaluate_loss(&model, train, &cfg.weights)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("training loss became {}", loss.total)));
        }
        log.train_loss.push(loss);
        log.dev_accuracy.push(target_accuracy(&model, dev, decision)?);
    }
    Ok((model, log))
}

/// An example paired with its mapped labels.
pub type Labeled = (Example, LabelTriple);

pub fn build_vocab<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Vocab {
    Vocab::build(examples.into_iter().flat_map(|e| e.tokens.iter().map(String::as_str)))
}

pub fn instances(vocab: &Vocab, data: &[Labeled]) -> Vec<Instance> {
    data.iter()
        .map(|(ex, labels)| Instance {
            ids: vocab.ids(&ex.tokens),
            targets: vec![Target {
                readout: Readout::Pool,
                labels: *labels,
            }],
        })
        .collect()
}

/// Trains the joint objective on `train`; the vocabulary is built from the
/// training tokens.
pub fn train_classifier(train: &[Labeled], dev: &[Labeled], cfg: &TrainConfig) -> Result<(ClassifierModel, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let vocab = build_vocab(train.iter().map(|(e, _)| e));
    let model = ClassifierModel::init(vocab, &cfg.encoder, ReadoutKind::Pool, &mut init_rng(cfg))?;
    let tr = instances(&model.encoder.vocab, train);
    let dv = instances(&model.encoder.vocab, dev);
    fit(model, &tr, &dv, cfg)
}

/// Baseline trainer for the target objective alone. Shares initialisation
/// and batch order with [`train_classifier`] but computes only the `y`
/// cross-entropy; `W_z`, `W_l` are never updated. `train_loss` entries hold
/// the `y` loss in both `total` and `l1`.
pub fn train_plain(train: &[Labeled], dev: &[Labeled], cfg: &TrainConfig) -> Result<(ClassifierModel, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let vocab = build_vocab(train.iter().map(|(e, _)| e));
    let mut model = ClassifierModel::init(vocab, &cfg.encoder, ReadoutKind::Pool, &mut init_rng(cfg))?;
    let encode = |m: &ClassifierModel, data: &[Labeled]| -> Vec<(Vec<usize>, usize)> {
        data.iter()
            .map(|(e, t)| (m.encoder.ids(&e.tokens), t.y as usize))
            .collect()
    };
    let tr = encode(&model, train);
    let dv = encode(&model, dev);

    let y_loss = |m: &ClassifierModel, data: &[(Vec<usize>, usize)]| -> f64 {
        let s: f64 = data
            .iter()
            .map(|(ids, y)| {
                let enc = m.encoder.encode_ids(ids);
                -softmax(&m.heads.y.logits(&enc.pooled))[*y].ln()
            })
            .sum();
        s / data.len().max(1) as f64
    };
    let dev_acc = |m: &ClassifierModel| -> f64 {
        if dv.is_empty() {
            return 0.0;
        }
        let hits = dv
            .iter()
            .filter(|(ids, y)| argmax(&m.heads.y.logits(&m.encoder.encode_ids(ids).pooled)) == *y)
            .count();
        hits as f64 / dv.len() as f64
    };
    let entry = |l: f64| LossBreakdown {
        total: l,
        l1: l,
        l2: 0.0,
        l3: 0.0,
    };

    let mut log = TrainLog::default();
    log.train_loss.push(entry(y_loss(&model, &tr)));
    log.dev_accuracy.push(dev_acc(&model));
    let mut rng = shuffle_rng(cfg);
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let d = model.encoder.hidden_dim();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let inv = 1.0 / chunk.len() as f64;
            let mut enc_grads = EncoderGrads::zeros_like(&model.encoder);
            let mut gy = Dense::zeros(2, d);
            for &i in chunk {
                let (ids, y) = &tr[i];
                let enc = model.encoder.encode_ids(ids);
                let mut dlogit = softmax(&model.heads.y.logits(&enc.pooled));
                dlogit[*y] -= 1.0;
                dlogit.iter_mut().for_each(|v| *v *= inv);
                gy.w.add_outer(1.0, &dlogit, &enc.pooled);
                axpy(1.0, &dlogit, &mut gy.b);
                let mut dh = vec![0.0; d];
                model.heads.y.w.t_matvec_add(&dlogit, &mut dh);
                model
                    .encoder
                    .accumulate_backward(ids, &enc, None, Some(&dh), &mut enc_grads);
            }
            model.encoder.sgd_step(cfg.lr, &enc_grads);
            model.heads.y.sgd_step(cfg.lr, &gy);
        }
        let l = y_loss(&model, &tr);
        if !l.is_finite() {
            return Err(Error::Numeric(format!("training loss became {l}")));
        }
        log.train_loss.push(entry(l));
        log.dev_accuracy.push(dev_acc(&model));
    }
    Ok((model, log))
}

/// Two-stage baseline: stage 1 separates positives ∪ hard negatives from easy
/// negatives, stage 2 separates positives from hard negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelinedModel {
    pub stage1: ClassifierModel,
    pub stage2: ClassifierModel,
}

impl PipelinedModel {
    /// 1 iff both stages predict their positive class.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<u8> {
        if self.stage1.predict(tokens)? == 0 {
            return Ok(0);
        }
        self.stage2.predict(tokens)
    }
}

fn grouped(data: &[Example]) -> Result<Vec<(Example, Group)>> {
    data.iter()
        .map(|e| {
            e.group
                .map(|g| (e.clone(), g))
                .ok_or_else(|| Error::Label(format!("example {:?} has no mined group", e.id)))
        })
        .collect()
}

fn relabel(data: &[(Example, Group)], keep: impl Fn(Group) -> bool, y: impl Fn(Group) -> u8) -> Vec<Labeled> {
    data.iter()
        .filter(|(_, g)| keep(*g))
        .map(|(e, g)| {
            let t = LabelTriple::of(*g);
            (e.clone(), LabelTriple { y: y(*g), ..t })
        })
        .collect()
}

pub fn train_pipelined(train: &[Example], dev: &[Example], cfg: &TrainConfig) -> Result<PipelinedModel> {
    let tr = grouped(train)?;
    let dv = grouped(dev)?;
    let union = |g: Group| u8::from(g != Group::EasyNeg);
    let positive = |g: Group| u8::from(g == Group::Pos);
    let plain_cfg = TrainConfig {
        weights: LossWeights::L1_ONLY,
        ..cfg.clone()
    };
    let (stage1, _) = train_plain(
        &relabel(&tr, |_| true, union),
        &relabel(&dv, |_| true, union),
        &plain_cfg,
    )?;
    let stage2_train = relabel(&tr, |g| g != Group::EasyNeg, positive);
    if stage2_train.is_empty() {
        return Err(Error::Config(
            "no positive or hard-negative examples for stage 2".into(),
        ));
    }
    let stage2_cfg = TrainConfig {
        seed: rng::derive_seed(cfg.seed, "stage2"),
        ..plain_cfg
    };
    let (stage2, _) = train_plain(
        &stage2_train,
        &relabel(&dv, |g| g != Group::EasyNeg, positive),
        &stage2_cfg,
    )?;
    Ok(PipelinedModel { stage1, stage2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Vocab;

    fn tiny_model(seed: u64) -> ClassifierModel {
        let vocab = Vocab::build(["a", "b", "c", "d", "e"]);
        let cfg = EncoderConfig {
            embed_dim: 3,
            hidden_dim: 4,
            window: 1,
        };
        ClassifierModel::init(vocab, &cfg, ReadoutKind::Pool, &mut rng::seeded(seed)).unwrap()
    }

    fn inst(ids: &[usize], t: LabelTriple) -> Instance {
        Instance {
            ids: ids.to_vec(),
            targets: vec![Target {
                readout: Readout::Pool,
                labels: t,
            }],
        }
    }

    #[test]
    fn zero_heads_are_uniform() {
        let heads = HeadParams::zeros(3);
        let out = head_forward(&[0.3, -1.0, 2.0], &heads).unwrap();
        assert_eq!(out.y, vec![0.5, 0.5]);
        assert_eq!(out.z, vec![0.5, 0.5]);
        for p in &out.l {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_softmax() {
        let mut heads = HeadParams::zeros(1);
        heads.y.w = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let out = head_forward(&[1.0], &heads).unwrap();
        // e / (1 + e) and its complement.
        assert!((out.y[0] - 0.268_941_421_369_995_1).abs() < 1e-15);
        assert!((out.y[1] - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn head_forward_rejects_non_finite() {
        let heads = HeadParams::zeros(2);
        assert!(matches!(head_forward(&[f64::NAN, 0.0], &heads), Err(Error::Numeric(_))));
        assert!(matches!(head_forward(&[0.0], &heads), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_losses_with_zero_heads() {
        let mut m = tiny_model(1);
        m.heads = HeadParams::zeros(4);
        let batch = vec![inst(&[2, 3], LabelTriple::POS), inst(&[4], LabelTriple::HARD_NEG)];
        let (l, _) = batch_loss(&m, &batch, &LossWeights::L1_ONLY).unwrap();
        assert!((l.total - 2f64.ln()).abs() < 1e-15);
        let (l, _) = batch_loss(&m, &batch, &LossWeights::new(0.0, 0.0, 1.0).unwrap()).unwrap();
        assert!((l.total - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::new(0.5, 0.5, 0.1).is_err());
        assert!(LossWeights::new(1.2, -0.2, 0.0).is_err());
        assert!(LossWeights::new(0.4, 0.3, 0.3).is_ok());
        let m = tiny_model(2);
        let bad = LossWeights {
            l1: 0.9,
            l2: 0.0,
            l3: 0.0,
        };
        assert!(matches!(batch_loss(&m, &[], &bad), Err(Error::Config(_))));
    }

    #[test]
    fn predict_tie_and_argmax() {
        let mut m = tiny_model(3);
        m.heads.y = Dense::zeros(2, 4);
        assert_eq!(m.predict(&["a", "b"]).unwrap(), 0);
        m.heads.y.b = vec![0.0, 3.0];
        assert_eq!(m.predict(&["a", "b"]).unwrap(), 1);
    }

    #[test]
    fn three_way_decision() {
        let mut m = tiny_model(4);
        m.heads.l = Dense::zeros(3, 4);
        m.heads.l.b = vec![0.0, 2.0, 1.0];
        assert_eq!(m.predict_three_way(&["a"]).unwrap(), 1);
        m.heads.l.b = vec![0.0, 1.0, 2.0];
        assert_eq!(m.predict_three_way(&["a"]).unwrap(), 0);
    }

    #[test]
    fn span_readout_shapes() {
        let vocab = Vocab::build(["a", "b", "c"]);
        let cfg = EncoderConfig {
            embed_dim: 2,
            hidden_dim: 3,
            window: 1,
        };
        let m = ClassifierModel::init(vocab, &cfg, ReadoutKind::Span, &mut rng::seeded(0)).unwrap();
        assert_eq!(m.heads.input_dim(), 9);
        let enc = m.encoder.encode(&["a", "b", "c"]).unwrap();
        let f = Readout::Span { start: 1, end: 3 }.feature(&enc);
        assert_eq!(&f[3..6], enc.hidden.row(1));
        assert_eq!(&f[6..9], enc.hidden.row(2));
        let bad = Instance {
            ids: vec![2, 3],
            targets: vec![Target {
                readout: Readout::Span { start: 1, end: 3 },
                labels: LabelTriple::POS,
            }],
        };
        assert!(batch_loss(&m, &[bad], &LossWeights::default()).is_err());
    }

    #[test]
    fn pipelined_requires_groups_and_stage2_data() {
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let ungrouped = vec![Example::from_text("a", "x y", 0).unwrap()];
        assert!(train_pipelined(&ungrouped, &[], &cfg).is_err());
        let easy_only = vec![Example {
            group: Some(Group::EasyNeg),
            ..ungrouped[0].clone()
        }];
        assert!(matches!(train_pipelined(&easy_only, &[], &cfg), Err(Error::Config(_))));
    }
}
