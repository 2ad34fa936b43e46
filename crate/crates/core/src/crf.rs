//! Linear-chain CRF heads and the three-head tagger.
//!
//! Path score: `start[t₁] + Σ Φ[i,tᵢ] + Σ T[tᵢ,tᵢ₊₁] + stop[tₙ]`. Transitions
//! that would produce an undecodable BIO sequence carry a fixed `-inf` mask
//! on top of the learned `T`, and so do starts on an `I` label.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{Head, LossWeights, TrainConfig};
use crate::corpus::{parse_bio, Bio, TaggedExample};
use crate::encoder::{EncoderConfig, EncoderGrads, EncoderParams, Encoding, Vocab};
use crate::metrics::{token_prf, PrfReport};
use crate::mining::{LTag, TagTriple, ZTag};
use crate::rng::{self, Rng};
use crate::tensor::{axpy, log_sum_exp, Matrix};
use crate::{Error, Result};

/// Ordered tag inventory of one head. Index 0 is always `O`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelScheme {
    labels: Vec<String>,
}

impl TryFrom<Vec<String>> for LabelScheme {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<LabelScheme> for Vec<String> {
    fn from(s: LabelScheme) -> Self {
        s.labels
    }
}

impl LabelScheme {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.first().map(String::as_str) != Some("O") {
            return Err(Error::Label("label 0 of a scheme must be O".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            parse_bio(l).map_err(Error::Label)?;
            if !seen.insert(l.as_str()) {
                return Err(Error::Label(format!("duplicate label {l:?}")));
            }
        }
        Ok(LabelScheme { labels })
    }

    /// `O`, then `B-c`, `I-c` for each category in the given order.
    pub fn bio<S: AsRef<str>>(categories: &[S]) -> Result<Self> {
        let mut labels = vec!["O".to_owned()];
        for c in categories {
            let c = c.as_ref();
            if c.is_empty() {
                labels.extend(["B".to_owned(), "I".to_owned()]);
            } else {
                labels.extend([format!("B-{c}"), format!("I-{c}")]);
            }
        }
        Self::new(labels)
    }

    /// Categories appearing in `tags`, sorted.
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut cats = BTreeSet::new();
        for t in tags {
            match parse_bio(t).map_err(Error::Label)? {
                Bio::Outside => {}
                Bio::Begin(c) | Bio::Inside(c) => {
                    cats.insert(c.to_owned());
                }
            }
        }
        Self::bio(&cats.into_iter().collect::<Vec<_>>())
    }

    pub fn z() -> Self {
        Self::new(ZTag::ALL.iter().map(|t| t.as_str().to_owned()).collect()).expect("static scheme")
    }

    pub fn l() -> Self {
        Self::new(LTag::ALL.iter().map(|t| t.as_str().to_owned()).collect()).expect("static scheme")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index(&self, tag: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == tag)
            .ok_or_else(|| Error::Label(format!("tag {tag:?} not in scheme")))
    }

    pub fn indices<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter().map(|t| self.index(t.as_ref())).collect()
    }

    /// `(start mask, K×K transition mask)`: 0 where allowed, `-inf` where not.
    pub fn bio_masks(&self) -> (Vec<f64>, Matrix) {
        let parsed: Vec<Bio> = self.labels.iter().map(|l| parse_bio(l).expect("validated")).collect();
        let k = parsed.len();
        let start = parsed
            .iter()
            .map(|b| {
                if matches!(b, Bio::Inside(_)) {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            })
            .collect();
        let mut trans = Matrix::zeros(k, k);
        for (a, pa) in parsed.iter().enumerate() {
            for (b, pb) in parsed.iter().enumerate() {
                if let Bio::Inside(cat) = pb {
                    let ok = matches!(pa, Bio::Begin(c) | Bio::Inside(c) if c == cat);
                    if !ok {
                        trans.set(a, b, f64::NEG_INFINITY);
                    }
                }
            }
        }
        (start, trans)
    }
}

/// Transition structure of a chain: learned scores plus a fixed mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub trans: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    trans_mask: Matrix,
    start_mask: Vec<f64>,
}

impl Chain {
    /// Zero scores, every transition allowed.
    pub fn unconstrained(k: usize) -> Self {
        Chain {
            trans: Matrix::zeros(k, k),
            start: vec![0.0; k],
            stop: vec![0.0; k],
            trans_mask: Matrix::zeros(k, k),
            start_mask: vec![0.0; k],
        }
    }

    /// Zero scores with the BIO mask of `scheme`.
    pub fn for_scheme(scheme: &LabelScheme) -> Self {
        let k = scheme.len();
        let (start_mask, trans_mask) = scheme.bio_masks();
        Chain {
            trans: Matrix::zeros(k, k),
            start: vec![0.0; k],
            stop: vec![0.0; k],
            trans_mask,
            start_mask,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    #[inline]
    pub fn transition(&self, a: usize, b: usize) -> f64 {
        self.trans.get(a, b) + self.trans_mask.get(a, b)
    }

    #[inline]
    pub fn start_score(&self, j: usize) -> f64 {
        self.start[j] + self.start_mask[j]
    }

    pub fn is_allowed(&self, a: usize, b: usize) -> bool {
        self.trans_mask.get(a, b) == 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.trans.is_finite() && self.start.iter().chain(&self.stop).all(|v| v.is_finite())
    }

    /// Score of one label path; `-inf` if it uses a masked transition.
    pub fn path_score(&self, phi: &Matrix, path: &[usize]) -> f64 {
        let n = path.len();
        let mut s = self.start_score(path[0]) + self.stop[path[n - 1]];
        for (i, &t) in path.iter().enumerate() {
            s += phi.get(i, t);
            if i + 1 < n {
                s += self.transition(t, path[i + 1]);
            }
        }
        s
    }
}

fn check_phi(phi: &Matrix, chain: &Chain) -> Result<()> {
    if phi.rows() == 0 {
        return Err(Error::Shape("empty emission matrix".into()));
    }
    if phi.cols() != chain.num_labels() {
        return Err(Error::Shape(format!(
            "emissions have {} labels, chain has {}",
            phi.cols(),
            chain.num_labels()
        )));
    }
    Ok(())
}

/// Forward log-potentials `α` (`n×K`).
fn forward(phi: &Matrix, chain: &Chain) -> Matrix {
    let (n, k) = phi.shape();
    let mut alpha = Matrix::zeros(n, k);
    for j in 0..k {
        alpha.set(0, j, chain.start_score(j) + phi.get(0, j));
    }
    let mut buf = vec![0.0; k];
    for i in 1..n {
        for j in 0..k {
            for (a, b) in buf.iter_mut().enumerate() {
                *b = alpha.get(i - 1, a) + chain.transition(a, j);
            }
            alpha.set(i, j, log_sum_exp(&buf) + phi.get(i, j));
        }
    }
    alpha
}

/// Backward log-potentials `β` (`n×K`), `β[n-1] = stop`.
fn backward(phi: &Matrix, chain: &Chain) -> Matrix {
    let (n, k) = phi.shape();
    let mut beta = Matrix::zeros(n, k);
    beta.row_mut(n - 1).copy_from_slice(&chain.stop);
    let mut buf = vec![0.0; k];
    for i in (0..n - 1).rev() {
        for a in 0..k {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = chain.transition(a, j) + phi.get(i + 1, j) + beta.get(i + 1, j);
            }
            beta.set(i, a, log_sum_exp(&buf));
        }
    }
    beta
}

fn log_z_from(alpha: &Matrix, chain: &Chain) -> f64 {
    let n = alpha.rows();
    let buf: Vec<f64> = (0..alpha.cols()).map(|j| alpha.get(n - 1, j) + chain.stop[j]).collect();
    log_sum_exp(&buf)
}

pub fn crf_log_partition(phi: &Matrix, chain: &Chain) -> Result<f64> {
    check_phi(phi, chain)?;
    Ok(log_z_from(&forward(phi, chain), chain))
}

/// Unary marginals (`n×K`) and pairwise marginals summed over positions (`K×K`).
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub log_z: f64,
    pub unary: Matrix,
    pub pairwise: Matrix,
}

pub fn crf_marginals(phi: &Matrix, chain: &Chain) -> Result<Marginals> {
    check_phi(phi, chain)?;
    let (n, k) = phi.shape();
    let alpha = forward(phi, chain);
    let beta = backward(phi, chain);
    let log_z = log_z_from(&alpha, chain);
    if !log_z.is_finite() {
        return Err(Error::Numeric(format!("log partition is {log_z}")));
    }
    let mut unary = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            unary.set(i, j, (alpha.get(i, j) + beta.get(i, j) - log_z).exp());
        }
    }
    let mut pairwise = Matrix::zeros(k, k);
    for i in 0..n - 1 {
        for a in 0..k {
            let base = alpha.get(i, a) - log_z;
            if base == f64::NEG_INFINITY {
                continue;
            }
            for b in 0..k {
                let t = chain.transition(a, b);
                if t == f64::NEG_INFINITY {
                    continue;
                }
                let v = (base + t + phi.get(i + 1, b) + beta.get(i + 1, b)).exp();
                pairwise.set(a, b, pairwise.get(a, b) + v);
            }
        }
    }
    Ok(Marginals { log_z, unary, pairwise })
}

/// Negative log-likelihood of `gold` and its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfNll {
    pub loss: f64,
    pub d_phi: Matrix,
    pub d_trans: Matrix,
    pub d_start: Vec<f64>,
    pub d_stop: Vec<f64>,
}

pub fn crf_nll(phi: &Matrix, chain: &Chain, gold: &[usize]) -> Result<CrfNll> {
    check_phi(phi, chain)?;
    let (n, k) = phi.shape();
    if gold.len() != n {
        return Err(Error::Shape(format!("{} gold labels for {n} positions", gold.len())));
    }
    if let Some(&bad) = gold.iter().find(|&&g| g >= k) {
        return Err(Error::Label(format!("gold label {bad} outside 0..{k}")));
    }
    let gold_score = chain.path_score(phi, gold);
    if gold_score == f64::NEG_INFINITY {
        return Err(Error::Label("gold path uses a forbidden transition".into()));
    }
    let m = crf_marginals(phi, chain)?;
    let mut d_phi = m.unary;
    let mut d_trans = m.pairwise;
    let mut d_start = d_phi.row(0).to_vec();
    let mut d_stop = d_phi.row(n - 1).to_vec();
    for (i, &g) in gold.iter().enumerate() {
        d_phi.set(i, g, d_phi.get(i, g) - 1.0);
        if i + 1 < n {
            let h = gold[i + 1];
            d_trans.set(g, h, d_trans.get(g, h) - 1.0);
        }
    }
    d_start[gold[0]] -= 1.0;
    d_stop[gold[n - 1]] -= 1.0;
    // Rounding can leave -1e-16 when the gold path holds all the mass.
    let loss = (m.log_z - gold_score).max(0.0);
    Ok(CrfNll {
        loss,
        d_phi,
        d_trans,
        d_start,
        d_stop,
    })
}

/// Best path. Ties go to the lowest label index, both for the final label and
/// at each backpointer.
pub fn viterbi(phi: &Matrix, chain: &Chain) -> Result<Vec<usize>> {
    check_phi(phi, chain)?;
    let (n, k) = phi.shape();
    let mut delta: Vec<f64> = (0..k).map(|j| chain.start_score(j) + phi.get(0, j)).collect();
    let mut back = vec![0usize; n * k];
    let mut next = vec![0.0; k];
    for i in 1..n {
        for j in 0..k {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (a, &d) in delta.iter().enumerate() {
                let v = d + chain.transition(a, j);
                if v > best_v {
                    best_v = v;
                    best = a;
                }
            }
            back[i * k + j] = best;
            next[j] = best_v + phi.get(i, j);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut last_v = f64::NEG_INFINITY;
    for (j, d) in delta.iter().enumerate() {
        let v = d + chain.stop[j];
        if v > last_v {
            last_v = v;
            last = j;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i * k + path[i]];
    }
    Ok(path)
}

/// Emission weights plus chain parameters for one tag scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfHead {
    pub scheme: LabelScheme,
    /// `K×d`.
    pub we: Matrix,
    pub chain: Chain,
}

impl CrfHead {
    /// Glorot emission weights; transitions, start and stop at zero.
    pub fn init(scheme: LabelScheme, hidden: usize, rng: &mut Rng) -> Self {
        let we = Matrix::glorot(scheme.len(), hidden, rng);
        let chain = Chain::for_scheme(&scheme);
        CrfHead { scheme, we, chain }
    }

    pub fn zeros(scheme: LabelScheme, hidden: usize) -> Self {
        let we = Matrix::zeros(scheme.len(), hidden);
        let chain = Chain::for_scheme(&scheme);
        CrfHead { scheme, we, chain }
    }

    /// `Φ = H · W_eᵀ`.
    pub fn emissions(&self, hidden: &Matrix) -> Matrix {
        let n = hidden.rows();
        let k = self.scheme.len();
        let mut phi = Matrix::zeros(n, k);
        for i in 0..n {
            self.we.matvec_into(hidden.row(i), phi.row_mut(i));
        }
        phi
    }

    pub fn validate(&self, hidden: usize) -> Result<()> {
        let k = self.scheme.len();
        if self.we.shape() != (k, hidden)
            || self.chain.trans.shape() != (k, k)
            || self.chain.start.len() != k
            || self.chain.stop.len() != k
        {
            return Err(Error::Shape(format!("CRF head shapes do not match K={k}, d={hidden}")));
        }
        if !self.we.is_finite() || !self.chain.is_finite() {
            return Err(Error::Numeric("non-finite CRF parameters".into()));
        }
        Ok(())
    }

    fn sgd_step(&mut self, lr: f64, g: &CrfGrads) {
        self.we.add_scaled(-lr, &g.we);
        self.chain.trans.add_scaled(-lr, &g.trans);
        axpy(-lr, &g.start, &mut self.chain.start);
        axpy(-lr, &g.stop, &mut self.chain.stop);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrfGrads {
    pub we: Matrix,
    pub trans: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl CrfGrads {
    pub fn zeros_like(h: &CrfHead) -> Self {
        let k = h.scheme.len();
        CrfGrads {
            we: Matrix::zeros(k, h.we.cols()),
            trans: Matrix::zeros(k, k),
            start: vec![0.0; k],
            stop: vec![0.0; k],
        }
    }
}

/// Shared encoder with `CRF_y`, `CRF_z` and `CRF_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggerModel {
    pub encoder: EncoderParams,
    pub y: CrfHead,
    pub z: CrfHead,
    pub l: CrfHead,
}

impl TaggerModel {
    /// Encoder, then emission weights in the order y, z, l.
    pub fn init(vocab: Vocab, cfg: &EncoderConfig, y_scheme: LabelScheme, rng: &mut Rng) -> Result<Self> {
        let encoder = EncoderParams::init(vocab, cfg, rng)?;
        let d = cfg.hidden_dim;
        let y = CrfHead::init(y_scheme, d, rng);
        let z = CrfHead::init(LabelScheme::z(), d, rng);
        let l = CrfHead::init(LabelScheme::l(), d, rng);
        Ok(TaggerModel { encoder, y, z, l })
    }

    pub fn head(&self, head: Head) -> &CrfHead {
        match head {
            Head::Y => &self.y,
            Head::Z => &self.z,
            Head::L => &self.l,
        }
    }

    pub fn head_mut(&mut self, head: Head) -> &mut CrfHead {
        match head {
            Head::Y => &mut self.y,
            Head::Z => &mut self.z,
            Head::L => &mut self.l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let d = self.encoder.hidden_dim();
        for h in Head::ALL {
            self.head(h).validate(d)?;
        }
        if self.z.scheme != LabelScheme::z() || self.l.scheme != LabelScheme::l() {
            return Err(Error::Label("auxiliary CRF heads carry the wrong tag scheme".into()));
        }
        Ok(())
    }

    /// Viterbi over `CRF_y`.
    pub fn predict_tags<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>> {
        let enc = self.encoder.encode(tokens)?;
        Ok(self.decode(&enc))
    }

    fn decode(&self, enc: &Encoding) -> Vec<String> {
        let phi = self.y.emissions(&enc.hidden);
        let path = viterbi(&phi, &self.y.chain).expect("shapes checked by construction");
        path.into_iter().map(|t| self.y.scheme.label(t).to_owned()).collect()
    }

    pub fn sgd_step(&mut self, lr: f64, g: &TaggerGrads) {
        self.encoder.sgd_step(lr, &g.encoder);
        for h in Head::ALL {
            if let Some(hg) = &g.heads[h.index()] {
                self.head_mut(h).sgd_step(lr, hg);
            }
        }
    }
}

/// Token ids with gold label indices for each head.
#[derive(Clone, Debug, PartialEq)]
pub struct TagInstance {
    pub ids: Vec<usize>,
    pub gold: [Vec<usize>; 3],
}

impl TagInstance {
    pub fn new(model: &TaggerModel, tokens: &[String], triple: &TagTriple) -> Result<Self> {
        let n = tokens.len();
        if n == 0 || triple.y.len() != n || triple.z.len() != n || triple.l.len() != n {
            return Err(Error::Shape("tag triple does not align with tokens".into()));
        }
        Ok(TagInstance {
            ids: model.encoder.ids(tokens),
            gold: [
                model.y.scheme.indices(&triple.y)?,
                triple.z.iter().map(|t| t.index()).collect(),
                triple.l.iter().map(|t| t.index()).collect(),
            ],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerGrads {
    pub encoder: EncoderGrads,
    pub heads: [Option<CrfGrads>; 3],
}

/// Mean NLL per head over `batch` and the gradient of
/// `Σ_k scale_k · mean NLL_k`. Heads with zero scale are skipped and report
/// a loss of `NaN`.
pub fn tagger_loss_grad(
    model: &TaggerModel,
    batch: &[TagInstance],
    scale: [f64; 3],
) -> Result<([f64; 3], TaggerGrads)> {
    let mut grads = TaggerGrads {
        encoder: EncoderGrads::zeros_like(&model.encoder),
        heads: Head::ALL.map(|h| (scale[h.index()] != 0.0).then(|| CrfGrads::zeros_like(model.head(h)))),
    };
    let inv = 1.0 / batch.len().max(1) as f64;
    let mut losses = [0.0; 3];
    let d = model.encoder.hidden_dim();
    for inst in batch {
        let enc = model.encoder.encode_ids(&inst.ids);
        let mut d_hidden = Matrix::zeros(inst.ids.len(), d);
        for h in Head::ALL {
            let s = scale[h.index()] * inv;
            if s == 0.0 {
                continue;
            }
            let head = model.head(h);
            let phi = head.emissions(&enc.hidden);
            let r = crf_nll(&phi, &head.chain, &inst.gold[h.index()])?;
            losses[h.index()] += r.loss;
            let g = grads.heads[h.index()].as_mut().expect("allocated for non-zero scale");
            for i in 0..phi.rows() {
                let dphi = r.d_phi.row(i);
                g.we.add_outer(s, dphi, enc.hidden.row(i));
                let mut dh = vec![0.0; d];
                head.we.t_matvec_add(dphi, &mut dh);
                axpy(s, &dh, d_hidden.row_mut(i));
            }
            g.trans.add_scaled(s, &r.d_trans);
            axpy(s, &r.d_start, &mut g.start);
            axpy(s, &r.d_stop, &mut g.stop);
        }
        model
            .encoder
            .accumulate_backward(&inst.ids, &enc, Some(&d_hidden), None, &mut grads.encoder);
    }
    for h in Head::ALL {
        losses[h.index()] = if scale[h.index()] == 0.0 {
            f64::NAN
        } else {
            losses[h.index()] * inv
        };
    }
    if losses.iter().any(|l| l.is_infinite()) {
        return Err(Error::Numeric("infinite CRF loss".into()));
    }
    Ok((losses, grads))
}

/// Mean NLL of each head over `data`, forward only.
pub fn tagger_losses(model: &TaggerModel, data: &[TagInstance]) -> Result<[f64; 3]> {
    let mut sums = [0.0; 3];
    for inst in data {
        let enc = model.encoder.encode_ids(&inst.ids);
        for h in Head::ALL {
            let head = model.head(h);
            let phi = head.emissions(&enc.hidden);
            let gold = &inst.gold[h.index()];
            sums[h.index()] += crf_log_partition(&phi, &head.chain)? - head.chain.path_score(&phi, gold);
        }
    }
    let n = data.len().max(1) as f64;
    Ok(sums.map(|s| s / n))
}

/// Word-level P/R/F of `CRF_y` decoding over examples.
pub fn evaluate_tagger(model: &TaggerModel, data: &[TaggedExample]) -> Result<PrfReport> {
    let mut total = PrfReport::default();
    for ex in data {
        let pred = model.predict_tags(&ex.tokens)?;
        total = total.merge(&token_prf(&pred, &ex.tags)?);
    }
    Ok(total)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaggerLog {
    /// Per-head mean NLL on the training set; index 0 is the initial model.
    pub train_loss: Vec<[f64; 3]>,
    pub dev_f1: Vec<f64>,
}

pub type LabeledTags = (TaggedExample, TagTriple);

/// Trains the three CRF heads. By default each mini-batch is visited once per
/// head in the order y, z, l, each step applying that head's `λ`-scaled
/// gradient to the head and the encoder; `joint_update` sums all three into a
/// single step instead. Heads with `λ = 0` are never updated.
pub fn train_tagger(
    train: &[LabeledTags],
    dev: &[TaggedExample],
    cfg: &TrainConfig,
) -> Result<(TaggerModel, TaggerLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let vocab = Vocab::build(train.iter().flat_map(|(e, _)| e.tokens.iter().map(String::as_str)));
    let scheme = LabelScheme::from_tags(train.iter().flat_map(|(_, t)| t.y.iter().map(String::as_str)))?;
    let mut init = rng::seeded(rng::derive_seed(cfg.seed, "init"));
    let model = TaggerModel::init(vocab, &cfg.encoder, scheme, &mut init)?;
    let data = train
        .iter()
        .map(|(e, t)| TagInstance::new(&model, &e.tokens, t))
        .collect::<Result<Vec<_>>>()?;
    fit_tagger(model, &data, dev, cfg)
}

pub fn fit_tagger(
    mut model: TaggerModel,
    data: &[TagInstance],
    dev: &[TaggedExample],
    cfg: &TrainConfig,
) -> Result<(TaggerModel, TaggerLog)> {
    cfg.validate()?;
    let w: LossWeights = cfg.weights;
    let lambda = w.as_array();
    let dev_f1 = |m: &TaggerModel| -> Result<f64> {
        if dev.is_empty() {
            return Ok(0.0);
        }
        Ok(evaluate_tagger(m, dev)?.f1)
    };
    let mut log = TaggerLog::default();
    log.train_loss.push(tagger_losses(&model, data)?);
    log.dev_f1.push(dev_f1(&model)?);
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            if cfg.joint_update {
                let (_, g) = tagger_loss_grad(&model, &batch, lambda)?;
                model.sgd_step(cfg.lr, &g);
            } else {
                for h in Head::ALL {
                    if lambda[h.index()] == 0.0 {
                        continue;
                    }
                    let mut scale = [0.0; 3];
                    scale[h.index()] = lambda[h.index()];
                    let (_, g) = tagger_loss_grad(&model, &batch, scale)?;
                    model.sgd_step(cfg.lr, &g);
                }
            }
        }
        let losses = tagger_losses(&model, data)?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric(format!("training loss became {losses:?}")));
        }
        log.train_loss.push(losses);
        log.dev_f1.push(dev_f1(&model)?);
    }
    Ok((model, log))
}
