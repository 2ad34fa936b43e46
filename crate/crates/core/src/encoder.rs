//! Shared text encoder: token embeddings followed by a windowed affine
//! contextualiser with `tanh`, mean-pooled into a single text vector.
//!
//! For token `i` with window half-width `w`,
//! `H_i = tanh(W_c · [e_{i-w}; …; e_{i+w}] + b_c)`, where positions outside
//! the sequence contribute the all-zero PAD embedding, and
//! `h_pool = mean_i H_i`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::Rng;
use crate::tensor::{axpy, Matrix};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token index. Indices 0 and 1 are always PAD and UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        let tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Vocab { tokens, index }
    }
}

impl Vocab {
    /// Vocabulary in first-occurrence order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab::default();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token-per-line file; line number is the index.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Config(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// SHA-256 of the vocabulary file contents, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 32,
            hidden_dim: 64,
            window: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub vocab: Vocab,
    pub window: usize,
    /// `|V| × d_e`; row [`PAD`] stays zero.
    pub embeddings: Matrix,
    /// `d × (2w+1)·d_e`.
    pub wc: Matrix,
    pub bc: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// `n × d` per-token representations.
    pub hidden: Matrix,
    /// Column mean of `hidden`.
    pub pooled: Vec<f64>,
}

/// Parameter gradients of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub embeddings: Matrix,
    pub wc: Matrix,
    pub bc: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        EncoderGrads {
            embeddings: Matrix::zeros(p.embeddings.rows(), p.embeddings.cols()),
            wc: Matrix::zeros(p.wc.rows(), p.wc.cols()),
            bc: vec![0.0; p.bc.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.is_finite() && self.wc.is_finite() && self.bc.iter().all(|v| v.is_finite())
    }
}

/// Result of [`EncoderParams::encode_backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBackward {
    pub grads: EncoderGrads,
    /// `n × d_e`: gradient with respect to each position's embedding input.
    pub inputs: Matrix,
}

impl EncoderParams {
    /// Glorot-uniform embeddings and `W_c`, zero bias, zero PAD row.
    pub fn init(vocab: Vocab, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.hidden_dim == 0 {
            return Err(Error::Config("encoder dimensions must be >= 1".into()));
        }
        let mut embeddings = Matrix::glorot(vocab.len(), cfg.embed_dim, rng);
        embeddings.row_mut(PAD).fill(0.0);
        let wc = Matrix::glorot(cfg.hidden_dim, (2 * cfg.window + 1) * cfg.embed_dim, rng);
        Ok(EncoderParams {
            vocab,
            window: cfg.window,
            embeddings,
            wc,
            bc: vec![0.0; cfg.hidden_dim],
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wc.rows()
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            embed_dim: self.embed_dim(),
            hidden_dim: self.hidden_dim(),
            window: self.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let de = self.embed_dim();
        if de == 0 || self.hidden_dim() == 0 {
            return Err(Error::Shape("encoder dimensions must be >= 1".into()));
        }
        if self.embeddings.rows() != self.vocab.len() {
            return Err(Error::Shape(format!(
                "{} embedding rows for a vocabulary of {}",
                self.embeddings.rows(),
                self.vocab.len()
            )));
        }
        if self.wc.cols() != (2 * self.window + 1) * de {
            return Err(Error::Shape(format!(
                "W_c has {} columns, window {} with d_e {de} needs {}",
                self.wc.cols(),
                self.window,
                (2 * self.window + 1) * de
            )));
        }
        if self.bc.len() != self.hidden_dim() {
            return Err(Error::Shape("b_c length differs from W_c rows".into()));
        }
        if !(self.embeddings.is_finite() && self.wc.is_finite() && self.bc.iter().all(|v| v.is_finite())) {
            return Err(Error::Numeric("non-finite encoder parameter".into()));
        }
        Ok(())
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        self.vocab.ids(tokens)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Encoding> {
        self.validate()?;
        if tokens.is_empty() {
            return Err(Error::Shape("cannot encode an empty token sequence".into()));
        }
        Ok(self.encode_ids(&self.ids(tokens)))
    }

    /// Embedding rows for `ids`, one row per position.
    pub fn gather(&self, ids: &[usize]) -> Matrix {
        let de = self.embed_dim();
        let mut m = Matrix::zeros(ids.len(), de);
        for (i, &id) in ids.iter().enumerate() {
            if id != PAD {
                m.row_mut(i).copy_from_slice(self.embeddings.row(id));
            }
        }
        m
    }

    /// Encodes `ids`; callers guarantee `ids` is non-empty.
    pub fn encode_ids(&self, ids: &[usize]) -> Encoding {
        self.encode_embedded(&self.gather(ids))
    }

    fn window_input(&self, inputs: &Matrix, i: usize, x: &mut [f64]) {
        let de = self.embed_dim();
        let n = inputs.rows() as isize;
        let w = self.window as isize;
        for (b, off) in (-w..=w).enumerate() {
            let j = i as isize + off;
            let slot = &mut x[b * de..(b + 1) * de];
            if (0..n).contains(&j) {
                slot.copy_from_slice(inputs.row(j as usize));
            } else {
                slot.fill(0.0);
            }
        }
    }

    /// Encodes explicit per-position embedding inputs (`n × d_e`).
    pub fn encode_embedded(&self, inputs: &Matrix) -> Encoding {
        let n = inputs.rows();
        let d = self.hidden_dim();
        let mut hidden = Matrix::zeros(n, d);
        let mut x = vec![0.0; self.wc.cols()];
        let mut pooled = vec![0.0; d];
        for i in 0..n {
            self.window_input(inputs, i, &mut x);
            let h = hidden.row_mut(i);
            self.wc.matvec_into(&x, h);
            for (hv, b) in h.iter_mut().zip(&self.bc) {
                *hv = (*hv + b).tanh();
            }
            axpy(1.0, h, &mut pooled);
        }
        let inv = 1.0 / n as f64;
        pooled.iter_mut().for_each(|v| *v *= inv);
        Encoding { hidden, pooled }
    }

    /// Exact gradients given upstream gradients on `H` and on `h_pool`
    /// (either may be omitted as zero).
    pub fn encode_backward<S: AsRef<str>>(
        &self,
        tokens: &[S],
        d_hidden: Option<&Matrix>,
        d_pooled: Option<&[f64]>,
    ) -> Result<EncoderBackward> {
        self.validate()?;
        if tokens.is_empty() {
            return Err(Error::Shape("cannot encode an empty token sequence".into()));
        }
        let ids = self.ids(tokens);
        let n = ids.len();
        let d = self.hidden_dim();
        if let Some(dh) = d_hidden {
            if dh.shape() != (n, d) {
                return Err(Error::Shape(format!("dH is {:?}, expected ({n}, {d})", dh.shape())));
            }
        }
        if let Some(dp) = d_pooled {
            if dp.len() != d {
                return Err(Error::Shape(format!("dh_pool has {} entries, expected {d}", dp.len())));
            }
        }
        let inputs_m = self.gather(&ids);
        let enc = self.encode_embedded(&inputs_m);
        let mut grads = EncoderGrads::zeros_like(self);
        let inputs = self.backward_embedded(&inputs_m, &enc, d_hidden, d_pooled, &mut grads);
        scatter_rows(&ids, &inputs, &mut grads.embeddings);
        Ok(EncoderBackward { grads, inputs })
    }

    /// Accumulates parameter gradients for `ids` into `grads`.
    pub fn accumulate_backward(
        &self,
        ids: &[usize],
        enc: &Encoding,
        d_hidden: Option<&Matrix>,
        d_pooled: Option<&[f64]>,
        grads: &mut EncoderGrads,
    ) {
        let inputs_m = self.gather(ids);
        let inputs = self.backward_embedded(&inputs_m, enc, d_hidden, d_pooled, grads);
        scatter_rows(ids, &inputs, &mut grads.embeddings);
    }

    /// Adds `W_c`/`b_c` gradients into `grads` and returns the per-position
    /// input gradients.
    pub fn backward_embedded(
        &self,
        inputs: &Matrix,
        enc: &Encoding,
        d_hidden: Option<&Matrix>,
        d_pooled: Option<&[f64]>,
        grads: &mut EncoderGrads,
    ) -> Matrix {
        let n = inputs.rows();
        let d = self.hidden_dim();
        let de = self.embed_dim();
        let w = self.window as isize;
        let inv = 1.0 / n as f64;
        let mut d_inputs = Matrix::zeros(n, de);
        let mut x = vec![0.0; self.wc.cols()];
        let mut da = vec![0.0; d];
        let mut dx = vec![0.0; self.wc.cols()];
        for i in 0..n {
            let h = enc.hidden.row(i);
            let mut any = false;
            for r in 0..d {
                let mut g = d_hidden.map_or(0.0, |m| m.get(i, r));
                if let Some(p) = d_pooled {
                    g += p[r] * inv;
                }
                da[r] = g * (1.0 - h[r] * h[r]);
                any |= da[r] != 0.0;
            }
            if !any {
                continue;
            }
            self.window_input(inputs, i, &mut x);
            axpy(1.0, &da, &mut grads.bc);
            grads.wc.add_outer(1.0, &da, &x);
            dx.fill(0.0);
            self.wc.t_matvec_add(&da, &mut dx);
            for (b, off) in (-w..=w).enumerate() {
                let j = i as isize + off;
                if (0..n as isize).contains(&j) {
                    axpy(1.0, &dx[b * de..(b + 1) * de], d_inputs.row_mut(j as usize));
                }
            }
        }
        d_inputs
    }

    /// Plain SGD step; the PAD row is never touched.
    pub fn sgd_step(&mut self, lr: f64, grads: &EncoderGrads) {
        let de = self.embed_dim();
        let emb = self.embeddings.as_mut_slice();
        axpy(-lr, &grads.embeddings.as_slice()[de..], &mut emb[de..]);
        self.wc.add_scaled(-lr, &grads.wc);
        axpy(-lr, &grads.bc, &mut self.bc);
    }
}

fn scatter_rows(ids: &[usize], inputs: &Matrix, embeddings: &mut Matrix) {
    for (j, &id) in ids.iter().enumerate() {
        if id != PAD {
            axpy(1.0, inputs.row(j), embeddings.row_mut(id));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn toy(window: usize, de: usize, d: usize, seed: u64) -> EncoderParams {
        let vocab = Vocab::build(["a", "b", "c", "d"]);
        let mut r = rng::seeded(seed);
        let mut p = EncoderParams::init(
            vocab,
            &EncoderConfig {
                embed_dim: de,
                hidden_dim: d,
                window,
            },
            &mut r,
        )
        .unwrap();
        p.bc = (0..d).map(|i| 0.1 * i as f64 - 0.2).collect();
        p
    }

    #[test]
    fn vocab_reserves_pad_and_unk() {
        let v = Vocab::build(["x", "y", "x"]);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "x", "y"]);
        assert_eq!(v.id("zzz"), UNK);
        let round = Vocab::parse(&v.to_text()).unwrap();
        assert_eq!(round, v);
        assert_eq!(round.hash(), v.hash());
        assert!(Vocab::parse("x\ny\n").is_err());
        assert!(Vocab::parse("<pad>\n<unk>\nx\nx\n").is_err());
    }

    #[test]
    fn zero_embeddings_give_zero_encoding() {
        let mut p = toy(1, 3, 4, 1);
        p.embeddings.fill(0.0);
        p.bc.fill(0.0);
        let e = p.encode(&["a", "b", "q"]).unwrap();
        assert!(e.hidden.as_slice().iter().all(|&v| v == 0.0));
        assert!(e.pooled.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case() {
        let vocab = Vocab::build(["a"]);
        let p = EncoderParams {
            vocab,
            window: 0,
            embeddings: Matrix::from_vec(3, 1, vec![0.0, 0.0, 0.7]).unwrap(),
            wc: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            bc: vec![0.0],
        };
        let e = p.encode(&["a"]).unwrap();
        assert_eq!(e.hidden.as_slice(), &[0.7f64.tanh()]);
        assert_eq!(e.pooled, vec![0.7f64.tanh()]);
    }

    #[test]
    fn pooled_is_column_mean() {
        let p = toy(1, 3, 5, 2);
        let e = p.encode(&["a", "b", "c", "d", "a"]).unwrap();
        for c in 0..5 {
            let mean: f64 = (0..5).map(|r| e.hidden.get(r, c)).sum::<f64>() / 5.0;
            assert!((mean - e.pooled[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = toy(1, 3, 4, 3);
        let b = p.encode_backward(&["a", "b"], None, None).unwrap();
        assert_eq!(b.grads.wc.max_abs(), 0.0);
        assert_eq!(b.grads.embeddings.max_abs(), 0.0);
        assert_eq!(b.inputs.max_abs(), 0.0);
        assert!(b.grads.bc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pad_row_gradient_is_zero() {
        let p = toy(2, 3, 4, 4);
        let dp = vec![1.0, -2.0, 0.5, 0.3];
        let b = p.encode_backward(&["<pad>", "a", "<pad>"], None, Some(&dp)).unwrap();
        assert!(b.grads.embeddings.row(PAD).iter().all(|&v| v == 0.0));
        assert!(b.grads.embeddings.row(2).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn window_zero_pooling_is_permutation_invariant() {
        let p = toy(0, 3, 4, 5);
        let a = p.encode(&["a", "b", "c"]).unwrap().pooled;
        let b = p.encode(&["c", "a", "b"]).unwrap().pooled;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        let p = toy(1, 3, 4, 5);
        let a = p.encode(&["a", "b", "c"]).unwrap();
        let b = p.encode(&["c", "a", "b"]).unwrap();
        assert_ne!(a.hidden, b.hidden);
    }

    #[test]
    fn shape_errors() {
        let mut p = toy(1, 3, 4, 6);
        assert!(p.encode::<&str>(&[]).is_err());
        let bad = Matrix::zeros(3, 4);
        assert!(matches!(
            p.encode_backward(&["a"], Some(&bad), None),
            Err(Error::Shape(_))
        ));
        p.bc.pop();
        assert!(matches!(p.encode(&["a"]), Err(Error::Shape(_))));
    }
}
