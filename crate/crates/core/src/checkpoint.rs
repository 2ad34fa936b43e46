//! JSON model checkpoints.
//!
//! A checkpoint holds one part per encoder (two for the pipelined baseline).
//! Each part stores its vocabulary with a SHA-256 digest and every tensor with
//! explicit dimensions, so loading can reject mismatched files early.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierModel, Decision, Dense, HeadParams, PipelinedModel, ReadoutKind};
use crate::crf::{Chain, CrfHead, LabelScheme, TaggerModel};
use crate::encoder::{EncoderConfig, EncoderParams, Vocab};
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const FORMAT: &str = "dsreg-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn matrix(m: &Matrix) -> Self {
        Tensor {
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    fn vector(v: &[f64]) -> Self {
        Tensor {
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Classifier,
    SpanSelector,
    Pipelined,
    Tagger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub vocab: Vec<String>,
    pub vocab_hash: String,
    pub encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_labels: Option<LabelScheme>,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_max_len: Option<usize>,
    pub parts: Vec<Part>,
}

/// Any trained model the harness can persist.
#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel {
    Classifier { model: ClassifierModel, decision: Decision },
    SpanSelector { model: ClassifierModel, max_len: usize },
    Pipelined(PipelinedModel),
    Tagger(TaggerModel),
}

fn encoder_part(enc: &EncoderParams) -> Part {
    let mut tensors = BTreeMap::new();
    tensors.insert("encoder.embeddings".into(), Tensor::matrix(&enc.embeddings));
    tensors.insert("encoder.wc".into(), Tensor::matrix(&enc.wc));
    tensors.insert("encoder.bc".into(), Tensor::vector(&enc.bc));
    Part {
        vocab: enc.vocab.tokens().to_vec(),
        vocab_hash: enc.vocab.hash(),
        encoder: enc.config(),
        y_labels: None,
        tensors,
    }
}

fn classifier_part(m: &ClassifierModel) -> Part {
    let mut p = encoder_part(&m.encoder);
    for (name, d) in [("y", &m.heads.y), ("z", &m.heads.z), ("l", &m.heads.l)] {
        p.tensors.insert(format!("head.{name}.w"), Tensor::matrix(&d.w));
        p.tensors.insert(format!("head.{name}.b"), Tensor::vector(&d.b));
    }
    p
}

fn tagger_part(m: &TaggerModel) -> Part {
    let mut p = encoder_part(&m.encoder);
    p.y_labels = Some(m.y.scheme.clone());
    for (name, h) in [("y", &m.y), ("z", &m.z), ("l", &m.l)] {
        p.tensors.insert(format!("crf.{name}.we"), Tensor::matrix(&h.we));
        p.tensors
            .insert(format!("crf.{name}.trans"), Tensor::matrix(&h.chain.trans));
        p.tensors
            .insert(format!("crf.{name}.start"), Tensor::vector(&h.chain.start));
        p.tensors
            .insert(format!("crf.{name}.stop"), Tensor::vector(&h.chain.stop));
    }
    p
}

impl Checkpoint {
    pub fn from_model(model: &SavedModel) -> Self {
        let (kind, decision, span_max_len, parts) = match model {
            SavedModel::Classifier { model, decision } => (
                ModelKind::Classifier,
                Some(*decision),
                None,
                vec![classifier_part(model)],
            ),
            SavedModel::SpanSelector { model, max_len } => (
                ModelKind::SpanSelector,
                None,
                Some(*max_len),
                vec![classifier_part(model)],
            ),
            SavedModel::Pipelined(p) => (
                ModelKind::Pipelined,
                None,
                None,
                vec![classifier_part(&p.stage1), classifier_part(&p.stage2)],
            ),
            SavedModel::Tagger(t) => (ModelKind::Tagger, None, None, vec![tagger_part(t)]),
        };
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            decision,
            span_max_len,
            parts,
        }
    }

    pub fn into_model(self) -> Result<SavedModel> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {:?} version {}",
                self.format, self.version
            )));
        }
        let expect_parts = if self.kind == ModelKind::Pipelined { 2 } else { 1 };
        if self.parts.len() != expect_parts {
            return Err(Error::Config(format!(
                "{:?} checkpoint needs {expect_parts} part(s), found {}",
                self.kind,
                self.parts.len()
            )));
        }
        let mut parts = self.parts.into_iter();
        let mut next = || parts.next().expect("count checked");
        Ok(match self.kind {
            ModelKind::Classifier => SavedModel::Classifier {
                model: load_classifier(next(), ReadoutKind::Pool)?,
                decision: self.decision.unwrap_or(Decision::Target),
            },
            ModelKind::SpanSelector => SavedModel::SpanSelector {
                model: load_classifier(next(), ReadoutKind::Span)?,
                max_len: self
                    .span_max_len
                    .ok_or_else(|| Error::Config("span checkpoint without span_max_len".into()))?,
            },
            ModelKind::Pipelined => {
                let stage1 = load_classifier(next(), ReadoutKind::Pool)?;
                let stage2 = load_classifier(next(), ReadoutKind::Pool)?;
                SavedModel::Pipelined(PipelinedModel { stage1, stage2 })
            }
            ModelKind::Tagger => SavedModel::Tagger(load_tagger(next())?),
        })
    }
}

struct Tensors(BTreeMap<String, Tensor>);

impl Tensors {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.0
            .remove(name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {name:?}")))
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let t = self.take(name)?;
        match t.dims[..] {
            [r, c] => Matrix::from_vec(r, c, t.data),
            _ => Err(Error::Shape(format!("tensor {name:?} is not a matrix"))),
        }
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f64>> {
        let t = self.take(name)?;
        match t.dims[..] {
            [n] if n == t.data.len() => Ok(t.data),
            _ => Err(Error::Shape(format!(
                "tensor {name:?} is not a vector of its stated length"
            ))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            Some(k) => Err(Error::Config(format!("unexpected tensor {k:?} in checkpoint"))),
            None => Ok(()),
        }
    }
}

fn load_encoder(part: &Part, t: &mut Tensors) -> Result<EncoderParams> {
    let vocab = Vocab::from_tokens(part.vocab.clone())?;
    if vocab.hash() != part.vocab_hash {
        return Err(Error::Config("vocabulary hash mismatch".into()));
    }
    let enc = EncoderParams {
        vocab,
        window: part.encoder.window,
        embeddings: t.matrix("encoder.embeddings")?,
        wc: t.matrix("encoder.wc")?,
        bc: t.vector("encoder.bc")?,
    };
    if enc.config() != part.encoder {
        return Err(Error::Shape("encoder tensors disagree with the stored config".into()));
    }
    enc.validate()?;
    Ok(enc)
}

fn load_classifier(part: Part, readout: ReadoutKind) -> Result<ClassifierModel> {
    let mut t = Tensors(part.tensors.clone());
    let encoder = load_encoder(&part, &mut t)?;
    let mut dense = |name: &str| -> Result<Dense> {
        Ok(Dense {
            w: t.matrix(&format!("head.{name}.w"))?,
            b: t.vector(&format!("head.{name}.b"))?,
        })
    };
    let heads = HeadParams {
        y: dense("y")?,
        z: dense("z")?,
        l: dense("l")?,
    };
    t.finish()?;
    let m = ClassifierModel {
        encoder,
        heads,
        readout,
    };
    m.validate()?;
    Ok(m)
}

fn load_tagger(part: Part) -> Result<TaggerModel> {
    let mut t = Tensors(part.tensors.clone());
    let encoder = load_encoder(&part, &mut t)?;
    let y_scheme = part
        .y_labels
        .clone()
        .ok_or_else(|| Error::Config("tagger checkpoint without y labels".into()))?;
    let mut head = |name: &str, scheme: LabelScheme| -> Result<CrfHead> {
        let mut chain = Chain::for_scheme(&scheme);
        chain.trans = t.matrix(&format!("crf.{name}.trans"))?;
        chain.start = t.vector(&format!("crf.{name}.start"))?;
        chain.stop = t.vector(&format!("crf.{name}.stop"))?;
        Ok(CrfHead {
            we: t.matrix(&format!("crf.{name}.we"))?,
            scheme,
            chain,
        })
    };
    let y = head("y", y_scheme)?;
    let z = head("z", LabelScheme::z())?;
    let l = head("l", LabelScheme::l())?;
    t.finish()?;
    let m = TaggerModel { encoder, y, z, l };
    m.validate()?;
    Ok(m)
}

/// Writes `contents` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save(model: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_model(model)).expect("checkpoint serializes");
    write_atomic(path, json.as_bytes())
}

pub fn load(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    ck.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 3,
            hidden_dim: 4,
            window: 1,
        }
    }

    #[test]
    fn classifier_round_trip() {
        let vocab = Vocab::build(["a", "b"]);
        let m = ClassifierModel::init(vocab, &small_cfg(), ReadoutKind::Pool, &mut rng::seeded(9)).unwrap();
        let saved = SavedModel::Classifier {
            model: m,
            decision: Decision::ThreeWay,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save(&saved, &path).unwrap();
        assert_eq!(load(&path).unwrap(), saved);
    }

    #[test]
    fn tagger_round_trip() {
        let vocab = Vocab::build(["a", "b"]);
        let scheme = LabelScheme::bio(&["X", "Y"]).unwrap();
        let m = TaggerModel::init(vocab, &small_cfg(), scheme, &mut rng::seeded(4)).unwrap();
        let ck = Checkpoint::from_model(&SavedModel::Tagger(m.clone()));
        assert_eq!(ck.into_model().unwrap(), SavedModel::Tagger(m));
    }

    #[test]
    fn tampering_is_rejected() {
        let vocab = Vocab::build(["a"]);
        let m = ClassifierModel::init(vocab, &small_cfg(), ReadoutKind::Pool, &mut rng::seeded(1)).unwrap();
        let base = Checkpoint::from_model(&SavedModel::Classifier {
            model: m,
            decision: Decision::Target,
        });

        let mut ck = base.clone();
        ck.parts[0].vocab_hash = "00".into();
        assert!(ck.into_model().is_err());

        let mut ck = base.clone();
        ck.parts[0].tensors.get_mut("head.y.w").unwrap().dims = vec![4, 2];
        assert!(ck.into_model().is_err());

        let mut ck = base.clone();
        ck.parts[0].tensors.remove("encoder.bc");
        assert!(ck.into_model().is_err());

        let mut ck = base;
        ck.version = 2;
        assert!(ck.into_model().is_err());
    }
}
