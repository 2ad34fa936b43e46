//! First-derivative saliency of a trained classifier.
//!
//! For a head and class `c`, `S = log p(c|x)`; each token's score is the mean
//! absolute gradient of `S` with respect to that token's embedding input.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierModel, Head, ReadoutKind};
use crate::encoder::EncoderGrads;
use crate::tensor::{softmax, Matrix};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    pub head: Head,
    pub class: usize,
}

impl SaliencyMap {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.scores.len() {
            return Err(Error::Shape("one score per token required".into()));
        }
        if self.scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Numeric("saliency scores must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Position of the highest score, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        (!self.scores.is_empty()).then(|| crate::tensor::argmax(&self.scores))
    }
}

fn check(model: &ClassifierModel, head: Head, class: usize) -> Result<()> {
    if model.readout != ReadoutKind::Pool {
        return Err(Error::Config("saliency needs a pooled text classifier".into()));
    }
    if class >= head.num_classes() {
        return Err(Error::Label(format!(
            "class {class} out of range for head {head:?} with {} classes",
            head.num_classes()
        )));
    }
    Ok(())
}

/// `log p(c|x)` as a function of explicit per-position embeddings.
pub fn log_prob_embedded(model: &ClassifierModel, inputs: &Matrix, head: Head, class: usize) -> Result<f64> {
    check(model, head, class)?;
    let enc = model.encoder.encode_embedded(inputs);
    Ok(softmax(&model.heads.head(head).logits(&enc.pooled))[class].ln())
}

/// `∂ log p(c|x) / ∂ e_i` for every position (`n × d_e`).
pub fn saliency_gradient(model: &ClassifierModel, inputs: &Matrix, head: Head, class: usize) -> Result<Matrix> {
    check(model, head, class)?;
    if inputs.rows() == 0 {
        return Err(Error::Shape("cannot probe an empty token sequence".into()));
    }
    let enc = model.encoder.encode_embedded(inputs);
    let dense = model.heads.head(head);
    let mut dlogit = softmax(&dense.logits(&enc.pooled));
    dlogit.iter_mut().for_each(|p| *p = -*p);
    dlogit[class] += 1.0;
    let mut d_pooled = vec![0.0; enc.pooled.len()];
    dense.w.t_matvec_add(&dlogit, &mut d_pooled);
    let mut scratch = EncoderGrads::zeros_like(&model.encoder);
    Ok(model
        .encoder
        .backward_embedded(inputs, &enc, None, Some(&d_pooled), &mut scratch))
}

pub fn saliency<S: AsRef<str>>(model: &ClassifierModel, tokens: &[S], head: Head, class: usize) -> Result<SaliencyMap> {
    model.validate()?;
    let inputs = model.encoder.gather(&model.encoder.ids(tokens));
    let grad = saliency_gradient(model, &inputs, head, class)?;
    let de = grad.cols() as f64;
    let scores = (0..grad.rows())
        .map(|i| grad.row(i).iter().map(|v| v.abs()).sum::<f64>() / de)
        .collect();
    let map = SaliencyMap {
        tokens: tokens.iter().map(|t| t.as_ref().to_owned()).collect(),
        scores,
        head,
        class,
    };
    map.validate()?;
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    Text,
    Html,
}

impl std::str::FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(HeatmapFormat::Text),
            "html" => Ok(HeatmapFormat::Html),
            _ => Err(Error::Config(format!("unknown heatmap format {s:?}"))),
        }
    }
}

/// Scores divided by the maximum; all zeros when the maximum is zero.
pub fn normalized(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        scores.iter().map(|s| s / max).collect()
    } else {
        vec![0.0; scores.len()]
    }
}

/// Intensity bucket 0..=9 for a normalised score.
pub fn bucket(norm: f64) -> usize {
    ((norm * 10.0).floor() as usize).min(9)
}

fn head_name(h: Head) -> &'static str {
    match h {
        Head::Y => "y",
        Head::Z => "z",
        Head::L => "l",
    }
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

pub fn render_heatmap(map: &SaliencyMap, format: HeatmapFormat) -> String {
    let norm = normalized(&map.scores);
    let mut out = String::new();
    match format {
        HeatmapFormat::Text => {
            let width = map.tokens.iter().map(|t| t.chars().count()).max().unwrap_or(0);
            let _ = writeln!(out, "head {} class {}", head_name(map.head), map.class);
            for ((tok, s), n) in map.tokens.iter().zip(&map.scores).zip(&norm) {
                let b = bucket(*n);
                let _ = writeln!(out, "{tok:<width$}  {b} |{:<9}| {s:.6}", "#".repeat(b));
            }
        }
        HeatmapFormat::Html => {
            out.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
            let _ = writeln!(
                out,
                "<title>saliency head {} class {}</title>",
                head_name(map.head),
                map.class
            );
            out.push_str("<style>span{padding:2px 3px;margin:1px;font-family:monospace}</style>\n");
            out.push_str("</head>\n<body>\n<p>\n");
            for ((tok, s), n) in map.tokens.iter().zip(&map.scores).zip(&norm) {
                let _ = writeln!(
                    out,
                    "<span style=\"background-color:rgba(220,40,40,{n:.3})\" title=\"{s:.6}\">{}</span>",
                    escape_html(tok)
                );
            }
            out.push_str("</p>\n</body>\n</html>\n");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::HeadParams;
    use crate::encoder::{EncoderConfig, Vocab};
    use crate::rng;

    fn scalar_model(e: f64, v: f64) -> ClassifierModel {
        let vocab = Vocab::build(["t"]);
        let cfg = EncoderConfig {
            embed_dim: 1,
            hidden_dim: 1,
            window: 0,
        };
        let mut m = ClassifierModel::init(vocab, &cfg, ReadoutKind::Pool, &mut rng::seeded(0)).unwrap();
        m.encoder.embeddings = Matrix::from_vec(3, 1, vec![0.0, 0.0, e]).unwrap();
        m.encoder.wc = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        m.encoder.bc = vec![0.0];
        m.heads = HeadParams::zeros(1);
        m.heads.y.w = Matrix::from_vec(2, 1, vec![0.0, v]).unwrap();
        m
    }

    #[test]
    fn hand_chain_rule() {
        let (e, v) = (0.7, -1.3);
        let m = scalar_model(e, v);
        let map = saliency(&m, &["t"], Head::Y, 1).unwrap();
        let h = e.tanh();
        let p1 = softmax(&[0.0, v * h])[1];
        let expect = (v * (1.0 - h * h) * (1.0 - p1)).abs();
        assert!((map.scores[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn unused_input_scores_zero() {
        let vocab = Vocab::build(["a", "b"]);
        let cfg = EncoderConfig {
            embed_dim: 2,
            hidden_dim: 2,
            window: 0,
        };
        let mut m = ClassifierModel::init(vocab, &cfg, ReadoutKind::Pool, &mut rng::seeded(3)).unwrap();
        m.encoder.embeddings.row_mut(3).fill(0.0);
        // With w = 0 the single block of W_c is every input; zero it to cut the input off.
        m.encoder.wc.fill(0.0);
        let map = saliency(&m, &["a", "b"], Head::Z, 0).unwrap();
        assert_eq!(map.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn class_range() {
        let m = scalar_model(0.1, 1.0);
        assert!(matches!(saliency(&m, &["t"], Head::Y, 2), Err(Error::Label(_))));
        assert!(saliency(&m, &["t"], Head::L, 2).is_ok());
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket(0.0), 0);
        assert_eq!(bucket(0.55), 5);
        assert_eq!(bucket(1.0), 9);
        assert_eq!(normalized(&[0.0, 0.0]), vec![0.0, 0.0]);
        let map = SaliencyMap {
            tokens: vec!["a".into(), "b".into()],
            scores: vec![0.0, 0.0],
            head: Head::Y,
            class: 0,
        };
        let text = render_heatmap(&map, HeatmapFormat::Text);
        assert!(text.lines().skip(1).all(|l| l.contains("  0 |")));
    }

    #[test]
    fn html_escapes_tokens() {
        let map = SaliencyMap {
            tokens: vec!["<b>".into()],
            scores: vec![1.0],
            head: Head::L,
            class: 2,
        };
        let html = render_heatmap(&map, HeatmapFormat::Html);
        assert!(html.contains("&lt;b&gt;"));
        assert!(html.contains("rgba(220,40,40,1.000)"));
    }
}
