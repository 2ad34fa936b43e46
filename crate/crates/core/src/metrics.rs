//! Accuracy, token-level P/R/F, ROUGE-L and sentence BLEU.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Shape("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PrfReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        PrfReport {
            precision,
            recall,
            f1: f1(precision, recall),
            tp,
            fp,
            fn_,
        }
    }

    pub fn merge(&self, other: &PrfReport) -> PrfReport {
        Self::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Binary P/R/F with class 1 as positive.
pub fn binary_prf(preds: &[u8], golds: &[u8]) -> Result<PrfReport> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == 1, g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(PrfReport::from_counts(tp, fp, fn_))
}

/// Word-level P/R/F over aligned tag sequences. Non-`O` tokens are
/// positives; a true positive needs the exact tag.
pub fn token_prf<S: AsRef<str>>(pred: &[S], gold: &[S]) -> Result<PrfReport> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted tags for {} gold tags",
            pred.len(),
            gold.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (p.as_ref(), g.as_ref());
        let (pp, gp) = (p != "O", g != "O");
        if pp && gp && p == g {
            tp += 1;
        } else {
            fp += usize::from(pp);
            fn_ += usize::from(gp);
        }
    }
    Ok(PrfReport::from_counts(tp, fp, fn_))
}

/// Longest-common-subsequence length by the O(|a|·|b|) table, two rows.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rouge {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// ROUGE-L with the balanced F (β = 1). Empty inputs score zero.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Rouge {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return Rouge::default();
    }
    let precision = lcs as f64 / candidate.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    Rouge {
        precision,
        recall,
        f: f1(precision, recall),
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the candidate n-gram total.
pub fn modified_precision<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Sentence BLEU up to `max_n`-grams with uniform weights. Orders `n >= 2`
/// use add-one smoothing; unigram precision is unsmoothed.
pub fn bleu<T: AsRef<str>>(candidate: &[T], reference: &[T], max_n: usize) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Shape("BLEU of an empty candidate".into()));
    }
    if max_n == 0 {
        return Err(Error::Config("BLEU order must be >= 1".into()));
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, total) = modified_precision(candidate, reference, n);
        let p = if n == 1 {
            if m == 0 {
                return Ok(0.0);
            }
            m as f64 / total as f64
        } else {
            (m + 1) as f64 / (total + 1) as f64
        };
        log_sum += p.ln();
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = (1.0 - r / c).min(0.0).exp();
    Ok(bp * (log_sum / max_n as f64).exp())
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 1, 0, 0], &[1, 1, 0, 1]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 0]).is_err());
        assert!(accuracy::<u8>(&[], &[]).is_err());
    }

    #[test]
    fn token_prf_cases() {
        let gold = ["B-FSI", "I-FSI", "O", "B-unit"];
        let r = token_prf(&gold, &gold).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = token_prf(&["O"; 4], &gold).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.fn_), (0.0, 0.0, 0.0, 3));
        // tp: B-FSI, I-FSI; fp: O→B-unit at 2; fn: B-unit at 3 predicted O.
        let pred = ["B-FSI", "I-FSI", "B-unit", "O"];
        let r = token_prf(&pred, &gold).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 1, 1));
        assert_eq!(r.precision, 2.0 / 3.0);
        assert_eq!(r.recall, 2.0 / 3.0);
        assert_eq!(r.f1, 2.0 / 3.0);
        assert!(token_prf(&["O"], &["O", "O"]).is_err());
    }

    #[test]
    fn wrong_category_counts_twice() {
        let r = token_prf(&["B-unit"], &["B-FSI"]).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
    }

    #[test]
    fn rouge_cases() {
        let a = toks("the cat sat on the mat");
        assert_eq!(
            rouge_l(&a, &a),
            Rouge {
                precision: 1.0,
                recall: 1.0,
                f: 1.0
            }
        );
        assert_eq!(rouge_l(&toks("a b"), &toks("c d")), Rouge::default());
        let b = toks("the cat lay on the mat");
        assert_eq!(lcs_len(&a, &b), 5);
        let r = rouge_l(&a, &b);
        assert_eq!((r.precision, r.recall), (5.0 / 6.0, 5.0 / 6.0));
        assert!((r.f - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn bleu_cases() {
        let a = toks("the cat sat on the mat");
        assert_eq!(bleu(&a, &a, 1).unwrap(), 1.0);
        assert!((bleu(&a, &a, 4).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&toks("x y"), &toks("a b"), 1).unwrap(), 0.0);
        assert_eq!(bleu(&toks("x y"), &toks("a b"), 4).unwrap(), 0.0);
        let v = bleu(&toks("a b c"), &toks("a b d"), 1).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert!(bleu::<&str>(&[], &["a"], 1).is_err());
    }

    #[test]
    fn brevity_penalty_applies_to_short_candidates() {
        // Candidate "a" against "a b": precision 1, BP = e^{1-2}.
        let v = bleu(&["a"], &["a", "b"], 1).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        // Longer candidates are not penalised beyond precision.
        let v = bleu(&["a", "b", "c"], &["a"], 1).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bleu4_smoothing_by_hand() {
        // "a b c" vs "a b d": p1 = 2/3, p2 = (1+1)/(2+1), p3 = (0+1)/(1+1), p4 = (0+1)/(0+1).
        let v = bleu(&toks("a b c"), &toks("a b d"), 4).unwrap();
        let expect = (2.0f64 / 3.0 * 2.0 / 3.0 * 0.5 * 1.0).powf(0.25);
        assert!((v - expect).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        assert_eq!(modified_precision(&toks("the the the"), &toks("the cat"), 1), (1, 3));
    }

    #[test]
    fn mean_sd_values() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_sd(&[4.0]), (4.0, 0.0));
    }
}
