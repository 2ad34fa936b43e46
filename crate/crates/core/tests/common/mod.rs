//! Oracles shared by the integration tests: central finite differences,
//! brute-force CRF enumeration, brute-force LCS and span labelling.
#![allow(dead_code)]

use dsreg::classifier::{
    batch_loss, evaluate_loss, ClassifierModel, Head, HeadParams, Instance, LossWeights, Readout, ReadoutKind, Target,
};
use dsreg::crf::{crf_nll, Chain};
use dsreg::encoder::{EncoderConfig, EncoderParams, Vocab};
use dsreg::metrics::{rouge_l, Rouge};
use dsreg::mining::LabelTriple;
use dsreg::rng::{self, Rng};
use dsreg::saliency::{log_prob_embedded, saliency_gradient};
use dsreg::span_qa::{SpanCandidate, SpanGroup, SpanMiningConfig};
use dsreg::tensor::{log_sum_exp, Matrix};
use rand::Rng as _;

pub const STEP: f64 = 1e-5;

/// `|a - n| / max(|a| + |n|, 1e-6)`: relative error with an absolute floor
/// for near-zero gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Central difference of `f` in the coordinate selected by `at`.
pub fn central<M: Clone>(base: &M, at: impl Fn(&mut M) -> &mut f64, f: impl Fn(&M) -> f64) -> f64 {
    let mut m = base.clone();
    *at(&mut m) += STEP;
    let up = f(&m);
    *at(&mut m) -= 2.0 * STEP;
    let down = f(&m);
    (up - down) / (2.0 * STEP)
}

pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::uniform(rows, cols, 1.0, rng)
}

pub fn random_chain(k: usize, rng: &mut Rng) -> Chain {
    let mut c = Chain::unconstrained(k);
    c.trans = uniform_matrix(k, k, rng);
    c.start = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.stop = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c
}

/// Every label path of length `n` over `k` labels, lexicographic order.
pub fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn brute_score(phi: &Matrix, chain: &Chain, path: &[usize]) -> f64 {
    let mut s = chain.start[path[0]] + chain.stop[path[path.len() - 1]];
    for (i, &j) in path.iter().enumerate() {
        s += phi.get(i, j);
        if i > 0 {
            s += chain.trans.get(path[i - 1], j);
        }
    }
    s
}

pub fn brute_log_partition(phi: &Matrix, chain: &Chain) -> f64 {
    let scores: Vec<f64> = all_paths(phi.rows(), phi.cols())
        .iter()
        .map(|p| brute_score(phi, chain, p))
        .collect();
    log_sum_exp(&scores)
}

/// Highest-scoring paths (within 1e-12 of the best), lexicographic order.
pub fn brute_best_paths(phi: &Matrix, chain: &Chain) -> (f64, Vec<Vec<usize>>) {
    let paths = all_paths(phi.rows(), phi.cols());
    let best = paths
        .iter()
        .map(|p| brute_score(phi, chain, p))
        .fold(f64::NEG_INFINITY, f64::max);
    let arg = paths
        .into_iter()
        .filter(|p| brute_score(phi, chain, p) >= best - 1e-12)
        .collect();
    (best, arg)
}

/// The optimum chosen by lowest-index backtracking: smallest last label,
/// then smallest predecessor, and so on.
pub fn brute_viterbi(phi: &Matrix, chain: &Chain) -> Vec<usize> {
    let (_, best) = brute_best_paths(phi, chain);
    best.into_iter()
        .min_by(|a, b| a.iter().rev().cmp(b.iter().rev()))
        .expect("at least one path")
}

/// Scores drawn from {-1, 0, 1}, so that equal path scores are common.
pub fn integer_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1i32..=1) as f64).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Max relative error of `crf_nll` gradients over `configs` random chains.
pub fn crf_gradcheck(configs: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let n = rng.gen_range(1..=5);
        let k = rng.gen_range(1..=4);
        let phi = uniform_matrix(n, k, &mut rng);
        let chain = random_chain(k, &mut rng);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let g = crf_nll(&phi, &chain, &gold).unwrap();
        let base = (phi, chain);
        let loss = |m: &(Matrix, Chain)| crf_nll(&m.0, &m.1, &gold).unwrap().loss;
        for idx in 0..n * k {
            let num = central(&base, |m| &mut m.0.as_mut_slice()[idx], loss);
            worst = worst.max(rel_err(g.d_phi.as_slice()[idx], num));
        }
        for idx in 0..k * k {
            let num = central(&base, |m| &mut m.1.trans.as_mut_slice()[idx], loss);
            worst = worst.max(rel_err(g.d_trans.as_slice()[idx], num));
        }
        for j in 0..k {
            let num = central(&base, |m| &mut m.1.start[j], loss);
            worst = worst.max(rel_err(g.d_start[j], num));
            let num = central(&base, |m| &mut m.1.stop[j], loss);
            worst = worst.max(rel_err(g.d_stop[j], num));
        }
    }
    worst
}

pub fn small_vocab(size: usize) -> Vocab {
    let words: Vec<String> = (0..size).map(|i| format!("w{i}")).collect();
    Vocab::build(words.iter().map(String::as_str))
}

fn random_tokens(n: usize, vocab_words: usize, rng: &mut Rng) -> Vec<String> {
    (0..n).map(|_| format!("w{}", rng.gen_range(0..vocab_words))).collect()
}

fn random_config(rng: &mut Rng) -> EncoderConfig {
    EncoderConfig {
        embed_dim: rng.gen_range(1..=4),
        hidden_dim: rng.gen_range(1..=4),
        window: rng.gen_range(0..=2),
    }
}

fn random_triple(rng: &mut Rng) -> LabelTriple {
    [LabelTriple::POS, LabelTriple::HARD_NEG, LabelTriple::EASY_NEG][rng.gen_range(0..3)]
}

fn random_weights(rng: &mut Rng) -> LossWeights {
    match rng.gen_range(0..4) {
        0 => LossWeights::L1_ONLY,
        1 => LossWeights::default(),
        _ => {
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..1.0 - a);
            LossWeights::new(a, b, 1.0 - a - b).unwrap()
        }
    }
}

/// Non-zero head biases so every head has a generic gradient.
fn perturb_heads(heads: &mut HeadParams, rng: &mut Rng) {
    for h in Head::ALL {
        heads
            .head_mut(h)
            .b
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
}

/// Max relative error of `batch_loss` over `configs` random models and
/// batches, pooled and span read-outs alike.
pub fn batch_loss_gradcheck(configs: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for c in 0..configs {
        let readout = if c % 2 == 0 {
            ReadoutKind::Pool
        } else {
            ReadoutKind::Span
        };
        let mut model = ClassifierModel::init(small_vocab(5), &random_config(&mut rng), readout, &mut rng).unwrap();
        perturb_heads(&mut model.heads, &mut rng);
        let w = random_weights(&mut rng);
        let batch: Vec<Instance> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let n = rng.gen_range(1..=5);
                let ids = model.encoder.ids(&random_tokens(n, 6, &mut rng));
                let targets = (0..rng.gen_range(1..=2))
                    .map(|_| {
                        let readout = match readout {
                            ReadoutKind::Pool => Readout::Pool,
                            ReadoutKind::Span => {
                                let s = rng.gen_range(0..n);
                                let e = rng.gen_range(s + 1..=n);
                                Readout::Span { start: s, end: e }
                            }
                        };
                        Target {
                            readout,
                            labels: random_triple(&mut rng),
                        }
                    })
                    .collect();
                Instance { ids, targets }
            })
            .collect();
        let (_, g) = batch_loss(&model, &batch, &w).unwrap();
        let loss = |m: &ClassifierModel| evaluate_loss(m, &batch, &w).unwrap().total;
        let mut check = |at: fn(&mut ClassifierModel) -> &mut [f64], analytic: &[f64], skip: usize| {
            for (i, &a) in analytic.iter().enumerate().skip(skip) {
                let num = central(&model, |m| &mut at(m)[i], loss);
                worst = worst.max(rel_err(a, num));
            }
        };
        // The PAD row is pinned at zero and skipped.
        let de = model.encoder.embed_dim();
        check(
            |m| m.encoder.embeddings.as_mut_slice(),
            g.encoder.embeddings.as_slice(),
            de,
        );
        check(|m| m.encoder.wc.as_mut_slice(), g.encoder.wc.as_slice(), 0);
        check(|m| &mut m.encoder.bc, &g.encoder.bc, 0);
        check(|m| m.heads.y.w.as_mut_slice(), g.heads.y.w.as_slice(), 0);
        check(|m| &mut m.heads.y.b, &g.heads.y.b, 0);
        check(|m| m.heads.z.w.as_mut_slice(), g.heads.z.w.as_slice(), 0);
        check(|m| &mut m.heads.z.b, &g.heads.z.b, 0);
        check(|m| m.heads.l.w.as_mut_slice(), g.heads.l.w.as_slice(), 0);
        check(|m| &mut m.heads.l.b, &g.heads.l.b, 0);
    }
    worst
}

/// Max relative error of `encode_backward` for the scalar
/// `f = Σ dH ⊙ H + dpool · pool` with random upstream gradients.
pub fn encoder_gradcheck(configs: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let cfg = random_config(&mut rng);
        let mut enc = EncoderParams::init(small_vocab(5), &cfg, &mut rng).unwrap();
        enc.bc.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let n = rng.gen_range(1..=6);
        let tokens = random_tokens(n, 6, &mut rng);
        let dh = uniform_matrix(n, cfg.hidden_dim, &mut rng);
        let dp: Vec<f64> = (0..cfg.hidden_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let use_h = rng.gen_bool(0.7);
        let use_p = !use_h || rng.gen_bool(0.5);
        let back = enc
            .encode_backward(&tokens, use_h.then_some(&dh), use_p.then_some(&dp[..]))
            .unwrap();
        let score = |out: dsreg::encoder::Encoding| {
            let mut f = 0.0;
            if use_h {
                f += out
                    .hidden
                    .as_slice()
                    .iter()
                    .zip(dh.as_slice())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            if use_p {
                f += out.pooled.iter().zip(&dp).map(|(a, b)| a * b).sum::<f64>();
            }
            f
        };
        let objective = |e: &EncoderParams| score(e.encode(&tokens).unwrap());
        let de = cfg.embed_dim;
        for i in de..enc.embeddings.as_slice().len() {
            let num = central(&enc, |e| &mut e.embeddings.as_mut_slice()[i], objective);
            worst = worst.max(rel_err(back.grads.embeddings.as_slice()[i], num));
        }
        for i in 0..enc.wc.as_slice().len() {
            let num = central(&enc, |e| &mut e.wc.as_mut_slice()[i], objective);
            worst = worst.max(rel_err(back.grads.wc.as_slice()[i], num));
        }
        for i in 0..enc.bc.len() {
            let num = central(&enc, |e| &mut e.bc[i], objective);
            worst = worst.max(rel_err(back.grads.bc[i], num));
        }
        let inputs = enc.gather(&enc.ids(&tokens));
        for i in 0..inputs.as_slice().len() {
            let num = central(&inputs, |x| &mut x.as_mut_slice()[i], |x| score(enc.encode_embedded(x)));
            worst = worst.max(rel_err(back.inputs.as_slice()[i], num));
        }
    }
    worst
}

/// Max relative error of the saliency gradient `∂ log p(c|x) / ∂ e_i`.
pub fn saliency_gradcheck(configs: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let mut model =
            ClassifierModel::init(small_vocab(5), &random_config(&mut rng), ReadoutKind::Pool, &mut rng).unwrap();
        perturb_heads(&mut model.heads, &mut rng);
        let head = Head::ALL[rng.gen_range(0..3)];
        let class = rng.gen_range(0..head.num_classes());
        let n = rng.gen_range(1..=6);
        let tokens = random_tokens(n, 6, &mut rng);
        let inputs = model.encoder.gather(&model.encoder.ids(&tokens));
        let g = saliency_gradient(&model, &inputs, head, class).unwrap();
        for i in 0..inputs.as_slice().len() {
            let num = central(
                &inputs,
                |x| &mut x.as_mut_slice()[i],
                |x| log_prob_embedded(&model, x, head, class).unwrap(),
            );
            worst = worst.max(rel_err(g.as_slice()[i], num));
        }
    }
    worst
}

/// LCS length by enumerating every subsequence of the shorter side.
pub fn brute_lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&T> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| &short[i])
            .collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = long.iter();
        if sub.iter().all(|x| it.any(|y| y == *x)) {
            best = sub.len();
        }
    }
    best
}

fn brute_rouge(cand: &[&str], reference: &[&str]) -> Rouge {
    let lcs = brute_lcs(cand, reference);
    if lcs == 0 {
        return Rouge::default();
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    Rouge {
        precision: p,
        recall: r,
        f: 2.0 * p * r / (p + r),
    }
}

/// Independent recomputation of span labelling: scores every span with a
/// brute-force ROUGE-L, takes the first maximum as gold, keeps spans strictly
/// above `alpha · gold` as hard negatives, and draws easy negatives with the
/// same sampler call on the remaining spans.
pub fn brute_label_spans(
    passage: &[&str],
    answer: &[&str],
    cfg: &SpanMiningConfig,
    rng: &mut Rng,
) -> Vec<SpanCandidate> {
    let mut spans = Vec::new();
    for s in 0..passage.len() {
        for e in s + 1..=passage.len() {
            if e - s <= cfg.max_len {
                spans.push((s, e, brute_rouge(&passage[s..e], answer).f));
            }
        }
    }
    let best = spans.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
    let gold = spans.iter().position(|x| x.2 == best).unwrap();
    let cand = |i: usize, group| SpanCandidate {
        start: spans[i].0,
        end: spans[i].1,
        rouge: spans[i].2,
        group,
    };
    let mut out = vec![cand(gold, SpanGroup::Gold)];
    let mut rest = Vec::new();
    #[allow(clippy::needless_range_loop)]
    for i in 0..spans.len() {
        if i == gold {
            continue;
        }
        if spans[i].2 > cfg.alpha * best {
            out.push(cand(i, SpanGroup::HardNeg));
        } else {
            rest.push(i);
        }
    }
    let k = cfg.easy_neg_ratio.min(rest.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, rest.len(), k)
        .into_iter()
        .map(|j| rest[j])
        .collect();
    picked.sort_unstable();
    out.extend(picked.into_iter().map(|i| cand(i, SpanGroup::EasyNeg)));
    out
}

/// Sanity helper for the metric oracle.
pub fn rouge_matches_brute(a: &[&str], b: &[&str]) -> bool {
    rouge_l(a, b) == brute_rouge(a, b)
}
