//! Property tests over randomly drawn inputs.

use dsreg::classifier::LossWeights;
use dsreg::crf::{crf_log_partition, crf_marginals, viterbi, Chain};
use dsreg::metrics::{bleu, rouge_l};
use dsreg::rng;
use dsreg::saliency::{bucket, normalized};
use dsreg::span_qa::{enumerate_spans, label_spans, SpanGroup, SpanMiningConfig};
use dsreg::tensor::Matrix;
use proptest::prelude::*;

fn words(max: usize) -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..=max)
}

fn phi_and_k() -> impl Strategy<Value = (Matrix, Chain)> {
    (1usize..=5, 1usize..=4).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(-3.0f64..3.0, n * k),
            prop::collection::vec(-3.0f64..3.0, k * k),
        )
            .prop_map(move |(p, t)| {
                let mut chain = Chain::unconstrained(k);
                chain.trans = Matrix::from_vec(k, k, t).unwrap();
                (Matrix::from_vec(n, k, p).unwrap(), chain)
            })
    })
}

proptest! {
    #[test]
    fn weights_on_the_simplex_are_accepted(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let s = a + b + c;
        prop_assume!(s > 1e-6);
        prop_assert!(LossWeights::new(a / s, b / s, c / s).is_ok());
    }

    #[test]
    fn weights_off_the_simplex_are_rejected(a in -1.0f64..2.0, b in 0.0f64..1.0) {
        let c = 1.0 - a - b;
        prop_assume!(a < 0.0 || c < -1e-9);
        prop_assert!(LossWeights::new(a, b, c).is_err());
        prop_assert!(LossWeights::new(0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn log_partition_bounds_the_best_path((phi, chain) in phi_and_k()) {
        let z = crf_log_partition(&phi, &chain).unwrap();
        let best = chain.path_score(&phi, &viterbi(&phi, &chain).unwrap());
        let k = phi.cols() as f64;
        prop_assert!(z >= best - 1e-12);
        prop_assert!(z <= best + phi.rows() as f64 * k.ln() + 1e-12);
    }

    #[test]
    fn marginals_are_distributions((phi, chain) in phi_and_k()) {
        let m = crf_marginals(&phi, &chain).unwrap();
        for i in 0..phi.rows() {
            let s: f64 = m.unary.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
            prop_assert!(m.unary.row(i).iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        }
    }

    #[test]
    fn rouge_is_bounded_and_f_symmetric(a in words(8), b in words(8)) {
        let ab = rouge_l(&a, &b);
        let ba = rouge_l(&b, &a);
        prop_assert!((0.0..=1.0).contains(&ab.f));
        prop_assert!((ab.f - ba.f).abs() < 1e-15);
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(rouge_l(&a, &a).f, 1.0);
    }

    #[test]
    fn bleu_is_bounded(a in words(8), b in words(8), n in 1usize..=4) {
        let v = bleu(&a, &b, n).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn normalised_scores_peak_at_one(scores in prop::collection::vec(0.0f64..10.0, 1..12)) {
        let n = normalized(&scores);
        prop_assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
        if scores.iter().any(|&s| s > 0.0) {
            prop_assert!(n.contains(&1.0));
            prop_assert!(n.iter().all(|&v| bucket(v) <= 9));
        }
    }

    #[test]
    fn span_count_is_closed_form(n in 0usize..30, max_len in 1usize..8) {
        let expect: usize = (1..=max_len.min(n)).map(|l| n - l + 1).sum();
        prop_assert_eq!(enumerate_spans(n, max_len).len(), expect);
    }

    #[test]
    fn span_groups_partition_by_score(
        passage in words(10),
        answer in words(3),
        alpha in 0.05f64..0.95,
        max_len in 1usize..5,
        seed in 0u64..1000,
    ) {
        let cfg = SpanMiningConfig { alpha, max_len, easy_neg_ratio: 3 };
        let spans = label_spans(&passage, &answer, &cfg, &mut rng::seeded(seed)).unwrap();
        let gold: Vec<_> = spans.iter().filter(|s| s.group == SpanGroup::Gold).collect();
        prop_assert_eq!(gold.len(), 1);
        let g = gold[0].rouge;
        for s in &spans {
            prop_assert!(s.end > s.start && s.end - s.start <= max_len && s.end <= passage.len());
            prop_assert!(s.rouge <= g);
            match s.group {
                SpanGroup::HardNeg => prop_assert!(s.rouge > alpha * g),
                SpanGroup::EasyNeg => prop_assert!(s.rouge <= alpha * g),
                SpanGroup::Gold => {}
            }
        }
    }
}
