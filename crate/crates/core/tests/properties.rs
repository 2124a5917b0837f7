use forge_core::aligner::pair_similarity;
use forge_core::autodiff::{Graph, ParamStore, Tensor};
use forge_core::corpus::io::{example_from_json, example_to_json};
use forge_core::corpus::{generate_synthetic_corpus, SyntheticSpec};
use forge_core::evalsuite::bleu4;
use forge_core::generator::attend;
use forge_core::rl::{curriculum_schedule, RlConfig};
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "the", "born"]), 1..12)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bleu_ignores_segment_order(pairs in prop::collection::vec((sentence(), sentence()), 1..6), rot in 0usize..6) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(c, r)| (c, vec![r])).unzip();
        let k = rot % c.len();
        let (mut c2, mut r2) = (c.clone(), r.clone());
        c2.rotate_left(k);
        r2.rotate_left(k);
        let a = bleu4(&c, &r).unwrap().bleu;
        let b = bleu4(&c2, &r2).unwrap().bleu;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn identical_reference_wins(c in sentence(), r in sentence()) {
        // matches can only grow when the candidate itself is a reference
        let one = bleu4(std::slice::from_ref(&c), &[vec![r.clone()]]).unwrap();
        let two = bleu4(std::slice::from_ref(&c), &[vec![r, c.clone()]]).unwrap();
        for n in 0..4 {
            prop_assert!(two.matches[n] >= one.matches[n]);
        }
        if c.len() >= 4 {
            prop_assert!((two.bleu - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_is_sum_of_maxima(
        d in 1usize..5,
        seed in prop::collection::vec(-2.0f64..2.0, 60),
        n in 1usize..4,
        m in 1usize..5,
    ) {
        let mut it = seed.iter().cycle().copied();
        let props: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| it.next().unwrap()).collect()).collect();
        let words: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| it.next().unwrap() * 0.7).collect()).collect();
        let r = pair_similarity(&props, &words).unwrap();
        let want: f64 = words
            .iter()
            .map(|w| props.iter().map(|p| p.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).fold(f64::MIN, f64::max))
            .sum();
        prop_assert!((r.score - want).abs() < 1e-9);
    }

    #[test]
    fn attention_is_a_distribution(h in prop::collection::vec(-5.0f64..5.0, 3), rows in prop::collection::vec(-5.0f64..5.0, 3..15)) {
        let props: Vec<Vec<f64>> = rows.chunks_exact(3).map(|c| c.to_vec()).collect();
        let (_, alpha) = attend(&h, &props).unwrap();
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(alpha.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn curriculum_is_monotone(increment in 1usize..8, every in 1usize..4, block in 1usize..60) {
        let c = RlConfig { increment, epochs_per_increment: every, block_size: block, ..Default::default() };
        let counts: Vec<usize> = (1..400).map(|e| curriculum_schedule(e, &c)).collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*counts.last().unwrap(), block);
        prop_assert_eq!(counts[0], increment.min(block));
    }
}

#[test]
fn synthetic_examples_survive_json() {
    let corpus = generate_synthetic_corpus(3, 25, &SyntheticSpec::biographies()).unwrap();
    for s in &corpus {
        let line = example_to_json(&s.example).unwrap();
        assert_eq!(example_from_json(&line).unwrap(), s.example);
    }
}

#[test]
fn synthetic_corpus_is_seeded() {
    let a = generate_synthetic_corpus(9, 10, &SyntheticSpec::biographies()).unwrap();
    let b = generate_synthetic_corpus(9, 10, &SyntheticSpec::biographies()).unwrap();
    let c = generate_synthetic_corpus(10, 10, &SyntheticSpec::biographies()).unwrap();
    let texts = |x: &[forge_core::corpus::SyntheticExample]| x.iter().map(|s| s.example.clone()).collect::<Vec<_>>();
    assert_eq!(texts(&a), texts(&b));
    assert_ne!(texts(&a), texts(&c));
}

#[test]
fn matmul_backward_matches_outer_products() {
    let mut params = ParamStore::new();
    let w = params.add("w", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
    let mut g = Graph::new(&params);
    let wn = g.param(w);
    let x = g.input_vector(vec![0.5, -1.0]).unwrap();
    let y = g.matmul(wn, x).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    // d(1ᵀWx)/dW = 1 xᵀ
    assert_eq!(grads.get(w).unwrap().data(), &[0.5, -1.0, 0.5, -1.0]);
}
