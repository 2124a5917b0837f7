use forge_core::aligner::{Aligner, AlignerConfig};
use forge_core::checkpoint::Checkpoint;
use forge_core::corpus::{generate_synthetic_corpus, preprocess, Example, PreprocessConfig, SyntheticSpec};
use forge_core::generator::{DecodeStrategy, Generator, GeneratorConfig};
use forge_core::mtl::{derive_labels, train_mtl, MtlConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize) -> (Vec<forge_core::corpus::SyntheticExample>, Vec<Example>) {
    let syn = generate_synthetic_corpus(21, n, &SyntheticSpec::biographies()).unwrap();
    let raw = syn.iter().map(|s| s.example.clone()).collect();
    (syn, raw)
}

fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        embed_dim: 8,
        hidden_dim: 8,
        epochs: 2,
        seed: 4,
        ..Default::default()
    }
}

#[test]
fn training_lowers_the_loss() {
    let (_, raw) = corpus(30);
    let (train, inv, outv) = preprocess(&raw, &PreprocessConfig::generator()).unwrap();
    let config = GeneratorConfig {
        epochs: 4,
        learning_rate: 0.01,
        ..tiny_generator()
    };
    let mut gen = Generator::new(inv, outv, config).unwrap();
    let (reports, _) = gen.train(&train, |_| {}).unwrap();
    assert!(reports.last().unwrap().nll_per_token < reports[0].nll_per_token);
}

#[test]
fn generator_checkpoint_reproduces_decoding() {
    let (syn, raw) = corpus(20);
    let (train, inv, outv) = preprocess(&raw, &PreprocessConfig::generator()).unwrap();
    let labels: Vec<Vec<bool>> = train
        .iter()
        .map(|ex| {
            let gold = &syn.iter().find(|s| s.example.entity_id() == ex.entity_id()).unwrap().gold;
            derive_labels(&ex.document, gold).unwrap()
        })
        .collect();
    let mut gen = Generator::new(inv, outv, tiny_generator()).unwrap();
    train_mtl(&mut gen, &train, &labels, &MtlConfig::default(), |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    gen.to_checkpoint(None).unwrap().save(&path).unwrap();
    let (back, baseline) = Generator::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert!(baseline.is_none());
    for ex in &train[..5] {
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            gen.generate_tokens(&ex.properties, DecodeStrategy::Sample, &mut r1).unwrap(),
            back.generate_tokens(&ex.properties, DecodeStrategy::Sample, &mut r2).unwrap()
        );
    }
}

#[test]
fn aligner_checkpoint_keeps_scores() {
    let (_, raw) = corpus(20);
    let (train, _, _) = preprocess(&raw, &PreprocessConfig::aligner()).unwrap();
    let config = AlignerConfig {
        embed_dim: 6,
        hidden_dim: 6,
        epochs: 1,
        ..Default::default()
    };
    let mut aligner = Aligner::for_corpus(&train, config).unwrap();
    aligner.train(&train, |_| {}).unwrap();
    let ck = aligner.to_checkpoint().unwrap();
    let mut bytes = Vec::new();
    ck.write_to(&mut bytes).unwrap();
    let back = Aligner::from_checkpoint(&Checkpoint::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
    let a = aligner.score_document(&train[0]).unwrap();
    let b = back.score_document(&train[0]).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn truncated_checkpoint_is_an_error() {
    let (_, raw) = corpus(10);
    let (_, inv, outv) = preprocess(&raw, &PreprocessConfig::generator()).unwrap();
    let gen = Generator::new(inv, outv, tiny_generator()).unwrap();
    let mut bytes = Vec::new();
    gen.to_checkpoint(None).unwrap().write_to(&mut bytes).unwrap();
    for cut in [0, 8, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::read_from(&mut &bytes[..cut]).is_err(), "cut at {cut}");
    }
}
