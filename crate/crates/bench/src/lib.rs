//! Shared fixtures for the benchmarks.

use flat_core::corpus::{build_vocab, encode_examples, generate_synthetic, Example, SynonymTable, SyntheticConfig, Vocab};
use flat_core::model::{ClassifierParams, ModelConfig};
use flat_core::training::init_classifier;

pub struct Fixture {
    pub vocab: Vocab,
    pub synonyms: SynonymTable,
    pub train: Vec<Example>,
    pub params: ClassifierParams,
}

/// A small synthetic corpus with a randomly initialised classifier.
pub fn fixture(train: usize) -> Fixture {
    let cfg = SyntheticConfig { train, dev: 10, test: 10, seed: 1, ..Default::default() };
    let data = generate_synthetic(&cfg).expect("synthetic data");
    let lines: Vec<&str> = data.train.iter().map(|r| r.1.as_str()).collect();
    let vocab = build_vocab(&lines, 1).expect("vocab");
    let synonyms = SynonymTable::parse("synonyms".as_ref(), &data.lexicon.synonym_file(), &vocab).expect("synonyms");
    let train = encode_examples(&data.train, &vocab, cfg.sentence_len);
    let params = init_classifier(vocab.len(), cfg.classes, &ModelConfig::default(), 1, None).expect("init");
    Fixture { vocab, synonyms, train, params }
}
