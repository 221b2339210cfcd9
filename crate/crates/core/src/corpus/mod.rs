//! Vocabulary, datasets, embeddings, synonym tables, adversarial pairs and
//! the synthetic benchmark generator.

mod dataset;
mod embeddings;
mod pair;
mod synonyms;
mod synthetic;
mod vocab;

pub use dataset::{
    encode_examples, format_labeled, infer_num_classes, load_dataset, parse_labeled, read_labeled, save_dataset,
    Example,
};
pub use embeddings::{load_embeddings, parse_embeddings, EmbeddingTable, INIT_STD};
pub use pair::{AdversarialPair, AttackMeta, Substitution};
pub use synonyms::{load_synonyms, SynonymTable};
pub use synthetic::{
    generate_synthetic, write_synthetic, Lexicon, SyntheticConfig, SyntheticData, SyntheticPaths, WordRole,
};
pub use vocab::{build_vocab, tokenize, Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
