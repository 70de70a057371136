//! Tokenization, vocabularies, styled corpora and batching, plus a synthetic
//! two-style corpus with an exact substitution oracle.

mod batch;
mod styled;
mod synth;
mod vocab;

pub use batch::{make_batches, Batch, EpochPlan};
pub use styled::{
    load_styled_corpus, read_lines, CorpusLimits, Sentence, SplitRatios, Style, StyledCorpus,
};
pub use synth::{
    oracle_transfer_score, synth_generate, synth_sentences, SubstitutionOracle, SynthConfig,
    TransferScore,
};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

/// Lowercased whitespace tokenization.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}
