//! Corpus records, vocabularies and the synthetic corpus.

mod example;
mod synth;
mod vocab;

pub use example::{
    answer_position_tags, heuristic_tags, load_corpus, tags_for_span, write_corpus, AnswerTag, CaseTag, Example, Span,
};
pub use synth::synth_corpus;
pub use vocab::{
    build_vocab, FeatureVocab, TagSet, Vocabulary, END_ID, NER_OUTSIDE, PAD_ID, POS_FALLBACK, SPECIAL_TOKENS, START_ID,
    UNK_ID,
};
