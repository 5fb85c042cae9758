//! Shared fixtures for the benchmarks.

use qgrl_core::numcore::ParamStore;
use qgrl_core::qgmodel::{ModelConfig, QgModel};
use qgrl_core::textdata::{build_vocab, synth_corpus, Example, FeatureVocab};

/// Default-size model on a synthetic corpus of `n` examples.
pub fn fixture(n: usize) -> (QgModel, ParamStore, Vec<Example>) {
    let examples = synth_corpus(7, n);
    let vocab = build_vocab(&examples, 200).expect("vocab");
    let fvocab = FeatureVocab::from_examples(&examples);
    let model = QgModel::new(ModelConfig::default(), vocab, fvocab).expect("model");
    let store = model.init_store(7).expect("store");
    (model, store, examples)
}
