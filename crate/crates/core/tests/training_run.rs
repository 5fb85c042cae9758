use qgrl_core::numcore::Rng;
use qgrl_core::qgmodel::{ModelConfig, QgModel};
use qgrl_core::textdata::{build_vocab, synth_corpus, FeatureVocab};
use qgrl_core::training::{heldout_xent, pretrain_epoch, TrainConfig};

#[test]
fn heldout_xent_falls_over_pretraining() {
    let corpus = synth_corpus(4, 150);
    let (train, heldout) = corpus.split_at(120);
    let vocab = build_vocab(train, 120).unwrap();
    let cfg = ModelConfig {
        word_dim: 24,
        feat_dim: 4,
        enc_hidden: 24,
        enc_layers: 1,
        dec_hidden: 32,
        att_dim: 24,
        ptr_dim: 12,
        ..ModelConfig::default()
    };
    let model = QgModel::new(cfg, vocab, FeatureVocab::from_examples(train)).unwrap();
    let mut store = model.init_store(4).unwrap();
    let tc = TrainConfig {
        lr: 3e-3,
        ..Default::default()
    };
    let mut rng = Rng::new(4);
    let mut curve = vec![heldout_xent(&model, &store, heldout).unwrap()];
    for epoch in 0..3 {
        pretrain_epoch(&model, &mut store, train, &tc, &mut rng, epoch).unwrap();
        curve.push(heldout_xent(&model, &store, heldout).unwrap());
    }
    for w in curve.windows(2) {
        assert!(w[1] <= w[0] * 1.01, "held-out xent rose: {curve:?}");
    }
    assert!(curve[3] < 0.5 * curve[0], "{curve:?}");
}
