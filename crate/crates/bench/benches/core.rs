use criterion::{criterion_group, criterion_main, Criterion};
use qgrl_bench::fixture;
use qgrl_core::metrics::{bleu, gleu, qss, rouge_l};
use qgrl_core::numcore::Tape;
use qgrl_core::qgmodel::Side;
use qgrl_core::training::{xent_step, TrainConfig};
use std::hint::black_box;

fn metrics(c: &mut Criterion) {
    let (_, _, exs) = fixture(50);
    let cand = &exs[0].questions[0];
    let refs: Vec<&[String]> = exs[1].questions.iter().map(Vec::as_slice).collect();
    c.bench_function("bleu4", |b| b.iter(|| bleu(black_box(cand), black_box(&refs), 4)));
    c.bench_function("gleu4", |b| b.iter(|| gleu(black_box(cand), black_box(&refs), 4)));
    c.bench_function("rouge_l", |b| b.iter(|| rouge_l(black_box(cand), black_box(refs[0]))));
    c.bench_function("qss4", |b| {
        b.iter(|| qss(black_box(cand), black_box(&exs[0].sentence), 4))
    });
}

fn decode_step(c: &mut Criterion) {
    let (m, s, exs) = fixture(8);
    let ex = &exs[0];
    c.bench_function("decode_step", |b| {
        b.iter(|| {
            let mut t = Tape::new();
            let enc = m.encode(&mut t, &s, ex, Side::Generator, ex.answer_span).unwrap();
            let st = m.init_state(&mut t, &s, &enc).unwrap();
            black_box(
                m.decode_step(&mut t, &s, &enc, &st, qgrl_core::textdata::START_ID)
                    .unwrap(),
            );
        })
    });
    c.bench_function("greedy_decode", |b| {
        b.iter(|| black_box(m.greedy_decode(&s, ex, ex.answer_span, 20).unwrap()))
    });
}

fn xent_update(c: &mut Criterion) {
    let (m, s, exs) = fixture(8);
    let cfg = TrainConfig::default();
    let ex = &exs[0];
    c.bench_function("xent_step", |b| {
        b.iter_batched(
            || s.clone(),
            |mut store| xent_step(&m, &mut store, ex, &ex.questions[0], &cfg, cfg.lr).unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, metrics, decode_step, xent_update);
criterion_main!(benches);
