//! The question generator: feature-augmented BiLSTM encoder, boundary
//! pointer for the pivotal answer, and an LSTM decoder with attention,
//! coverage and a copy gate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{affine, init_lstm, lstm_step, ParamStore, Rng, Tape, Var, DEFAULT_INIT_SCALE};
use crate::textdata::{tags_for_span, Example, FeatureVocab, Span, Vocabulary, END_ID, START_ID, UNK_ID};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub feat_dim: usize,
    /// Encoder hidden size per direction per layer.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub dec_hidden: usize,
    pub att_dim: usize,
    pub ptr_dim: usize,
    pub max_span: usize,
    /// Adds the coverage term to the attention scores.
    pub coverage: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 64,
            feat_dim: 8,
            enc_hidden: 64,
            enc_layers: 2,
            dec_hidden: 128,
            att_dim: 64,
            ptr_dim: 32,
            max_span: 8,
            coverage: true,
        }
    }
}

impl ModelConfig {
    /// Very small dimensions for gradient checks and unit tests.
    pub fn tiny() -> Self {
        ModelConfig {
            word_dim: 4,
            feat_dim: 2,
            enc_hidden: 3,
            enc_layers: 2,
            dec_hidden: 4,
            att_dim: 3,
            ptr_dim: 3,
            max_span: 8,
            coverage: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("feat_dim", self.feat_dim),
            ("enc_hidden", self.enc_hidden),
            ("enc_layers", self.enc_layers),
            ("dec_hidden", self.dec_hidden),
            ("att_dim", self.att_dim),
            ("ptr_dim", self.ptr_dim),
            ("max_span", self.max_span),
        ];
        let bad: Vec<&str> = dims.iter().filter(|(_, v)| *v == 0).map(|(k, _)| *k).collect();
        if !bad.is_empty() {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {}",
                bad.join(", ")
            )));
        }
        Ok(())
    }
}

/// Which of the two encoders: the generator's, or the pointer network's
/// (which sees no answer-position feature).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Generator,
    Pointer,
}

impl Side {
    fn prefix(self) -> &'static str {
        match self {
            Side::Generator => "gen",
            Side::Pointer => "ptr",
        }
    }
}

/// Source tokens mapped into the vocabulary extended with the sentence's
/// out-of-vocabulary words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceMap {
    /// Extended id of each source position.
    pub ext_ids: Vec<usize>,
    /// Out-of-vocabulary source words; word k has extended id `V + k`.
    pub oov: Vec<String>,
    pub vocab_size: usize,
}

impl SourceMap {
    pub fn new(sentence: &[String], vocab: &Vocabulary) -> Self {
        let mut oov: Vec<String> = Vec::new();
        let ext_ids = sentence
            .iter()
            .map(|t| {
                if vocab.contains(t) {
                    vocab.id(t)
                } else if let Some(k) = oov.iter().position(|o| o == t) {
                    vocab.len() + k
                } else {
                    oov.push(t.clone());
                    vocab.len() + oov.len() - 1
                }
            })
            .collect();
        SourceMap {
            ext_ids,
            oov,
            vocab_size: vocab.len(),
        }
    }

    pub fn ext_size(&self) -> usize {
        self.vocab_size + self.oov.len()
    }

    /// Extended id of a target token: vocabulary id, else the copied source
    /// word's id, else unknown.
    pub fn target_id(&self, token: &str, vocab: &Vocabulary) -> usize {
        if vocab.contains(token) {
            vocab.id(token)
        } else {
            self.oov
                .iter()
                .position(|o| o == token)
                .map_or(UNK_ID, |k| self.vocab_size + k)
        }
    }

    pub fn surface<'a>(&'a self, id: usize, vocab: &'a Vocabulary) -> &'a str {
        if id >= self.vocab_size {
            &self.oov[id - self.vocab_size]
        } else {
            vocab.token(id)
        }
    }
}

/// Encoder states on a tape.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[n, 2H]`, row i = [forward_i; backward_i] of the top layer.
    pub states: Var,
    /// `[2H]`: final forward state then final backward state.
    pub final_state: Var,
    /// `states · W_eh`, computed once per sentence (generator side only).
    pub projected: Option<Var>,
    pub len: usize,
    pub source: SourceMap,
}

/// Decoder recurrent state, coverage and output so far.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub s: Var,
    pub c: Var,
    /// Sum of the attention vectors of all previous steps.
    pub wcv: Var,
    pub emitted: Vec<usize>,
}

/// Everything one decoder step produces, as tape handles.
#[derive(Clone, Copy, Debug)]
pub struct StepDistribution {
    pub attention: Var,
    pub context: Var,
    pub p_vocab: Var,
    pub copy_gate: Var,
    /// Mixture over the extended vocabulary.
    pub p_final: Var,
    /// `Σ_i min(a_i, wcv_i)` against the incoming coverage.
    pub coverage_penalty: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub start: usize,
    pub end: usize,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub copy_gate: f64,
    pub top_attention: usize,
}

/// A decoded question.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Chosen extended ids, including the end token when it was chosen.
    pub ids: Vec<usize>,
    /// Surface tokens, end token excluded, unknowns replaced by source words.
    pub tokens: Vec<String>,
    /// `log p*(chosen)` per step.
    pub log_probs: Vec<f64>,
    pub steps: Vec<StepLog>,
}

/// Generator architecture bound to its vocabularies. Parameters live in a
/// separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct QgModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub fvocab: FeatureVocab,
}

fn pname(side: Side, rest: &str) -> String {
    format!("{}.{rest}", side.prefix())
}

fn lstm_prefix(side: Side, layer: usize, dir: &str) -> String {
    format!("{}.enc.l{layer}.{dir}", side.prefix())
}

/// Highest-probability span with `start ≤ end` and `end − start < max_span`;
/// ties go to the smallest start, then the smallest end.
pub fn best_span(p_start: &[f64], p_end: &[f64], max_span: usize) -> AnswerSpan {
    let n = p_start.len();
    let mut best = AnswerSpan {
        start: 0,
        end: 0,
        log_prob: f64::NEG_INFINITY,
    };
    for s in 0..n {
        for e in s..n.min(s + max_span) {
            let lp = p_start[s].ln() + p_end[e].ln();
            if lp > best.log_prob {
                best = AnswerSpan {
                    start: s,
                    end: e,
                    log_prob: lp,
                };
            }
        }
    }
    best
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl QgModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, fvocab: FeatureVocab) -> Result<Self> {
        config.validate()?;
        Ok(QgModel { config, vocab, fvocab })
    }

    fn input_dim(&self, side: Side) -> usize {
        let feats = match side {
            Side::Generator => 4,
            Side::Pointer => 3,
        };
        self.config.word_dim + feats * self.config.feat_dim
    }

    fn enc_out(&self) -> usize {
        2 * self.config.enc_hidden
    }

    /// Registers every generator (`gen.`) and pointer (`ptr.`) parameter.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let c = &self.config;
        let sc = DEFAULT_INIT_SCALE;
        let (h2, d, a) = (self.enc_out(), c.dec_hidden, c.att_dim);
        for side in [Side::Generator, Side::Pointer] {
            store.add_uniform(pname(side, "emb.word"), &[self.vocab.len(), c.word_dim], sc, rng)?;
            store.add_uniform(pname(side, "emb.pos"), &[self.fvocab.pos.len(), c.feat_dim], sc, rng)?;
            store.add_uniform(pname(side, "emb.ner"), &[self.fvocab.ner.len(), c.feat_dim], sc, rng)?;
            store.add_uniform(pname(side, "emb.case"), &[self.fvocab.num_case(), c.feat_dim], sc, rng)?;
            if side == Side::Generator {
                store.add_uniform(pname(side, "emb.ans"), &[self.fvocab.num_answer(), c.feat_dim], sc, rng)?;
            }
            for layer in 0..c.enc_layers {
                let input = if layer == 0 { self.input_dim(side) } else { h2 };
                for dir in ["fwd", "bwd"] {
                    init_lstm(store, &lstm_prefix(side, layer, dir), input, c.enc_hidden, rng)?;
                }
            }
        }
        store.add_uniform("gen.init.w", &[h2, d], sc, rng)?;
        store.add_zeros("gen.init.b", &[d])?;
        init_lstm(store, "gen.dec", c.word_dim, d, rng)?;
        store.add_uniform("gen.att.w_h", &[h2, a], sc, rng)?;
        store.add_uniform("gen.att.w_s", &[d, a], sc, rng)?;
        store.add_zeros("gen.att.b", &[a])?;
        if c.coverage {
            store.add_uniform("gen.att.w_cov", &[a], sc, rng)?;
        }
        store.add_uniform("gen.att.v", &[a], sc, rng)?;
        store.add_uniform("gen.out.w", &[d + h2, self.vocab.len()], sc, rng)?;
        store.add_zeros("gen.out.b", &[self.vocab.len()])?;
        store.add_uniform("gen.copy.w", &[h2 + d + c.word_dim, 1], sc, rng)?;
        store.add_zeros("gen.copy.b", &[1])?;
        let p = c.ptr_dim;
        store.add_uniform("ptr.start.w", &[h2, p], sc, rng)?;
        store.add_zeros("ptr.start.b", &[p])?;
        store.add_uniform("ptr.start.v", &[p], sc, rng)?;
        store.add_uniform("ptr.end.w", &[h2, p], sc, rng)?;
        store.add_uniform("ptr.end.u", &[h2, p], sc, rng)?;
        store.add_zeros("ptr.end.b", &[p])?;
        store.add_uniform("ptr.end.v", &[p], sc, rng)?;
        Ok(())
    }

    /// Fresh parameter store for this model.
    pub fn init_store(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.init_params(&mut store, &mut Rng::new(seed))?;
        Ok(store)
    }

    /// Runs the stacked bidirectional encoder. `span` sets the answer-position
    /// feature on the generator side and is ignored by the pointer.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        example: &Example,
        side: Side,
        span: Option<Span>,
    ) -> Result<EncoderOutput> {
        let n = example.sentence.len();
        if n == 0 {
            return Err(Error::Argument(format!(
                "example `{}` has an empty sentence",
                example.id
            )));
        }
        let word = tape.param(store, &pname(side, "emb.word"))?;
        let pos = tape.param(store, &pname(side, "emb.pos"))?;
        let ner = tape.param(store, &pname(side, "emb.ner"))?;
        let case = tape.param(store, &pname(side, "emb.case"))?;
        let ans = match side {
            Side::Generator => Some(tape.param(store, &pname(side, "emb.ans"))?),
            Side::Pointer => None,
        };
        let case_tags = example.case_tags();
        let ans_tags = tags_for_span(n, span);
        let mut inputs = Vec::with_capacity(n);
        for i in 0..n {
            let mut parts = vec![
                tape.row(word, self.vocab.id(&example.sentence[i]))?,
                tape.row(pos, self.fvocab.pos.id(&example.pos[i]))?,
                tape.row(ner, self.fvocab.ner.id(&example.ner[i]))?,
                tape.row(case, case_tags[i].index())?,
            ];
            if let Some(ans) = ans {
                parts.push(tape.row(ans, ans_tags[i].index())?);
            }
            inputs.push(tape.concat(&parts)?);
        }
        let hdim = self.config.enc_hidden;
        let mut final_parts = (inputs[0], inputs[0]);
        for layer in 0..self.config.enc_layers {
            let mut fwd = Vec::with_capacity(n);
            let (mut h, mut c) = (tape.zeros(&[hdim]), tape.zeros(&[hdim]));
            for x in &inputs {
                (h, c) = lstm_step(tape, store, *x, h, c, &lstm_prefix(side, layer, "fwd"))?;
                fwd.push(h);
            }
            let mut bwd = vec![h; n];
            let (mut h, mut c) = (tape.zeros(&[hdim]), tape.zeros(&[hdim]));
            for i in (0..n).rev() {
                (h, c) = lstm_step(tape, store, inputs[i], h, c, &lstm_prefix(side, layer, "bwd"))?;
                bwd[i] = h;
            }
            final_parts = (fwd[n - 1], bwd[0]);
            inputs = (0..n)
                .map(|i| tape.concat(&[fwd[i], bwd[i]]))
                .collect::<Result<Vec<_>>>()?;
        }
        let states = tape.stack_rows(&inputs)?;
        let final_state = tape.concat(&[final_parts.0, final_parts.1])?;
        let projected = match side {
            Side::Generator => {
                let w = tape.param(store, "gen.att.w_h")?;
                Some(tape.matmul(states, w)?)
            }
            Side::Pointer => None,
        };
        Ok(EncoderOutput {
            states,
            final_state,
            projected,
            len: n,
            source: SourceMap::new(&example.sentence, &self.vocab),
        })
    }

    /// Start and end distributions of the boundary pointer.
    pub fn pointer_distributions(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        enc: &EncoderOutput,
    ) -> Result<(Var, Var)> {
        let w = tape.param(store, "ptr.start.w")?;
        let b = tape.param(store, "ptr.start.b")?;
        let v = tape.param(store, "ptr.start.v")?;
        let proj = tape.matmul(enc.states, w)?;
        let pre = tape.add_row(proj, b)?;
        let act = tape.tanh(pre);
        let logits = tape.matmul(act, v)?;
        let p_start = tape.softmax(logits)?;

        let ctx = tape.matmul(p_start, enc.states)?;
        let w = tape.param(store, "ptr.end.w")?;
        let u = tape.param(store, "ptr.end.u")?;
        let b = tape.param(store, "ptr.end.b")?;
        let v = tape.param(store, "ptr.end.v")?;
        let proj = tape.matmul(enc.states, w)?;
        let cu = tape.matmul(ctx, u)?;
        let shift = tape.add(cu, b)?;
        let pre = tape.add_row(proj, shift)?;
        let act = tape.tanh(pre);
        let logits = tape.matmul(act, v)?;
        let p_end = tape.softmax(logits)?;
        Ok((p_start, p_end))
    }

    /// Most probable pivotal-answer span.
    pub fn point_answer(&self, store: &ParamStore, example: &Example) -> Result<AnswerSpan> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, store, example, Side::Pointer, None)?;
        let (ps, pe) = self.pointer_distributions(&mut tape, store, &enc)?;
        Ok(best_span(tape.data(ps), tape.data(pe), self.config.max_span))
    }

    /// `−log p_start[s] − log p_end[e]` for the gold span.
    pub fn pointer_loss(&self, tape: &mut Tape, store: &ParamStore, example: &Example, span: Span) -> Result<Var> {
        let enc = self.encode(tape, store, example, Side::Pointer, None)?;
        let (ps, pe) = self.pointer_distributions(tape, store, &enc)?;
        let gs = tape.gather(ps, span.0)?;
        let ge = tape.gather(pe, span.1)?;
        let ls = tape.log(gs);
        let le = tape.log(ge);
        let total = tape.add(ls, le)?;
        Ok(tape.scale(total, -1.0))
    }

    pub fn init_state(&self, tape: &mut Tape, store: &ParamStore, enc: &EncoderOutput) -> Result<DecoderState> {
        let s = affine(tape, store, enc.final_state, "gen.init.w", "gen.init.b")?;
        Ok(DecoderState {
            s,
            c: tape.zeros(&[self.config.dec_hidden]),
            wcv: tape.zeros(&[enc.len]),
            emitted: Vec::new(),
        })
    }

    /// Attention over source positions for decoder state `s` given coverage
    /// `wcv`; returns `(a, context)`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        enc: &EncoderOutput,
        s: Var,
        wcv: Var,
    ) -> Result<(Var, Var)> {
        if tape.shape(wcv) != [enc.len] {
            return Err(Error::dim(
                "attend",
                format!("coverage {:?} vs source length {}", tape.shape(wcv), enc.len),
            ));
        }
        let projected = enc
            .projected
            .ok_or_else(|| Error::Argument("attention needs the generator encoder".into()))?;
        let w_s = tape.param(store, "gen.att.w_s")?;
        let b = tape.param(store, "gen.att.b")?;
        let v = tape.param(store, "gen.att.v")?;
        let sp = tape.matmul(s, w_s)?;
        let shift = tape.add(sp, b)?;
        let mut pre = tape.add_row(projected, shift)?;
        if self.config.coverage {
            let w_cov = tape.param(store, "gen.att.w_cov")?;
            let cov = tape.outer(wcv, w_cov)?;
            pre = tape.add(pre, cov)?;
        }
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, v)?;
        let a = tape.softmax(scores)?;
        let context = tape.matmul(a, enc.states)?;
        Ok((a, context))
    }

    /// One decoder step from `state` after emitting `prev` (extended id).
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        enc: &EncoderOutput,
        state: &DecoderState,
        prev: usize,
    ) -> Result<(StepDistribution, DecoderState)> {
        let word = tape.param(store, "gen.emb.word")?;
        let input_id = if prev < self.vocab.len() { prev } else { UNK_ID };
        let x = tape.row(word, input_id)?;
        let (s, c) = lstm_step(tape, store, x, state.s, state.c, "gen.dec")?;
        let (a, ctx) = self.attend(tape, store, enc, s, state.wcv)?;

        let sc = tape.concat(&[s, ctx])?;
        let logits = affine(tape, store, sc, "gen.out.w", "gen.out.b")?;
        let p = tape.softmax(logits)?;

        let gate_in = tape.concat(&[ctx, s, x])?;
        let gate_pre = affine(tape, store, gate_in, "gen.copy.w", "gen.copy.b")?;
        let p_cg = tape.sigmoid(gate_pre);

        let ext = enc.source.ext_size();
        let padded = tape.pad(p, ext)?;
        let keep = tape.one_minus(p_cg);
        let gen_part = tape.mul_scalar(padded, keep)?;
        let copied = tape.scatter_add(a, &enc.source.ext_ids, ext)?;
        let copy_part = tape.mul_scalar(copied, p_cg)?;
        let p_final = tape.add(gen_part, copy_part)?;

        let overlap = tape.min(a, state.wcv)?;
        let coverage_penalty = tape.sum(overlap);
        let wcv = tape.add(state.wcv, a)?;

        let mut emitted = state.emitted.clone();
        emitted.push(prev);
        Ok((
            StepDistribution {
                attention: a,
                context: ctx,
                p_vocab: p,
                copy_gate: p_cg,
                p_final,
                coverage_penalty,
            },
            DecoderState { s, c, wcv, emitted },
        ))
    }

    /// Extended ids of a gold question followed by the end token.
    pub fn target_ids(&self, source: &SourceMap, question: &[String]) -> Vec<usize> {
        let mut ids: Vec<usize> = question.iter().map(|t| source.target_id(t, &self.vocab)).collect();
        ids.push(END_ID);
        ids
    }

    /// Teacher-forced pass over `targets`; returns each step's distribution.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        enc: &EncoderOutput,
        targets: &[usize],
    ) -> Result<Vec<StepDistribution>> {
        let mut state = self.init_state(tape, store, enc)?;
        let mut prev = START_ID;
        let mut steps = Vec::with_capacity(targets.len());
        for &y in targets {
            let (dist, next) = self.decode_step(tape, store, enc, &state, prev)?;
            steps.push(dist);
            state = next;
            prev = y;
        }
        Ok(steps)
    }

    fn run_decode(
        &self,
        store: &ParamStore,
        example: &Example,
        span: Option<Span>,
        max_len: usize,
        mut choose: impl FnMut(&[f64]) -> usize,
    ) -> Result<Decoded> {
        if max_len == 0 {
            return Err(Error::Argument("max_len must be at least 1".into()));
        }
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, store, example, Side::Generator, span)?;
        let mut state = self.init_state(&mut tape, store, &enc)?;
        let mut prev = START_ID;
        let mut out = Decoded {
            ids: Vec::new(),
            tokens: Vec::new(),
            log_probs: Vec::new(),
            steps: Vec::new(),
        };
        while out.tokens.len() < max_len {
            let (dist, next) = self.decode_step(&mut tape, store, &enc, &state, prev)?;
            let p = tape.data(dist.p_final);
            let id = choose(p);
            out.log_probs.push(p[id].max(crate::numcore::LOG_FLOOR).ln());
            let top = argmax_lowest(tape.data(dist.attention));
            out.steps.push(StepLog {
                copy_gate: tape.scalar(dist.copy_gate),
                top_attention: top,
            });
            out.ids.push(id);
            if id == END_ID {
                break;
            }
            let surface = if id == UNK_ID {
                example.sentence[top].clone()
            } else {
                enc.source.surface(id, &self.vocab).to_string()
            };
            out.tokens.push(surface);
            state = next;
            prev = id;
        }
        Ok(out)
    }

    /// Argmax decoding; ties go to the lowest id.
    pub fn greedy_decode(
        &self,
        store: &ParamStore,
        example: &Example,
        span: Option<Span>,
        max_len: usize,
    ) -> Result<Decoded> {
        self.run_decode(store, example, span, max_len, argmax_lowest)
    }

    /// Ancestral sampling from the final mixture.
    pub fn sample_decode(
        &self,
        store: &ParamStore,
        example: &Example,
        span: Option<Span>,
        rng: &mut Rng,
        max_len: usize,
    ) -> Result<Decoded> {
        self.run_decode(store, example, span, max_len, |p| rng.categorical(p))
    }

    /// Pointer span, then greedy decoding with that span encoded.
    pub fn generate(&self, store: &ParamStore, example: &Example, max_len: usize) -> Result<(AnswerSpan, Decoded)> {
        let span = self.point_answer(store, example)?;
        let decoded = self.greedy_decode(store, example, Some((span.start, span.end)), max_len)?;
        Ok((span, decoded))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textdata::{build_vocab, synth_corpus};

    fn toy() -> (QgModel, ParamStore, Vec<Example>) {
        let exs = synth_corpus(3, 20);
        let vocab = build_vocab(&exs, 30).unwrap();
        let fv = FeatureVocab::from_examples(&exs);
        let m = QgModel::new(ModelConfig::tiny(), vocab, fv).unwrap();
        let s = m.init_store(9).unwrap();
        (m, s, exs)
    }

    #[test]
    fn encoder_shapes_and_zero_params() {
        let (m, mut s, exs) = toy();
        let mut t = Tape::new();
        let enc = m
            .encode(&mut t, &s, &exs[0], Side::Generator, exs[0].answer_span)
            .unwrap();
        assert_eq!(t.shape(enc.states), [exs[0].sentence.len(), 6]);
        let names: Vec<String> = s.names().map(str::to_string).collect();
        for n in names {
            s.value_mut(&n).unwrap().fill(0.0);
        }
        let mut t = Tape::new();
        let enc = m.encode(&mut t, &s, &exs[0], Side::Generator, None).unwrap();
        assert!(t.data(enc.states).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn best_span_rules() {
        let one = best_span(&[1.0], &[1.0], 8);
        assert_eq!((one.start, one.end, one.log_prob), (0, 0, 0.0));
        let u = [1.0 / 3.0; 3];
        let s = best_span(&u, &u, 8);
        assert_eq!((s.start, s.end), (0, 0));
        let s = best_span(&[0.1, 0.9], &[0.8, 0.2], 8);
        assert_eq!((s.start, s.end), (1, 1));
        let mut ps = vec![0.0; 12];
        ps[0] = 1.0;
        let mut pe = vec![0.01; 12];
        pe[11] = 0.89;
        let s = best_span(&ps, &pe, 8);
        assert!(s.end - s.start < 8);
    }

    #[test]
    fn source_map_extends_vocab() {
        let vocab = Vocabulary::from_tokens(["new"]).unwrap();
        let sent: Vec<String> = ["new", "amsterdam", "x", "amsterdam"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let m = SourceMap::new(&sent, &vocab);
        assert_eq!(m.ext_ids, [4, 5, 6, 5]);
        assert_eq!(m.ext_size(), 7);
        assert_eq!(m.target_id("amsterdam", &vocab), 5);
        assert_eq!(m.target_id("zzz", &vocab), UNK_ID);
        assert_eq!(m.surface(6, &vocab), "x");
    }

    #[test]
    fn distributions_are_normalized() {
        let (m, s, exs) = toy();
        let mut t = Tape::new();
        let enc = m
            .encode(&mut t, &s, &exs[1], Side::Generator, exs[1].answer_span)
            .unwrap();
        let targets = m.target_ids(&enc.source, &exs[1].questions[0]);
        let steps = m.teacher_forced(&mut t, &s, &enc, &targets).unwrap();
        for st in steps {
            for v in [st.attention, st.p_vocab, st.p_final] {
                assert!((t.data(v).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let pen = t.scalar(st.coverage_penalty);
            assert!((0.0..=1.0 + 1e-9).contains(&pen), "{pen:e}");
        }
    }

    #[test]
    fn decoding_is_deterministic_and_bounded() {
        let (m, s, exs) = toy();
        let a = m.greedy_decode(&s, &exs[0], exs[0].answer_span, 5).unwrap();
        let b = m.greedy_decode(&s, &exs[0], exs[0].answer_span, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens.len() <= 5);
        let x = m.sample_decode(&s, &exs[0], None, &mut Rng::new(4), 6).unwrap();
        let y = m.sample_decode(&s, &exs[0], None, &mut Rng::new(4), 6).unwrap();
        assert_eq!(x, y);
        assert!(m.greedy_decode(&s, &exs[0], None, 0).is_err());
    }
}
