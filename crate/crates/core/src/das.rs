//! Decomposable-attention similarity scorer between a generated and a gold
//! question.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DasScorer;
use crate::numcore::{affine, DenseArray, ParamStore, Rng, Tape, Var, DEFAULT_INIT_SCALE};
use crate::textdata::{Example, Vocabulary};

pub const PREFIX: &str = "das.";
/// Embeddings start wider than the other weights so early attention is not uniform.
pub const EMB_INIT_SCALE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DasConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl Default for DasConfig {
    fn default() -> Self {
        DasConfig {
            emb_dim: 32,
            hidden: 64,
            out_dim: 32,
        }
    }
}

/// Embeddings, comparison nets N1/N2 and the final map L, with their own
/// vocabulary. No parameter is shared with the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct DasModel {
    pub config: DasConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
}

/// Soft alignment between the two questions.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    /// `[gen, gold]`; row i is the attention of generated token i over gold.
    pub gen_weights: DenseArray,
    /// `[gold, gen]`; row j is the attention of gold token j over generated.
    pub gold_weights: DenseArray,
    /// `[gen, d]`; row i is the gold context aligned to generated token i.
    pub gen_context: DenseArray,
    /// `[gold, d]`; row j is the generated context aligned to gold token j.
    pub gold_context: DenseArray,
}

struct Forward {
    logit: Var,
    gen_weights: Var,
    gold_weights: Var,
    gen_context: Var,
    gold_context: Var,
}

fn name(part: &str) -> String {
    format!("{PREFIX}{part}")
}

impl DasModel {
    pub fn new(vocab: Vocabulary, config: DasConfig, rng: &mut Rng) -> Result<Self> {
        let (d, h, o) = (config.emb_dim, config.hidden, config.out_dim);
        if d == 0 || h == 0 || o == 0 {
            return Err(Error::Config(format!("DAS dimensions must be positive: {config:?}")));
        }
        let mut store = ParamStore::new();
        store.add_uniform(name("emb"), &[vocab.len(), d], EMB_INIT_SCALE, rng)?;
        for net in ["n1", "n2"] {
            store.add_uniform(name(&format!("{net}.w_tok")), &[d, h], DEFAULT_INIT_SCALE, rng)?;
            store.add_uniform(name(&format!("{net}.w_ctx")), &[d, h], DEFAULT_INIT_SCALE, rng)?;
            store.add_zeros(name(&format!("{net}.b")), &[h])?;
            store.add_uniform(name(&format!("{net}.w_out")), &[h, o], DEFAULT_INIT_SCALE, rng)?;
            store.add_zeros(name(&format!("{net}.b_out")), &[o])?;
        }
        store.add_uniform(name("l.w"), &[2 * o, 1], DEFAULT_INIT_SCALE, rng)?;
        store.add_zeros(name("l.b"), &[1])?;
        Ok(DasModel { config, vocab, store })
    }

    /// Vocabulary over every question token in `examples`.
    pub fn vocab_for(examples: &[Example]) -> Result<Vocabulary> {
        let mut toks: Vec<&str> = examples
            .iter()
            .flat_map(|e| e.questions.iter().flatten().map(String::as_str))
            .collect();
        toks.sort_unstable();
        toks.dedup();
        Vocabulary::from_tokens(
            toks.into_iter()
                .filter(|t| !crate::textdata::SPECIAL_TOKENS.contains(t)),
        )
    }

    fn embed(&self, tape: &mut Tape, store: &ParamStore, tokens: &[String]) -> Result<Var> {
        let emb = tape.param(store, &name("emb"))?;
        let rows = tokens
            .iter()
            .map(|t| tape.row(emb, self.vocab.id(t)))
            .collect::<Result<Vec<_>>>()?;
        tape.stack_rows(&rows)
    }

    /// Comparison net applied to each row of `[tokens ; contexts]`, then
    /// summed over rows.
    fn compare(&self, tape: &mut Tape, store: &ParamStore, net: &str, tokens: Var, ctx: Var) -> Result<Var> {
        let w_tok = tape.param(store, &name(&format!("{net}.w_tok")))?;
        let w_ctx = tape.param(store, &name(&format!("{net}.w_ctx")))?;
        let b = tape.param(store, &name(&format!("{net}.b")))?;
        let a = tape.matmul(tokens, w_tok)?;
        let c = tape.matmul(ctx, w_ctx)?;
        let pre = tape.add(a, c)?;
        let pre = tape.add_row(pre, b)?;
        let hid = tape.tanh(pre);
        let out = affine(
            tape,
            store,
            hid,
            &name(&format!("{net}.w_out")),
            &name(&format!("{net}.b_out")),
        )?;
        let rows = tape.shape(out)[0];
        let ones = tape.constant_vec(vec![1.0; rows]);
        tape.matmul(ones, out)
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, gen: &[String], gold: &[String]) -> Result<Forward> {
        if gen.is_empty() || gold.is_empty() {
            return Err(Error::Argument("DAS inputs must be nonempty".into()));
        }
        let a = self.embed(tape, store, gen)?;
        let b = self.embed(tape, store, gold)?;
        let bt = tape.transpose(b)?;
        let scores = tape.matmul(a, bt)?;
        let scores_t = tape.transpose(scores)?;
        let gen_weights = tape.softmax_rows(scores)?;
        let gold_weights = tape.softmax_rows(scores_t)?;
        let gen_context = tape.matmul(gen_weights, b)?;
        let gold_context = tape.matmul(gold_weights, a)?;
        let v1 = self.compare(tape, store, "n1", a, gen_context)?;
        let v2 = self.compare(tape, store, "n2", b, gold_context)?;
        let v = tape.concat(&[v1, v2])?;
        let logit = affine(tape, store, v, &name("l.w"), &name("l.b"))?;
        Ok(Forward {
            logit,
            gen_weights,
            gold_weights,
            gen_context,
            gold_context,
        })
    }

    /// Pre-logistic score recorded on `tape` against the given parameters.
    pub fn logit_on(&self, tape: &mut Tape, store: &ParamStore, gen: &[String], gold: &[String]) -> Result<Var> {
        Ok(self.forward(tape, store, gen, gold)?.logit)
    }

    pub fn cross_attend(&self, gen: &[String], gold: &[String]) -> Result<CrossAttention> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, &self.store, gen, gold)?;
        Ok(CrossAttention {
            gen_weights: tape.value(f.gen_weights).clone(),
            gold_weights: tape.value(f.gold_weights).clone(),
            gen_context: tape.value(f.gen_context).clone(),
            gold_context: tape.value(f.gold_context).clone(),
        })
    }

    /// Matching score in (0, 1).
    pub fn score(&self, gen: &[String], gold: &[String]) -> Result<f64> {
        let mut tape = Tape::new();
        let logit = self.logit_on(&mut tape, &self.store, gen, gold)?;
        let z = tape.scalar(logit);
        Ok(logistic(z))
    }

    /// Binary cross-entropy of `batch` (mean over pairs) recorded on a tape.
    pub fn batch_loss(&self, store: &ParamStore, batch: &[&DasPair]) -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let mut terms = Vec::with_capacity(batch.len());
        for p in batch {
            let z = self.logit_on(&mut tape, store, &p.first, &p.second)?;
            // -log σ(z) = softplus(-z); -log(1 - σ(z)) = softplus(z)
            let signed = if p.label { tape.scale(z, -1.0) } else { z };
            terms.push(tape.softplus(signed));
        }
        let all = tape.concat(&terms)?;
        let total = tape.sum(all);
        let mean = tape.scale(total, 1.0 / batch.len() as f64);
        Ok((tape, mean))
    }
}

/// Logistic function kept strictly inside (0, 1).
fn logistic(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl DasScorer for DasModel {
    fn das_score(&self, generated: &[String], gold: &[String]) -> f64 {
        self.score(generated, gold).unwrap_or(0.0)
    }
}

/// Labeled question pair; `label` is true when both ask the same thing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DasPair {
    pub first: Vec<String>,
    pub second: Vec<String>,
    pub label: bool,
}

/// Positives are pairs of gold questions of one example; each positive gets
/// one negative pairing its first question with a question of another
/// example.
pub fn make_pairs(examples: &[Example], rng: &mut Rng) -> Vec<DasPair> {
    let mut out = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        for (a, qa) in ex.questions.iter().enumerate() {
            for (b, qb) in ex.questions.iter().enumerate() {
                if a == b {
                    continue;
                }
                out.push(DasPair {
                    first: qa.clone(),
                    second: qb.clone(),
                    label: true,
                });
                if examples.len() < 2 {
                    continue;
                }
                for _ in 0..16 {
                    let j = rng.below(examples.len());
                    if j == i {
                        continue;
                    }
                    let other = &examples[j].questions[rng.below(examples[j].questions.len())];
                    if ex.questions.contains(other) {
                        continue;
                    }
                    out.push(DasPair {
                        first: qa.clone(),
                        second: other.clone(),
                        label: false,
                    });
                    break;
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DasTrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of pairs held out for accuracy.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for DasTrainOptions {
    fn default() -> Self {
        DasTrainOptions {
            epochs: 15,
            lr: 3e-3,
            batch_size: 8,
            heldout_fraction: 0.2,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DasReport {
    /// Mean training loss measured after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub train_accuracy: f64,
    /// `None` when too few pairs to hold any out.
    pub heldout_accuracy: Option<f64>,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
}

/// Fraction of pairs where `score > 0.5` agrees with the label.
pub fn accuracy(model: &DasModel, pairs: &[&DasPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for p in pairs {
        if (model.score(&p.first, &p.second)? > 0.5) == p.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

fn mean_loss(model: &DasModel, pairs: &[&DasPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let (tape, loss) = model.batch_loss(&model.store, pairs)?;
    Ok(tape.scalar(loss))
}

/// Minimizes binary cross-entropy with Adam on minibatches.
pub fn train_das(pairs: &[DasPair], model: &mut DasModel, opts: &DasTrainOptions) -> Result<DasReport> {
    let positives = pairs.iter().filter(|p| p.label).count();
    if positives == 0 || positives == pairs.len() {
        return Err(Error::Config(format!(
            "DAS training needs both labels; got {positives} positive of {} pairs",
            pairs.len()
        )));
    }
    if !(0.0..1.0).contains(&opts.heldout_fraction) {
        return Err(Error::Config(format!(
            "heldout fraction must be in [0, 1), got {}",
            opts.heldout_fraction
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("DAS batch size must be positive".into()));
    }
    let mut rng = Rng::new(opts.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    rng.shuffle(&mut order);
    let n_held = (pairs.len() as f64 * opts.heldout_fraction).floor() as usize;
    let (held_idx, train_idx) = order.split_at(n_held);
    let held: Vec<&DasPair> = held_idx.iter().map(|&i| &pairs[i]).collect();
    let mut train: Vec<&DasPair> = train_idx.iter().map(|&i| &pairs[i]).collect();

    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        rng.shuffle(&mut train);
        for batch in train.chunks(opts.batch_size) {
            model.store.zero_grads();
            let (tape, loss) = model.batch_loss(&model.store, batch)?;
            tape.backward(loss, 1.0, &mut model.store)?;
            model.store.adam_step(opts.lr)?;
        }
        let loss = mean_loss(model, &train)?;
        log::debug!("das epoch {} loss {loss:.6}", epoch + 1);
        epoch_losses.push(loss);
    }
    model.store.zero_grads();
    let final_loss = match epoch_losses.last() {
        Some(&l) => l,
        None => mean_loss(model, &train)?,
    };
    Ok(DasReport {
        final_loss,
        epoch_losses,
        train_accuracy: accuracy(model, &train)?,
        heldout_accuracy: if held.is_empty() {
            None
        } else {
            Some(accuracy(model, &held)?)
        },
        train_pairs: train.len(),
        heldout_pairs: held.len(),
    })
}
