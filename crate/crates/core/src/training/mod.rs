//! Cross-entropy pretraining, policy-gradient fine-tuning, their mixture and
//! checkpoints.

mod checkpoint;
mod scopes;

pub use checkpoint::{
    from_bytes, load_checkpoint, save_checkpoint, to_bytes, Checkpoint, DasSection, FORMAT_VERSION, MAGIC,
};
pub use scopes::{check_scope, Scope, ScopeReport};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::answer::AnswerPredictor;
use crate::error::{Error, Result};
use crate::metrics::{combined_reward, DasScorer, RewardBreakdown, RewardInputs, RewardSpec};
use crate::numcore::{ParamStore, Rng, Tape, Var};
use crate::qgmodel::{Decoded, QgModel, Side};
use crate::textdata::{Example, Span};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// The whole return is credited to every step.
    Terminal,
    /// Step t is credited with the reward-to-go from t.
    Incremental,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    GreedySelfCritical,
    None,
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal" => Ok(RewardMode::Terminal),
            "incremental" => Ok(RewardMode::Incremental),
            _ => Err(Error::Config(format!(
                "reward_mode must be terminal or incremental, got `{s}`"
            ))),
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy_self_critical" | "greedy" => Ok(Baseline::GreedySelfCritical),
            "none" => Ok(Baseline::None),
            _ => Err(Error::Config(format!(
                "baseline must be greedy_self_critical or none, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Terminal => "terminal",
            RewardMode::Incremental => "incremental",
        })
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::GreedySelfCritical => "greedy_self_critical",
            Baseline::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub reward: RewardSpec,
    pub lr: f64,
    pub rl_lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub reward_mode: RewardMode,
    pub baseline: Baseline,
    /// Sampled sequences per RL step.
    pub samples: usize,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_c: 1.0,
            alpha: 0.1,
            beta: 0.9,
            reward: RewardSpec::default(),
            lr: 1e-3,
            rl_lr: 1e-5,
            epochs: 3,
            seed: 1,
            reward_mode: RewardMode::Terminal,
            baseline: Baseline::GreedySelfCritical,
            samples: 1,
            max_len: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            bad.push(format!(
                "alpha={} beta={} (need both ≥ 0, sum > 0)",
                self.alpha, self.beta
            ));
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            bad.push(format!("lambda_c={} (need ≥ 0)", self.lambda_c));
        }
        for (k, v) in [("lr", self.lr), ("rl_lr", self.rl_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{k}={v} (need > 0)"));
            }
        }
        if self.samples == 0 {
            bad.push("samples=0 (need ≥ 1)".into());
        }
        if self.max_len == 0 {
            bad.push("max_len=0 (need ≥ 1)".into());
        }
        if let Err(e) = self.reward.validate() {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Scores a generated question.
pub trait RewardFn {
    /// Reward in [0, 1] for `question` on `example`, whose encoded pivotal
    /// answer is `pivotal`.
    fn reward(&mut self, example: &Example, question: &[String], pivotal: &[String]) -> Result<f64>;
}

/// The evaluator: metric-based rewards with an optional answer predictor
/// and DAS model.
pub struct Evaluator<'a> {
    pub spec: RewardSpec,
    pub predictor: Option<Box<dyn AnswerPredictor + 'a>>,
    pub das: Option<&'a dyn DasScorer>,
    /// Predictions that failed and fell back to reweighting.
    pub predictor_failures: usize,
    warned_missing: bool,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        spec: RewardSpec,
        predictor: Option<Box<dyn AnswerPredictor + 'a>>,
        das: Option<&'a dyn DasScorer>,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.base == crate::metrics::BaseMetric::Das && das.is_none() {
            return Err(Error::Config("base metric `das` needs a trained DAS model".into()));
        }
        Ok(Evaluator {
            spec,
            predictor,
            das,
            predictor_failures: 0,
            warned_missing: false,
        })
    }

    pub fn breakdown(&mut self, example: &Example, question: &[String], pivotal: &[String]) -> Result<RewardBreakdown> {
        let predicted = if !self.spec.use_anss || question.is_empty() {
            None
        } else if let Some(p) = self.predictor.as_mut() {
            match p.predict(&example.sentence, question) {
                Ok(a) => Some(a),
                Err(e) => {
                    self.predictor_failures += 1;
                    log::warn!(
                        "answer predictor failed on `{}`: {e}; ANSS weight redistributed",
                        example.id
                    );
                    None
                }
            }
        } else {
            if !self.warned_missing {
                log::warn!("no answer predictor configured; ANSS weight redistributed");
                self.warned_missing = true;
            }
            None
        };
        combined_reward(
            &self.spec,
            &RewardInputs {
                question,
                golds: &example.questions,
                sentence: &example.sentence,
                predicted_answer: predicted.as_deref(),
                pivotal_answer: pivotal,
            },
            self.das,
        )
    }
}

impl RewardFn for Evaluator<'_> {
    fn reward(&mut self, example: &Example, question: &[String], pivotal: &[String]) -> Result<f64> {
        Ok(self.breakdown(example, question, pivotal)?.total)
    }
}

/// Span encoded during training: the gold span, else the pointer's.
pub fn training_span(model: &QgModel, store: &ParamStore, example: &Example) -> Result<Span> {
    match example.answer_span {
        Some(s) => Ok(s),
        None => {
            let s = model.point_answer(store, example)?;
            Ok((s.start, s.end))
        }
    }
}

fn span_tokens(example: &Example, span: Span) -> Vec<String> {
    example.sentence[span.0..=span.1].to_vec()
}

/// Teacher-forced loss of one gold question.
#[derive(Clone, Copy, Debug)]
pub struct XentLoss {
    /// `xent + λ_c · coverage`.
    pub total: Var,
    /// Mean `−log p*(gold)` over steps.
    pub xent: Var,
    /// Mean per-step coverage penalty.
    pub coverage: Var,
    pub steps: usize,
}

pub fn xent_loss(
    model: &QgModel,
    tape: &mut Tape,
    store: &ParamStore,
    example: &Example,
    question: &[String],
    span: Option<Span>,
    lambda_c: f64,
) -> Result<XentLoss> {
    let enc = model.encode(tape, store, example, Side::Generator, span)?;
    let targets = model.target_ids(&enc.source, question);
    let steps = model.teacher_forced(tape, store, &enc, &targets)?;
    let mut nll = Vec::with_capacity(steps.len());
    let mut cov = Vec::with_capacity(steps.len());
    for (st, &y) in steps.iter().zip(&targets) {
        let p = tape.gather(st.p_final, y)?;
        nll.push(tape.log(p));
        cov.push(st.coverage_penalty);
    }
    let t = steps.len() as f64;
    let nll = tape.concat(&nll)?;
    let nll = tape.sum(nll);
    let xent = tape.scale(nll, -1.0 / t);
    let cov = tape.concat(&cov)?;
    let cov = tape.sum(cov);
    let coverage = tape.scale(cov, 1.0 / t);
    let weighted = tape.scale(coverage, lambda_c);
    let total = if lambda_c == 0.0 {
        xent
    } else {
        tape.add(xent, weighted)?
    };
    Ok(XentLoss {
        total,
        xent,
        coverage,
        steps: steps.len(),
    })
}

/// `−Σ_t A_t · log p_t`: the REINFORCE surrogate for one sequence.
pub fn reinforce_loss(tape: &mut Tape, log_probs: &[Var], advantages: &[f64]) -> Result<Var> {
    if log_probs.len() != advantages.len() || log_probs.is_empty() {
        return Err(Error::Argument(format!(
            "{} log-probs vs {} advantages",
            log_probs.len(),
            advantages.len()
        )));
    }
    let weights = tape.constant_vec(advantages.iter().map(|a| -a).collect());
    let lp = tape.concat(log_probs)?;
    tape.dot(weights, lp)
}

/// Policy-gradient loss of a fixed token sequence (extended ids).
pub fn policy_loss(
    model: &QgModel,
    tape: &mut Tape,
    store: &ParamStore,
    example: &Example,
    span: Option<Span>,
    ids: &[usize],
    advantages: &[f64],
) -> Result<Var> {
    let enc = model.encode(tape, store, example, Side::Generator, span)?;
    let steps = model.teacher_forced(tape, store, &enc, ids)?;
    let mut lps = Vec::with_capacity(ids.len());
    for (st, &y) in steps.iter().zip(ids) {
        let p = tape.gather(st.p_final, y)?;
        lps.push(tape.log(p));
    }
    reinforce_loss(tape, &lps, advantages)
}

/// One sampled sequence with its credit assignment.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub sample: Decoded,
    pub reward: f64,
    pub baseline: f64,
    pub advantages: Vec<f64>,
}

fn prefix_rewards(reward: &mut dyn RewardFn, ex: &Example, tokens: &[String], pivotal: &[String]) -> Result<Vec<f64>> {
    let mut out = vec![0.0];
    for k in 1..=tokens.len() {
        out.push(reward.reward(ex, &tokens[..k], pivotal)?);
    }
    Ok(out)
}

fn checked(r: f64) -> Result<f64> {
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::Numeric(format!("reward is not finite: {r}")))
    }
}

/// Samples `config.samples` sequences and assigns advantages per the
/// reward mode and baseline.
pub fn rollouts(
    model: &QgModel,
    store: &ParamStore,
    example: &Example,
    span: Span,
    config: &TrainConfig,
    rng: &mut Rng,
    reward: &mut dyn RewardFn,
) -> Result<Vec<Rollout>> {
    let pivotal = span_tokens(example, span);
    let greedy = match config.baseline {
        Baseline::GreedySelfCritical => Some(model.greedy_decode(store, example, Some(span), config.max_len)?),
        Baseline::None => None,
    };
    let greedy_prefix = match (&greedy, config.reward_mode) {
        (Some(g), RewardMode::Incremental) => Some(prefix_rewards(reward, example, &g.tokens, &pivotal)?),
        _ => None,
    };
    let baseline = match (&greedy, &greedy_prefix) {
        (Some(_), Some(p)) => *p.last().expect("nonempty"),
        (Some(g), None) => reward.reward(example, &g.tokens, &pivotal)?,
        (None, _) => 0.0,
    };
    let baseline = checked(baseline)?;
    let mut out = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let sample = model.sample_decode(store, example, Some(span), rng, config.max_len)?;
        let steps = sample.ids.len();
        let (r, advantages) = match config.reward_mode {
            RewardMode::Terminal => {
                let r = checked(reward.reward(example, &sample.tokens, &pivotal)?)?;
                (r, vec![r - baseline; steps])
            }
            RewardMode::Incremental => {
                let pr = prefix_rewards(reward, example, &sample.tokens, &pivotal)?;
                let total = checked(*pr.last().expect("nonempty"))?;
                let adv = (0..steps)
                    .map(|t| {
                        let to_go = total - pr[t.min(sample.tokens.len())];
                        let base = greedy_prefix
                            .as_ref()
                            .map_or(0.0, |g| g.last().expect("nonempty") - g[t.min(g.len() - 1)]);
                        to_go - base
                    })
                    .collect();
                (total, adv)
            }
        };
        out.push(Rollout {
            sample,
            reward: r,
            baseline,
            advantages,
        });
    }
    Ok(out)
}

/// Losses and reward from one update.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepRecord {
    pub xent: Option<f64>,
    pub coverage: Option<f64>,
    pub rl_loss: Option<f64>,
    pub reward: Option<f64>,
    pub baseline: Option<f64>,
}

/// Pure pretraining update: `xent + λ_c·coverage`, backward, Adam.
pub fn xent_step(
    model: &QgModel,
    store: &mut ParamStore,
    example: &Example,
    question: &[String],
    config: &TrainConfig,
    lr: f64,
) -> Result<StepRecord> {
    let span = training_span(model, store, example)?;
    store.zero_grads();
    let mut tape = Tape::new();
    let l = xent_loss(model, &mut tape, store, example, question, Some(span), config.lambda_c)?;
    tape.backward(l.total, 1.0, store)?;
    store.adam_step(lr)?;
    Ok(StepRecord {
        xent: Some(tape.scalar(l.xent)),
        coverage: Some(tape.scalar(l.coverage)),
        ..Default::default()
    })
}

/// Boundary-pointer update against the gold span; no-op without one.
pub fn pointer_step(model: &QgModel, store: &mut ParamStore, example: &Example, lr: f64) -> Result<Option<f64>> {
    let Some(span) = example.answer_span else {
        return Ok(None);
    };
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = model.pointer_loss(&mut tape, store, example, span)?;
    tape.backward(loss, 1.0, store)?;
    store.adam_step(lr)?;
    Ok(Some(tape.scalar(loss)))
}

/// Pure policy-gradient update.
pub fn rl_step(
    model: &QgModel,
    store: &mut ParamStore,
    example: &Example,
    config: &TrainConfig,
    rng: &mut Rng,
    reward: &mut dyn RewardFn,
    lr: f64,
) -> Result<StepRecord> {
    let span = training_span(model, store, example)?;
    store.zero_grads();
    let rec = accumulate_rl(model, store, example, span, config, rng, reward, 1.0)?;
    store.adam_step(lr)?;
    Ok(rec)
}

#[allow(clippy::too_many_arguments)]
fn accumulate_rl(
    model: &QgModel,
    store: &mut ParamStore,
    example: &Example,
    span: Span,
    config: &TrainConfig,
    rng: &mut Rng,
    reward: &mut dyn RewardFn,
    weight: f64,
) -> Result<StepRecord> {
    let rolls = rollouts(model, store, example, span, config, rng, reward)?;
    let k = rolls.len() as f64;
    let mut loss_sum = 0.0;
    for r in &rolls {
        if r.advantages.iter().all(|&a| a == 0.0) {
            continue;
        }
        let mut tape = Tape::new();
        let loss = policy_loss(
            model,
            &mut tape,
            store,
            example,
            Some(span),
            &r.sample.ids,
            &r.advantages,
        )?;
        loss_sum += tape.scalar(loss);
        tape.backward(loss, weight / k, store)?;
    }
    Ok(StepRecord {
        rl_loss: Some(loss_sum / k),
        reward: Some(rolls.iter().map(|r| r.reward).sum::<f64>() / k),
        baseline: Some(rolls[0].baseline),
        ..Default::default()
    })
}

/// `α·(xent + λ_c·coverage) + β·rl`, one backward pass per term, one Adam
/// step. A zero weight skips its term entirely.
#[allow(clippy::too_many_arguments)]
pub fn combined_step(
    model: &QgModel,
    store: &mut ParamStore,
    example: &Example,
    question: &[String],
    config: &TrainConfig,
    rng: &mut Rng,
    reward: &mut dyn RewardFn,
    lr: f64,
) -> Result<StepRecord> {
    let span = training_span(model, store, example)?;
    store.zero_grads();
    let mut rec = StepRecord::default();
    if config.alpha > 0.0 {
        let mut tape = Tape::new();
        let l = xent_loss(model, &mut tape, store, example, question, Some(span), config.lambda_c)?;
        tape.backward(l.total, config.alpha, store)?;
        rec.xent = Some(tape.scalar(l.xent));
        rec.coverage = Some(tape.scalar(l.coverage));
    }
    if config.beta > 0.0 {
        let r = accumulate_rl(model, store, example, span, config, rng, reward, config.beta)?;
        rec.rl_loss = r.rl_loss;
        rec.reward = r.reward;
        rec.baseline = r.baseline;
    }
    store.adam_step(lr)?;
    Ok(rec)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_xent: f64,
    pub mean_coverage: f64,
    pub mean_pointer: f64,
    pub mean_rl_loss: f64,
    pub mean_reward: f64,
    pub steps: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One pass over every (example, gold question) pair in shuffled order,
/// with a pointer update per example.
pub fn pretrain_epoch(
    model: &QgModel,
    store: &mut ParamStore,
    examples: &[Example],
    config: &TrainConfig,
    rng: &mut Rng,
    epoch: usize,
) -> Result<EpochStats> {
    let mut pairs: Vec<(usize, usize)> = examples
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.questions.len()).map(move |q| (i, q)))
        .collect();
    rng.shuffle(&mut pairs);
    let (mut xs, mut cs, mut ps) = (Vec::new(), Vec::new(), Vec::new());
    for &(i, q) in &pairs {
        let ex = &examples[i];
        if q == 0 {
            if let Some(l) = pointer_step(model, store, ex, config.lr)? {
                ps.push(l);
            }
        }
        let r = xent_step(model, store, ex, &ex.questions[q], config, config.lr)?;
        xs.extend(r.xent);
        cs.extend(r.coverage);
    }
    Ok(EpochStats {
        epoch,
        mean_xent: mean(&xs),
        mean_coverage: mean(&cs),
        mean_pointer: mean(&ps),
        steps: pairs.len(),
        ..Default::default()
    })
}

/// One pass of combined updates over the examples in shuffled order; the
/// cross-entropy term cycles through each example's gold questions.
pub fn finetune_epoch(
    model: &QgModel,
    store: &mut ParamStore,
    examples: &[Example],
    config: &TrainConfig,
    rng: &mut Rng,
    reward: &mut dyn RewardFn,
    epoch: usize,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng.shuffle(&mut order);
    let (mut xs, mut cs, mut ls, mut rs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &i in &order {
        let ex = &examples[i];
        let q = &ex.questions[epoch % ex.questions.len()];
        let r = combined_step(model, store, ex, q, config, rng, reward, config.rl_lr)?;
        xs.extend(r.xent);
        cs.extend(r.coverage);
        ls.extend(r.rl_loss);
        rs.extend(r.reward);
    }
    Ok(EpochStats {
        epoch,
        mean_xent: mean(&xs),
        mean_coverage: mean(&cs),
        mean_rl_loss: mean(&ls),
        mean_reward: mean(&rs),
        steps: order.len(),
        ..Default::default()
    })
}

/// Mean teacher-forced cross-entropy over every (example, gold) pair,
/// encoding the gold span.
pub fn heldout_xent(model: &QgModel, store: &ParamStore, examples: &[Example]) -> Result<f64> {
    let mut v = Vec::new();
    for ex in examples {
        let span = training_span(model, store, ex)?;
        for q in &ex.questions {
            let mut tape = Tape::new();
            let l = xent_loss(model, &mut tape, store, ex, q, Some(span), 0.0)?;
            v.push(tape.scalar(l.xent));
        }
    }
    Ok(mean(&v))
}

/// Held-out quality of the full pipeline (pointer span, greedy decode).
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HeldoutReport {
    pub mean_reward: f64,
    pub span_accuracy: f64,
    pub exact_match: f64,
}

pub fn evaluate_heldout(
    model: &QgModel,
    store: &ParamStore,
    examples: &[Example],
    reward: &mut dyn RewardFn,
    max_len: usize,
) -> Result<HeldoutReport> {
    if examples.is_empty() {
        return Ok(HeldoutReport::default());
    }
    let (mut total, mut span_hits, mut exact) = (0.0, 0usize, 0usize);
    for ex in examples {
        let (span, decoded) = model.generate(store, ex, max_len)?;
        let s = (span.start, span.end);
        total += reward.reward(ex, &decoded.tokens, &span_tokens(ex, s))?;
        if ex.answer_span == Some(s) {
            span_hits += 1;
        }
        if ex.questions.contains(&decoded.tokens) {
            exact += 1;
        }
    }
    let n = examples.len() as f64;
    Ok(HeldoutReport {
        mean_reward: total / n,
        span_accuracy: span_hits as f64 / n,
        exact_match: exact as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::OverlapOracle;
    use crate::metrics::BaseMetric;
    use crate::qgmodel::ModelConfig;
    use crate::textdata::{build_vocab, synth_corpus, FeatureVocab};

    fn toy() -> (QgModel, ParamStore, Vec<Example>) {
        let exs = synth_corpus(5, 12);
        let vocab = build_vocab(&exs, 40).unwrap();
        let fv = FeatureVocab::from_examples(&exs);
        let m = QgModel::new(ModelConfig::tiny(), vocab, fv).unwrap();
        let s = m.init_store(3).unwrap();
        (m, s, exs)
    }

    struct Constant(f64);

    impl RewardFn for Constant {
        fn reward(&mut self, _: &Example, _: &[String], _: &[String]) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn lambda_zero_is_plain_xent() {
        let (m, s, exs) = toy();
        let mut t = Tape::new();
        let l = xent_loss(&m, &mut t, &s, &exs[0], &exs[0].questions[0], exs[0].answer_span, 0.0).unwrap();
        assert_eq!(t.scalar(l.total).to_bits(), t.scalar(l.xent).to_bits());
        let mut t = Tape::new();
        let l = xent_loss(&m, &mut t, &s, &exs[0], &exs[0].questions[0], exs[0].answer_span, 2.0).unwrap();
        let want = t.scalar(l.xent) + 2.0 * t.scalar(l.coverage);
        assert!((t.scalar(l.total) - want).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_with_baseline_is_no_update() {
        let (m, mut s, exs) = toy();
        let before = s.clone();
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 1.0,
            ..Default::default()
        };
        let rec = rl_step(&m, &mut s, &exs[0], &cfg, &mut Rng::new(1), &mut Constant(0.7), 1e-2).unwrap();
        assert_eq!(rec.reward, Some(0.7));
        assert!(s.values_bitwise_eq(&before));
    }

    #[test]
    fn combined_reductions_are_bitwise() {
        let (m, s0, exs) = toy();
        let ex = &exs[1];
        let q = &ex.questions[0];
        let mut ev = Constant(0.0);

        let cfg = TrainConfig {
            alpha: 1.0,
            beta: 0.0,
            ..Default::default()
        };
        let mut a = s0.clone();
        xent_step(&m, &mut a, ex, q, &cfg, 1e-2).unwrap();
        let mut b = s0.clone();
        combined_step(&m, &mut b, ex, q, &cfg, &mut Rng::new(1), &mut ev, 1e-2).unwrap();
        assert!(a.values_bitwise_eq(&b));

        let spec = RewardSpec::new(BaseMetric::Bleu, true, true);
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 1.0,
            reward: spec.clone(),
            baseline: Baseline::None,
            ..Default::default()
        };
        let mut a = s0.clone();
        let mut ev = Evaluator::new(spec.clone(), Some(Box::new(OverlapOracle)), None).unwrap();
        rl_step(&m, &mut a, ex, &cfg, &mut Rng::new(7), &mut ev, 1e-2).unwrap();
        let mut b = s0.clone();
        let mut ev = Evaluator::new(spec, Some(Box::new(OverlapOracle)), None).unwrap();
        combined_step(&m, &mut b, ex, q, &cfg, &mut Rng::new(7), &mut ev, 1e-2).unwrap();
        assert!(a.values_bitwise_eq(&b));
        assert!(!a.values_bitwise_eq(&s0));
    }

    #[test]
    fn pointer_is_untouched_by_finetuning() {
        let (m, mut s, exs) = toy();
        let before = s.clone();
        let cfg = TrainConfig {
            rl_lr: 1e-2,
            ..Default::default()
        };
        let mut ev = Evaluator::new(cfg.reward.clone(), None, None).unwrap();
        finetune_epoch(&m, &mut s, &exs[..3], &cfg, &mut Rng::new(2), &mut ev, 0).unwrap();
        for (name, p) in s.iter().filter(|(n, _)| n.starts_with("ptr.")) {
            assert_eq!(p.value, before.get(name).unwrap().value, "{name}");
        }
    }

    #[test]
    fn incremental_advantages_telescope() {
        let (m, s, exs) = toy();
        let cfg = TrainConfig {
            reward_mode: RewardMode::Incremental,
            baseline: Baseline::None,
            max_len: 6,
            ..Default::default()
        };
        let mut ev = Evaluator::new(RewardSpec::new(BaseMetric::RougeL, true, false), None, None).unwrap();
        let span = exs[0].answer_span.unwrap();
        let r = rollouts(&m, &s, &exs[0], span, &cfg, &mut Rng::new(3), &mut ev).unwrap();
        let roll = &r[0];
        assert!((roll.advantages[0] - roll.reward).abs() < 1e-15);
    }

    #[test]
    fn config_validation_lists_problems() {
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            lr: -1.0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("alpha") && msg.contains("lr=-1"));
    }
}
