use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use qgrl_core::das::{make_pairs, train_das, DasModel};
use qgrl_core::metrics::{anss, bleu, corpus_bleu, gleu, qss, rouge_l_multi, BaseMetric, DasScorer};
use qgrl_core::numcore::{ParamStore, Rng};
use qgrl_core::qgmodel::QgModel;
use qgrl_core::textdata::{build_vocab, load_corpus, synth_corpus, write_corpus, Example, FeatureVocab, Vocabulary};
use qgrl_core::training::{
    check_scope, evaluate_heldout, finetune_epoch, heldout_xent, load_checkpoint, pretrain_epoch, save_checkpoint,
    Checkpoint, EpochStats, Evaluator, Scope,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::{Cli, Command};

/// Bad invocation; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "usage error: {}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let result = dispatch(cli);
    match result {
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            log::error!("{e:#}");
            Ok(ExitCode::from(2))
        }
        other => other,
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(s) = cli.seed {
        cfg.training.seed = s;
        cfg.das_train.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| usage(format!("missing {what}")))
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = resolve(&cli)?;
    let name = match &cli.command {
        Command::Synth { .. } => "synth",
        Command::BuildVocab { .. } => "build-vocab",
        Command::Pretrain => "pretrain",
        Command::Finetune => "finetune",
        Command::TrainDas => "train-das",
        Command::Generate { .. } => "generate",
        Command::Evaluate { .. } => "evaluate",
        Command::Gradcheck { .. } => "gradcheck",
    };
    cfg.log_resolved(name);
    match &cli.command {
        Command::Synth { n } => synth(&cfg, *n),
        Command::BuildVocab { corpus, cap } => build_vocab_cmd(&cfg, corpus, cap.unwrap_or(cfg.vocab_size)),
        Command::Pretrain => pretrain(&cfg),
        Command::Finetune => finetune(&cfg),
        Command::TrainDas => train_das_cmd(&cfg),
        Command::Generate { checkpoint, corpus } => generate(&cfg, checkpoint, corpus),
        Command::Evaluate { candidates, references } => evaluate(&cfg, candidates, references),
        Command::Gradcheck { scope } => gradcheck(&cfg, scope),
    }
}

fn synth(cfg: &RunConfig, n: usize) -> anyhow::Result<ExitCode> {
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let out = required(&cfg.out, "--out for the corpus file")?;
    let examples = synth_corpus(cfg.training.seed, n);
    write_corpus(out, &examples).with_context(|| format!("cannot write {}", out.display()))?;
    log::info!("wrote {n} examples to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    vocab: Vocabulary,
    features: FeatureVocab,
}

fn build_vocab_cmd(cfg: &RunConfig, corpus: &Path, cap: usize) -> anyhow::Result<ExitCode> {
    let out = required(&cfg.out, "--out for the vocabulary file")?;
    let examples = load_corpus(corpus)?;
    let file = VocabFile {
        vocab: build_vocab(&examples, cap)?,
        features: FeatureVocab::from_examples(&examples),
    };
    write_json(out, &file)?;
    log::info!("vocabulary of {} tokens written to {}", file.vocab.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<&PathBuf> {
    let dir = required(&cfg.out, "an output directory (--out or out=)")?;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn load_das(cfg: &RunConfig) -> anyhow::Result<Option<DasModel>> {
    let Some(p) = &cfg.das_checkpoint else {
        return Ok(None);
    };
    let ck = load_checkpoint(p).with_context(|| format!("cannot load DAS checkpoint {}", p.display()))?;
    ck.das
        .map(Some)
        .ok_or_else(|| anyhow!("{} holds no DAS model", p.display()))
}

struct Metrics {
    file: BufWriter<File>,
}

impl Metrics {
    fn create(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join("metrics.jsonl");
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(Metrics {
            file: BufWriter::new(file),
        })
    }

    fn emit(&mut self, line: serde_json::Value) -> anyhow::Result<()> {
        log::info!("{line}");
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }
}

fn epoch_line(
    phase: &str,
    stats: &EpochStats,
    cfg: &RunConfig,
    model: &QgModel,
    store: &ParamStore,
    heldout: Option<&[Example]>,
    evaluator: &mut Evaluator<'_>,
) -> anyhow::Result<serde_json::Value> {
    let mut line = json!({
        "phase": phase,
        "epoch": stats.epoch + 1,
        "loss": stats.mean_xent + cfg.training.lambda_c * stats.mean_coverage,
        "xent": stats.mean_xent,
        "coverage": stats.mean_coverage,
        "steps": stats.steps,
    });
    if phase == "pretrain" {
        line["pointer_loss"] = json!(stats.mean_pointer);
    } else {
        line["rl_loss"] = json!(stats.mean_rl_loss);
        line["reward"] = json!(stats.mean_reward);
    }
    if let Some(h) = heldout {
        let report = evaluate_heldout(model, store, h, evaluator, cfg.training.max_len)?;
        line["heldout_xent"] = json!(heldout_xent(model, store, h)?);
        line["heldout_reward"] = json!(report.mean_reward);
        line["heldout_span_accuracy"] = json!(report.span_accuracy);
        line["heldout_exact_match"] = json!(report.exact_match);
    }
    Ok(line)
}

fn save_epoch(dir: &Path, epoch: usize, ck: &Checkpoint) -> anyhow::Result<()> {
    save_checkpoint(&dir.join(format!("epoch-{:03}.qgrl", epoch + 1)), ck)?;
    save_checkpoint(&dir.join("model.qgrl"), ck)?;
    Ok(())
}

fn load_optional_corpus(p: &Option<PathBuf>) -> anyhow::Result<Option<Vec<Example>>> {
    p.as_ref().map(|p| load_corpus(p).map_err(Into::into)).transpose()
}

fn pretrain(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let train = load_corpus(required(&cfg.train, "train= corpus path")?)?;
    let heldout = load_optional_corpus(&cfg.heldout)?;
    let dir = out_dir(cfg)?;
    let (vocab, features) = match &cfg.vocab {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            let f: VocabFile =
                serde_json::from_str(&text).with_context(|| format!("bad vocabulary file {}", p.display()))?;
            (f.vocab, f.features)
        }
        None => (
            build_vocab(&train, cfg.vocab_size)?,
            FeatureVocab::from_examples(&train),
        ),
    };
    let das = load_das(cfg)?;
    let model = QgModel::new(cfg.model.clone(), vocab, features)?;
    let seed = cfg.training.seed;
    let mut store = model.init_store(seed)?;
    let mut rng = Rng::new(seed).fork();
    let mut metrics = Metrics::create(dir)?;
    for epoch in 0..cfg.training.epochs {
        let stats = pretrain_epoch(&model, &mut store, &train, &cfg.training, &mut rng, epoch)?;
        let mut ev = Evaluator::new(
            cfg.training.reward.clone(),
            cfg.predictor(),
            das.as_ref().map(|d| d as &dyn DasScorer),
        )?;
        let line = epoch_line("pretrain", &stats, cfg, &model, &store, heldout.as_deref(), &mut ev)?;
        metrics.emit(line)?;
        let ck = Checkpoint {
            config: cfg.to_json(),
            generator: Some((model.clone(), store.clone())),
            das: das.clone(),
        };
        save_epoch(dir, epoch, &ck)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn finetune(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let pre = cfg
        .pretrained
        .as_ref()
        .ok_or_else(|| usage("finetune needs a pretrained checkpoint (pretrained=PATH)"))?;
    if !pre.exists() {
        bail!(
            "pretrained checkpoint {} does not exist; run pretrain first",
            pre.display()
        );
    }
    let ck = load_checkpoint(pre).with_context(|| format!("cannot load {}", pre.display()))?;
    let (model, mut store) = ck
        .generator
        .ok_or_else(|| anyhow!("{} holds no generator", pre.display()))?;
    let das = match load_das(cfg)? {
        Some(d) => Some(d),
        None => ck.das,
    };
    if cfg.training.reward.base == BaseMetric::Das && das.is_none() {
        bail!("base=das needs a DAS model (das_checkpoint=PATH or a checkpoint that contains one)");
    }
    let train = load_corpus(required(&cfg.train, "train= corpus path")?)?;
    let heldout = load_optional_corpus(&cfg.heldout)?;
    let dir = out_dir(cfg)?;
    let mut rng = Rng::new(cfg.training.seed).fork();
    let mut metrics = Metrics::create(dir)?;
    let scorer = das.as_ref().map(|d| d as &dyn DasScorer);
    let mut train_eval = Evaluator::new(cfg.training.reward.clone(), cfg.predictor(), scorer)?;
    for epoch in 0..cfg.training.epochs {
        let stats = finetune_epoch(
            &model,
            &mut store,
            &train,
            &cfg.training,
            &mut rng,
            &mut train_eval,
            epoch,
        )?;
        let mut ev = Evaluator::new(cfg.training.reward.clone(), cfg.predictor(), scorer)?;
        let line = epoch_line("finetune", &stats, cfg, &model, &store, heldout.as_deref(), &mut ev)?;
        metrics.emit(line)?;
        let ck = Checkpoint {
            config: cfg.to_json(),
            generator: Some((model.clone(), store.clone())),
            das: das.clone(),
        };
        save_epoch(dir, epoch, &ck)?;
    }
    if train_eval.predictor_failures > 0 {
        log::warn!(
            "{} answer predictions failed during fine-tuning",
            train_eval.predictor_failures
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn train_das_cmd(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let train = load_corpus(required(&cfg.train, "train= corpus path")?)?;
    let dir = out_dir(cfg)?;
    let mut rng = Rng::new(cfg.das_train.seed);
    let pairs = make_pairs(&train, &mut rng);
    let mut model = DasModel::new(DasModel::vocab_for(&train)?, cfg.das, &mut rng)?;
    let report = train_das(&pairs, &mut model, &cfg.das_train)?;
    let mut metrics = Metrics::create(dir)?;
    let last = report.epoch_losses.len();
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        let mut line = json!({"phase": "das", "epoch": i + 1, "loss": loss});
        if i + 1 == last {
            line["train_accuracy"] = json!(report.train_accuracy);
            line["heldout_accuracy"] = json!(report.heldout_accuracy);
        }
        metrics.emit(line)?;
    }
    let ck = Checkpoint {
        config: cfg.to_json(),
        generator: None,
        das: Some(model),
    };
    save_checkpoint(&dir.join("das.qgrl"), &ck)?;
    log::info!(
        "DAS trained on {} pairs ({} held out)",
        report.train_pairs,
        report.heldout_pairs
    );
    Ok(ExitCode::SUCCESS)
}

fn generate(cfg: &RunConfig, checkpoint: &Path, corpus: &Path) -> anyhow::Result<ExitCode> {
    let out = required(&cfg.out, "--out for generated questions")?;
    let ck = load_checkpoint(checkpoint).with_context(|| format!("cannot load {}", checkpoint.display()))?;
    let (model, store) = ck
        .generator
        .ok_or_else(|| anyhow!("{} holds no generator", checkpoint.display()))?;
    let examples = load_corpus(corpus)?;
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("cannot create {}", out.display()))?);
    for ex in &examples {
        let (span, decoded) = model.generate(&store, ex, cfg.training.max_len)?;
        let line = json!({
            "id": ex.id,
            "question": decoded.tokens,
            "sentence": ex.sentence,
            "answer_span": [span.start, span.end],
        });
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    log::info!("generated {} questions into {}", examples.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct QuestionLine {
    id: String,
    #[serde(default)]
    question: Option<Vec<String>>,
    #[serde(default)]
    questions: Option<Vec<Vec<String>>>,
    #[serde(default)]
    sentence: Option<Vec<String>>,
    #[serde(default)]
    answer_span: Option<(usize, usize)>,
}

struct Scored {
    id: String,
    questions: Vec<Vec<String>>,
    sentence: Option<Vec<String>>,
    answer: Option<Vec<String>>,
}

/// Reads corpus lines (`questions`) or generated lines (`question`).
fn read_questions(path: &Path) -> anyhow::Result<Vec<Scored>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad JSON line", path.display(), i + 1))?;
        let questions = match (q.question, q.questions) {
            (Some(one), _) => vec![one],
            (None, Some(many)) if !many.is_empty() => many,
            _ => bail!(
                "{}:{}: line has neither `question` nor `questions`",
                path.display(),
                i + 1
            ),
        };
        let answer = match (&q.sentence, q.answer_span) {
            (Some(s), Some((a, b))) if a <= b && b < s.len() => Some(s[a..=b].to_vec()),
            _ => None,
        };
        out.push(Scored {
            id: q.id,
            questions,
            sentence: q.sentence,
            answer,
        });
    }
    Ok(out)
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn evaluate(cfg: &RunConfig, candidates: &Path, references: &Path) -> anyhow::Result<ExitCode> {
    let out = required(&cfg.out, "--out for scores")?;
    let cands = read_questions(candidates)?;
    let refs: HashMap<String, Scored> = read_questions(references)?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    let cand_ids: BTreeSet<&str> = cands.iter().map(|c| c.id.as_str()).collect();
    let missing: Vec<&str> = cand_ids.iter().copied().filter(|id| !refs.contains_key(*id)).collect();
    let mut unused: Vec<&str> = refs
        .keys()
        .map(String::as_str)
        .filter(|id| !cand_ids.contains(id))
        .collect();
    unused.sort_unstable();
    if !missing.is_empty() || !unused.is_empty() {
        return Err(qgrl_core::Error::Pairing(format!(
            "candidates without references: {missing:?}; references without candidates: {unused:?}"
        ))
        .into());
    }
    let max_n = cfg.training.reward.max_n;
    let mut predictor = cfg.predictor();
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("cannot create {}", out.display()))?);
    let mut pairs = Vec::with_capacity(cands.len());
    let (mut gs, mut rs, mut qs, mut ans) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for c in &cands {
        let r = &refs[&c.id];
        let cand = &c.questions[0];
        let golds: Vec<&[String]> = r.questions.iter().map(Vec::as_slice).collect();
        let g = gleu(cand, &golds, max_n);
        let rl = rouge_l_multi(cand, &golds);
        let sentence = r.sentence.as_ref().or(c.sentence.as_ref());
        let q = sentence.map(|s| qss(cand, s, max_n));
        let pivotal = c.answer.as_ref().or(r.answer.as_ref());
        let a = match (sentence, pivotal, predictor.as_mut()) {
            (Some(s), Some(piv), Some(p)) => match p.predict(s, cand) {
                Ok(pred) => Some(anss(&pred, piv, max_n)),
                Err(e) => {
                    log::warn!("answer predictor failed on `{}`: {e}", c.id);
                    None
                }
            },
            _ => None,
        };
        gs.push(g);
        rs.push(rl);
        qs.extend(q);
        ans.extend(a);
        let line = json!({
            "id": c.id,
            "bleu4": bleu(cand, &golds, max_n),
            "gleu": g,
            "rouge_l": rl,
            "qss": q,
            "anss": a,
        });
        writeln!(w, "{line}")?;
        pairs.push((cand.as_slice(), golds));
    }
    let corpus = json!({
        "corpus": {
            "n": cands.len(),
            "bleu4": corpus_bleu(&pairs, max_n),
            "gleu": mean_of(&gs),
            "rouge_l": mean_of(&rs),
            "qss": mean_of(&qs),
            "anss": mean_of(&ans),
        }
    });
    writeln!(w, "{corpus}")?;
    w.flush()?;
    log::info!("{corpus}");
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(cfg: &RunConfig, scope: &str) -> anyhow::Result<ExitCode> {
    let scopes = Scope::parse_list(scope).map_err(|e| usage(e.to_string()))?;
    let mut reports = Vec::new();
    let mut ok = true;
    for s in scopes {
        let r = check_scope(s, cfg.training.seed)?;
        log::info!(
            "gradcheck {s}: max relative error {:.3e} over {} parameters ({})",
            r.report.max_rel_error,
            r.report.params.len(),
            if r.report.passed { "pass" } else { "FAIL" }
        );
        for f in r.report.failures() {
            log::error!(
                "{s}: {} [{}] analytic {} numeric {}",
                f.name,
                f.worst_index,
                f.analytic,
                f.numeric
            );
        }
        ok &= r.report.passed;
        reports.push(r);
    }
    if let Some(out) = &cfg.out {
        write_json(out, &reports)?;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
