//! `key = value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context};
use qgrl_core::answer::{AnswerPredictor, ExternalPredictor, OverlapOracle};
use qgrl_core::das::{DasConfig, DasTrainOptions};
use qgrl_core::metrics::BaseMetric;
use qgrl_core::qgmodel::ModelConfig;
use qgrl_core::training::TrainConfig;

pub const ANSWER_CMD_ENV: &str = "QGRL_ANSWER_CMD";
/// Built-in overlap rule; `none` disables answer prediction.
pub const BUILTIN_PREDICTOR: &str = "overlap-oracle";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub das_checkpoint: Option<PathBuf>,
    pub vocab_size: usize,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub answer_cmd: String,
    pub answer_timeout_ms: u64,
    pub das: DasConfig,
    pub das_train: DasTrainOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            heldout: None,
            vocab: None,
            out: None,
            pretrained: None,
            das_checkpoint: None,
            vocab_size: 200,
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            answer_cmd: BUILTIN_PREDICTOR.to_string(),
            answer_timeout_ms: 5000,
            das: DasConfig::default(),
            das_train: DasTrainOptions::default(),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn path(v: &str) -> Result<Option<PathBuf>, String> {
    if v.is_empty() {
        Err("empty path".into())
    } else {
        Ok(Some(PathBuf::from(v)))
    }
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.training;
        let m = &mut self.model;
        match key {
            "train" => self.train = path(v)?,
            "heldout" => self.heldout = path(v)?,
            "vocab" => self.vocab = path(v)?,
            "out" => self.out = path(v)?,
            "pretrained" => self.pretrained = path(v)?,
            "das_checkpoint" => self.das_checkpoint = path(v)?,
            "vocab_size" => self.vocab_size = parse(v)?,
            "word_dim" => m.word_dim = parse(v)?,
            "feat_dim" => m.feat_dim = parse(v)?,
            "enc_hidden" => m.enc_hidden = parse(v)?,
            "enc_layers" => m.enc_layers = parse(v)?,
            "dec_hidden" => m.dec_hidden = parse(v)?,
            "att_dim" => m.att_dim = parse(v)?,
            "ptr_dim" => m.ptr_dim = parse(v)?,
            "max_span" => m.max_span = parse(v)?,
            "coverage" => m.coverage = parse(v)?,
            "lambda_c" => t.lambda_c = parse(v)?,
            "alpha" => t.alpha = parse(v)?,
            "beta" => t.beta = parse(v)?,
            "lr" => t.lr = parse(v)?,
            "rl_lr" => t.rl_lr = parse(v)?,
            "epochs" => t.epochs = parse(v)?,
            "seed" => {
                t.seed = parse(v)?;
                self.das_train.seed = t.seed;
            }
            "reward_mode" => t.reward_mode = parse(v).map_err(|e| e.to_string())?,
            "baseline" => t.baseline = parse(v).map_err(|e| e.to_string())?,
            "samples" => t.samples = parse(v)?,
            "max_len" => t.max_len = parse(v)?,
            "base" => t.reward.base = v.parse::<BaseMetric>().map_err(|e| e.to_string())?,
            "qss" => t.reward.use_qss = parse(v)?,
            "anss" => t.reward.use_anss = parse(v)?,
            "w_base" => t.reward.weights[0] = parse(v)?,
            "w_qss" => t.reward.weights[1] = parse(v)?,
            "w_anss" => t.reward.weights[2] = parse(v)?,
            "max_n" => t.reward.max_n = parse(v)?,
            "answer_cmd" => self.answer_cmd = v.to_string(),
            "answer_timeout_ms" => self.answer_timeout_ms = parse(v)?,
            "das_emb_dim" => self.das.emb_dim = parse(v)?,
            "das_hidden" => self.das.hidden = parse(v)?,
            "das_out_dim" => self.das.out_dim = parse(v)?,
            "das_epochs" => self.das_train.epochs = parse(v)?,
            "das_lr" => self.das_train.lr = parse(v)?,
            "das_batch_size" => self.das_train.batch_size = parse(v)?,
            "das_heldout_fraction" => self.das_train.heldout_fraction = parse(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.training;
        let m = &self.model;
        vec![
            ("train", show(&self.train)),
            ("heldout", show(&self.heldout)),
            ("vocab", show(&self.vocab)),
            ("out", show(&self.out)),
            ("pretrained", show(&self.pretrained)),
            ("das_checkpoint", show(&self.das_checkpoint)),
            ("vocab_size", self.vocab_size.to_string()),
            ("word_dim", m.word_dim.to_string()),
            ("feat_dim", m.feat_dim.to_string()),
            ("enc_hidden", m.enc_hidden.to_string()),
            ("enc_layers", m.enc_layers.to_string()),
            ("dec_hidden", m.dec_hidden.to_string()),
            ("att_dim", m.att_dim.to_string()),
            ("ptr_dim", m.ptr_dim.to_string()),
            ("max_span", m.max_span.to_string()),
            ("coverage", m.coverage.to_string()),
            ("lambda_c", t.lambda_c.to_string()),
            ("alpha", t.alpha.to_string()),
            ("beta", t.beta.to_string()),
            ("lr", t.lr.to_string()),
            ("rl_lr", t.rl_lr.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("reward_mode", t.reward_mode.to_string()),
            ("baseline", t.baseline.to_string()),
            ("samples", t.samples.to_string()),
            ("max_len", t.max_len.to_string()),
            ("base", t.reward.base.to_string()),
            ("qss", t.reward.use_qss.to_string()),
            ("anss", t.reward.use_anss.to_string()),
            ("w_base", t.reward.weights[0].to_string()),
            ("w_qss", t.reward.weights[1].to_string()),
            ("w_anss", t.reward.weights[2].to_string()),
            ("max_n", t.reward.max_n.to_string()),
            ("answer_cmd", self.answer_cmd.clone()),
            ("answer_timeout_ms", self.answer_timeout_ms.to_string()),
            ("das_emb_dim", self.das.emb_dim.to_string()),
            ("das_hidden", self.das.hidden.to_string()),
            ("das_out_dim", self.das.out_dim.to_string()),
            ("das_epochs", self.das_train.epochs.to_string()),
            ("das_lr", self.das_train.lr.to_string()),
            ("das_batch_size", self.das_train.batch_size.to_string()),
            ("das_heldout_fraction", self.das_train.heldout_fraction.to_string()),
        ]
    }

    /// Snapshot stored in checkpoints. The output location is left out so
    /// identical runs into different directories write identical files.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.entries()
                .into_iter()
                .filter(|(k, _)| *k != "out")
                .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
                .collect(),
        )
    }

    /// Parses `key = value` lines. `#` starts a comment. All problems are
    /// reported together.
    pub fn parse_str(text: &str) -> anyhow::Result<Self> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                problems.push(format!("line {}: expected key=value, got `{line}`", i + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if let Err(e) = cfg.set(k, v) {
                problems.push(format!("line {}: `{k}`: {e}", i + 1));
            }
        }
        if let Err(e) = cfg.validate() {
            problems.push(e.to_string());
        }
        if !problems.is_empty() {
            bail!("invalid configuration:\n  {}", problems.join("\n  "));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.training.validate()?;
        self.model.validate()?;
        if self.vocab_size < 4 {
            bail!("vocab_size={} (need ≥ 4)", self.vocab_size);
        }
        Ok(())
    }

    pub fn log_resolved(&self, command: &str) {
        let body: Vec<String> = self.entries().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        log::info!("{command} resolved config: {}", body.join(" "));
    }

    /// `QGRL_ANSWER_CMD` overrides `answer_cmd`.
    pub fn apply_env(&mut self) {
        if let Ok(cmd) = std::env::var(ANSWER_CMD_ENV) {
            self.answer_cmd = cmd;
        }
    }

    pub fn predictor(&self) -> Option<Box<dyn AnswerPredictor>> {
        match self.answer_cmd.trim() {
            "" | "none" => None,
            BUILTIN_PREDICTOR => Some(Box::new(OverlapOracle)),
            c => Some(Box::new(ExternalPredictor::with_timeout(
                c,
                Duration::from_millis(self.answer_timeout_ms),
            ))),
        }
    }
}
