use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{anss, bleu, gleu, qss, rouge_l};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    Bleu,
    Gleu,
    RougeL,
    Das,
}

impl FromStr for BaseMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" => Ok(BaseMetric::Bleu),
            "gleu" => Ok(BaseMetric::Gleu),
            "rouge_l" | "rouge" => Ok(BaseMetric::RougeL),
            "das" => Ok(BaseMetric::Das),
            other => Err(Error::Config(format!(
                "unknown base metric `{other}` (expected bleu, gleu, rouge_l or das)"
            ))),
        }
    }
}

impl fmt::Display for BaseMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseMetric::Bleu => "bleu",
            BaseMetric::Gleu => "gleu",
            BaseMetric::RougeL => "rouge_l",
            BaseMetric::Das => "das",
        })
    }
}

/// Learned similarity between a generated and a gold question, in (0, 1).
pub trait DasScorer {
    fn das_score(&self, generated: &[String], gold: &[String]) -> f64;
}

/// Which reward components are combined and how they are weighted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub base: BaseMetric,
    pub use_qss: bool,
    pub use_anss: bool,
    /// Raw weights for (base, qss, anss); normalized over the components in use.
    pub weights: [f64; 3],
    pub max_n: usize,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec::new(BaseMetric::Bleu, false, false)
    }
}

impl RewardSpec {
    pub fn new(base: BaseMetric, use_qss: bool, use_anss: bool) -> Self {
        RewardSpec {
            base,
            use_qss,
            use_anss,
            weights: [1.0; 3],
            max_n: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_n == 0 {
            return Err(Error::Config("reward max_n must be at least 1".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "reward weights must be finite and nonnegative, got {:?}",
                self.weights
            )));
        }
        if self.normalized(self.use_anss).is_none() {
            return Err(Error::Config(
                "reward weights of the enabled components sum to zero".into(),
            ));
        }
        Ok(())
    }

    /// Weights for (base, qss, anss) summing to 1 over enabled components.
    pub fn normalized(&self, anss_available: bool) -> Option<[f64; 3]> {
        let on = [true, self.use_qss, self.use_anss && anss_available];
        let total: f64 = (0..3).filter(|&i| on[i]).map(|i| self.weights[i]).sum();
        if total <= 0.0 {
            return None;
        }
        Some(std::array::from_fn(
            |i| if on[i] { self.weights[i] / total } else { 0.0 },
        ))
    }

    /// Short label such as `rouge_l+qss+anss`.
    pub fn label(&self) -> String {
        let mut s = self.base.to_string();
        if self.use_qss {
            s.push_str("+qss");
        }
        if self.use_anss {
            s.push_str("+anss");
        }
        s
    }
}

/// Everything a reward is computed from.
#[derive(Clone, Copy, Debug)]
pub struct RewardInputs<'a> {
    pub question: &'a [String],
    pub golds: &'a [Vec<String>],
    pub sentence: &'a [String],
    /// Answer a predictor extracted for `question`; `None` when unavailable.
    pub predicted_answer: Option<&'a [String]>,
    pub pivotal_answer: &'a [String],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub base: f64,
    pub qss: Option<f64>,
    pub anss: Option<f64>,
    pub total: f64,
}

/// Base metric of `question` against its best-matching gold.
pub fn base_score(
    metric: BaseMetric,
    question: &[String],
    golds: &[Vec<String>],
    max_n: usize,
    das: Option<&dyn DasScorer>,
) -> Result<f64> {
    let per_gold = |g: &Vec<String>| -> Result<f64> {
        Ok(match metric {
            BaseMetric::Bleu => bleu(question, &[g.as_slice()], max_n),
            BaseMetric::Gleu => gleu(question, &[g.as_slice()], max_n),
            BaseMetric::RougeL => rouge_l(question, g),
            BaseMetric::Das => {
                let scorer = das.ok_or_else(|| Error::Config("base metric `das` needs a trained DAS model".into()))?;
                if question.is_empty() {
                    0.0
                } else {
                    scorer.das_score(question, g)
                }
            }
        })
    };
    let mut best = 0.0f64;
    for g in golds {
        best = best.max(per_gold(g)?);
    }
    Ok(best)
}

/// Weighted sum of the enabled components. When ANSS is requested but no
/// predicted answer is available its weight is spread over the rest.
pub fn combined_reward(
    spec: &RewardSpec,
    inputs: &RewardInputs<'_>,
    das: Option<&dyn DasScorer>,
) -> Result<RewardBreakdown> {
    if spec.base == BaseMetric::Das && das.is_none() {
        return Err(Error::Config("base metric `das` needs a trained DAS model".into()));
    }
    let w = spec
        .normalized(inputs.predicted_answer.is_some())
        .ok_or_else(|| Error::Config("reward weights of the available components sum to zero".into()))?;
    let base = base_score(spec.base, inputs.question, inputs.golds, spec.max_n, das)?;
    let qss_v = spec.use_qss.then(|| qss(inputs.question, inputs.sentence, spec.max_n));
    let anss_v = match (spec.use_anss, inputs.predicted_answer) {
        (true, Some(pred)) => Some(anss(pred, inputs.pivotal_answer, spec.max_n)),
        _ => None,
    };
    let total = w[0] * base + w[1] * qss_v.unwrap_or(0.0) + w[2] * anss_v.unwrap_or(0.0);
    if !total.is_finite() {
        return Err(Error::Numeric(format!("reward is not finite: {total}")));
    }
    Ok(RewardBreakdown {
        base,
        qss: qss_v,
        anss: anss_v,
        total: total.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn bleu_only_exact_gold() {
        let q = t("when was it built ?");
        let golds = vec![t("who built it ?"), q.clone()];
        let s = t("it was built in 1900 .");
        let r = combined_reward(
            &RewardSpec::default(),
            &RewardInputs {
                question: &q,
                golds: &golds,
                sentence: &s,
                predicted_answer: None,
                pivotal_answer: &[],
            },
            None,
        )
        .unwrap();
        assert_eq!(r.total, 1.0);
    }

    #[test]
    fn all_components_one() {
        let s = t("the bridge was built in 1900 .");
        let q = t("the bridge was built");
        let ans = t("1900");
        let r = combined_reward(
            &RewardSpec::new(BaseMetric::Bleu, true, true),
            &RewardInputs {
                question: &q,
                golds: std::slice::from_ref(&q),
                sentence: &s,
                predicted_answer: Some(&ans),
                pivotal_answer: &ans,
            },
            None,
        )
        .unwrap();
        assert!((r.total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn missing_predictor_redistributes() {
        let spec = RewardSpec::new(BaseMetric::RougeL, true, true);
        let w = spec.normalized(false).unwrap();
        assert_eq!(w, [0.5, 0.5, 0.0]);
        let w = spec.normalized(true).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn das_without_scorer_is_config_error() {
        let q = t("a ?");
        let err = combined_reward(
            &RewardSpec::new(BaseMetric::Das, false, false),
            &RewardInputs {
                question: &q,
                golds: std::slice::from_ref(&q),
                sentence: &q,
                predicted_answer: None,
                pivotal_answer: &[],
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn parse_and_validate() {
        assert_eq!("ROUGE_L".parse::<BaseMetric>().unwrap(), BaseMetric::RougeL);
        assert!("meteor".parse::<BaseMetric>().is_err());
        let mut spec = RewardSpec::default();
        spec.weights = [0.0, 1.0, 1.0];
        assert!(spec.validate().is_err());
        spec.weights = [-1.0, 1.0, 1.0];
        assert!(spec.validate().is_err());
    }
}
