//! Finite-difference gradient checks of each network on tiny dimensions.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::das::{make_pairs, DasConfig, DasModel};
use crate::error::{Error, Result};
use crate::numcore::{finite_diff_check, GradCheckOptions, GradCheckReport, ParamStore, Rng, Tape};
use crate::qgmodel::{ModelConfig, QgModel};
use crate::textdata::{build_vocab, synth_corpus, Example, FeatureVocab};

use super::{policy_loss, xent_loss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Encoder,
    Decoder,
    Pointer,
    Das,
    RlLoss,
}

impl Scope {
    pub const ALL: [Scope; 5] = [
        Scope::Encoder,
        Scope::Decoder,
        Scope::Pointer,
        Scope::Das,
        Scope::RlLoss,
    ];

    /// Parses a scope name; `all` expands to every scope.
    pub fn parse_list(s: &str) -> Result<Vec<Scope>> {
        if s == "all" {
            Ok(Self::ALL.to_vec())
        } else {
            Ok(vec![s.parse()?])
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Scope::Encoder),
            "decoder" => Ok(Scope::Decoder),
            "pointer" => Ok(Scope::Pointer),
            "das" => Ok(Scope::Das),
            "rl" | "rl_loss" => Ok(Scope::RlLoss),
            _ => Err(Error::Argument(format!(
                "unknown gradcheck scope `{s}` (expected encoder, decoder, pointer, das, rl_loss or all)"
            ))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Encoder => "encoder",
            Scope::Decoder => "decoder",
            Scope::Pointer => "pointer",
            Scope::Das => "das",
            Scope::RlLoss => "rl_loss",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScopeReport {
    pub scope: Scope,
    pub report: GradCheckReport,
}

struct Fixture {
    model: QgModel,
    store: ParamStore,
    examples: Vec<Example>,
}

fn fixture(seed: u64) -> Result<Fixture> {
    let examples = synth_corpus(seed, 8);
    // A small cap leaves source words out of the vocabulary so the copy
    // path carries gradient.
    let vocab = build_vocab(&examples, 24)?;
    let fvocab = FeatureVocab::from_examples(&examples);
    let model = QgModel::new(ModelConfig::tiny(), vocab, fvocab)?;
    let store = model.init_store(seed)?;
    Ok(Fixture { model, store, examples })
}

fn prefixes(p: &[&str]) -> Vec<String> {
    p.iter().map(|s| s.to_string()).collect()
}

/// Checks one scope at ε = 1e-5 and tolerance 1e-4.
pub fn check_scope(scope: Scope, seed: u64) -> Result<ScopeReport> {
    let opts = GradCheckOptions::default();
    let report = match scope {
        Scope::Encoder | Scope::Decoder => {
            let Fixture {
                model,
                mut store,
                examples,
            } = fixture(seed)?;
            let ex = &examples[0];
            let q = &ex.questions[0];
            let opts = GradCheckOptions {
                prefixes: if scope == Scope::Encoder {
                    prefixes(&["gen.emb.", "gen.enc.", "gen.init."])
                } else {
                    prefixes(&["gen.dec.", "gen.att.", "gen.out.", "gen.copy."])
                },
                ..opts
            };
            finite_diff_check(
                |s| {
                    let mut t = Tape::new();
                    let l = xent_loss(&model, &mut t, s, ex, q, ex.answer_span, 1.0)?;
                    Ok((t, l.total))
                },
                &mut store,
                &opts,
            )?
        }
        Scope::Pointer => {
            let Fixture {
                model,
                mut store,
                examples,
            } = fixture(seed)?;
            let ex = &examples[1];
            let span = ex
                .answer_span
                .ok_or_else(|| Error::Argument("fixture lacks a span".into()))?;
            let opts = GradCheckOptions {
                prefixes: prefixes(&["ptr."]),
                ..opts
            };
            finite_diff_check(
                |s| {
                    let mut t = Tape::new();
                    let l = model.pointer_loss(&mut t, s, ex, span)?;
                    Ok((t, l))
                },
                &mut store,
                &opts,
            )?
        }
        Scope::Das => {
            let examples = synth_corpus(seed, 6);
            let mut rng = Rng::new(seed);
            let pairs = make_pairs(&examples, &mut rng);
            let cfg = DasConfig {
                emb_dim: 3,
                hidden: 4,
                out_dim: 3,
            };
            let model = DasModel::new(DasModel::vocab_for(&examples)?, cfg, &mut rng)?;
            let batch: Vec<_> = pairs.iter().take(4).collect();
            let mut store = model.store.clone();
            finite_diff_check(|s| model.batch_loss(s, &batch), &mut store, &opts)?
        }
        Scope::RlLoss => {
            let Fixture {
                model,
                mut store,
                examples,
            } = fixture(seed)?;
            let ex = &examples[2];
            let mut rng = Rng::new(seed);
            let sample = model.sample_decode(&store, ex, ex.answer_span, &mut rng, 6)?;
            let advantages: Vec<f64> = (0..sample.ids.len()).map(|t| 0.7 - 0.1 * t as f64).collect();
            let opts = GradCheckOptions {
                prefixes: prefixes(&["gen."]),
                ..opts
            };
            finite_diff_check(
                |s| {
                    let mut t = Tape::new();
                    let l = policy_loss(&model, &mut t, s, ex, ex.answer_span, &sample.ids, &advantages)?;
                    Ok((t, l))
                },
                &mut store,
                &opts,
            )?
        }
    };
    Ok(ScopeReport { scope, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_names_round_trip() {
        for s in Scope::ALL {
            assert_eq!(s.to_string().parse::<Scope>().unwrap(), s);
        }
        assert_eq!(Scope::parse_list("all").unwrap().len(), 5);
        assert!("lstm".parse::<Scope>().is_err());
    }

    #[test]
    fn every_scope_passes() {
        for scope in Scope::ALL {
            let r = check_scope(scope, 1).unwrap();
            assert!(
                r.report.passed,
                "{scope}: {:?}",
                r.report.failures().collect::<Vec<_>>()
            );
            assert!(r.report.params.iter().all(|p| p.checked > 0), "{scope}");
        }
    }
}
