//! Answer predictors used by the ANSS reward: a built-in overlap rule and a
//! child process speaking one JSON object per line.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const MAX_ANSWER_LEN: usize = 8;
const WINDOW: usize = 8;

const STOPWORDS: [&str; 30] = [
    "a", "an", "the", "of", "in", "on", "at", "by", "for", "to", "from", "with", "was", "were", "is", "are", "be",
    "been", "and", "or", "as", "that", "this", "it", "its", "did", "do", "does", "has", "had",
];

/// Extracts the answer a question asks for from its source sentence.
pub trait AnswerPredictor {
    fn predict(&mut self, sentence: &[String], question: &[String]) -> Result<Vec<String>>;

    fn name(&self) -> &str;
}

/// Built-in predictor: the answer is the best span of sentence tokens the
/// question did not copy, scored by how many copied words surround it.
///
/// Candidate spans have at most 8 tokens, contain no copied word, and start
/// and end on a content token (alphanumeric, not a stopword). A span scores
/// the number of distinct copied words within 8 tokens on either side. Ties
/// go to the shorter span, then the earlier one.
#[derive(Clone, Debug, Default)]
pub struct OverlapOracle;

fn is_content(tok: &str) -> bool {
    tok.chars().any(char::is_alphanumeric) && !STOPWORDS.contains(&tok)
}

impl OverlapOracle {
    pub fn span(sentence: &[String], question: &[String]) -> Option<(usize, usize)> {
        let q: HashSet<&str> = question.iter().map(String::as_str).collect();
        let copied: Vec<bool> = sentence.iter().map(|t| q.contains(t.as_str())).collect();
        let n = sentence.len();
        let mut best: Option<(usize, usize, usize)> = None;
        for s in 0..n {
            if copied[s] || !is_content(&sentence[s]) {
                continue;
            }
            for e in s..n.min(s + MAX_ANSWER_LEN) {
                if copied[e] {
                    break;
                }
                if !is_content(&sentence[e]) {
                    continue;
                }
                let left = s.saturating_sub(WINDOW)..s;
                let right = e + 1..n.min(e + 1 + WINDOW);
                let near: HashSet<&str> = left
                    .chain(right)
                    .filter(|&i| copied[i])
                    .map(|i| sentence[i].as_str())
                    .collect();
                let score = near.len();
                let better = match best {
                    None => true,
                    Some((bs, be, bscore)) => score > bscore || (score == bscore && e - s < be - bs),
                };
                if better {
                    best = Some((s, e, score));
                }
            }
        }
        best.map(|(s, e, _)| (s, e))
    }
}

impl AnswerPredictor for OverlapOracle {
    fn predict(&mut self, sentence: &[String], question: &[String]) -> Result<Vec<String>> {
        Ok(Self::span(sentence, question)
            .map(|(s, e)| sentence[s..=e].to_vec())
            .unwrap_or_default())
    }

    fn name(&self) -> &str {
        "overlap-oracle"
    }
}

#[derive(Serialize)]
struct Request<'a> {
    sentence: &'a [String],
    question: &'a [String],
}

#[derive(Deserialize)]
struct Reply {
    answer: Vec<String>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Child process answering `{"sentence", "question"}` requests with
/// `{"answer"}` replies, one JSON object per line.
///
/// After a timeout or a bad reply the child is killed and the next request
/// starts a fresh one.
pub struct ExternalPredictor {
    command: String,
    timeout: Duration,
    running: Option<Running>,
}

impl ExternalPredictor {
    pub fn new(command: impl Into<String>) -> Self {
        Self::with_timeout(command, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(command: impl Into<String>, timeout: Duration) -> Self {
        ExternalPredictor {
            command: command.into(),
            timeout,
            running: None,
        }
    }

    fn spawn(&self) -> Result<Running> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Predictor(format!("cannot start `{}`: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    fn kill(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    fn exchange(&mut self, request: &str) -> Result<Vec<String>> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let r = self.running.as_mut().expect("just spawned");
        r.stdin
            .write_all(request.as_bytes())
            .and_then(|_| r.stdin.flush())
            .map_err(|e| Error::Predictor(format!("write to `{}` failed: {e}", self.command)))?;
        let line = match r.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::Predictor(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Predictor(format!(
                    "no reply from `{}` within {:?}",
                    self.command, self.timeout
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Predictor(format!("`{}` closed its output", self.command)))
            }
        };
        let reply: Reply =
            serde_json::from_str(&line).map_err(|e| Error::Predictor(format!("malformed reply {line:?}: {e}")))?;
        Ok(reply.answer)
    }
}

impl AnswerPredictor for ExternalPredictor {
    fn predict(&mut self, sentence: &[String], question: &[String]) -> Result<Vec<String>> {
        let mut request = serde_json::to_string(&Request { sentence, question })?;
        request.push('\n');
        let out = self.exchange(&request);
        if out.is_err() {
            self.kill();
        }
        out
    }

    fn name(&self) -> &str {
        &self.command
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        self.kill();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    const SICHUAN: &str = "even with the five largest cities in sichuan suffering only minor damage from the quake , some estimates of the economic loss run higher than us $ 75 billion , making the earthquake one of the costliest natural disasters in chinese history .";

    #[test]
    fn overlap_oracle_finds_five() {
        let q = t("how many largest cities in sichuan suffering only minor damage from the quake ?");
        let ans = OverlapOracle.predict(&t(SICHUAN), &q).unwrap();
        assert_eq!(ans, ["five"]);
    }

    #[test]
    fn overlap_oracle_on_template_sentence() {
        let s = t("the old bridge was built by king henry in 1622 .");
        let q = t("in what year was the old bridge built by king henry ?");
        assert_eq!(OverlapOracle.predict(&s, &q).unwrap(), ["1622"]);
    }

    #[test]
    fn overlap_oracle_no_candidate() {
        let s = t("the bridge .");
        assert!(OverlapOracle.predict(&s, &t("the bridge ?")).unwrap().is_empty());
    }

    #[test]
    fn external_stub_replies() {
        let mut p = ExternalPredictor::new(r#"while read l; do echo '{"answer":["five"]}'; done"#);
        for _ in 0..3 {
            assert_eq!(p.predict(&t("a five b"), &t("how many ?")).unwrap(), ["five"]);
        }
    }

    #[test]
    fn external_hang_times_out_then_recovers() {
        let mut p = ExternalPredictor::with_timeout("sleep 5", Duration::from_millis(100));
        let err = p.predict(&t("a"), &t("b")).unwrap_err();
        assert!(matches!(err, Error::Predictor(_)), "{err}");
        assert!(p.running.is_none());
    }

    #[test]
    fn external_malformed_reply() {
        let mut p = ExternalPredictor::new("while read l; do echo nope; done");
        assert!(matches!(p.predict(&t("a"), &t("b")), Err(Error::Predictor(_))));
    }
}
