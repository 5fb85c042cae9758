use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Answer-position tag for one source token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerTag {
    O,
    B,
    I,
}

impl AnswerTag {
    pub const ALL: [AnswerTag; 3] = [AnswerTag::O, AnswerTag::B, AnswerTag::I];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Original casing of a token before lowercasing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseTag {
    Lower,
    Title,
    Upper,
    Other,
}

impl CaseTag {
    pub const ALL: [CaseTag; 4] = [CaseTag::Lower, CaseTag::Title, CaseTag::Upper, CaseTag::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn of(raw: &str) -> CaseTag {
        let letters: Vec<char> = raw.chars().filter(|c| c.is_alphabetic()).collect();
        if letters.is_empty() {
            return CaseTag::Other;
        }
        if letters.iter().all(|c| c.is_lowercase()) {
            CaseTag::Lower
        } else if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
            CaseTag::Upper
        } else if letters[0].is_uppercase() && letters[1..].iter().all(|c| c.is_lowercase()) {
            CaseTag::Title
        } else {
            CaseTag::Other
        }
    }
}

/// Inclusive token span `[start, end]`.
pub type Span = (usize, usize);

/// One corpus record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub sentence: Vec<String>,
    pub pos: Vec<String>,
    pub ner: Vec<String>,
    pub answer_span: Option<Span>,
    pub questions: Vec<Vec<String>>,
    /// Casing of the raw tokens; derived from `sentence` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<Vec<CaseTag>>,
}

impl Example {
    /// Lowercases tokens, fills casing tags and checks every invariant.
    pub fn normalize(mut self) -> std::result::Result<Self, (&'static str, String)> {
        if self.sentence.is_empty() {
            return Err(("sentence", "sentence is empty".into()));
        }
        if self.case.is_none() {
            self.case = Some(self.sentence.iter().map(|t| CaseTag::of(t)).collect());
        }
        self.sentence = self.sentence.iter().map(|t| t.to_lowercase()).collect();
        for q in &mut self.questions {
            *q = q.iter().map(|t| t.to_lowercase()).collect();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let n = self.sentence.len();
        if n == 0 {
            return Err(("sentence", "sentence is empty".into()));
        }
        if self.pos.len() != n {
            return Err(("pos", format!("has {} tags for {n} tokens", self.pos.len())));
        }
        if self.ner.len() != n {
            return Err(("ner", format!("has {} tags for {n} tokens", self.ner.len())));
        }
        if let Some(case) = &self.case {
            if case.len() != n {
                return Err(("case", format!("has {} tags for {n} tokens", case.len())));
            }
        }
        if let Some((s, e)) = self.answer_span {
            if s > e || e >= n {
                return Err(("answer_span", format!("[{s}, {e}] invalid for {n} tokens")));
            }
        }
        if self.questions.is_empty() {
            return Err(("questions", "no gold questions".into()));
        }
        if let Some(i) = self.questions.iter().position(|q| q.is_empty()) {
            return Err(("questions", format!("question {i} is empty")));
        }
        Ok(())
    }

    pub fn case_tags(&self) -> Vec<CaseTag> {
        self.case
            .clone()
            .unwrap_or_else(|| self.sentence.iter().map(|t| CaseTag::of(t)).collect())
    }

    /// Tokens of the gold answer span, if any.
    pub fn answer_tokens(&self) -> Option<&[String]> {
        self.answer_span.map(|(s, e)| &self.sentence[s..=e])
    }

    /// Builds an example from raw whitespace-tokenized text using the
    /// heuristic tagger in [`heuristic_tags`].
    pub fn from_raw(id: impl Into<String>, raw: &str, questions: &[&str], answer_span: Option<Span>) -> Result<Self> {
        let raw_tokens: Vec<&str> = raw.split_whitespace().collect();
        let (pos, ner) = heuristic_tags(&raw_tokens);
        let ex = Example {
            id: id.into(),
            sentence: raw_tokens.iter().map(|t| t.to_string()).collect(),
            pos,
            ner,
            answer_span,
            questions: questions
                .iter()
                .map(|q| q.split_whitespace().map(str::to_string).collect())
                .collect(),
            case: None,
        };
        ex.normalize()
            .map_err(|(field, message)| Error::Argument(format!("{field}: {message}")))
    }
}

/// Rule-based fallback tagger for raw text; a heuristic, not a trained model.
///
/// Digits become `CD`/`NUMBER`, capitalized tokens become `NNP`/`ENTITY`,
/// punctuation becomes `.`/`O` and everything else `NN`/`O`.
pub fn heuristic_tags(raw: &[&str]) -> (Vec<String>, Vec<String>) {
    raw.iter()
        .map(|tok| {
            let (pos, ner) = if tok.chars().any(|c| c.is_ascii_digit()) {
                ("CD", "NUMBER")
            } else if tok.chars().next().is_some_and(char::is_uppercase) {
                ("NNP", "ENTITY")
            } else if tok.chars().all(|c| !c.is_alphanumeric()) {
                (".", "O")
            } else {
                ("NN", "O")
            };
            (pos.to_string(), ner.to_string())
        })
        .unzip()
}

/// Reads a JSON-lines corpus. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let ex = ex.normalize().map_err(|(field, message)| Error::Validation {
            path: path.to_path_buf(),
            line: i + 1,
            field,
            message,
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// `B` at the span start, `I` inside, `O` elsewhere.
pub fn answer_position_tags(example: &Example) -> Vec<AnswerTag> {
    tags_for_span(example.sentence.len(), example.answer_span)
}

pub fn tags_for_span(len: usize, span: Option<Span>) -> Vec<AnswerTag> {
    let mut tags = vec![AnswerTag::O; len];
    if let Some((s, e)) = span {
        tags[s] = AnswerTag::B;
        for t in &mut tags[s + 1..=e] {
            *t = AnswerTag::I;
        }
    }
    tags
}
