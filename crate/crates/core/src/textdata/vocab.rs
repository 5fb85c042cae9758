use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textdata::{AnswerTag, CaseTag, Example};

pub const PAD_ID: usize = 0;
pub const START_ID: usize = 1;
pub const END_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Word vocabulary with specials at ids 0..3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-special tokens in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        Self::try_from(all)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.id_to_token
            .get(id)
            .map(String::as_str)
            .unwrap_or(SPECIAL_TOKENS[UNK_ID])
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(id_to_token: Vec<String>) -> Result<Self> {
        if id_to_token.len() < SPECIAL_TOKENS.len() || id_to_token[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(Error::Format(
                "vocabulary does not start with the special tokens".into(),
            ));
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.id_to_token
    }
}

/// Counts tokens over sentences and questions and keeps the `cap - 4` most
/// frequent, ties broken lexicographically.
pub fn build_vocab(examples: &[Example], cap: usize) -> Result<Vocabulary> {
    if cap < SPECIAL_TOKENS.len() {
        return Err(Error::Argument(format!("vocabulary cap must be at least 4, got {cap}")));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in examples {
        for t in ex.sentence.iter().chain(ex.questions.iter().flatten()) {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !SPECIAL_TOKENS.contains(t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(cap - SPECIAL_TOKENS.len());
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// Closed tag set; index 0 holds the fallback tag for unseen tags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn new<'a>(fallback: &str, tags: impl IntoIterator<Item = &'a str>) -> Self {
        let rest: BTreeSet<&str> = tags.into_iter().filter(|t| *t != fallback).collect();
        let mut all = vec![fallback.to_string()];
        all.extend(rest.into_iter().map(str::to_string));
        Self::try_from(all).expect("tags are distinct")
    }

    pub fn id(&self, tag: &str) -> usize {
        self.index.get(tag).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

impl TryFrom<Vec<String>> for TagSet {
    type Error = Error;

    fn try_from(tags: Vec<String>) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::Format("empty tag set".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tags.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate tag `{t}`")));
            }
        }
        Ok(TagSet { tags, index })
    }
}

impl From<TagSet> for Vec<String> {
    fn from(t: TagSet) -> Self {
        t.tags
    }
}

pub const POS_FALLBACK: &str = "X";
pub const NER_OUTSIDE: &str = "O";

/// Tag vocabularies for the per-token input features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub pos: TagSet,
    pub ner: TagSet,
}

impl FeatureVocab {
    pub fn from_examples(examples: &[Example]) -> Self {
        FeatureVocab {
            pos: TagSet::new(
                POS_FALLBACK,
                examples.iter().flat_map(|e| e.pos.iter().map(String::as_str)),
            ),
            ner: TagSet::new(
                NER_OUTSIDE,
                examples.iter().flat_map(|e| e.ner.iter().map(String::as_str)),
            ),
        }
    }

    pub fn num_case(&self) -> usize {
        CaseTag::ALL.len()
    }

    pub fn num_answer(&self) -> usize {
        AnswerTag::ALL.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(sentence: &str, question: &str) -> Example {
        Example::from_raw("t", sentence, &[question], None).unwrap()
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = build_vocab(&[ex("a a b", "b")], 6).unwrap();
        assert_eq!(&v.tokens()[4..], ["a", "b"]);
        let v = build_vocab(&[ex("y x", "q")], 5).unwrap();
        assert_eq!(v.token(4), "q");
        let v = build_vocab(&[ex("a a b", "x y")], 5).unwrap();
        assert_eq!(v.token(4), "a");
        let v = build_vocab(&[ex("y x", "z")], 5).unwrap();
        assert_eq!(v.token(4), "x");
    }

    #[test]
    fn overflow_tokens_encode_to_unknown() {
        let v = build_vocab(&[ex("a a b c", "a")], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK_ID);
        assert_eq!(v.id("never"), UNK_ID);
    }

    #[test]
    fn specials_fixed_and_cap_checked() {
        let v = build_vocab(&[], 4).unwrap();
        assert_eq!(v.tokens(), SPECIAL_TOKENS);
        assert!(build_vocab(&[], 3).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(&[ex("a b c", "d")], 100).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        let fv = FeatureVocab::from_examples(&[ex("New 1999 x", "q")]);
        let back: FeatureVocab = serde_json::from_str(&serde_json::to_string(&fv).unwrap()).unwrap();
        assert_eq!(fv, back);
        assert_eq!(fv.ner.id("O"), 0);
        assert_eq!(fv.pos.id("never-seen"), 0);
    }
}
