//! Template corpus: "{object} was {verb} by {agent} in {year} ." with the
//! year as the answer and one to three template questions per sentence.

use crate::numcore::Rng;
use crate::textdata::{CaseTag, Example};

struct Phrase {
    words: &'static [&'static str],
    pos: &'static [&'static str],
    ner: &'static [&'static str],
}

const fn phrase(words: &'static [&'static str], pos: &'static [&'static str], ner: &'static [&'static str]) -> Phrase {
    Phrase { words, pos, ner }
}

const OBJECTS: [Phrase; 12] = [
    phrase(&["the", "old", "bridge"], &["DT", "JJ", "NN"], &["O", "O", "O"]),
    phrase(&["the", "trading", "post"], &["DT", "NN", "NN"], &["O", "O", "O"]),
    phrase(&["the", "city", "hall"], &["DT", "NN", "NN"], &["O", "FAC", "FAC"]),
    phrase(&["the", "grand", "canal"], &["DT", "JJ", "NN"], &["O", "FAC", "FAC"]),
    phrase(&["the", "royal", "palace"], &["DT", "JJ", "NN"], &["O", "FAC", "FAC"]),
    phrase(
        &["the", "first", "railway"],
        &["DT", "JJ", "NN"],
        &["O", "ORDINAL", "O"],
    ),
    phrase(&["the", "stone", "fort"], &["DT", "NN", "NN"], &["O", "O", "O"]),
    phrase(&["the", "public", "library"], &["DT", "JJ", "NN"], &["O", "O", "O"]),
    phrase(&["the", "harbor", "wall"], &["DT", "NN", "NN"], &["O", "O", "O"]),
    phrase(&["the", "cathedral"], &["DT", "NN"], &["O", "O"]),
    phrase(&["the", "new", "university"], &["DT", "JJ", "NN"], &["O", "ORG", "ORG"]),
    phrase(&["the", "central", "market"], &["DT", "JJ", "NN"], &["O", "O", "O"]),
];

const VERBS: [&str; 10] = [
    "built",
    "founded",
    "destroyed",
    "rebuilt",
    "opened",
    "designed",
    "captured",
    "restored",
    "expanded",
    "sold",
];

const AGENTS: [Phrase; 12] = [
    phrase(
        &["the", "dutch", "colonists"],
        &["DT", "JJ", "NNS"],
        &["O", "NORP", "O"],
    ),
    phrase(&["the", "city", "council"], &["DT", "NN", "NN"], &["O", "ORG", "ORG"]),
    phrase(&["king", "henry"], &["NNP", "NNP"], &["PERSON", "PERSON"]),
    phrase(&["the", "british", "army"], &["DT", "JJ", "NN"], &["O", "ORG", "ORG"]),
    phrase(&["a", "wealthy", "merchant"], &["DT", "JJ", "NN"], &["O", "O", "O"]),
    phrase(&["the", "local", "church"], &["DT", "JJ", "NN"], &["O", "ORG", "ORG"]),
    phrase(&["the", "french", "navy"], &["DT", "JJ", "NN"], &["O", "ORG", "ORG"]),
    phrase(&["queen", "anne"], &["NNP", "NNP"], &["PERSON", "PERSON"]),
    phrase(
        &["the", "railway", "company"],
        &["DT", "NN", "NN"],
        &["O", "ORG", "ORG"],
    ),
    phrase(&["the", "roman", "empire"], &["DT", "JJ", "NN"], &["O", "GPE", "GPE"]),
    phrase(&["the", "spanish", "crown"], &["DT", "JJ", "NN"], &["O", "ORG", "ORG"]),
    phrase(&["a", "famous", "architect"], &["DT", "JJ", "NN"], &["O", "O", "O"]),
];

const PROPER: [&str; 9] = [
    "dutch", "british", "french", "roman", "spanish", "king", "henry", "queen", "anne",
];

const NUM_YEARS: usize = 40;

fn year(k: usize) -> String {
    (1502 + 12 * k).to_string()
}

/// Accumulates tokens with their tags.
#[derive(Default)]
struct Builder {
    words: Vec<String>,
    pos: Vec<String>,
    ner: Vec<String>,
}

impl Builder {
    fn word(&mut self, w: &str, pos: &str, ner: &str) {
        self.words.push(w.to_string());
        self.pos.push(pos.to_string());
        self.ner.push(ner.to_string());
    }

    fn phrase(&mut self, p: &Phrase) {
        for i in 0..p.words.len() {
            self.word(p.words[i], p.pos[i], p.ner[i]);
        }
    }
}

fn words(p: &Phrase) -> Vec<String> {
    p.words.iter().map(|w| w.to_string()).collect()
}

fn question(parts: &[&[String]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

fn strs(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

/// Deterministic synthetic corpus of `n` examples.
///
/// Each (object, verb, agent) triple is used at most once until all 1440
/// combinations are exhausted.
pub fn synth_corpus(seed: u64, n: usize) -> Vec<Example> {
    let mut rng = Rng::new(seed);
    let total = OBJECTS.len() * VERBS.len() * AGENTS.len();
    let mut combos: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut combos);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let c = combos[i % total];
        let obj = &OBJECTS[c % OBJECTS.len()];
        let verb = VERBS[(c / OBJECTS.len()) % VERBS.len()];
        let agent = &AGENTS[c / (OBJECTS.len() * VERBS.len())];
        let yr = year(rng.below(NUM_YEARS));
        let fronted = rng.below(2) == 1;

        let mut b = Builder::default();
        let answer_start;
        if fronted {
            b.word("in", "IN", "O");
            answer_start = b.words.len();
            b.word(&yr, "CD", "DATE");
            b.word(",", ",", "O");
            b.phrase(obj);
            b.word("was", "VBD", "O");
            b.word(verb, "VBN", "O");
            b.word("by", "IN", "O");
            b.phrase(agent);
        } else {
            b.phrase(obj);
            b.word("was", "VBD", "O");
            b.word(verb, "VBN", "O");
            b.word("by", "IN", "O");
            b.phrase(agent);
            b.word("in", "IN", "O");
            answer_start = b.words.len();
            b.word(&yr, "CD", "DATE");
        }
        b.word(".", ".", "O");

        let case = b
            .words
            .iter()
            .enumerate()
            .map(|(k, w)| {
                if w.chars().all(|c| c.is_ascii_digit()) || !w.chars().any(char::is_alphabetic) {
                    CaseTag::Other
                } else if k == 0 || PROPER.contains(&w.as_str()) {
                    CaseTag::Title
                } else {
                    CaseTag::Lower
                }
            })
            .collect();

        let (o, a, v) = (words(obj), words(agent), vec![verb.to_string()]);
        let by = strs(&["by"]);
        let mut questions = vec![question(&[
            &strs(&["in", "what", "year", "was"]),
            &o,
            &v,
            &by,
            &a,
            &strs(&["?"]),
        ])];
        if rng.below(2) == 1 {
            questions.push(question(&[&strs(&["when", "was"]), &o, &v, &by, &a, &strs(&["?"])]));
        }
        if rng.below(2) == 1 {
            questions.push(question(&[
                &o,
                &strs(&["was"]),
                &v,
                &by,
                &a,
                &strs(&["in", "what", "year", "?"]),
            ]));
        }

        out.push(Example {
            id: format!("synth-{seed}-{i:05}"),
            sentence: b.words,
            pos: b.pos,
            ner: b.ner,
            answer_span: Some((answer_start, answer_start)),
            questions,
            case: Some(case),
        });
    }
    out
}
