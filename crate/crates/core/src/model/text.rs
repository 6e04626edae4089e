//! Question tokenizer and word vocabulary.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dsl::QuestionType;

pub const UNK: &str = "<unk>";

/// Lowercased alphanumeric runs; every other non-space character is a
/// token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Phrase fed to the text encoder for a question type.
pub fn qtype_phrase(qtype: QuestionType) -> &'static str {
    match qtype {
        QuestionType::QueryAction => "query action",
        QuestionType::QueryDirection => "query direction",
        QuestionType::QueryBodyPart => "query body part",
    }
}

/// Fixed word list; index 0 is `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TextVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TextVocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        TextVocab { words, index }
    }
}

impl From<TextVocab> for Vec<String> {
    fn from(v: TextVocab) -> Self {
        v.words
    }
}

impl TextVocab {
    /// Builds the vocabulary from (train) questions plus the question-type
    /// phrases, sorted for stability.
    pub fn build<'a>(questions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: BTreeSet<String> = BTreeSet::new();
        for q in questions {
            set.extend(tokenize(q));
        }
        for qt in QuestionType::ALL {
            set.extend(tokenize(qtype_phrase(qt)));
        }
        set.remove(UNK);
        let mut words = vec![UNK.to_string()];
        words.extend(set);
        TextVocab::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Token ids; unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.index.get(t).copied().unwrap_or(0)).collect()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_questions() {
        assert_eq!(tokenize("What does the person do before they move Left?"), vec![
            "what", "does", "the", "person", "do", "before", "they", "move", "left", "?"
        ]);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = TextVocab::build(["What is it?"]);
        assert_eq!(v.word(0), UNK);
        let ids = v.encode("what zebra");
        assert_eq!(ids[1], 0);
        assert_ne!(ids[0], 0);
    }
}
