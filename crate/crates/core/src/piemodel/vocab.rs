use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::editspace::{InsertDictionary, TokenMode, TokenSequence, END, START};
use crate::error::{PieError, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const START_ID: usize = 3;
pub const END_ID: usize = 4;

const SPECIALS: [&str; 5] = [PAD, UNK, MASK, START, END];

/// Token strings to embedding rows. The first five ids are reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from every token seen in `sequences` plus every
    /// token of the dictionary payloads, most frequent first. `max_size`
    /// counts the reserved entries.
    pub fn build<'a>(
        sequences: impl IntoIterator<Item = &'a TokenSequence>,
        dict: &InsertDictionary,
        mode: TokenMode,
        max_size: Option<usize>,
    ) -> Result<Self> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for seq in sequences {
            for t in seq.tokens() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let payload_tokens: Vec<String> = dict
            .entries()
            .iter()
            .flat_map(|(w, _)| mode.split_payload(w))
            .collect();
        // Payload tokens must stay in vocabulary whatever the size cap.
        let mut required: Vec<&str> = payload_tokens.iter().map(String::as_str).collect();
        required.sort_unstable();
        required.dedup();
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut push = |t: &str, tokens: &mut Vec<String>| {
            if !index.contains_key(t) {
                index.insert(t.to_owned(), tokens.len());
                tokens.push(t.to_owned());
            }
        };
        for t in &required {
            push(t, &mut tokens);
        }
        let cap = max_size.unwrap_or(usize::MAX);
        for (t, _) in ranked {
            if tokens.len() >= cap {
                break;
            }
            push(t, &mut tokens);
        }
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(PieError::VocabularyMismatch(
                "vocabulary does not start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(PieError::VocabularyMismatch(format!("invalid token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(PieError::VocabularyMismatch(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.tokens().iter().map(|t| self.id(t.as_str())).collect()
    }

    /// Token ids of a stored multi-token string.
    pub fn encode_payload(&self, payload: &str, mode: TokenMode) -> Vec<usize> {
        mode.split_payload(payload)
            .iter()
            .map(|t| self.id(t))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_unknowns() {
        let seqs = [
            TokenSequence::from_line("the cat", TokenMode::Word).unwrap(),
            TokenSequence::from_line("the dog", TokenMode::Word).unwrap(),
        ];
        let dict = InsertDictionary::from_entries(vec![("a b".into(), 2)], 2, 10).unwrap();
        let v = Vocab::build(&seqs, &dict, TokenMode::Word, None).unwrap();
        assert_eq!(v.id(START), START_ID);
        assert_eq!(v.id(END), END_ID);
        assert_eq!(v.id("zebra"), UNK_ID);
        assert!(v.get("a").is_some() && v.get("b").is_some());
        assert_eq!(v.encode(&seqs[0]), vec![START_ID, v.id("the"), v.id("cat"), END_ID]);
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn size_cap_keeps_payload_tokens() {
        let seqs = [TokenSequence::from_line("x x x y y z", TokenMode::Word).unwrap()];
        let dict = InsertDictionary::from_entries(vec![("q".into(), 1)], 1, 10).unwrap();
        let v = Vocab::build(&seqs, &dict, TokenMode::Word, Some(7)).unwrap();
        assert_eq!(v.len(), 7);
        assert!(v.get("q").is_some() && v.get("x").is_some());
        assert!(v.get("z").is_none());
    }

    #[test]
    fn rejects_missing_specials() {
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
    }
}
