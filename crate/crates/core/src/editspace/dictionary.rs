use std::collections::HashMap;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::diff::{modified_levenshtein_diff, DiffConfig, DiffKind};
use super::token::{TokenMode, TokenSequence};
use crate::error::{PieError, Result};

const TSV_HEADER: &str = "insert_string\tcount";

/// The most frequent merged inserts seen in training diffs.
///
/// One dictionary provides the arguments of both append and replace edits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InsertDictionary {
    entries: Vec<(String, u64)>,
    index: HashMap<String, usize>,
    q: usize,
    capacity: usize,
}

impl InsertDictionary {
    /// Builds a dictionary from entries already sorted by descending count.
    pub fn from_entries(entries: Vec<(String, u64)>, q: usize, capacity: usize) -> Result<Self> {
        if entries.len() > capacity {
            return Err(PieError::Config(format!(
                "{} dictionary entries exceed capacity {capacity}",
                entries.len()
            )));
        }
        if entries.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(PieError::Config(
                "dictionary entries must be sorted by descending count".into(),
            ));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (w, _)) in entries.iter().enumerate() {
            if w.is_empty() || index.insert(w.clone(), i).is_some() {
                return Err(PieError::Config(format!("invalid dictionary entry {w:?}")));
            }
        }
        Ok(InsertDictionary {
            entries,
            index,
            q,
            capacity,
        })
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, w: &str) -> bool {
        self.index.contains_key(w)
    }

    pub fn index_of(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.entries.get(i).map(|(w, _)| w.as_str())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for (w, c) in &self.entries {
            out.push_str(&format!("{w}\t{c}\n"));
        }
        out
    }

    /// Parses the two-column TSV form. Capacity becomes the entry count and
    /// `q` the longest entry, measured in `mode` tokens.
    pub fn from_tsv(text: &str, mode: TokenMode) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || (lineno == 0 && line == TSV_HEADER) {
                continue;
            }
            let (w, c) = line.rsplit_once('\t').ok_or_else(|| {
                PieError::Config(format!("dictionary line {}: missing count", lineno + 1))
            })?;
            let c: u64 = c.parse().map_err(|_| {
                PieError::Config(format!("dictionary line {}: bad count {c:?}", lineno + 1))
            })?;
            entries.push((w.to_owned(), c));
        }
        let q = entries
            .iter()
            .map(|(w, _)| mode.split_payload(w).len())
            .max()
            .unwrap_or(0);
        let capacity = entries.len();
        Self::from_entries(entries, q, capacity)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Counts merged insert payloads over all pairs and keeps the `capacity` most
/// frequent ones of at most `q` tokens. Count ties are broken lexicographically.
pub fn build_insert_dictionary(
    pairs: &[(TokenSequence, TokenSequence)],
    capacity: usize,
    q: usize,
    cfg: &DiffConfig,
) -> Result<InsertDictionary> {
    if q == 0 {
        return Err(PieError::Config("q must be at least 1".into()));
    }
    let per_pair: Vec<Vec<String>> = pairs
        .par_iter()
        .map(|(x, y)| {
            let diff = modified_levenshtein_diff(x, y, cfg)?;
            let mode = x.mode();
            Ok(diff
                .ops
                .into_iter()
                .filter(|op| op.kind == DiffKind::Insert && op.payload.len() <= q)
                .map(|op| mode.join_tokens(&op.payload))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut counts: HashMap<String, u64> = HashMap::new();
    for payloads in per_pair {
        for w in payloads {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(capacity);
    InsertDictionary::from_entries(ranked, q, capacity)
}

/// Fraction of pairs whose diff contains a run of three or more inserted tokens.
pub fn long_insert_rate(
    pairs: &[(TokenSequence, TokenSequence)],
    cfg: &DiffConfig,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, y) in pairs {
        let diff = modified_levenshtein_diff(x, y, cfg)?;
        if diff
            .ops
            .iter()
            .any(|op| op.kind == DiffKind::Insert && op.payload.len() >= 3)
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(x: &str, y: &str) -> (TokenSequence, TokenSequence) {
        (
            TokenSequence::from_line(x, TokenMode::Word).unwrap(),
            TokenSequence::from_line(y, TokenMode::Word).unwrap(),
        )
    }

    // Inserts: the x3, to x2, "However ," x1.
    fn fixture() -> Vec<(TokenSequence, TokenSequence)> {
        vec![
            pair("I saw cat", "I saw the cat"),
            pair("cat sat on mat", "the cat sat on mat"),
            pair("he went school", "he went to school"),
            pair("give it him", "give it to him"),
            pair("it rained", "However , it rained"),
            pair("we ate cake", "we ate the cake"),
        ]
    }

    #[test]
    fn counts_and_ranks_inserts() {
        let d = build_insert_dictionary(&fixture(), 2, 2, &DiffConfig::default()).unwrap();
        assert_eq!(
            d.entries(),
            &[("the".to_string(), 3), ("to".to_string(), 2)]
        );
    }

    #[test]
    fn keeps_bigram_when_capacity_allows() {
        let d = build_insert_dictionary(&fixture(), 10, 2, &DiffConfig::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.get(2), Some("However ,"));
    }

    #[test]
    fn zero_capacity_is_empty() {
        let d = build_insert_dictionary(&fixture(), 0, 2, &DiffConfig::default()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn runs_longer_than_q_are_excluded() {
        let pairs = vec![
            pair("he left", "on the other hand he left"),
            pair("he left", "on the other hand he left"),
            pair("she came", "she came home"),
        ];
        let d = build_insert_dictionary(&pairs, 10, 2, &DiffConfig::default()).unwrap();
        assert_eq!(d.entries(), &[("home".to_string(), 1)]);
        let rate = long_insert_rate(&pairs, &DiffConfig::default()).unwrap();
        assert!((rate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus() {
        let d = build_insert_dictionary(&[], 5, 2, &DiffConfig::default()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        let pairs = vec![pair("a", "a zeta"), pair("a", "a alpha")];
        let d = build_insert_dictionary(&pairs, 5, 2, &DiffConfig::default()).unwrap();
        assert_eq!(d.get(0), Some("alpha"));
        assert_eq!(d.get(1), Some("zeta"));
    }

    #[test]
    fn tsv_round_trip() {
        let d = build_insert_dictionary(&fixture(), 10, 2, &DiffConfig::default()).unwrap();
        let back = InsertDictionary::from_tsv(&d.to_tsv(), TokenMode::Word).unwrap();
        assert_eq!(back.entries(), d.entries());
        assert_eq!(back.q(), 2);
        assert_eq!(back.digest(), d.digest());
    }
}
