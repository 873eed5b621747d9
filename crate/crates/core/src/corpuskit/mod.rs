//! Parallel corpus loading and evaluation metrics.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::editspace::{EditOp, EditSequence, TokenMode, TokenSequence};
use crate::error::{PieError, Result};
use crate::fsio;

/// Aligned (source, target) sequences in one tokenization mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(TokenSequence, TokenSequence)>,
    pub mode: TokenMode,
    /// Line pairs dropped because one side was blank.
    pub skipped_empty: usize,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &TokenSequence> {
        self.pairs.iter().map(|(x, _)| x)
    }

    pub fn targets(&self) -> impl Iterator<Item = &TokenSequence> {
        self.pairs.iter().map(|(_, y)| y)
    }
}

/// Reads a text file into lines without trailing `\r`.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fsio::read_to_string(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r').to_owned())
        .collect())
}

pub fn parse_parallel(src: &[String], tgt: &[String], mode: TokenMode) -> Result<ParallelCorpus> {
    if src.len() != tgt.len() {
        return Err(PieError::CountMismatch {
            left: src.len(),
            right: tgt.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src.len());
    let mut skipped_empty = 0;
    for (s, t) in src.iter().zip(tgt) {
        if s.trim().is_empty() || t.trim().is_empty() {
            skipped_empty += 1;
            continue;
        }
        pairs.push((TokenSequence::from_line(s, mode)?, TokenSequence::from_line(t, mode)?));
    }
    Ok(ParallelCorpus {
        pairs,
        mode,
        skipped_empty,
    })
}

/// Loads line-aligned source and target files.
pub fn load_parallel(src_path: &Path, tgt_path: &Path, mode: TokenMode) -> Result<ParallelCorpus> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(PieError::LineCountMismatch {
            src_path: src_path.to_owned(),
            tgt_path: tgt_path.to_owned(),
            src: src.len(),
            tgt: tgt.len(),
        });
    }
    parse_parallel(&src, &tgt, mode)
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fraction of outputs exactly equal to their reference, ignoring
/// differences in whitespace.
pub fn word_accuracy<S: AsRef<str>, G: AsRef<str>>(pred: &[S], gold: &[G]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(PieError::CountMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| normalize(p.as_ref()) == normalize(g.as_ref()))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// `(1 + b^2) P R / (b^2 P + R)`, zero when the denominator is zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub true_positives: usize,
    pub proposed: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
    pub word_accuracy: Option<f64>,
    pub counts: EditCounts,
}

impl EvalReport {
    pub fn from_counts(counts: EditCounts, beta: f64) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(counts.true_positives, counts.proposed);
        let recall = ratio(counts.true_positives, counts.gold);
        EvalReport {
            precision,
            recall,
            f05: f_beta(precision, recall, beta),
            word_accuracy: None,
            counts,
        }
    }
}

fn change_counts(e: &EditSequence) -> HashMap<(usize, &EditOp), usize> {
    let mut m = HashMap::new();
    for (i, op) in e.changes() {
        *m.entry((i, op)).or_insert(0) += 1;
    }
    m
}

/// Precision, recall and F-beta over the non-copy edits of each sentence,
/// matched as a multiset of (position, edit) pairs.
pub fn edit_prf(pred: &[EditSequence], gold: &[EditSequence], beta: f64) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(PieError::CountMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    let mut counts = EditCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        let (pm, gm) = (change_counts(p), change_counts(g));
        counts.proposed += pm.values().sum::<usize>();
        counts.gold += gm.values().sum::<usize>();
        counts.true_positives += pm
            .iter()
            .map(|(k, &c)| c.min(gm.get(k).copied().unwrap_or(0)))
            .sum::<usize>();
    }
    Ok(EvalReport::from_counts(counts, beta))
}
