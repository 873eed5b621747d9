//! Synthetic corruption of clean sentences into (noisy, clean) training pairs.

pub mod spell;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::editspace::{Token, TokenMode, TokenSequence, TransformFamily, TransformRule};
use crate::error::{PieError, Result};

pub const DEFAULT_ERROR_COUNT_PROBS: [f64; 5] = [0.05, 0.07, 0.25, 0.35, 0.28];
pub const DEFAULT_ERROR_TYPE_PROBS: [f64; 4] = [0.30, 0.25, 0.25, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    /// A word is dropped, so the fix is an append.
    AppendError,
    /// A verb is swapped for another form of itself.
    VerbError,
    /// A word is swapped for a spurious word.
    ReplaceError,
    /// A spurious word is inserted, so the fix is a delete.
    DeleteError,
}

impl ErrorType {
    pub const ALL: [ErrorType; 4] = [
        ErrorType::AppendError,
        ErrorType::VerbError,
        ErrorType::ReplaceError,
        ErrorType::DeleteError,
    ];
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// One corruption step as applied (or skipped) on a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedError {
    pub kind: ErrorType,
    /// Position among the non-boundary tokens at the time of the step.
    pub position: Option<usize>,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Probabilities of 0 to 4 errors per sentence.
    pub error_count_probs: Vec<f64>,
    /// Probabilities of the error types, in [`ErrorType::ALL`] order.
    pub error_type_probs: Vec<f64>,
    pub spurious_words: Vec<(String, f64)>,
    /// Every form of a verb maps to the other forms of the same verb.
    pub verb_forms: BTreeMap<String, Vec<String>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            error_count_probs: DEFAULT_ERROR_COUNT_PROBS.to_vec(),
            error_type_probs: DEFAULT_ERROR_TYPE_PROBS.to_vec(),
            spurious_words: default_spurious_words(),
            verb_forms: default_verb_lexicon(),
            seed: 0,
        }
    }
}

fn check_probs(name: &str, p: &[f64], len: usize) -> Result<()> {
    if p.len() != len {
        return Err(PieError::Config(format!("{name} needs {len} values, got {}", p.len())));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(PieError::Config(format!("{name} has a negative or non-finite value")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PieError::Config(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_probs("error_count_probs", &self.error_count_probs, 5)?;
        check_probs("error_type_probs", &self.error_type_probs, 4)?;
        let needs_words = self.error_type_probs[2] > 0.0 || self.error_type_probs[3] > 0.0;
        if needs_words {
            if self.spurious_words.is_empty() {
                return Err(PieError::Config("spurious word list is empty".into()));
            }
            if self.spurious_words.iter().any(|(w, p)| {
                w.is_empty() || w.chars().any(char::is_whitespace) || !(p.is_finite() && *p >= 0.0)
            }) || self.spurious_words.iter().map(|(_, p)| p).sum::<f64>() <= 0.0
            {
                return Err(PieError::Config("invalid spurious word entry".into()));
            }
        }
        if self.error_type_probs[1] > 0.0 && self.verb_forms.values().all(Vec::is_empty) {
            return Err(PieError::Config("verb lexicon is empty".into()));
        }
        Ok(())
    }
}

/// Inverse-CDF draw of an index from a probability vector.
pub fn sample_multinoulli<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    check_probs("probability vector", probs, probs.len())?;
    if probs.is_empty() {
        return Err(PieError::Config("empty probability vector".into()));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left the total just under u; take the last index with mass.
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
}

fn weighted_word<'a, R: Rng + ?Sized>(words: &'a [(String, f64)], rng: &mut R) -> &'a str {
    let total: f64 = words.iter().map(|(_, w)| w).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (w, p) in words {
        acc += p;
        if u < acc {
            return w;
        }
    }
    &words.last().expect("validated non-empty").0
}

/// Applies a sampled number of sampled errors to `clean`, one after another
/// on the evolving sentence. A drop is skipped when only one word is left
/// and a verb error is skipped when no lexicon verb is present.
pub fn corrupt_sentence<R: Rng + ?Sized>(
    clean: &TokenSequence,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<(TokenSequence, Vec<AppliedError>)> {
    if clean.inner().is_empty() {
        return Err(PieError::InvalidInput("cannot corrupt an empty sentence".into()));
    }
    let mode = clean.mode();
    let mut words: Vec<String> = clean.inner().iter().map(|t| t.as_str().to_owned()).collect();
    let count = sample_multinoulli(&cfg.error_count_probs, rng)?;
    let mut applied = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = ErrorType::ALL[sample_multinoulli(&cfg.error_type_probs, rng)?];
        let mut record = |position: Option<usize>| {
            applied.push(AppliedError {
                kind,
                position,
                skipped: position.is_none(),
            })
        };
        match kind {
            ErrorType::AppendError => {
                if words.len() < 2 {
                    record(None);
                } else {
                    let i = rng.random_range(0..words.len());
                    words.remove(i);
                    record(Some(i));
                }
            }
            ErrorType::DeleteError => {
                let i = rng.random_range(0..=words.len());
                let w = weighted_word(&cfg.spurious_words, rng).to_owned();
                words.insert(i, w);
                record(Some(i));
            }
            ErrorType::ReplaceError => {
                let i = rng.random_range(0..words.len());
                words[i] = weighted_word(&cfg.spurious_words, rng).to_owned();
                record(Some(i));
            }
            ErrorType::VerbError => {
                let verbs: Vec<usize> = (0..words.len())
                    .filter(|&i| cfg.verb_forms.get(&words[i]).is_some_and(|f| !f.is_empty()))
                    .collect();
                if verbs.is_empty() {
                    record(None);
                } else {
                    let i = verbs[rng.random_range(0..verbs.len())];
                    let forms = &cfg.verb_forms[&words[i]];
                    words[i] = forms[rng.random_range(0..forms.len())].clone();
                    record(Some(i));
                }
            }
        }
    }
    let tokens: Vec<Token> = words.into_iter().map(Token::new).collect::<Result<_>>()?;
    let noisy = TokenSequence::wrap(&tokens, mode)?;
    Ok((noisy, applied))
}

/// Error-type histogram of a generated corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub sentences: usize,
    pub error_counts: [usize; 5],
    pub applied: BTreeMap<ErrorType, usize>,
    pub skipped: BTreeMap<ErrorType, usize>,
}

impl SynthStats {
    /// Share of each drawn error type, skipped ones included.
    pub fn type_frequencies(&self) -> [f64; 4] {
        let drawn = |k: &ErrorType| {
            self.applied.get(k).copied().unwrap_or(0) + self.skipped.get(k).copied().unwrap_or(0)
        };
        let total: usize = ErrorType::ALL.iter().map(drawn).sum();
        let mut out = [0.0; 4];
        for (o, k) in out.iter_mut().zip(ErrorType::ALL.iter()) {
            *o = if total == 0 { 0.0 } else { drawn(k) as f64 / total as f64 };
        }
        out
    }
}

/// Random stream for one line, independent of how lines are scheduled.
pub fn line_rng(seed: u64, line: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(line as u64);
    rng
}

pub struct SynthCorpus {
    pub noisy: Vec<String>,
    pub clean: Vec<String>,
    pub stats: SynthStats,
}

/// Corrupts every line of a clean corpus. Blank lines pass through blank.
pub fn generate_corpus<S: AsRef<str> + Sync>(
    lines: &[S],
    mode: TokenMode,
    cfg: &SynthConfig,
) -> Result<SynthCorpus> {
    cfg.validate()?;
    let results: Vec<(String, String, Vec<AppliedError>)> = lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let line = line.as_ref();
            if line.trim().is_empty() {
                return Ok((String::new(), String::new(), Vec::new()));
            }
            let clean = TokenSequence::from_line(line, mode)?;
            let mut rng = line_rng(cfg.seed, i);
            let (noisy, applied) = corrupt_sentence(&clean, cfg, &mut rng)?;
            Ok((noisy.detokenize(), clean.detokenize(), applied))
        })
        .collect::<Result<_>>()?;
    let mut stats = SynthStats {
        sentences: lines.len(),
        ..SynthStats::default()
    };
    let mut noisy = Vec::with_capacity(lines.len());
    let mut clean = Vec::with_capacity(lines.len());
    for (n, c, applied) in results {
        if !c.is_empty() {
            stats.error_counts[applied.len()] += 1;
        }
        for a in &applied {
            let m = if a.skipped { &mut stats.skipped } else { &mut stats.applied };
            *m.entry(a.kind).or_insert(0) += 1;
        }
        noisy.push(n);
        clean.push(c);
    }
    Ok(SynthCorpus { noisy, clean, stats })
}

const FUNCTION_WORDS: [&str; 24] = [
    "the", "a", "to", "of", "in", "and", "is", "for", "that", "an", "on", "with", "it", "as",
    "at", "be", "by", "was", "from", "this", "have", "are", "so", "very",
];

/// Short function words, weighted by rank.
pub fn default_spurious_words() -> Vec<(String, f64)> {
    FUNCTION_WORDS
        .iter()
        .enumerate()
        .map(|(i, w)| (w.to_string(), 1.0 / (i as f64 + 1.0)))
        .collect()
}

const SEED_VERBS: [&str; 40] = [
    "walk", "talk", "play", "work", "help", "start", "want", "need", "look", "call", "ask",
    "open", "answer", "visit", "learn", "jump", "watch", "wash", "reach", "push", "finish",
    "like", "move", "live", "use", "love", "change", "close", "hope", "decide", "study", "carry",
    "try", "worry", "marry", "cry", "enjoy", "stay", "climb", "paint",
];

fn rule(family: TransformFamily, from: &str, to: &str) -> TransformRule {
    TransformRule::new(0, family, from, to).expect("static rule")
}

/// Inflections of a verb, built from the suffix rules.
pub fn verb_forms(verb: &str) -> Vec<String> {
    use TransformFamily::{AddSuffix, ReplaceSuffix};
    let last = verb.chars().last().unwrap_or(' ');
    let before_last = verb.chars().rev().nth(1).unwrap_or(' ');
    let vowel = |c: char| "aeiou".contains(c);
    let rules = if last == 'e' {
        vec![rule(AddSuffix, "", "s"), rule(AddSuffix, "", "d"), rule(ReplaceSuffix, "e", "ing")]
    } else if last == 'y' && !vowel(before_last) {
        vec![
            rule(ReplaceSuffix, "y", "ies"),
            rule(ReplaceSuffix, "y", "ied"),
            rule(AddSuffix, "", "ing"),
        ]
    } else if verb.ends_with("sh") || verb.ends_with("ch") || last == 's' || last == 'x' {
        vec![rule(AddSuffix, "", "es"), rule(AddSuffix, "", "ed"), rule(AddSuffix, "", "ing")]
    } else {
        vec![rule(AddSuffix, "", "s"), rule(AddSuffix, "", "ed"), rule(AddSuffix, "", "ing")]
    };
    let mut out = vec![verb.to_owned()];
    out.extend(rules.iter().filter_map(|r| r.apply(verb)));
    out
}

/// Lexicon over [`SEED_VERBS`]: each form maps to its siblings.
pub fn default_verb_lexicon() -> BTreeMap<String, Vec<String>> {
    lexicon_from_verbs(SEED_VERBS.iter().copied())
}

pub fn lexicon_from_verbs<'a>(verbs: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, Vec<String>> {
    let mut lex = BTreeMap::new();
    for v in verbs {
        let forms = verb_forms(v);
        for f in &forms {
            let others: Vec<String> = forms.iter().filter(|o| *o != f).cloned().collect();
            lex.insert(f.clone(), others);
        }
    }
    lex
}

/// `word<TAB>weight` lines; a missing weight counts as 1.
pub fn parse_spurious_tsv(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let w = parts.next().unwrap_or_default().to_owned();
        let p = match parts.next() {
            None => 1.0,
            Some(s) => s.parse().map_err(|_| {
                PieError::Config(format!("spurious word line {}: bad weight {s:?}", n + 1))
            })?,
        };
        out.push((w, p));
    }
    Ok(out)
}

/// `form<TAB>form<TAB>...` lines, one verb per line.
pub fn parse_lexicon_tsv(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut lex: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let forms: Vec<&str> = line.split('\t').filter(|f| !f.is_empty()).collect();
        for f in &forms {
            let e = lex.entry(f.to_string()).or_default();
            e.extend(forms.iter().filter(|o| *o != f).map(|o| o.to_string()));
            e.sort();
            e.dedup();
        }
    }
    Ok(lex)
}
