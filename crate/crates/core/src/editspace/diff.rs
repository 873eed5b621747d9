//! Token-level Levenshtein alignment with a length-sensitive substitution cost.
//!
//! Deletes and inserts cost 1 (configurable). Substituting `a` by `b` costs
//! `1 + epsilon * |chars(a) - chars(b)|`, which prefers aligning words of
//! similar length among alignments with the same number of operations.
//!
//! The table is filled over suffixes and traced from the start, so the
//! preference order substitute > delete > insert applies left to right.

use serde::{Deserialize, Serialize};

use super::token::{Token, TokenSequence};
use crate::error::{PieError, Result};

pub const DEFAULT_MAX_TOKENS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffConfig {
    pub epsilon: f64,
    pub insert_cost: f64,
    pub delete_cost: f64,
    pub max_tokens: usize,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig {
            epsilon: 0.001,
            insert_cost: 1.0,
            delete_cost: 1.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl DiffConfig {
    fn validate(&self, max_word_chars: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(PieError::Config("diff epsilon must be positive".into()));
        }
        if self.epsilon * max_word_chars as f64 >= 1.0 {
            return Err(PieError::Config(format!(
                "diff epsilon {} is too large for tokens of {} characters",
                self.epsilon, max_word_chars
            )));
        }
        if !(self.insert_cost > 0.0 && self.delete_cost > 0.0) {
            return Err(PieError::Config(
                "insert and delete costs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One step of a raw alignment, indices into the source (`src`) and target (`tgt`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignStep {
    Copy { src: usize, tgt: usize },
    Substitute { src: usize, tgt: usize },
    Delete { src: usize },
    /// `after` is the last source position consumed before this insert.
    Insert { tgt: usize, after: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub steps: Vec<AlignStep>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiffKind {
    #[serde(rename = "C")]
    Copy,
    #[serde(rename = "D")]
    Delete,
    #[serde(rename = "I")]
    Insert,
}

/// A post-processed diff entry anchored at source position `anchor`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffOp {
    pub kind: DiffKind,
    pub anchor: usize,
    /// Inserted tokens; empty unless `kind` is `Insert`.
    pub payload: Vec<Token>,
}

impl DiffOp {
    fn copy(anchor: usize) -> Self {
        DiffOp {
            kind: DiffKind::Copy,
            anchor,
            payload: Vec::new(),
        }
    }

    fn delete(anchor: usize) -> Self {
        DiffOp {
            kind: DiffKind::Delete,
            anchor,
            payload: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diff {
    pub ops: Vec<DiffOp>,
    pub cost: f64,
}

/// Operation counts along a path. Paths with equal counts have bit-equal cost.
#[derive(Clone, Copy, Default)]
struct Cost {
    subs: u32,
    ins: u32,
    dels: u32,
    offset: u32,
}

impl Cost {
    fn value(&self, cfg: &DiffConfig) -> f64 {
        self.subs as f64
            + self.ins as f64 * cfg.insert_cost
            + self.dels as f64 * cfg.delete_cost
            + self.offset as f64 * cfg.epsilon
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Move {
    Diagonal,
    Delete,
    Insert,
    Done,
}

fn check_len(len: usize, cfg: &DiffConfig) -> Result<()> {
    if len > cfg.max_tokens {
        Err(PieError::InputTooLong {
            len,
            max: cfg.max_tokens,
        })
    } else {
        Ok(())
    }
}

/// Minimum-cost alignment of two raw token lists.
pub fn align(x: &[Token], y: &[Token], cfg: &DiffConfig) -> Result<Alignment> {
    check_len(x.len(), cfg)?;
    check_len(y.len(), cfg)?;
    let max_chars = x.iter().chain(y).map(Token::char_len).max().unwrap_or(0);
    cfg.validate(max_chars)?;

    let (n, m) = (x.len(), y.len());
    let width = m + 1;
    let mut cost = vec![Cost::default(); (n + 1) * width];
    let mut moves = vec![Move::Done; (n + 1) * width];
    let xl: Vec<usize> = x.iter().map(Token::char_len).collect();
    let yl: Vec<usize> = y.iter().map(Token::char_len).collect();

    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            let at = i * width + j;
            if i == n && j == m {
                continue;
            }
            let mut best: Option<(Cost, Move)> = None;
            let mut consider = |c: Cost, mv: Move| {
                let better = match &best {
                    None => true,
                    Some((b, _)) => c.value(cfg) < b.value(cfg),
                };
                if better {
                    best = Some((c, mv));
                }
            };
            if i < n && j < m {
                let mut c = cost[(i + 1) * width + j + 1];
                if x[i] != y[j] {
                    c.subs += 1;
                    c.offset += xl[i].abs_diff(yl[j]) as u32;
                }
                consider(c, Move::Diagonal);
            }
            if i < n {
                let mut c = cost[(i + 1) * width + j];
                c.dels += 1;
                consider(c, Move::Delete);
            }
            if j < m {
                let mut c = cost[i * width + j + 1];
                c.ins += 1;
                consider(c, Move::Insert);
            }
            let (c, mv) = best.expect("at least one move is available");
            cost[at] = c;
            moves[at] = mv;
        }
    }

    let mut steps = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        match moves[i * width + j] {
            Move::Diagonal => {
                if x[i] == y[j] {
                    steps.push(AlignStep::Copy { src: i, tgt: j });
                } else {
                    steps.push(AlignStep::Substitute { src: i, tgt: j });
                }
                i += 1;
                j += 1;
            }
            Move::Delete => {
                steps.push(AlignStep::Delete { src: i });
                i += 1;
            }
            Move::Insert => {
                steps.push(AlignStep::Insert {
                    tgt: j,
                    after: i.checked_sub(1),
                });
                j += 1;
            }
            Move::Done => unreachable!("trace left the table"),
        }
    }
    Ok(Alignment {
        steps,
        cost: cost[0].value(cfg),
    })
}

/// Aligns two boundary-wrapped sequences and post-processes the result:
/// substitutions become a delete followed by an insert, and consecutive
/// inserts at the same anchor are merged into one multi-token insert.
pub fn modified_levenshtein_diff(
    x: &TokenSequence,
    y: &TokenSequence,
    cfg: &DiffConfig,
) -> Result<Diff> {
    x.check_wrapped()?;
    y.check_wrapped()?;
    let alignment = align(x.tokens(), y.tokens(), cfg)?;
    let ytoks = y.tokens();
    let mut ops: Vec<DiffOp> = Vec::with_capacity(alignment.steps.len());
    let push_insert = |ops: &mut Vec<DiffOp>, anchor: usize, tok: &Token| {
        if let Some(last) = ops.last_mut() {
            if last.kind == DiffKind::Insert && last.anchor == anchor {
                last.payload.push(tok.clone());
                return;
            }
        }
        ops.push(DiffOp {
            kind: DiffKind::Insert,
            anchor,
            payload: vec![tok.clone()],
        });
    };
    for step in alignment.steps {
        match step {
            AlignStep::Copy { src, .. } => ops.push(DiffOp::copy(src)),
            AlignStep::Delete { src } => ops.push(DiffOp::delete(src)),
            AlignStep::Substitute { src, tgt } => {
                ops.push(DiffOp::delete(src));
                push_insert(&mut ops, src, &ytoks[tgt]);
            }
            AlignStep::Insert { tgt, after } => {
                let anchor = after.ok_or_else(|| {
                    PieError::InvalidInput("insert before the start marker".into())
                })?;
                push_insert(&mut ops, anchor, &ytoks[tgt]);
            }
        }
    }
    Ok(Diff {
        ops,
        cost: alignment.cost,
    })
}
