use std::fmt;

use serde::{Deserialize, Serialize};

use super::diff::{modified_levenshtein_diff, DiffConfig, DiffKind};
use super::dictionary::InsertDictionary;
use super::token::{Token, TokenSequence, END, START};
use super::transform::TransformTable;
use crate::error::{PieError, Result};

/// One in-place edit applied to a single source token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditOp {
    Copy,
    Delete,
    /// Copy the token, then emit the insert `w`.
    Append(String),
    /// Emit the insert `w` instead of the token.
    Replace(String),
    /// Rewrite the token with the rule at this index of the transformation table.
    Transform(usize),
}

impl EditOp {
    pub fn is_copy(&self) -> bool {
        matches!(self, EditOp::Copy)
    }

    pub fn code(&self) -> &'static str {
        match self {
            EditOp::Copy => "C",
            EditOp::Delete => "D",
            EditOp::Append(_) => "A",
            EditOp::Replace(_) => "R",
            EditOp::Transform(_) => "T",
        }
    }
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::Copy => f.write_str("C"),
            EditOp::Delete => f.write_str("D"),
            EditOp::Append(w) => write!(f, "A({w})"),
            EditOp::Replace(w) => write!(f, "R({w})"),
            EditOp::Transform(k) => write!(f, "T{k}"),
        }
    }
}

/// Edit labels aligned one-to-one with a boundary-wrapped source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EditSequence {
    pub ops: Vec<EditOp>,
}

impl EditSequence {
    pub fn new(ops: Vec<EditOp>) -> Self {
        EditSequence { ops }
    }

    pub fn all_copy(n: usize) -> Self {
        EditSequence {
            ops: vec![EditOp::Copy; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// `(position, op)` for every edit other than a copy.
    pub fn changes(&self) -> impl Iterator<Item = (usize, &EditOp)> {
        self.ops.iter().enumerate().filter(|(_, op)| !op.is_copy())
    }

    pub fn to_record(&self) -> EditRecord {
        EditRecord {
            edits: self
                .ops
                .iter()
                .enumerate()
                .map(|(pos, op)| EditEntry {
                    pos,
                    op: op.code().to_owned(),
                    arg: match op {
                        EditOp::Append(w) | EditOp::Replace(w) => Some(w.clone()),
                        _ => None,
                    },
                    rule: match op {
                        EditOp::Transform(k) => Some(*k),
                        _ => None,
                    },
                })
                .collect(),
        }
    }

    pub fn from_record(record: &EditRecord) -> Result<Self> {
        let mut ops = Vec::with_capacity(record.edits.len());
        for (i, e) in record.edits.iter().enumerate() {
            if e.pos != i {
                return Err(PieError::MalformedEdits(format!(
                    "edit {i} has position {}",
                    e.pos
                )));
            }
            let missing = |what: &str| {
                PieError::MalformedEdits(format!("edit at {i} ({}) lacks {what}", e.op))
            };
            let op = match e.op.as_str() {
                "C" => EditOp::Copy,
                "D" => EditOp::Delete,
                "A" => EditOp::Append(e.arg.clone().ok_or_else(|| missing("arg"))?),
                "R" => EditOp::Replace(e.arg.clone().ok_or_else(|| missing("arg"))?),
                "T" => EditOp::Transform(e.rule.ok_or_else(|| missing("rule"))?),
                other => {
                    return Err(PieError::MalformedEdits(format!(
                        "unknown edit code {other:?}"
                    )))
                }
            };
            ops.push(op);
        }
        Ok(EditSequence { ops })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("edit records serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let record: EditRecord = serde_json::from_str(line)?;
        Self::from_record(&record)
    }
}

impl fmt::Display for EditSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.ops.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

/// One line of an edit file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub edits: Vec<EditEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditEntry {
    pub pos: usize,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<usize>,
}

/// Compiles a (source, target) pair into one edit per source token.
///
/// Inserts that are neither a dictionary entry nor a transformation of the
/// deleted token are dropped, so the result may not reconstruct `y`.
pub fn seq2edits(
    x: &TokenSequence,
    y: &TokenSequence,
    dict: &InsertDictionary,
    table: &TransformTable,
    cfg: &DiffConfig,
) -> Result<EditSequence> {
    let diff = modified_levenshtein_diff(x, y, cfg)?;
    let mode = x.mode();
    let mut ops: Vec<Option<EditOp>> = vec![None; x.len()];
    for d in diff.ops {
        let i = d.anchor;
        match d.kind {
            DiffKind::Copy => ops[i] = Some(EditOp::Copy),
            DiffKind::Delete => ops[i] = Some(EditOp::Delete),
            DiffKind::Insert => {
                let w = mode.join_tokens(&d.payload);
                ops[i] = match ops[i].take() {
                    Some(EditOp::Delete) => {
                        let src = x.tokens()[i].as_str();
                        if let Some(k) = table.match_transformation(src, &w) {
                            Some(EditOp::Transform(k))
                        } else if dict.contains(&w) {
                            Some(EditOp::Replace(w))
                        } else {
                            Some(EditOp::Copy)
                        }
                    }
                    Some(EditOp::Copy) => {
                        if dict.contains(&w) {
                            Some(EditOp::Append(w))
                        } else {
                            Some(EditOp::Copy)
                        }
                    }
                    other => {
                        return Err(PieError::InvalidState(format!(
                            "insert at {i} follows {other:?}"
                        )))
                    }
                };
            }
        }
    }
    let ops = ops
        .into_iter()
        .enumerate()
        .map(|(i, op)| {
            op.ok_or_else(|| PieError::InvalidState(format!("no diff op covers source {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EditSequence { ops })
}

/// Applies edits left to right. Boundary markers are always emitted as-is;
/// the only edit honoured on the start marker is an append.
pub fn apply_edits(
    x: &TokenSequence,
    e: &EditSequence,
    table: &TransformTable,
) -> Result<TokenSequence> {
    if e.len() != x.len() {
        return Err(PieError::MalformedEdits(format!(
            "{} edits for {} tokens",
            e.len(),
            x.len()
        )));
    }
    let mode = x.mode();
    let mut out: Vec<Token> = Vec::with_capacity(x.len() + 4);
    let push_payload = |out: &mut Vec<Token>, w: &str| -> Result<()> {
        for t in mode.split_payload(w) {
            let t = Token::new(t)?;
            if !t.is_boundary() {
                out.push(t);
            }
        }
        Ok(())
    };
    for (tok, op) in x.tokens().iter().zip(&e.ops) {
        if tok.as_str() == START {
            out.push(tok.clone());
            if let EditOp::Append(w) = op {
                push_payload(&mut out, w)?;
            }
            continue;
        }
        if tok.as_str() == END {
            out.push(tok.clone());
            continue;
        }
        match op {
            EditOp::Copy => out.push(tok.clone()),
            EditOp::Delete => {}
            EditOp::Append(w) => {
                out.push(tok.clone());
                push_payload(&mut out, w)?;
            }
            EditOp::Replace(w) => push_payload(&mut out, w)?,
            EditOp::Transform(k) => {
                let rule = table.get(*k).ok_or_else(|| {
                    PieError::MalformedEdits(format!("transformation {k} is not in the table"))
                })?;
                match rule.apply(tok.as_str()).map(Token::new) {
                    Some(Ok(t)) if !t.is_boundary() => out.push(t),
                    _ => out.push(tok.clone()),
                }
            }
        }
    }
    if x.is_boundary_wrapped() {
        TokenSequence::from_wrapped_tokens(out, mode)
    } else {
        Ok(TokenSequence::unwrapped(out, mode))
    }
}
