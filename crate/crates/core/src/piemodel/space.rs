use crate::editspace::{EditOp, EditSequence, InsertDictionary, TokenMode, TransformTable};
use crate::error::{PieError, Result};
use crate::numcore::EditLayout;

/// The label set: copy, delete, each transform, then an append and a
/// replace per dictionary entry, in that index order.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSpace {
    dict: InsertDictionary,
    table: TransformTable,
    mode: TokenMode,
}

pub const COPY_INDEX: usize = 0;
pub const DELETE_INDEX: usize = 1;

impl EditSpace {
    pub fn new(dict: InsertDictionary, table: TransformTable, mode: TokenMode) -> Self {
        EditSpace { dict, table, mode }
    }

    pub fn dictionary(&self) -> &InsertDictionary {
        &self.dict
    }

    pub fn table(&self) -> &TransformTable {
        &self.table
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn layout(&self) -> EditLayout {
        EditLayout {
            transforms: self.table.len(),
            inserts: self.dict.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.layout().width()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, op: &EditOp) -> Result<usize> {
        let layout = self.layout();
        let missing = |w: &str| {
            PieError::VocabularyMismatch(format!("insert {w:?} is not in the dictionary"))
        };
        match op {
            EditOp::Copy => Ok(COPY_INDEX),
            EditOp::Delete => Ok(DELETE_INDEX),
            EditOp::Transform(k) if *k < self.table.len() => Ok(2 + k),
            EditOp::Transform(k) => Err(PieError::VocabularyMismatch(format!(
                "transform {k} outside a table of {}",
                self.table.len()
            ))),
            EditOp::Append(w) => self
                .dict
                .index_of(w)
                .map(|i| layout.append_start() + i)
                .ok_or_else(|| missing(w)),
            EditOp::Replace(w) => self
                .dict
                .index_of(w)
                .map(|i| layout.replace_start() + i)
                .ok_or_else(|| missing(w)),
        }
    }

    pub fn op_at(&self, index: usize) -> Result<EditOp> {
        let layout = self.layout();
        let word = |i: usize| self.dict.get(i).expect("index within dictionary").to_owned();
        Ok(match index {
            COPY_INDEX => EditOp::Copy,
            DELETE_INDEX => EditOp::Delete,
            i if i < layout.append_start() => EditOp::Transform(i - 2),
            i if i < layout.replace_start() => EditOp::Append(word(i - layout.append_start())),
            i if i < layout.width() => EditOp::Replace(word(i - layout.replace_start())),
            i => {
                return Err(PieError::MalformedEdits(format!(
                    "edit index {i} outside a space of {}",
                    layout.width()
                )))
            }
        })
    }

    pub fn encode(&self, edits: &EditSequence) -> Result<Vec<usize>> {
        edits.ops.iter().map(|op| self.index_of(op)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Result<EditSequence> {
        Ok(EditSequence::new(
            indices.iter().map(|&i| self.op_at(i)).collect::<Result<_>>()?,
        ))
    }
}
