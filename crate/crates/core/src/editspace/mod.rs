//! Edit compilation: alignment, the insert dictionary, transformations, and
//! conversion between (source, target) pairs and per-token edit sequences.

pub mod diff;
pub mod dictionary;
pub mod edits;
pub mod token;
pub mod transform;

pub use diff::{align, modified_levenshtein_diff, AlignStep, Alignment, Diff, DiffConfig, DiffKind, DiffOp};
pub use dictionary::{build_insert_dictionary, long_insert_rate, InsertDictionary};
pub use edits::{apply_edits, seq2edits, EditEntry, EditOp, EditRecord, EditSequence};
pub use token::{Token, TokenMode, TokenSequence, CHAR_SPACE, END, START};
pub use transform::{match_transformation, TransformFamily, TransformRule, TransformTable};
