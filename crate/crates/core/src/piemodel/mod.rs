//! The edit labeler: a transformer encoder with replace and append units
//! and a factorized edit-scoring head.

pub mod config;
pub mod model;
pub mod space;
pub mod vocab;

pub use config::{HeadMode, ModelConfig};
pub use model::{
    edit_distribution, edit_unit_mask, parameter_layout, EditDistribution, Encoded,
    EncoderState, PieModel,
};
pub use space::{EditSpace, COPY_INDEX, DELETE_INDEX};
pub use vocab::{Vocab, END_ID, MASK, MASK_ID, PAD, PAD_ID, START_ID, UNK, UNK_ID};
