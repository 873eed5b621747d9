use serde::{Deserialize, Serialize};

use crate::editspace::TokenMode;
use crate::error::{PieError, Result};

/// Which output layer scores the edit space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    #[default]
    Factorized,
    Default,
}

impl std::str::FromStr for HeadMode {
    type Err = PieError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factorized" => Ok(HeadMode::Factorized),
            "default" => Ok(HeadMode::Default),
            other => Err(PieError::Config(format!("unknown head mode {other:?}"))),
        }
    }
}

/// Encoder and edit-space sizes.
///
/// `token_vocab_size`, `num_inserts` and `num_transforms` are filled in from
/// the vocabulary and dictionaries when a model is built; a config file may
/// leave them at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub num_heads: usize,
    pub max_positions: usize,
    pub token_vocab_size: usize,
    pub num_inserts: usize,
    pub num_transforms: usize,
    pub dropout: f64,
    pub init_range: f64,
    pub head: HeadMode,
    pub token_mode: TokenMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 4,
            hidden_size: 200,
            intermediate_size: 400,
            num_heads: 4,
            max_positions: 64,
            token_vocab_size: 0,
            num_inserts: 0,
            num_transforms: 0,
            dropout: 0.1,
            init_range: 0.02,
            head: HeadMode::Factorized,
            token_mode: TokenMode::Word,
        }
    }
}

impl ModelConfig {
    /// A two-layer, hidden-16 model for tests and gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            num_layers: 2,
            hidden_size: 16,
            intermediate_size: 32,
            num_heads: 2,
            max_positions: 32,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    /// Size of the edit space: copy, delete, transforms, appends, replaces.
    pub fn edit_space_size(&self) -> usize {
        2 + self.num_transforms + 2 * self.num_inserts
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PieError::Config(m));
        if self.num_layers == 0 || self.hidden_size == 0 || self.num_heads == 0 {
            return bad("layers, hidden size and heads must be positive".into());
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden_size, self.num_heads
            ));
        }
        if self.intermediate_size == 0 {
            return bad("intermediate size must be positive".into());
        }
        if self.max_positions < 3 {
            return bad("max_positions must leave room for two boundaries".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.init_range > 0.0 && self.init_range.is_finite()) {
            return bad("init_range must be positive".into());
        }
        Ok(())
    }
}
