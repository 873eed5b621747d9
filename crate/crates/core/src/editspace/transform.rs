//! Deterministic word rewrites used as transformation edits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PieError, Result};

const DEFAULT_TABLE_TSV: &str = include_str!("../../data/transforms.tsv");
const TSV_HEADER: &str = "family\tsuffix_from\tsuffix_to";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransformFamily {
    AddSuffix,
    RemoveSuffix,
    ReplaceSuffix,
    CaseCapitalizeFirst,
    CaseLowerFirst,
}

impl TransformFamily {
    fn as_str(self) -> &'static str {
        match self {
            TransformFamily::AddSuffix => "ADD_SUFFIX",
            TransformFamily::RemoveSuffix => "REMOVE_SUFFIX",
            TransformFamily::ReplaceSuffix => "REPLACE_SUFFIX",
            TransformFamily::CaseCapitalizeFirst => "CASE_CAPITALIZE_FIRST",
            TransformFamily::CaseLowerFirst => "CASE_LOWER_FIRST",
        }
    }
}

impl FromStr for TransformFamily {
    type Err = PieError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ADD_SUFFIX" => TransformFamily::AddSuffix,
            "REMOVE_SUFFIX" => TransformFamily::RemoveSuffix,
            "REPLACE_SUFFIX" => TransformFamily::ReplaceSuffix,
            "CASE_CAPITALIZE_FIRST" => TransformFamily::CaseCapitalizeFirst,
            "CASE_LOWER_FIRST" => TransformFamily::CaseLowerFirst,
            other => {
                return Err(PieError::Config(format!(
                    "unknown transformation family {other:?}"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformRule {
    pub id: usize,
    pub family: TransformFamily,
    pub suffix_from: String,
    pub suffix_to: String,
}

impl TransformRule {
    pub fn new(
        id: usize,
        family: TransformFamily,
        suffix_from: impl Into<String>,
        suffix_to: impl Into<String>,
    ) -> Result<Self> {
        let rule = TransformRule {
            id,
            family,
            suffix_from: suffix_from.into(),
            suffix_to: suffix_to.into(),
        };
        rule.validate()?;
        Ok(rule)
    }

    fn validate(&self) -> Result<()> {
        let (from_empty, to_empty) = (self.suffix_from.is_empty(), self.suffix_to.is_empty());
        let ok = match self.family {
            TransformFamily::AddSuffix => from_empty && !to_empty,
            TransformFamily::RemoveSuffix => !from_empty && to_empty,
            TransformFamily::ReplaceSuffix => !from_empty && !to_empty,
            TransformFamily::CaseCapitalizeFirst | TransformFamily::CaseLowerFirst => {
                from_empty && to_empty
            }
        };
        if ok {
            Ok(())
        } else {
            Err(PieError::Config(format!("malformed transformation rule {self}")))
        }
    }

    /// Applies the rule, or returns `None` where it does not apply.
    pub fn apply(&self, word: &str) -> Option<String> {
        if word.is_empty() {
            return None;
        }
        match self.family {
            TransformFamily::AddSuffix => Some(format!("{word}{}", self.suffix_to)),
            TransformFamily::RemoveSuffix | TransformFamily::ReplaceSuffix => {
                let stem = word.strip_suffix(self.suffix_from.as_str())?;
                if stem.is_empty() {
                    return None;
                }
                Some(format!("{stem}{}", self.suffix_to))
            }
            TransformFamily::CaseCapitalizeFirst => {
                let mut chars = word.chars();
                let first = chars.next()?;
                if !first.is_lowercase() {
                    return None;
                }
                Some(first.to_uppercase().chain(chars).collect())
            }
            TransformFamily::CaseLowerFirst => {
                let mut chars = word.chars();
                let first = chars.next()?;
                if !first.is_uppercase() {
                    return None;
                }
                Some(first.to_lowercase().chain(chars).collect())
            }
        }
    }
}

impl fmt::Display for TransformRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            TransformFamily::AddSuffix => write!(f, "AddSuffix({})", self.suffix_to),
            TransformFamily::RemoveSuffix => write!(f, "RemoveSuffix({})", self.suffix_from),
            TransformFamily::ReplaceSuffix => {
                write!(f, "ReplaceSuffix({}->{})", self.suffix_from, self.suffix_to)
            }
            TransformFamily::CaseCapitalizeFirst => f.write_str("CaseCapitalizeFirst"),
            TransformFamily::CaseLowerFirst => f.write_str("CaseLowerFirst"),
        }
    }
}

/// An ordered list of rules; a rule's id is its row index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformTable {
    rules: Vec<TransformRule>,
}

impl TransformTable {
    pub fn empty() -> Self {
        TransformTable::default()
    }

    /// Suffix rules, their inverses, then the two case rules.
    pub fn default_table() -> Self {
        Self::from_tsv(DEFAULT_TABLE_TSV).expect("shipped transformation table parses")
    }

    pub fn from_rules(rules: Vec<(TransformFamily, String, String)>) -> Result<Self> {
        let rules = rules
            .into_iter()
            .enumerate()
            .map(|(id, (fam, from, to))| TransformRule::new(id, fam, from, to))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformTable { rules })
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || (lineno == 0 && line == TSV_HEADER) {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(PieError::Config(format!(
                    "transformation table line {}: expected 3 columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            rows.push((cols[0].parse()?, cols[1].to_owned(), cols[2].to_owned()));
        }
        Self::from_rules(rows)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for r in &self.rules {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                r.family.as_str(),
                r.suffix_from,
                r.suffix_to
            ));
        }
        out
    }

    pub fn rules(&self) -> &[TransformRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&TransformRule> {
        self.rules.get(id)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }

    /// Id of the first rule that rewrites `src` into exactly `dst`.
    pub fn match_transformation(&self, src: &str, dst: &str) -> Option<usize> {
        match_transformation(src, dst, &self.rules)
    }
}

pub fn match_transformation(src: &str, dst: &str, table: &[TransformRule]) -> Option<usize> {
    table
        .iter()
        .find(|r| r.apply(src).as_deref() == Some(dst))
        .map(|r| r.id)
}
