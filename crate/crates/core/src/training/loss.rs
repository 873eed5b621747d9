use std::sync::Arc;

use crate::editspace::EditSequence;
use crate::error::{PieError, Result};
use crate::numcore::{Graph, NodeId, Scalar, Tensor};
use crate::piemodel::{EditSpace, COPY_INDEX};

/// Summed cross-entropy split by whether the gold label is copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub non_copy: T,
    pub copy: T,
    pub positions: usize,
}

impl<T: Scalar> LossParts<T> {
    pub fn weighted(&self, copy_weight: T) -> T {
        self.non_copy + copy_weight * self.copy
    }
}

fn check_targets(rows: usize, cols: usize, gold: &[usize]) -> Result<()> {
    if gold.len() != rows {
        return Err(PieError::MalformedEdits(format!(
            "{} gold labels for {rows} positions",
            gold.len()
        )));
    }
    if let Some(&g) = gold.iter().find(|&&g| g >= cols) {
        return Err(PieError::VocabularyMismatch(format!(
            "label {g} outside an edit space of {cols}"
        )));
    }
    Ok(())
}

/// Plain negative log-likelihoods of the gold labels, summed separately
/// over copy and non-copy positions.
pub fn loss_parts<T: Scalar>(logits: &Tensor<T>, gold: &[usize]) -> Result<LossParts<T>> {
    check_targets(logits.rows(), logits.cols(), gold)?;
    let (mut non_copy, mut copy) = (T::zero(), T::zero());
    for (r, &g) in gold.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(row[0], T::max);
        let z: T = row.iter().map(|&v| (v - max).exp()).sum();
        let nll = -(row[g] - max - z.ln());
        if g == COPY_INDEX {
            copy += nll;
        } else {
            non_copy += nll;
        }
    }
    Ok(LossParts {
        non_copy,
        copy,
        positions: gold.len(),
    })
}

/// Copy-weighted loss of a gold edit sequence under `logits`.
pub fn edit_label_loss<T: Scalar>(
    logits: &Tensor<T>,
    gold: &EditSequence,
    space: &EditSpace,
    copy_weight: T,
) -> Result<T> {
    let labels = space.encode(gold)?;
    Ok(loss_parts(logits, &labels)?.weighted(copy_weight))
}

/// The same loss as a graph node, for training.
pub fn edit_label_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    gold: &[usize],
    copy_weight: T,
) -> Result<NodeId> {
    let (rows, cols) = (g.value(logits).rows(), g.value(logits).cols());
    check_targets(rows, cols, gold)?;
    let is_copy = gold.iter().map(|&g| g == COPY_INDEX).collect();
    g.cross_entropy(logits, Arc::new(gold.to_vec()), Arc::new(is_copy), copy_weight)
}
