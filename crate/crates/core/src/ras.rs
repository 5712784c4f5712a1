//! Reciprocal attention suppression.
//!
//! Paragraphs whose gate weight reaches the layer mean are key, the rest
//! irrelevant. Every causal score between a key and an irrelevant paragraph
//! (in either direction) is multiplied by the smaller of the two weights.
//! Question and target rows are never touched here.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMatrix, MatrixKind};
use crate::error::{Error, Result};
use crate::layout::PromptLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParagraphSet {
    Key,
    Irrelevant,
}

impl std::fmt::Display for ParagraphSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ParagraphSet::Key => "key",
            ParagraphSet::Irrelevant => "irrelevant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Set membership per paragraph ordinal.
    pub membership: Vec<ParagraphSet>,
    /// Mean of the gate weights.
    pub threshold: f64,
}

impl Partition {
    pub fn key(&self) -> Vec<usize> {
        self.members(ParagraphSet::Key)
    }

    pub fn irrelevant(&self) -> Vec<usize> {
        self.members(ParagraphSet::Irrelevant)
    }

    fn members(&self, set: ParagraphSet) -> Vec<usize> {
        self.membership
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == set)
            .map(|(m, _)| m)
            .collect()
    }

    pub fn is_cross(&self, m1: usize, m2: usize) -> bool {
        self.membership[m1] != self.membership[m2]
    }
}

/// Splits paragraphs at the mean weight; a weight equal to the mean is key.
pub fn partition(weights: &[f64]) -> Result<Partition> {
    if weights.is_empty() {
        return Err(Error::EmptyInput);
    }
    let threshold = weights.iter().sum::<f64>() / weights.len() as f64;
    let all_equal = weights.iter().all(|&w| w == weights[0]);
    let membership = weights
        .iter()
        .map(|&w| {
            if all_equal || w >= threshold {
                ParagraphSet::Key
            } else {
                ParagraphSet::Irrelevant
            }
        })
        .collect();
    Ok(Partition {
        membership,
        threshold,
    })
}

/// Multiplies every score `(i, j)`, `j < i`, whose row and column lie in
/// paragraphs of different sets by the smaller of the two gate weights.
pub fn apply_ras(
    scores: &mut AttentionMatrix,
    layout: &PromptLayout,
    weights: &[f64],
    partition: &Partition,
) -> Result<()> {
    scores.expect_kind(MatrixKind::Score)?;
    scores.expect_len(layout.total_len())?;
    let c = layout.num_paragraphs();
    if weights.len() != c || partition.membership.len() != c {
        return Err(Error::BadParagraphIndex {
            index: weights.len().max(partition.membership.len()),
            count: c,
        });
    }
    if partition.irrelevant().is_empty() {
        return Ok(());
    }
    let paragraphs = layout.paragraphs();
    for row_para in paragraphs {
        let m1 = row_para.index;
        for i in row_para.tokens() {
            let row = scores.row_mut(i);
            for col_para in paragraphs {
                let m2 = col_para.index;
                if col_para.start >= i {
                    break;
                }
                if !partition.is_cross(m1, m2) {
                    continue;
                }
                let factor = weights[m1].min(weights[m2]);
                let end = col_para.end.min(i - 1);
                for cell in &mut row[col_para.start..=end] {
                    *cell *= factor;
                }
            }
        }
    }
    Ok(())
}
