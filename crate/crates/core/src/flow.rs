//! Information-flow indicators computed from attention weights.
//!
//! For paragraph `m` the flow into the question averages, over the question
//! rows, the Top-K column mass the question pays to the paragraph; the flow
//! into the target sums the Top-K entries of the target row over the
//! paragraph's columns. Masked (future) cells count as zero.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMatrix, MatrixKind};
use crate::error::{Error, Result};
use crate::layout::{PromptLayout, TokenSpan};

/// Sum of the `k` largest values (all values when `k >= len`).
pub fn topk_sum(values: &[f64], k: usize) -> Result<f64> {
    Ok(topk(values, k)?.iter().sum())
}

/// Mean of the `k` largest values (all values when `k >= len`).
pub fn topk_mean(values: &[f64], k: usize) -> Result<f64> {
    let top = topk(values, k)?;
    Ok(top.iter().sum::<f64>() / top.len() as f64)
}

fn topk(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if values.is_empty() || k == 0 {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted.truncate(k);
    Ok(sorted)
}

/// Column sums of `attn` restricted to `rows × cols`.
pub(crate) fn block_column_sums(
    attn: &AttentionMatrix,
    rows: impl Iterator<Item = usize>,
    cols: TokenSpan,
) -> Vec<f64> {
    let mut sums = vec![0.0; cols.len()];
    for i in rows {
        if i < cols.start {
            continue;
        }
        let row = attn.row(i);
        let last = cols.end.min(i);
        for (acc, v) in sums.iter_mut().zip(&row[cols.start..=last]) {
            *acc += v;
        }
    }
    sums
}

fn check_weights(attn: &AttentionMatrix, layout: &PromptLayout) -> Result<()> {
    attn.expect_kind(MatrixKind::Weight)?;
    attn.expect_len(layout.total_len())
}

/// Flow from paragraph `m` into the question rows.
pub fn flow_to_question(
    attn: &AttentionMatrix,
    layout: &PromptLayout,
    m: usize,
    k: usize,
) -> Result<f64> {
    check_weights(attn, layout)?;
    let para = layout.paragraph(m)?.span();
    let sums = block_column_sums(attn, layout.question().tokens(), para);
    Ok(topk_sum(&sums, k)? / layout.question_len() as f64)
}

/// Flow from paragraph `m` into the target row.
pub fn flow_to_target(
    attn: &AttentionMatrix,
    layout: &PromptLayout,
    m: usize,
    k: usize,
) -> Result<f64> {
    check_weights(attn, layout)?;
    let para = layout.paragraph(m)?.span();
    let t = layout.target();
    let row: Vec<f64> = para.tokens().map(|j| attn.value(t, j)).collect();
    topk_sum(&row, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlows {
    pub layer: usize,
    /// Per-paragraph flow into the question.
    pub flow_q: Vec<f64>,
    /// Per-paragraph flow into the target.
    pub flow_t: Vec<f64>,
}

/// Mean flows of the supporting and negative paragraph groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupFlows {
    pub supporting_q: f64,
    pub supporting_t: f64,
    pub negative_q: f64,
    pub negative_t: f64,
}

impl GroupFlows {
    fn scale(self, f: f64) -> Self {
        Self {
            supporting_q: self.supporting_q * f,
            supporting_t: self.supporting_t * f,
            negative_q: self.negative_q * f,
            negative_t: self.negative_t * f,
        }
    }

    fn add(self, o: Self) -> Self {
        Self {
            supporting_q: self.supporting_q + o.supporting_q,
            supporting_t: self.supporting_t + o.supporting_t,
            negative_q: self.negative_q + o.negative_q,
            negative_t: self.negative_t + o.negative_t,
        }
    }

    const ZERO: Self = Self {
        supporting_q: 0.0,
        supporting_t: 0.0,
        negative_q: 0.0,
        negative_t: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub top_k: usize,
    pub layers: Vec<LayerFlows>,
    /// Supporting labels copied from the layout, one per paragraph.
    pub supporting: Vec<Option<bool>>,
}

impl FlowReport {
    fn labels(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut sup = Vec::new();
        let mut neg = Vec::new();
        for (m, label) in self.supporting.iter().enumerate() {
            match label {
                Some(true) => sup.push(m),
                Some(false) => neg.push(m),
                None => return Err(Error::MissingLabels),
            }
        }
        if sup.is_empty() {
            return Err(Error::EmptyGroup("supporting"));
        }
        if neg.is_empty() {
            return Err(Error::EmptyGroup("negative"));
        }
        Ok((sup, neg))
    }

    /// Supporting/negative group means for every layer.
    pub fn group_means(&self) -> Result<Vec<GroupFlows>> {
        let (sup, neg) = self.labels()?;
        let mean = |v: &[f64], idx: &[usize]| idx.iter().map(|&m| v[m]).sum::<f64>() / idx.len() as f64;
        Ok(self
            .layers
            .iter()
            .map(|l| GroupFlows {
                supporting_q: mean(&l.flow_q, &sup),
                supporting_t: mean(&l.flow_t, &sup),
                negative_q: mean(&l.flow_q, &neg),
                negative_t: mean(&l.flow_t, &neg),
            })
            .collect())
    }

    /// Group means aggregated as an unweighted mean over layers.
    pub fn aggregate(&self) -> Result<GroupFlows> {
        let per_layer = self.group_means()?;
        if per_layer.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = per_layer.len() as f64;
        Ok(per_layer
            .into_iter()
            .fold(GroupFlows::ZERO, GroupFlows::add)
            .scale(1.0 / n))
    }
}

/// Flows for every (layer, paragraph) pair of a stack of head-summed (or
/// per-head) weight matrices, one per layer.
pub fn layerwise_flows(
    layers: &[AttentionMatrix],
    layout: &PromptLayout,
    k: usize,
) -> Result<FlowReport> {
    if layers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let c = layout.num_paragraphs();
    let mut out = Vec::with_capacity(layers.len());
    for (layer, attn) in layers.iter().enumerate() {
        let mut flow_q = Vec::with_capacity(c);
        let mut flow_t = Vec::with_capacity(c);
        for m in 0..c {
            flow_q.push(flow_to_question(attn, layout, m, k)?);
            flow_t.push(flow_to_target(attn, layout, m, k)?);
        }
        out.push(LayerFlows { layer, flow_q, flow_t });
    }
    Ok(FlowReport {
        top_k: k,
        layers: out,
        supporting: layout.paragraphs().iter().map(|p| p.supporting).collect(),
    })
}

/// Answer-quality class of one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reasoning {
    Good,
    Bad,
    Neither,
}

impl std::fmt::Display for Reasoning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Reasoning::Good => "good",
            Reasoning::Bad => "bad",
            Reasoning::Neither => "neither",
        })
    }
}

/// Good iff F1 is exactly 1, Bad iff precision is exactly 0.
pub fn classify_reasoning(f1: f64, precision: f64) -> Reasoning {
    if f1 == 1.0 {
        Reasoning::Good
    } else if precision == 0.0 {
        Reasoning::Bad
    } else {
        Reasoning::Neither
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub good: GroupFlows,
    pub bad: GroupFlows,
    pub good_count: usize,
    pub bad_count: usize,
}

/// Mean layer-aggregated group flows over Good and over Bad instances.
/// `Neither` instances are ignored.
pub fn compare_groups(reports: &[(FlowReport, Reasoning)]) -> Result<GroupComparison> {
    let mut good = (GroupFlows::ZERO, 0usize);
    let mut bad = (GroupFlows::ZERO, 0usize);
    for (report, class) in reports {
        let slot = match class {
            Reasoning::Good => &mut good,
            Reasoning::Bad => &mut bad,
            Reasoning::Neither => continue,
        };
        slot.0 = slot.0.add(report.aggregate()?);
        slot.1 += 1;
    }
    if good.1 == 0 {
        return Err(Error::EmptyGroup("good"));
    }
    if bad.1 == 0 {
        return Err(Error::EmptyGroup("bad"));
    }
    Ok(GroupComparison {
        good: good.0.scale(1.0 / good.1 as f64),
        bad: bad.0.scale(1.0 / bad.1 as f64),
        good_count: good.1,
        bad_count: bad.1,
    })
}

/// Pairwise attention between prompt components `p_0 … p_{C-1}, q, t`,
/// min-max normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// Row-major; cell `(a, b)` measures how much component `a` (queries)
    /// attends to component `b` (keys).
    pub values: Vec<f64>,
    /// Values before normalization.
    pub raw: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size() + b]
    }
}

/// Component spans in confusion-matrix order.
pub fn components(layout: &PromptLayout) -> Vec<(String, TokenSpan)> {
    let mut out: Vec<(String, TokenSpan)> = layout
        .paragraphs()
        .iter()
        .map(|p| (format!("p{}", p.index), p.span()))
        .collect();
    out.push(("q".into(), layout.question()));
    let t = layout.target();
    out.push(("t".into(), TokenSpan::new(t, t)));
    out
}

/// Min-max normalization; an all-zero input stays zero and any other
/// constant input maps to all ones.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.iter().all(|&v| v == 0.0) {
        return vec![0.0; values.len()];
    }
    if max == min {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

/// Averages the layers into one global matrix, then scores each ordered
/// component pair by the mean of the Top-K column sums of its sub-matrix.
pub fn confusion_matrix(
    layers: &[AttentionMatrix],
    layout: &PromptLayout,
    k: usize,
) -> Result<ConfusionMatrix> {
    let refs: Vec<&AttentionMatrix> = layers.iter().collect();
    let global = AttentionMatrix::mean(&refs)?;
    check_weights(&global, layout)?;

    let comps = components(layout);
    let mut raw = Vec::with_capacity(comps.len() * comps.len());
    for (_, rows) in &comps {
        for (_, cols) in &comps {
            let sums = block_column_sums(&global, rows.tokens(), *cols);
            raw.push(topk_mean(&sums, k)?);
        }
    }
    Ok(ConfusionMatrix {
        labels: comps.into_iter().map(|(l, _)| l).collect(),
        values: min_max_normalize(&raw),
        raw,
    })
}
