//! Contextual gate weighting.
//!
//! From a layer's head-summed score matrix each paragraph gets a combined
//! flow (question rows plus the target row replicated `Q` times, Top-K
//! column mean), a content value (z-scored then squashed into `[0.5, 1]`),
//! a Gaussian positional value, a rank-based position weight, and finally a
//! gate weight min-max scaled into `[β, 1]`. The gate weights then rescale
//! the question/target rows of every head's scores over the paragraph's
//! columns.
//!
//! Scores are scaled as-is, negative values included: multiplying a
//! negative score by `w < 1` moves it toward zero and so *raises* its
//! post-softmax share.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMatrix, MatrixKind};
use crate::config::DsasConfig;
use crate::error::{Error, Result};
use crate::flow::{block_column_sums, topk_mean};
use crate::gaussian::{normal_cdf, normal_pdf};
use crate::layout::{ParagraphSpan, PromptLayout};

/// Content value assigned to every paragraph when the flows carry no spread.
pub const DEGENERATE_CONTENT_VALUE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParagraphGate {
    pub paragraph: usize,
    pub combined_flow: f64,
    pub content_value: f64,
    pub positional_value: f64,
    /// 1-based rank by descending content value.
    pub rank: usize,
    pub position_weight: f64,
    pub raw_weight: f64,
    pub weight: f64,
}

/// All per-paragraph intermediates of one layer plus the layer statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    pub paragraphs: Vec<ParagraphGate>,
    pub flow_mean: f64,
    pub flow_std: f64,
    pub position_mean: f64,
    pub position_std: f64,
}

impl GateWeights {
    pub fn weights(&self) -> Vec<f64> {
        self.paragraphs.iter().map(|p| p.weight).collect()
    }

    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Combined flow of paragraph `m`: the mean of the Top-K column sums of the
/// question rows stacked over `Q` copies of the target row.
pub fn combined_flow(
    scores: &AttentionMatrix,
    layout: &PromptLayout,
    m: usize,
    k: usize,
) -> Result<f64> {
    scores.expect_kind(MatrixKind::Score)?;
    scores.expect_len(layout.total_len())?;
    let para = layout.paragraph(m)?.span();
    let q = layout.question_len() as f64;
    let t = layout.target();
    let mut sums = block_column_sums(scores, layout.question().tokens(), para);
    for (acc, j) in sums.iter_mut().zip(para.tokens()) {
        *acc += q * scores.value(t, j);
    }
    topk_mean(&sums, k)
}

/// Content values with the population mean/std of the flows.
pub fn content_values(flows: &[f64]) -> (Vec<f64>, f64, f64) {
    if flows.is_empty() {
        return (Vec::new(), f64::NAN, f64::NAN);
    }
    let (mean, std) = mean_std(flows);
    let constant = flows.iter().all(|&f| f == flows[0]);
    if constant || !(std > 0.0) || !std.is_finite() {
        return (vec![DEGENERATE_CONTENT_VALUE; flows.len()], mean, std);
    }
    let v = flows
        .iter()
        .map(|f| 0.5 * sigmoid((f - mean) / std) + 0.5)
        .collect();
    (v, mean, std)
}

/// Mean and population std of the token indices `0..len`.
pub fn position_stats(len: usize) -> (f64, f64) {
    let l = len as f64;
    (0.5 * (l - 1.0), ((l * l - 1.0) / 12.0).sqrt())
}

/// Average standard-normal density over the span's normalized extent.
pub fn positional_value(span: &ParagraphSpan, total_len: usize) -> Result<f64> {
    if total_len < 2 || span.start > span.end || span.end >= total_len {
        return Err(Error::SpanOutOfRange {
            start: span.start,
            end: span.end,
            len: total_len,
        });
    }
    let (mu, sigma) = position_stats(total_len);
    let z1 = (span.start as f64 - mu) / sigma;
    let z2 = (span.end as f64 - mu) / sigma;
    if span.start == span.end {
        return Ok(normal_pdf(z1));
    }
    Ok((normal_cdf(z2) - normal_cdf(z1)) / (z2 - z1))
}

/// 1-based ranks by descending `v`, ties going to the smaller index.
pub fn rank_descending(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; v.len()];
    for (r, &m) in order.iter().enumerate() {
        ranks[m] = r + 1;
    }
    ranks
}

/// Ranks and position-aware weights: the top half by content value get
/// `((C/2 + 1) / rank)^γ`, the rest get 1.
pub fn position_weights(v: &[f64], gamma: &[f64]) -> (Vec<usize>, Vec<f64>) {
    debug_assert_eq!(v.len(), gamma.len());
    let c = v.len() as f64;
    let ranks = rank_descending(v);
    let g = ranks
        .iter()
        .zip(gamma)
        .map(|(&r, &gm)| {
            if r as f64 <= 0.5 * c {
                ((0.5 * c + 1.0) / r as f64).powf(gm)
            } else {
                1.0
            }
        })
        .collect();
    (ranks, g)
}

/// Raw weights `v · g^α` and final weights min-max scaled into `[β, 1]`.
/// Constant raw weights give all ones.
pub fn gate_weights(v: &[f64], g: &[f64], alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = v.iter().zip(g).map(|(v, g)| v * g.powf(alpha)).collect();
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return (raw.clone(), vec![1.0; raw.len()]);
    }
    let w = raw
        .iter()
        .map(|&r| {
            let unit = (r - min) / (max - min);
            if unit >= 1.0 {
                1.0
            } else {
                ((1.0 - beta) * unit + beta).clamp(beta, 1.0)
            }
        })
        .collect();
    (raw, w)
}

/// Full gate-weight computation for one layer from its head-summed scores.
pub fn compute_gate_weights(
    scores: &AttentionMatrix,
    layout: &PromptLayout,
    config: &DsasConfig,
) -> Result<GateWeights> {
    let c = layout.num_paragraphs();
    let flows = (0..c)
        .map(|m| combined_flow(scores, layout, m, config.top_k))
        .collect::<Result<Vec<_>>>()?;
    let (v, flow_mean, flow_std) = content_values(&flows);
    let gamma = layout
        .paragraphs()
        .iter()
        .map(|p| positional_value(p, layout.total_len()))
        .collect::<Result<Vec<_>>>()?;
    let (ranks, g) = position_weights(&v, &gamma);
    let (raw, w) = gate_weights(&v, &g, config.effective_alpha(), config.beta);
    let (position_mean, position_std) = position_stats(layout.total_len());

    let paragraphs = (0..c)
        .map(|m| ParagraphGate {
            paragraph: m,
            combined_flow: flows[m],
            content_value: v[m],
            positional_value: gamma[m],
            rank: ranks[m],
            position_weight: g[m],
            raw_weight: raw[m],
            weight: w[m],
        })
        .collect();
    Ok(GateWeights {
        paragraphs,
        flow_mean,
        flow_std,
        position_mean,
        position_std,
    })
}

/// Scales question/target-row scores over each paragraph's columns by that
/// paragraph's gate weight. Every other cell is left untouched.
pub fn apply_cgw(
    scores: &mut AttentionMatrix,
    layout: &PromptLayout,
    gates: &GateWeights,
) -> Result<()> {
    scores.expect_kind(MatrixKind::Score)?;
    scores.expect_len(layout.total_len())?;
    if gates.len() != layout.num_paragraphs() {
        return Err(Error::BadParagraphIndex {
            index: gates.len(),
            count: layout.num_paragraphs(),
        });
    }
    let rows: Vec<usize> = layout.anchor_rows().collect();
    for i in rows {
        scale_query_row(scores.row_mut(i), layout, gates);
    }
    Ok(())
}

/// Scales the paragraph columns of one query row (columns `0..row.len()`).
/// Used for prompt anchor rows and for rows of generated tokens.
pub fn scale_query_row(row: &mut [f64], layout: &PromptLayout, gates: &GateWeights) {
    for (p, gate) in layout.paragraphs().iter().zip(&gates.paragraphs) {
        if p.start >= row.len() {
            break;
        }
        let end = p.end.min(row.len() - 1);
        for cell in &mut row[p.start..=end] {
            *cell *= gate.weight;
        }
    }
}
