//! CSV exports for flows, group means, confusion matrices, gate weights and
//! answer scores.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::{ConfusionMatrix, FlowReport, Reasoning};
use crate::model::LayerTrace;

/// Columns `layer, paragraph, supporting, flow_q, flow_t`.
pub fn write_flows(w: impl Write, report: &FlowReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["layer", "paragraph", "supporting", "flow_q", "flow_t"])?;
    for layer in &report.layers {
        for (m, (q, t)) in layer.flow_q.iter().zip(&layer.flow_t).enumerate() {
            let supporting = match report.supporting.get(m).copied().flatten() {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            };
            out.write_record([
                layer.layer.to_string(),
                m.to_string(),
                supporting.to_string(),
                q.to_string(),
                t.to_string(),
            ])?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Supporting/negative group means per layer, then a final `all` row with
/// the unweighted mean over layers.
pub fn write_groups(w: impl Write, report: &FlowReport) -> Result<()> {
    let per_layer = report.group_means()?;
    let total = report.aggregate()?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["layer", "supporting_q", "supporting_t", "negative_q", "negative_t"])?;
    let rows = report
        .layers
        .iter()
        .map(|l| l.layer.to_string())
        .zip(per_layer)
        .chain(std::iter::once(("all".to_string(), total)));
    for (label, g) in rows {
        out.write_record([
            label,
            g.supporting_q.to_string(),
            g.supporting_t.to_string(),
            g.negative_q.to_string(),
            g.negative_t.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Dense labelled grid: rows are query components, columns key components.
pub fn write_confusion(w: impl Write, matrix: &ConfusionMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["component".to_string()];
    header.extend(matrix.labels.iter().cloned());
    out.write_record(&header)?;
    let n = matrix.size();
    for (a, label) in matrix.labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..n).map(|b| matrix.get(a, b).to_string()));
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per (selected layer, paragraph) with every intermediate of the
/// gate computation and the resulting set.
pub fn write_gates(w: impl Write, layers: &[LayerTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "layer",
        "paragraph",
        "I_comb",
        "v",
        "gamma",
        "rank",
        "g",
        "w_raw",
        "w",
        "set",
    ])?;
    for trace in layers {
        for g in &trace.gates.paragraphs {
            out.write_record([
                trace.layer.to_string(),
                g.paragraph.to_string(),
                g.combined_flow.to_string(),
                g.content_value.to_string(),
                g.positional_value.to_string(),
                g.rank.to_string(),
                g.position_weight.to_string(),
                g.raw_weight.to_string(),
                g.weight.to_string(),
                trace.partition.membership[g.paragraph].to_string(),
            ])?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Layer-level statistics behind the gate weights.
pub fn write_gate_stats(w: impl Write, layers: &[LayerTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "layer",
        "flow_mean",
        "flow_std",
        "position_mean",
        "position_std",
        "threshold",
    ])?;
    for t in layers {
        out.write_record([
            t.layer.to_string(),
            t.gates.flow_mean.to_string(),
            t.gates.flow_std.to_string(),
            t.gates.position_mean.to_string(),
            t.gates.position_std.to_string(),
            t.partition.threshold.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub f1: f64,
    pub precision: f64,
    pub class: Reasoning,
}

pub fn write_scores(w: impl Write, rows: &[ScoreRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    if rows.is_empty() {
        out.write_record(["id", "f1", "precision", "class"])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
