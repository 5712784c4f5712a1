use std::ops::Range;

use crate::attention::{AttentionMatrix, MatrixKind, Reduction, ROW_SUM_TOLERANCE};
use crate::cgw::{apply_cgw, compute_gate_weights, scale_query_row, GateWeights};
use crate::config::DsasConfig;
use crate::error::{Error, Result};
use crate::layout::PromptLayout;
use crate::prompt::BuiltPrompt;
use crate::ras::{apply_ras, partition, Partition};
use crate::tokenizer::EOS;

use super::tensor::{dot, gelu, softmax_in_place, vec_mat, Mat};
use super::{Block, ToyModel};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 32;

#[derive(Debug, Clone, Copy)]
pub struct DsasContext<'a> {
    pub config: &'a DsasConfig,
    pub layout: &'a PromptLayout,
}

/// What DSAS saw and decided in one selected layer during prefill.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub layer: usize,
    /// Head-summed scores before any rewriting.
    pub scores: AttentionMatrix,
    pub gates: GateWeights,
    pub partition: Partition,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// Residual stream after the attention sub-block.
    pub hidden: Mat,
    /// Per-head scores as fed to softmax (after DSAS when selected).
    pub scores: Vec<AttentionMatrix>,
    /// Per-head post-softmax weights.
    pub weights: Vec<AttentionMatrix>,
    pub trace: Option<LayerTrace>,
    keys: Mat,
    values: Mat,
}

#[derive(Debug, Clone, Default)]
pub struct InferenceTrace {
    pub selected_layers: Range<usize>,
    /// One entry per selected layer, ascending. Empty when DSAS is off.
    pub layers: Vec<LayerTrace>,
    /// Prefill weights for every layer, indexed `[layer][head]`.
    pub weights: Vec<Vec<AttentionMatrix>>,
    pub generated: Vec<u32>,
}

impl InferenceTrace {
    /// Head-summed prefill weights of one layer (rows sum to the head count).
    pub fn head_summed_weights(&self, layer: usize) -> Result<AttentionMatrix> {
        AttentionMatrix::sum_heads(&self.weights[layer])
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerTrace> {
        self.layers.iter().find(|t| t.layer == layer)
    }
}

#[derive(Debug, Clone)]
pub struct Generation {
    /// Generated ids, without the terminating EOS.
    pub tokens: Vec<u32>,
    pub stopped_on_eos: bool,
    pub trace: InferenceTrace,
}

struct LayerCache {
    keys: Vec<f64>,
    values: Vec<f64>,
    gates: Option<GateWeights>,
}

/// Single-sequence decoding state: per-layer key/value rows and the gate
/// weights frozen at prefill.
pub struct Session<'m> {
    model: &'m ToyModel,
    layout: Option<PromptLayout>,
    cgw_enabled: bool,
    caches: Vec<LayerCache>,
    position: usize,
}

fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

impl ToyModel {
    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfVocab {
                id,
                vocab_size: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn embed(&self, token: u32, position: usize) -> Vec<f64> {
        self.token_embedding
            .row(token as usize)
            .iter()
            .zip(self.position_embedding.row(position))
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn embed_tokens(&self, tokens: &[u32]) -> Result<Mat> {
        self.check_tokens(tokens)?;
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::PromptTooLong {
                prompt_len: tokens.len(),
                max_new_tokens: 0,
                max_seq_len: self.config.max_seq_len,
            });
        }
        let d = self.config.d_model;
        let mut data = Vec::with_capacity(tokens.len() * d);
        for (p, &t) in tokens.iter().enumerate() {
            data.extend(self.embed(t, p));
        }
        Ok(Mat::from_vec(tokens.len(), d, data))
    }

    fn is_selected(&self, layer: usize, config: &DsasConfig) -> bool {
        config.selected_layers(self.config.num_layers).contains(&layer)
    }

    /// Causal multi-head attention over the whole sequence with the residual
    /// connection applied. In a selected layer the per-head scores are
    /// rewritten by CGW and then RAS before softmax.
    pub fn attention_layer(
        &self,
        layer: usize,
        hidden: &Mat,
        dsas: Option<DsasContext<'_>>,
    ) -> Result<AttentionOutput> {
        let block = &self.blocks[layer];
        let len = hidden.rows;
        let h_count = self.config.num_heads;
        let dk = self.config.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();

        let x = block.attn_norm.apply_rows(hidden);
        let q = x.matmul(&block.w_q);
        let k = x.matmul(&block.w_k);
        let v = x.matmul(&block.w_v);

        let mut scores: Vec<AttentionMatrix> = (0..h_count)
            .map(|h| {
                let cols = h * dk..(h + 1) * dk;
                AttentionMatrix::scores(len, Reduction::PerHead, |i, j| {
                    dot(&q.row(i)[cols.clone()], &k.row(j)[cols.clone()]) * scale
                })
            })
            .collect();

        let mut trace = None;
        if let Some(ctx) = dsas.filter(|c| self.is_selected(layer, c.config)) {
            if ctx.layout.total_len() != len {
                return Err(Error::LayoutMismatch {
                    expected: ctx.layout.total_len(),
                    found: len,
                });
            }
            let summed = AttentionMatrix::sum_heads(&scores)?;
            let gates = compute_gate_weights(&summed, ctx.layout, ctx.config)?;
            let weights = gates.weights();
            let part = partition(&weights)?;
            for head in &mut scores {
                if ctx.config.cgw_enabled {
                    apply_cgw(head, ctx.layout, &gates)?;
                }
                if ctx.config.ras_enabled {
                    apply_ras(head, ctx.layout, &weights, &part)?;
                }
            }
            trace = Some(LayerTrace {
                layer,
                scores: summed,
                gates,
                partition: part,
            });
        }

        let mut weights = Vec::with_capacity(h_count);
        for s in &scores {
            let mut w = AttentionMatrix::zeros(len, MatrixKind::Weight, Reduction::PerHead);
            for i in 0..len {
                let row = w.row_mut(i);
                row.copy_from_slice(s.row(i));
                softmax_in_place(row);
            }
            w.validate_row_sums(1.0, ROW_SUM_TOLERANCE)?;
            weights.push(w);
        }

        let mut mixed = Mat::zeros(len, self.config.d_model);
        for (h, w) in weights.iter().enumerate() {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..len {
                let out = &mut mixed.row_mut(i)[cols.clone()];
                for (j, &a) in w.row(i).iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o += a * vv;
                    }
                }
            }
        }
        let mut out = mixed.matmul(&block.w_o);
        out.add_assign(hidden);
        Ok(AttentionOutput {
            hidden: out,
            scores,
            weights,
            trace,
            keys: k,
            values: v,
        })
    }

    fn mlp_row(block: &Block, row: &mut [f64]) {
        let mut x = vec![0.0; row.len()];
        block.mlp_norm.apply(row, &mut x);
        let mut h = vec_mat(&x, &block.w_in);
        for (a, b) in h.iter_mut().zip(&block.b_in) {
            *a = gelu(*a + b);
        }
        let o = vec_mat(&h, &block.w_out);
        for ((r, o), b) in row.iter_mut().zip(o).zip(&block.b_out) {
            *r += o + b;
        }
    }

    fn logits(&self, row: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; row.len()];
        self.final_norm.apply(row, &mut x);
        vec_mat(&x, &self.unembed)
    }

    /// Runs the prompt through every layer, filling a session's caches.
    /// Returns the session, the logits of the last prompt position and the
    /// prefill trace.
    pub fn prefill(
        &self,
        tokens: &[u32],
        layout: Option<&PromptLayout>,
        dsas: Option<&DsasConfig>,
    ) -> Result<(Session<'_>, Vec<f64>, InferenceTrace)> {
        if let Some(c) = dsas {
            c.validate()?;
        }
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let ctx = match (dsas, layout) {
            (Some(config), Some(layout)) => {
                if layout.total_len() != tokens.len() {
                    return Err(Error::LayoutMismatch {
                        expected: layout.total_len(),
                        found: tokens.len(),
                    });
                }
                Some(DsasContext { config, layout })
            }
            (Some(_), None) => {
                return Err(Error::InvalidConfig("DSAS requires a prompt layout".into()))
            }
            _ => None,
        };
        let mut hidden = self.embed_tokens(tokens)?;
        let mut trace = InferenceTrace {
            selected_layers: match dsas {
                Some(c) => c.selected_layers(self.config.num_layers),
                None => self.config.num_layers..self.config.num_layers,
            },
            ..InferenceTrace::default()
        };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let out = self.attention_layer(l, &hidden, ctx)?;
            hidden = out.hidden;
            for i in 0..hidden.rows {
                Self::mlp_row(block, hidden.row_mut(i));
            }
            let gates = out.trace.as_ref().map(|t| t.gates.clone());
            if let Some(t) = out.trace {
                trace.layers.push(t);
            }
            trace.weights.push(out.weights);
            caches.push(LayerCache {
                keys: out.keys.data,
                values: out.values.data,
                gates,
            });
        }
        let logits = self.logits(hidden.row(hidden.rows - 1));
        let session = Session {
            model: self,
            layout: layout.cloned(),
            cgw_enabled: dsas.is_some_and(|c| c.cgw_enabled),
            caches,
            position: tokens.len(),
        };
        Ok((session, logits, trace))
    }
}

impl Session<'_> {
    pub fn position(&self) -> usize {
        self.position
    }

    /// Feeds one token at the next position and returns its logits. Rows of
    /// generated tokens keep the prefill gate weights on paragraph columns.
    pub fn step(&mut self, token: u32) -> Result<Vec<f64>> {
        let model = self.model;
        model.check_tokens(&[token])?;
        let pos = self.position;
        if pos >= model.config.max_seq_len {
            return Err(Error::PromptTooLong {
                prompt_len: pos,
                max_new_tokens: 1,
                max_seq_len: model.config.max_seq_len,
            });
        }
        let d = model.config.d_model;
        let dk = model.config.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut row = model.embed(token, pos);
        for (block, cache) in model.blocks.iter().zip(&mut self.caches) {
            let mut x = vec![0.0; d];
            block.attn_norm.apply(&row, &mut x);
            let q = vec_mat(&x, &block.w_q);
            cache.keys.extend(vec_mat(&x, &block.w_k));
            cache.values.extend(vec_mat(&x, &block.w_v));
            let mut mixed = vec![0.0; d];
            for h in 0..model.config.num_heads {
                let cols = h * dk..(h + 1) * dk;
                let mut s: Vec<f64> = (0..=pos)
                    .map(|j| dot(&q[cols.clone()], &cache.keys[j * d..(j + 1) * d][cols.clone()]) * scale)
                    .collect();
                if let (true, Some(gates), Some(layout)) =
                    (self.cgw_enabled, &cache.gates, &self.layout)
                {
                    scale_query_row(&mut s, layout, gates);
                }
                softmax_in_place(&mut s);
                let sum: f64 = s.iter().sum();
                if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                    return Err(Error::RowSum {
                        row: pos,
                        sum,
                        expected: 1.0,
                        tolerance: ROW_SUM_TOLERANCE,
                    });
                }
                let out = &mut mixed[cols.clone()];
                for (j, &a) in s.iter().enumerate() {
                    let v = &cache.values[j * d..(j + 1) * d][cols.clone()];
                    for (o, &vv) in out.iter_mut().zip(v) {
                        *o += a * vv;
                    }
                }
            }
            let o = vec_mat(&mixed, &block.w_o);
            for (r, o) in row.iter_mut().zip(o) {
                *r += o;
            }
            ToyModel::mlp_row(block, &mut row);
        }
        self.position += 1;
        Ok(model.logits(&row))
    }
}

/// Greedy decoding: argmax with ties to the lowest id, stopping at EOS or
/// after `max_new_tokens`.
pub fn generate(
    model: &ToyModel,
    prompt: &BuiltPrompt,
    dsas: Option<&DsasConfig>,
    max_new_tokens: usize,
) -> Result<Generation> {
    let max_seq_len = model.config.max_seq_len;
    if prompt.len() + max_new_tokens > max_seq_len {
        return Err(Error::PromptTooLong {
            prompt_len: prompt.len(),
            max_new_tokens,
            max_seq_len,
        });
    }
    let (mut session, mut logits, mut trace) =
        model.prefill(&prompt.token_ids, Some(&prompt.layout), dsas)?;
    let mut tokens = Vec::new();
    let mut stopped_on_eos = false;
    for n in 0..max_new_tokens {
        let next = argmax(&logits);
        if next == EOS {
            stopped_on_eos = true;
            break;
        }
        tokens.push(next);
        if n + 1 < max_new_tokens {
            logits = session.step(next)?;
        }
    }
    trace.generated = tokens.clone();
    Ok(Generation {
        tokens,
        stopped_on_eos,
        trace,
    })
}
