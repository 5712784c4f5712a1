//! Synthetic prompts and hand-built models. Unlike the oracles these call
//! into the library.

use std::ops::RangeInclusive;

use dsas_core::cgw::compute_gate_weights;
use dsas_core::prompt::{SampleParagraph, MULTI_DOC_QA};
use dsas_core::{build_prompt, BuiltPrompt, ByteTokenizer, DsasConfig, MatrixKind, ModelConfig, ParagraphSpan, PromptLayout, RawSample, Reduction, TokenSpan, ToyModel};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_scores, to_matrix, Dense};

const WORDS: &[&str] = &[
    "river", "stone", "castle", "winter", "harbor", "signal", "copper", "meadow", "lantern", "orbit", "violet",
    "engine", "forest", "silver", "garden", "thunder", "quiet", "marble", "falcon", "amber",
];

/// Byte that carries the planted answer pattern.
pub const MARKER: u8 = b'@';

pub fn sentence(rng: &mut impl Rng, words: RangeInclusive<usize>) -> String {
    let n = rng.random_range(words);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn synthetic_sample(rng: &mut impl Rng, paragraphs: RangeInclusive<usize>, words: RangeInclusive<usize>) -> RawSample {
    let c = rng.random_range(paragraphs);
    RawSample {
        paragraphs: (0..c)
            .map(|_| SampleParagraph { text: sentence(rng, words.clone()), supporting: None })
            .collect(),
        question: format!("{}?", sentence(rng, 3..=6)),
        answers: vec![],
    }
}

/// A sample whose paragraph `answer` (returned) holds twelve marker bytes;
/// it is labelled supporting, the rest not.
pub fn planted_sample(rng: &mut impl Rng) -> (RawSample, usize) {
    let mut s = synthetic_sample(rng, 4..=8, 4..=10);
    let answer = rng.random_range(0..s.paragraphs.len());
    for (m, p) in s.paragraphs.iter_mut().enumerate() {
        p.supporting = Some(m == answer);
    }
    let marker = String::from_utf8(vec![MARKER; 12]).unwrap();
    s.paragraphs[answer].text = format!("{} {marker} {}", sentence(rng, 2..=4), sentence(rng, 2..=4));
    (s, answer)
}

/// Paragraph `m` moves to slot `perm[m]`.
pub fn permute(sample: &RawSample, perm: &[usize]) -> RawSample {
    let mut paragraphs: Vec<Option<SampleParagraph>> = vec![None; perm.len()];
    for (m, &to) in perm.iter().enumerate() {
        paragraphs[to] = Some(sample.paragraphs[m].clone());
    }
    RawSample { paragraphs: paragraphs.into_iter().map(Option::unwrap).collect(), ..sample.clone() }
}

pub fn prompt(sample: &RawSample) -> BuiltPrompt {
    build_prompt(sample, &ByteTokenizer, &MULTI_DOC_QA).unwrap()
}

pub fn small_config(layers: usize, seed: u32) -> ModelConfig {
    ModelConfig { d_model: 32, num_heads: 4, num_layers: layers, seed, ..ModelConfig::default() }
}

pub fn small_model(layers: usize, seed: u32) -> ToyModel {
    ToyModel::init(small_config(layers, seed)).unwrap()
}

/// Zeroes position embeddings and every residual write, so each layer sees
/// the bare token embeddings.
pub fn freeze_residual(model: &mut ToyModel) {
    model.position_embedding.data.fill(0.0);
    for b in &mut model.blocks {
        b.w_o.data.fill(0.0);
        b.w_out.data.fill(0.0);
        b.b_out.fill(0.0);
    }
}

/// Frozen-residual model in which every head's score is
/// `(x_i · e)(x_j · u) / sqrt(d_k)`: all tokens share a direction `e`, only
/// the marker byte carries `u`, so anchor rows put their mass on markers.
pub fn planted_model(seed: u32) -> ToyModel {
    let mut model = small_model(4, seed);
    freeze_residual(&mut model);
    let d = model.config.d_model;
    let dk = model.config.head_dim();
    let norm = (d as f64).sqrt();
    let e: Vec<f64> = (0..d).map(|r| if r < d / 2 { 1.0 } else { -1.0 } / norm).collect();
    let u: Vec<f64> = (0..d).map(|r| if r % 2 == 0 { 1.0 } else { -1.0 } / norm).collect();
    for t in 0..model.config.vocab_size {
        let row = model.token_embedding.row_mut(t);
        for (r, x) in row.iter_mut().enumerate() {
            *x = 0.1 * *x + e[r] + if t == MARKER as usize { 2.0 * u[r] } else { 0.0 };
        }
    }
    for b in &mut model.blocks {
        b.w_q.data.fill(0.0);
        b.w_k.data.fill(0.0);
        for h in 0..model.config.num_heads {
            for r in 0..d {
                b.w_q.row_mut(r)[h * dk] = e[r];
                b.w_k.row_mut(r)[h * dk] = u[r];
            }
        }
    }
    model
}

/// Gate weights with α = 0 for a random score grid and for the same grid
/// with its equal-length paragraphs permuted. Returns the two weight
/// vectors and the permutation (paragraph m moves to slot perm[m]).
pub fn permuted_weights(seed: u64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let c = r.random_range(2..=8);
    let plen = r.random_range(1..=12);
    let qlen = r.random_range(1..=6);
    let len = c * plen + qlen + 2;
    let paragraphs: Vec<ParagraphSpan> = (0..c).map(|m| ParagraphSpan::new(m, m * plen, (m + 1) * plen - 1)).collect();
    let q = TokenSpan::new(c * plen + 1, c * plen + qlen);
    let layout = PromptLayout::new(len, paragraphs, q, len - 1).unwrap();
    let dense = random_scores(&mut r, len, 2.0);

    let mut perm: Vec<usize> = (0..c).collect();
    for i in (1..c).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    let mut moved = random_scores(&mut r, len, 2.0);
    for i in layout.anchor_rows() {
        for m in 0..c {
            for off in 0..plen {
                moved[i][perm[m] * plen + off] = dense[i][m * plen + off];
            }
        }
        for j in c * plen..=i {
            moved[i][j] = dense[i][j];
        }
    }
    let config = DsasConfig { alpha: 0.0, ..DsasConfig::default() };
    let w = |d: &Dense| {
        compute_gate_weights(&to_matrix(d, MatrixKind::Score, Reduction::HeadSummed), &layout, &config)
            .unwrap()
            .weights()
    };
    (w(&dense), w(&moved), perm)
}
