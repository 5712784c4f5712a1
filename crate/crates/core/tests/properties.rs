mod common;

use common::fixtures::permuted_weights;
use common::*;
use dsas_core::cgw::{apply_cgw, compute_gate_weights, content_values, positional_value};
use dsas_core::ras::{apply_ras, partition, ParagraphSet};
use dsas_core::{flow_to_question, flow_to_target, AttentionMatrix, DsasConfig, MatrixKind, ParagraphSpan, PromptLayout, Reduction};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scores(dense: &Dense) -> AttentionMatrix {
    to_matrix(dense, MatrixKind::Score, Reduction::PerHead)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn content_values_shift_and_scale_invariant(
        flows in proptest::collection::vec(-50.0f64..50.0, 2..12),
        shift in -100.0f64..100.0,
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(flows.iter().any(|&f| f != flows[0]));
        let (v, _, _) = content_values(&flows);
        let moved: Vec<f64> = flows.iter().map(|f| f * scale + shift).collect();
        let (w, _, _) = content_values(&moved);
        for (a, b) in v.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.5..=1.0).contains(a));
        }
    }

    #[test]
    fn gamma_symmetric_and_decreasing_off_center(len in 8usize..400, width in 0usize..6, seed in any::<u64>()) {
        prop_assume!(width + 1 < len);
        let mut r = rng(seed);
        let s = r.random_range(0..len - width);
        let mirror = len - 1 - (s + width);
        let g = positional_value(&ParagraphSpan::new(0, s, s + width), len).unwrap();
        let gm = positional_value(&ParagraphSpan::new(0, mirror, mirror + width), len).unwrap();
        prop_assert!((g - gm).abs() < 1e-13);
        // shifting one token away from the center never increases gamma
        let center2 = len - 1;
        let twice_c = 2 * s + width;
        if twice_c < center2 && s > 0 {
            let out = positional_value(&ParagraphSpan::new(0, s - 1, s - 1 + width), len).unwrap();
            prop_assert!(out < g);
        }
        if twice_c > center2 && s + width + 1 < len {
            let out = positional_value(&ParagraphSpan::new(0, s + 1, s + 1 + width), len).unwrap();
            prop_assert!(out < g);
        }
    }

    #[test]
    fn cgw_touches_only_anchor_paragraph_cells(seed in any::<u64>()) {
        let mut r = rng(seed);
        let len = r.random_range(12..=48);
        let layout = random_layout(&mut r, len, 5);
        let dense = random_scores(&mut r, len, 2.0);
        let before = scores(&dense);
        let config = DsasConfig { beta: r.random_range(0.0..1.0), ..DsasConfig::default() };
        let summed = to_matrix(&dense, MatrixKind::Score, Reduction::HeadSummed);
        let gates = compute_gate_weights(&summed, &layout, &config).unwrap();
        let mut after = before.clone();
        apply_cgw(&mut after, &layout, &gates).unwrap();
        let anchor: Vec<usize> = layout.anchor_rows().collect();
        for i in 0..len {
            for j in 0..=i {
                let a = before.value(i, j);
                let b = after.value(i, j);
                match (anchor.contains(&i), layout.paragraph_of(j)) {
                    (true, Some(m)) => prop_assert_eq!(b.to_bits(), (a * gates.paragraphs[m].weight).to_bits()),
                    _ => prop_assert_eq!(a.to_bits(), b.to_bits()),
                }
            }
        }
    }

    #[test]
    fn ras_touches_only_cross_set_pairs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let len = r.random_range(12..=48);
        let layout = random_layout(&mut r, len, 6);
        let c = layout.num_paragraphs();
        let weights: Vec<f64> = (0..c).map(|_| r.random_range(0.7..=1.0)).collect();
        let part = partition(&weights).unwrap();
        let before = scores(&random_scores(&mut r, len, 2.0));
        let mut after = before.clone();
        apply_ras(&mut after, &layout, &weights, &part).unwrap();
        let has_irrelevant = !part.irrelevant().is_empty();
        for i in 0..len {
            for j in 0..=i {
                let a = before.value(i, j);
                let b = after.value(i, j);
                let cross = match (layout.paragraph_of(i), layout.paragraph_of(j)) {
                    (Some(m1), Some(m2)) if j < i && part.membership[m1] != part.membership[m2] => Some(weights[m1].min(weights[m2])),
                    _ => None,
                };
                match cross {
                    Some(f) if has_irrelevant => prop_assert_eq!(b.to_bits(), (a * f).to_bits()),
                    _ => prop_assert_eq!(a.to_bits(), b.to_bits()),
                }
            }
        }
    }

    #[test]
    fn partition_invariants(weights in proptest::collection::vec(0.0f64..1.0, 1..12)) {
        let p = partition(&weights).unwrap();
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        prop_assert_eq!(p.key().len() + p.irrelevant().len(), weights.len());
        for (m, s) in p.membership.iter().enumerate() {
            match s {
                ParagraphSet::Key => prop_assert!(weights[m] >= mean || weights.iter().all(|&w| w == weights[0])),
                ParagraphSet::Irrelevant => prop_assert!(weights[m] < mean),
            }
        }
    }

    #[test]
    fn alpha_zero_weights_are_permutation_equivariant(seed in any::<u64>()) {
        let (w, pw, perm) = permuted_weights(seed);
        for (m, &to) in perm.iter().enumerate() {
            prop_assert!((w[m] - pw[to]).abs() <= 1e-12, "{} vs {}", w[m], pw[to]);
        }
    }

    #[test]
    fn flows_monotone_in_measured_block(seed in any::<u64>(), bump in 0.0f64..5.0) {
        let mut r = rng(seed);
        let len = r.random_range(16..=40);
        let layout = random_layout(&mut r, len, 4);
        let mut dense = random_weights(&mut r, len);
        let attn = to_matrix(&dense, MatrixKind::Weight, Reduction::HeadSummed);
        let p = &layout.paragraphs()[r.random_range(0..layout.num_paragraphs())];
        let i = if r.random_bool(0.5) { layout.target() } else { r.random_range(layout.question().start..=layout.question().end) };
        let j = r.random_range(p.start..=p.end);
        dense[i][j] += bump;
        let bumped = to_matrix(&dense, MatrixKind::Weight, Reduction::HeadSummed);
        for k in [1, 3, 10] {
            prop_assert!(flow_to_question(&bumped, &layout, p.index, k).unwrap() >= flow_to_question(&attn, &layout, p.index, k).unwrap());
            prop_assert!(flow_to_target(&bumped, &layout, p.index, k).unwrap() >= flow_to_target(&attn, &layout, p.index, k).unwrap());
        }
    }

    #[test]
    fn flows_ignore_unmeasured_blocks(seed in any::<u64>()) {
        let mut r = rng(seed);
        let len = r.random_range(16..=40);
        let layout = random_layout(&mut r, len, 4);
        let dense = random_weights(&mut r, len);
        let mut other = random_weights(&mut r, len);
        let anchor: Vec<usize> = layout.anchor_rows().collect();
        for &i in &anchor {
            other[i] = dense[i].clone();
        }
        let a = to_matrix(&dense, MatrixKind::Weight, Reduction::HeadSummed);
        let b = to_matrix(&other, MatrixKind::Weight, Reduction::HeadSummed);
        for m in 0..layout.num_paragraphs() {
            prop_assert_eq!(flow_to_question(&a, &layout, m, 10).unwrap(), flow_to_question(&b, &layout, m, 10).unwrap());
            prop_assert_eq!(flow_to_target(&a, &layout, m, 10).unwrap(), flow_to_target(&b, &layout, m, 10).unwrap());
        }
    }

    #[test]
    fn layout_serde_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let len = r.random_range(12..=200);
        let layout = random_layout(&mut r, len, 10);
        let text = serde_json::to_string(&layout).unwrap();
        let back: PromptLayout = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, layout);
    }
}

#[test]
fn gamma_orders_equal_spans_by_centrality() {
    let len = 200;
    let width = 9;
    let mut prev = f64::INFINITY;
    // walk from the center to the left edge
    let center_start = (len - 1 - width) / 2;
    for s in (0..=center_start).rev() {
        let g = positional_value(&ParagraphSpan::new(0, s, s + width), len).unwrap();
        assert!(g <= prev);
        prev = g;
    }
}

#[test]
fn constant_flows_and_weights_hit_fallbacks() {
    let (v, _, std) = content_values(&[3.0; 5]);
    assert_eq!(std, 0.0);
    assert!(v.iter().all(|&x| x == 0.75));
}
