//! Independent reference implementations and random fixtures shared by the
//! integration tests. Everything here works on dense `Vec<Vec<f64>>` grids
//! with plain loops and never calls into the library's numerics.

#![allow(dead_code)]

use dsas_core::{AttentionMatrix, MatrixKind, ParagraphSpan, PromptLayout, Reduction, TokenSpan};
use rand::Rng;

pub mod fixtures;

pub type Dense = Vec<Vec<f64>>;

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() <= 1e-300
}

pub fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

pub fn oracle_topk_mean(values: &[f64], k: usize) -> f64 {
    let s = sorted_desc(values.to_vec());
    let n = k.min(s.len());
    let mut acc = 0.0;
    for x in s.iter().take(n) {
        acc += x;
    }
    acc / n as f64
}

pub fn oracle_topk_sum(values: &[f64], k: usize) -> f64 {
    let s = sorted_desc(values.to_vec());
    let mut acc = 0.0;
    for x in s.iter().take(k) {
        acc += x;
    }
    acc
}

fn cell(a: &Dense, i: usize, j: usize) -> f64 {
    if j > i {
        0.0
    } else {
        a[i][j]
    }
}

/// (1/Q) · Σ Top-K over j in the paragraph of Σ_{i in q} A(i, j).
pub fn oracle_flow_q(a: &Dense, q: (usize, usize), p: (usize, usize), k: usize) -> f64 {
    let mut cols = Vec::new();
    for j in p.0..=p.1 {
        let mut s = 0.0;
        for i in q.0..=q.1 {
            s += cell(a, i, j);
        }
        cols.push(s);
    }
    oracle_topk_sum(&cols, k) / (q.1 - q.0 + 1) as f64
}

/// Σ Top-K over j in the paragraph of A(t, j).
pub fn oracle_flow_t(a: &Dense, t: usize, p: (usize, usize), k: usize) -> f64 {
    let row: Vec<f64> = (p.0..=p.1).map(|j| cell(a, t, j)).collect();
    oracle_topk_sum(&row, k)
}

/// Column sums of the question rows stacked over Q copies of the target
/// row, then the mean of the Top-K.
pub fn oracle_combined_flow(s: &Dense, q: (usize, usize), t: usize, p: (usize, usize), k: usize) -> f64 {
    let qlen = q.1 - q.0 + 1;
    let mut stacked: Vec<Vec<f64>> = Vec::new();
    for i in q.0..=q.1 {
        stacked.push((p.0..=p.1).map(|j| cell(s, i, j)).collect());
    }
    for _ in 0..qlen {
        stacked.push((p.0..=p.1).map(|j| cell(s, t, j)).collect());
    }
    let width = p.1 - p.0 + 1;
    let cols: Vec<f64> = (0..width).map(|c| stacked.iter().map(|r| r[c]).sum()).collect();
    oracle_topk_mean(&cols, k)
}

/// Components p0..p{C-1}, q, t as inclusive ranges.
pub fn oracle_components(layout: &PromptLayout) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = layout.paragraphs().iter().map(|p| (p.start, p.end)).collect();
    out.push((layout.question().start, layout.question().end));
    out.push((layout.target(), layout.target()));
    out
}

pub fn oracle_confusion(layers: &[Dense], layout: &PromptLayout, k: usize) -> Vec<f64> {
    let l = layers[0].len();
    let mut global = vec![vec![0.0; l]; l];
    for a in layers {
        for i in 0..l {
            for j in 0..=i {
                global[i][j] += a[i][j];
            }
        }
    }
    for row in &mut global {
        for x in row.iter_mut() {
            *x /= layers.len() as f64;
        }
    }
    let comps = oracle_components(layout);
    let mut raw = Vec::new();
    for &(r0, r1) in &comps {
        for &(c0, c1) in &comps {
            let cols: Vec<f64> = (c0..=c1)
                .map(|j| (r0..=r1).map(|i| cell(&global, i, j)).sum())
                .collect();
            raw.push(oracle_topk_mean(&cols, k));
        }
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if raw.iter().all(|&x| x == 0.0) {
        return vec![0.0; raw.len()];
    }
    if hi == lo {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

pub fn std_normal_density(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// ∫_a^b f by adaptive Simpson.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, eps, 50)
}

/// Φ(z) = 1/2 + ∫_0^z φ.
pub fn quad_cdf(z: f64) -> f64 {
    let half = integrate(&std_normal_density, 0.0, z.abs(), 1e-15);
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Mean of φ over [z1, z2] by quadrature; the density itself when the span
/// is a single token.
pub fn quad_gamma(start: usize, end: usize, len: usize) -> f64 {
    let l = len as f64;
    let mu = 0.5 * (l - 1.0);
    let sigma = ((l * l - 1.0) / 12.0).sqrt();
    let z1 = (start as f64 - mu) / sigma;
    let z2 = (end as f64 - mu) / sigma;
    if start == end {
        return std_normal_density(z1);
    }
    integrate(&std_normal_density, z1, z2, 1e-15) / (z2 - z1)
}

pub struct OracleGates {
    pub flows: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rank: Vec<usize>,
    pub g: Vec<f64>,
    pub raw: Vec<f64>,
    pub w: Vec<f64>,
}

/// Full transcription of the gate-weight chain from a dense score grid.
pub fn oracle_gates(s: &Dense, layout: &PromptLayout, k: usize, alpha: f64, beta: f64) -> OracleGates {
    let q = (layout.question().start, layout.question().end);
    let t = layout.target();
    let l = layout.total_len();
    let paras: Vec<(usize, usize)> = layout.paragraphs().iter().map(|p| (p.start, p.end)).collect();
    let c = paras.len();
    let flows: Vec<f64> = paras.iter().map(|&p| oracle_combined_flow(s, q, t, p, k)).collect();
    let mu = flows.iter().sum::<f64>() / c as f64;
    let sd = (flows.iter().map(|f| (f - mu) * (f - mu)).sum::<f64>() / c as f64).sqrt();
    let v: Vec<f64> = if flows.iter().all(|&f| f == flows[0]) || sd == 0.0 {
        vec![0.75; c]
    } else {
        flows.iter().map(|f| 0.5 / (1.0 + (-(f - mu) / sd).exp()) + 0.5).collect()
    };
    let gamma: Vec<f64> = paras.iter().map(|&(a, b)| quad_gamma(a, b, l)).collect();
    let mut rank = vec![0; c];
    for m in 0..c {
        let mut r = 1;
        for n in 0..c {
            if v[n] > v[m] || (v[n] == v[m] && n < m) {
                r += 1;
            }
        }
        rank[m] = r;
    }
    let g: Vec<f64> = (0..c)
        .map(|m| {
            if (rank[m] as f64) <= 0.5 * c as f64 {
                ((0.5 * c as f64 + 1.0) / rank[m] as f64).powf(gamma[m])
            } else {
                1.0
            }
        })
        .collect();
    let raw: Vec<f64> = (0..c).map(|m| v[m] * g[m].powf(alpha)).collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = if hi == lo {
        vec![1.0; c]
    } else {
        raw.iter().map(|r| (1.0 - beta) * (r - lo) / (hi - lo) + beta).collect()
    };
    OracleGates { flows, v, gamma, rank, g, raw, w }
}

/// A valid layout of length `len`: up to `max_c` paragraphs (each of at
/// least one token, optionally separated), then the question, then a short
/// tail ending at the target.
pub fn random_layout(rng: &mut impl Rng, len: usize, max_c: usize) -> PromptLayout {
    assert!(len >= 12);
    let qlen = rng.random_range(1..=6.min(len / 4));
    let tail = rng.random_range(0..=2);
    let q_end = len - 2 - tail;
    let q_start = q_end + 1 - qlen;
    let region = q_start - rng.random_range(0..=1);
    let c = rng.random_range(1..=max_c.min(region / 2).max(1));
    let mut lens = vec![2usize; c];
    for _ in 0..region - 2 * c {
        let m = rng.random_range(0..c);
        lens[m] += 1;
    }
    let mut paragraphs = Vec::with_capacity(c);
    let mut pos = 0;
    for (m, &seg) in lens.iter().enumerate() {
        let sep = rng.random_range(0..=1);
        paragraphs.push(ParagraphSpan::new(m, pos + sep, pos + seg - 1));
        pos += seg;
    }
    PromptLayout::new(len, paragraphs, TokenSpan::new(q_start, q_end), len - 1).unwrap()
}

/// Lower-triangular grid of independent N(0, scale²)-ish values.
pub fn random_scores(rng: &mut impl Rng, len: usize, scale: f64) -> Dense {
    (0..len)
        .map(|i| {
            (0..len)
                .map(|j| if j <= i { scale * (rng.random::<f64>() * 2.0 - 1.0) * 1.7320508 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Row-stochastic lower-triangular grid with heavy-tailed entries.
pub fn random_weights(rng: &mut impl Rng, len: usize) -> Dense {
    (0..len)
        .map(|i| {
            let raw: Vec<f64> = (0..=i).map(|_| (rng.random::<f64>() * 6.0 - 3.0).exp()).collect();
            let total: f64 = raw.iter().sum();
            (0..len).map(|j| if j <= i { raw[j] / total } else { 0.0 }).collect()
        })
        .collect()
}

pub fn to_matrix(d: &Dense, kind: MatrixKind, reduction: Reduction) -> AttentionMatrix {
    let l = d.len();
    let flat: Vec<f64> = d.iter().flatten().copied().collect();
    AttentionMatrix::from_dense(l, kind, reduction, &flat).unwrap()
}

pub fn to_dense(m: &AttentionMatrix) -> Dense {
    let l = m.len();
    (0..l).map(|i| (0..l).map(|j| m.value(i, j)).collect()).collect()
}
