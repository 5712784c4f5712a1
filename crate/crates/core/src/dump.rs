//! On-disk attention dumps: a directory holding `manifest.json` and one
//! little-endian `f32` payload file per layer.
//!
//! Per-head payloads are `H × L × L`, head-summed payloads `L × L`, both
//! row-major. Masked cells (`j > i`) are written as `0` for weights and
//! `-inf` for scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMatrix, MatrixKind, Reduction, ROW_SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::layout::PromptLayout;
use crate::model::InferenceTrace;

pub const DUMP_FORMAT: &str = "dsas-attention-dump";
pub const DUMP_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub format: String,
    pub version: u32,
    pub model_id: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub seq_len: usize,
    pub kind: Reduction,
    pub matrix_kind: MatrixKind,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub layer_files: Vec<String>,
    pub spans: PromptLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
    /// Paragraph ordinals whose span edges are only approximate in the
    /// exporting tokenizer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ambiguous_boundaries: Vec<usize>,
}

impl DumpManifest {
    pub fn new(
        model_id: impl Into<String>,
        num_layers: usize,
        num_heads: usize,
        kind: Reduction,
        matrix_kind: MatrixKind,
        spans: PromptLayout,
    ) -> Self {
        Self {
            format: DUMP_FORMAT.into(),
            version: DUMP_VERSION,
            model_id: model_id.into(),
            num_layers,
            num_heads,
            seq_len: spans.total_len(),
            kind,
            matrix_kind,
            dtype: "f32".into(),
            byte_order: "little".into(),
            layout: "row_major".into(),
            layer_files: (0..num_layers).map(layer_file_name).collect(),
            spans,
            token_ids: None,
            ambiguous_boundaries: Vec::new(),
        }
    }

    /// Checks the fixed fields and internal consistency.
    pub fn check(&self) -> Result<()> {
        let fixed = [
            ("format", self.format.as_str(), DUMP_FORMAT),
            ("dtype", self.dtype.as_str(), "f32"),
            ("byte_order", self.byte_order.as_str(), "little"),
            ("layout", self.layout.as_str(), "row_major"),
        ];
        for (field, found, want) in fixed {
            if found != want {
                return Err(Error::format(
                    "manifest",
                    format!("{field} is {found:?}, expected {want:?}"),
                ));
            }
        }
        if self.version != DUMP_VERSION {
            return Err(Error::format(
                "manifest",
                format!("unsupported version {}", self.version),
            ));
        }
        if self.num_layers == 0 || self.num_heads == 0 || self.seq_len == 0 {
            return Err(Error::format("manifest", "num_layers, num_heads and seq_len must be >= 1"));
        }
        if self.layer_files.len() != self.num_layers {
            return Err(Error::format(
                "manifest",
                format!(
                    "{} layer files for {} layers",
                    self.layer_files.len(),
                    self.num_layers
                ),
            ));
        }
        if let Some(name) = self
            .layer_files
            .iter()
            .find(|f| f.is_empty() || f.contains(['/', '\\']) || f.as_str() == "..")
        {
            return Err(Error::format("manifest", format!("bad layer file name {name:?}")));
        }
        if self.spans.total_len() != self.seq_len {
            return Err(Error::LayoutMismatch {
                expected: self.seq_len,
                found: self.spans.total_len(),
            });
        }
        if let Some(ids) = &self.token_ids {
            if ids.len() != self.seq_len {
                return Err(Error::LayoutMismatch {
                    expected: self.seq_len,
                    found: ids.len(),
                });
            }
        }
        if let Some(&m) = self
            .ambiguous_boundaries
            .iter()
            .find(|&&m| m >= self.spans.num_paragraphs())
        {
            return Err(Error::BadParagraphIndex {
                index: m,
                count: self.spans.num_paragraphs(),
            });
        }
        Ok(())
    }

    pub fn matrices_per_layer(&self) -> usize {
        match self.kind {
            Reduction::PerHead => self.num_heads,
            Reduction::HeadSummed => 1,
        }
    }

    pub fn layer_bytes(&self) -> usize {
        self.matrices_per_layer() * self.seq_len * self.seq_len * 4
    }
}

pub fn layer_file_name(layer: usize) -> String {
    format!("layer_{layer:03}.bin")
}

#[derive(Debug, Clone)]
pub struct AttentionDump {
    pub manifest: DumpManifest,
    /// `layers[l]` holds `H` matrices for per-head dumps, one otherwise.
    pub layers: Vec<Vec<AttentionMatrix>>,
}

impl AttentionDump {
    pub fn new(manifest: DumpManifest, layers: Vec<Vec<AttentionMatrix>>) -> Result<Self> {
        manifest.check()?;
        let dump = Self { manifest, layers };
        dump.check_shapes()?;
        Ok(dump)
    }

    fn check_shapes(&self) -> Result<()> {
        let m = &self.manifest;
        if self.layers.len() != m.num_layers {
            return Err(Error::format(
                "dump",
                format!("{} layers for num_layers {}", self.layers.len(), m.num_layers),
            ));
        }
        for layer in &self.layers {
            if layer.len() != m.matrices_per_layer() {
                return Err(Error::format(
                    "dump",
                    format!("{} matrices per layer, expected {}", layer.len(), m.matrices_per_layer()),
                ));
            }
            for mat in layer {
                mat.expect_len(m.seq_len)?;
                mat.expect_kind(m.matrix_kind)?;
            }
        }
        Ok(())
    }

    /// Dump of prefill weights from a model trace, head-summed or per head.
    pub fn from_trace(
        trace: &InferenceTrace,
        model_id: &str,
        num_heads: usize,
        layout: &PromptLayout,
        token_ids: Option<&[u32]>,
        reduction: Reduction,
    ) -> Result<Self> {
        let layers = match reduction {
            Reduction::PerHead => trace.weights.clone(),
            Reduction::HeadSummed => (0..trace.weights.len())
                .map(|l| trace.head_summed_weights(l).map(|m| vec![m]))
                .collect::<Result<_>>()?,
        };
        let mut manifest = DumpManifest::new(
            model_id,
            trace.weights.len(),
            num_heads,
            reduction,
            MatrixKind::Weight,
            layout.clone(),
        );
        manifest.token_ids = token_ids.map(<[u32]>::to_vec);
        Self::new(manifest, layers)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// One head-summed matrix per layer.
    pub fn head_summed(&self) -> Result<Vec<AttentionMatrix>> {
        self.layers
            .iter()
            .map(|l| match self.manifest.kind {
                Reduction::HeadSummed => Ok(l[0].clone()),
                Reduction::PerHead => AttentionMatrix::sum_heads(l),
            })
            .collect()
    }

    /// Row sums of weight payloads: one per head, `H` for head-summed.
    /// The tolerance is per head.
    pub fn validate_row_sums(&self, tolerance: f64) -> Result<()> {
        if self.manifest.matrix_kind != MatrixKind::Weight {
            return Ok(());
        }
        let (expected, tol) = match self.manifest.kind {
            Reduction::PerHead => (1.0, tolerance),
            Reduction::HeadSummed => {
                let h = self.manifest.num_heads as f64;
                (h, tolerance * h)
            }
        };
        for mat in self.layers.iter().flatten() {
            mat.validate_row_sums(expected, tol)?;
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, manifest + "\n").map_err(|e| Error::io(&path, e))?;
        let masked = match self.manifest.matrix_kind {
            MatrixKind::Weight => 0.0f32,
            MatrixKind::Score => f32::NEG_INFINITY,
        };
        let len = self.manifest.seq_len;
        for (name, layer) in self.manifest.layer_files.iter().zip(&self.layers) {
            let mut bytes = Vec::with_capacity(self.manifest.layer_bytes());
            for mat in layer {
                for i in 0..len {
                    for j in 0..len {
                        let v = mat.get(i, j).map_or(masked, |v| v as f32);
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Reads and validates a dump; weight rows must sum to one per head
    /// within `ROW_SUM_TOLERANCE`.
    pub fn read(dir: &Path) -> Result<Self> {
        Self::read_with_tolerance(dir, ROW_SUM_TOLERANCE)
    }

    pub fn read_with_tolerance(dir: &Path, row_sum_tolerance: f64) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let len = manifest.seq_len;
        let mut layers = Vec::with_capacity(manifest.num_layers);
        for name in &manifest.layer_files {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != manifest.layer_bytes() {
                return Err(Error::PayloadSize {
                    expected: manifest.layer_bytes(),
                    found: bytes.len(),
                });
            }
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let layer = values
                .chunks_exact(len * len)
                .map(|grid| parse_matrix(grid, len, manifest.kind, manifest.matrix_kind))
                .collect::<Result<Vec<_>>>()?;
            layers.push(layer);
        }
        let dump = Self::new(manifest, layers)?;
        dump.validate_row_sums(row_sum_tolerance)?;
        Ok(dump)
    }
}

pub fn read_manifest(dir: &Path) -> Result<DumpManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DumpManifest = serde_json::from_str(&text)?;
    manifest.check()?;
    Ok(manifest)
}

fn parse_matrix(
    grid: &[f32],
    len: usize,
    reduction: Reduction,
    kind: MatrixKind,
) -> Result<AttentionMatrix> {
    for i in 0..len {
        for j in 0..len {
            let v = grid[i * len + j];
            let ok = match (j > i, kind) {
                (true, MatrixKind::Weight) => v == 0.0,
                (true, MatrixKind::Score) => v == f32::NEG_INFINITY,
                (false, MatrixKind::Weight) => v.is_finite() && v >= 0.0,
                (false, MatrixKind::Score) => v.is_finite(),
            };
            if !ok {
                if j > i {
                    return Err(Error::CausalityViolation {
                        row: i,
                        col: j,
                        value: f64::from(v),
                    });
                }
                return Err(Error::format(
                    "layer payload",
                    format!("invalid value {v} at ({i}, {j})"),
                ));
            }
        }
    }
    Ok(AttentionMatrix::filled(len, kind, reduction, |i, j| {
        f64::from(grid[i * len + j])
    }))
}
