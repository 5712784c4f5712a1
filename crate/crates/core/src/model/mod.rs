//! A small decoder-only transformer with the two-stage sharpening wired into
//! its final layers.
//!
//! Pre-norm blocks (attention then GELU MLP), a learned absolute position
//! table, causal attention and greedy decoding. Parameters are drawn from a
//! seeded normal distribution in `f32` and held as `f64`, so a model written
//! to disk and read back is bit-identical.

mod forward;
pub mod tensor;

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tokenizer::BYTE_VOCAB_SIZE;

pub use forward::{
    generate, AttentionOutput, DsasContext, Generation, InferenceTrace, LayerTrace, Session,
    DEFAULT_MAX_NEW_TOKENS,
};
pub use tensor::Mat;

pub const MODEL_MAGIC: &[u8; 8] = b"DSASTOY1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            num_heads: 4,
            num_layers: 8,
            vocab_size: BYTE_VOCAB_SIZE,
            max_seq_len: 1024,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
            if u32::try_from(v).is_err() {
                return Err(Error::InvalidConfig(format!("{name} does not fit in 32 bits")));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for (((o, &v), g), b) in out.iter_mut().zip(x).zip(&self.gain).zip(&self.bias) {
            *o = (v - mean) * inv * g + b;
        }
    }

    pub fn apply_rows(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            self.apply(x.row(i), out.row_mut(i));
        }
        out
    }
}

/// One decoder block. Head `h` owns columns `h·d_k .. (h+1)·d_k` of the
/// query/key/value projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: LayerNorm,
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub w_o: Mat,
    pub mlp_norm: LayerNorm,
    pub w_in: Mat,
    pub b_in: Vec<f64>,
    pub w_out: Mat,
    pub b_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub token_embedding: Mat,
    pub position_embedding: Mat,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
    pub unembed: Mat,
}

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f32>,
}

impl Init {
    fn mat(&mut self, rows: usize, cols: usize) -> Mat {
        let data = (0..rows * cols)
            .map(|_| f64::from(self.normal.sample(&mut self.rng)))
            .collect();
        Mat::from_vec(rows, cols, data)
    }
}

impl ToyModel {
    /// Deterministic parameters from `config.seed`; weights ~ N(0, 1/d_model),
    /// norm gains one, biases zero.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.d_ff();
        let std = 1.0 / (d as f32).sqrt();
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(u64::from(config.seed)),
            normal: Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?,
        };
        let token_embedding = init.mat(config.vocab_size, d);
        let position_embedding = init.mat(config.max_seq_len, d);
        let blocks = (0..config.num_layers)
            .map(|_| Block {
                attn_norm: LayerNorm::new(d),
                w_q: init.mat(d, d),
                w_k: init.mat(d, d),
                w_v: init.mat(d, d),
                w_o: init.mat(d, d),
                mlp_norm: LayerNorm::new(d),
                w_in: init.mat(d, ff),
                b_in: vec![0.0; ff],
                w_out: init.mat(ff, d),
                b_out: vec![0.0; d],
            })
            .collect();
        let unembed = init.mat(d, config.vocab_size);
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            blocks,
            final_norm: LayerNorm::new(d),
            unembed,
        })
    }

    /// Parameter blocks in file order.
    pub fn parameter_blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.token_embedding.data, &self.position_embedding.data];
        for b in &self.blocks {
            out.extend([
                &b.attn_norm.gain[..],
                &b.attn_norm.bias,
                &b.w_q.data,
                &b.w_k.data,
                &b.w_v.data,
                &b.w_o.data,
                &b.mlp_norm.gain,
                &b.mlp_norm.bias,
                &b.w_in.data,
                &b.b_in,
                &b.w_out.data,
                &b.b_out,
            ]);
        }
        out.extend([&self.final_norm.gain[..], &self.final_norm.bias, &self.unembed.data]);
        out
    }

    fn parameter_blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> =
            vec![&mut self.token_embedding.data, &mut self.position_embedding.data];
        for b in &mut self.blocks {
            out.extend([
                &mut b.attn_norm.gain,
                &mut b.attn_norm.bias,
                &mut b.w_q.data,
                &mut b.w_k.data,
                &mut b.w_v.data,
                &mut b.w_o.data,
                &mut b.mlp_norm.gain,
                &mut b.mlp_norm.bias,
                &mut b.w_in.data,
                &mut b.b_in,
                &mut b.w_out.data,
                &mut b.b_out,
            ]);
        }
        out.extend([&mut self.final_norm.gain, &mut self.final_norm.bias, &mut self.unembed.data]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_blocks().iter().map(|b| b.len()).sum()
    }

    /// FNV-1a over the `f32` bit patterns of all parameters.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for block in self.parameter_blocks() {
            for &v in block {
                for byte in (v as f32).to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Header (magic + six little-endian u32 config fields) followed by all
    /// parameters as little-endian f32.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        let c = &self.config;
        for v in [c.d_model, c.num_heads, c.num_layers, c.vocab_size, c.max_seq_len] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&c.seed.to_le_bytes())?;
        for block in self.parameter_blocks() {
            for &v in block {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * self.parameter_count());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("model file", "truncated header"))?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format("model file", "bad magic"));
        }
        let mut fields = [0u32; 6];
        for f in &mut fields {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)
                .map_err(|_| Error::format("model file", "truncated header"))?;
            *f = u32::from_le_bytes(buf);
        }
        let config = ModelConfig {
            d_model: fields[0] as usize,
            num_heads: fields[1] as usize,
            num_layers: fields[2] as usize,
            vocab_size: fields[3] as usize,
            max_seq_len: fields[4] as usize,
            seed: fields[5],
        };
        config.validate()?;
        let mut model = Self::init(config)?;
        let expected = 4 * model.parameter_count();
        if r.len() != expected {
            return Err(Error::format(
                "model file",
                format!("expected {expected} parameter bytes, found {}", r.len()),
            ));
        }
        let mut chunks = r.chunks_exact(4);
        for block in model.parameter_blocks_mut() {
            for v in block.iter_mut() {
                let c = chunks.next().expect("length checked above");
                *v = f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
