//! Attention-score rewriting for multi-document question answering.
//!
//! Paragraph gate weights are derived from how strongly the question and the
//! answer position attend to each paragraph, adjusted for position, and used
//! to rescale pre-softmax scores in the final layers of a decoder. A second
//! pass damps attention between paragraphs on opposite sides of the mean
//! weight. Around that sit information-flow metrics over attention matrices,
//! a small reference transformer, an on-disk dump format and QA scoring.

pub mod attention;
pub mod cgw;
pub mod config;
pub mod dump;
pub mod error;
pub mod flow;
pub mod gaussian;
pub mod layout;
pub mod model;
pub mod prompt;
pub mod qa;
pub mod ras;
pub mod report;
pub mod tokenizer;

pub use attention::{AttentionMatrix, MatrixKind, Reduction};
pub use cgw::{apply_cgw, compute_gate_weights, GateWeights, ParagraphGate};
pub use config::DsasConfig;
pub use dump::{AttentionDump, DumpManifest};
pub use error::{Error, Result};
pub use flow::{
    classify_reasoning, confusion_matrix, flow_to_question, flow_to_target, layerwise_flows,
    topk_mean, ConfusionMatrix, FlowReport, Reasoning,
};
pub use layout::{ParagraphSpan, PromptLayout, TokenSpan};
pub use model::{generate, Generation, InferenceTrace, ModelConfig, ToyModel};
pub use prompt::{build_prompt, BuiltPrompt, RawSample};
pub use qa::{best_f1, normalize_answer, token_f1, F1Score};
pub use ras::{apply_ras, partition, ParagraphSet, Partition};
pub use tokenizer::{ByteTokenizer, Tokenizer};
