//! Multi-document QA prompt assembly with exact span bookkeeping, plus the
//! paragraph-order and fixed-length segmentation transforms.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{ParagraphSpan, PromptLayout, TokenSpan};
use crate::tokenizer::Tokenizer;

/// Probability that each edge slot is handed to a supporting paragraph when
/// edge-biased shuffling is requested.
pub const EDGE_BIAS_PROB: f64 = 0.5;

const CONTEXT_SLOT: &str = "{context}";
const QUESTION_SLOT: &str = "{question}";

/// Instruction template with `{context}` and `{question}` slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub text: &'static str,
}

/// Shared template for HotpotQA, 2WikiMultiHopQA and MuSiQue: instructions
/// at both ends, paragraphs separated by single newlines.
pub const MULTI_DOC_QA: PromptTemplate = PromptTemplate {
    id: "multidoc_qa",
    text: "Answer the question based on the given paragraphs. Only give me the answer and do not output any other words.\n\
The following are given paragraphs.\n\
{context}\n\
Answer the question based on the given paragraphs. Only give me the answer and do not output any other words.\n\
Question: {question}\n\
Answer:",
};

pub fn template_by_id(id: &str) -> Option<PromptTemplate> {
    match id {
        "multidoc_qa" | "hotpotqa" | "2wikimqa" | "musique" => Some(MULTI_DOC_QA),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleParagraph {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supporting: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub paragraphs: Vec<SampleParagraph>,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<String>,
}

impl RawSample {
    pub fn validate(&self) -> Result<()> {
        if self.paragraphs.is_empty() {
            return Err(Error::NoParagraphs);
        }
        if self.question.trim().is_empty() {
            return Err(Error::EmptyQuestion);
        }
        if let Some(index) = self.paragraphs.iter().position(|p| p.text.is_empty()) {
            return Err(Error::EmptyParagraph { index });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sample: Self = serde_json::from_str(text)?;
        sample.validate()?;
        Ok(sample)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltPrompt {
    pub template_id: String,
    pub token_ids: Vec<u32>,
    pub layout: PromptLayout,
}

impl BuiltPrompt {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Replaces the question span with an explicit anchor range.
    pub fn with_anchor(mut self, anchor: TokenSpan) -> Result<Self> {
        self.layout = self.layout.with_anchor(anchor)?;
        Ok(self)
    }
}

/// Incremental token buffer that reports the span of each appended piece.
struct Assembler<'a, T: Tokenizer + ?Sized> {
    tokenizer: &'a T,
    ids: Vec<u32>,
}

impl<'a, T: Tokenizer + ?Sized> Assembler<'a, T> {
    fn push(&mut self, text: &str) -> Result<Option<TokenSpan>> {
        let start = self.ids.len();
        self.ids.extend(self.tokenizer.encode(text)?);
        Ok((self.ids.len() > start).then(|| TokenSpan::new(start, self.ids.len() - 1)))
    }
}

fn split_template(template: &PromptTemplate) -> Result<(&str, &str, &str)> {
    let bad = || Error::format("template", format!("{} lacks {{context}} or {{question}}", template.id));
    let (head, rest) = template.text.split_once(CONTEXT_SLOT).ok_or_else(bad)?;
    let (middle, tail) = rest.split_once(QUESTION_SLOT).ok_or_else(bad)?;
    Ok((head, middle, tail))
}

/// Fills the template and records paragraph, question and target positions.
///
/// Pieces are tokenized separately and concatenated, which is exact for the
/// byte tokenizer.
pub fn build_prompt<T: Tokenizer + ?Sized>(
    sample: &RawSample,
    tokenizer: &T,
    template: &PromptTemplate,
) -> Result<BuiltPrompt> {
    sample.validate()?;
    let (head, middle, tail) = split_template(template)?;
    let mut asm = Assembler {
        tokenizer,
        ids: Vec::new(),
    };
    asm.push(head)?;
    let mut paragraphs = Vec::with_capacity(sample.paragraphs.len());
    for (index, p) in sample.paragraphs.iter().enumerate() {
        if index > 0 {
            asm.push("\n")?;
        }
        let span = asm.push(&p.text)?.ok_or(Error::EmptyParagraph { index })?;
        paragraphs.push(ParagraphSpan {
            index,
            start: span.start,
            end: span.end,
            supporting: p.supporting,
        });
    }
    asm.push(middle)?;
    let question = asm.push(&sample.question)?.ok_or(Error::EmptyQuestion)?;
    asm.push(tail)?;

    let total_len = asm.ids.len();
    let layout = PromptLayout::new(total_len, paragraphs, question, total_len - 1)?;
    Ok(BuiltPrompt {
        template_id: template.id.to_string(),
        token_ids: asm.ids,
        layout,
    })
}

/// Builds a prompt for tasks without natural paragraphs: the context is cut
/// into `chunk_len`-token segments and the `anchor` text (which ends the
/// prompt) plays the role of the question.
pub fn build_anchored_prompt<T: Tokenizer + ?Sized>(
    prefix: &str,
    context: &str,
    infix: &str,
    anchor: &str,
    tokenizer: &T,
    chunk_len: usize,
) -> Result<BuiltPrompt> {
    let mut asm = Assembler {
        tokenizer,
        ids: Vec::new(),
    };
    asm.push(prefix)?;
    let offset = asm.ids.len();
    let context_ids = tokenizer.encode(context)?;
    if context_ids.is_empty() {
        return Err(Error::NoParagraphs);
    }
    let paragraphs = segment_token_range(offset, context_ids.len(), chunk_len)?;
    asm.ids.extend(context_ids);
    asm.push(infix)?;
    let anchor_span = asm.push(anchor)?.ok_or(Error::EmptyQuestion)?;
    let total_len = asm.ids.len();
    let layout = PromptLayout::new(total_len, paragraphs, anchor_span, total_len - 1)?;
    Ok(BuiltPrompt {
        template_id: "anchored".into(),
        token_ids: asm.ids,
        layout,
    })
}

/// Consecutive `chunk_len`-token spans covering the tokenized text; the
/// last span may be shorter.
pub fn segment_fixed_length<T: Tokenizer + ?Sized>(
    text: &str,
    tokenizer: &T,
    chunk_len: usize,
) -> Result<Vec<ParagraphSpan>> {
    let n = tokenizer.encode(text)?.len();
    segment_token_range(0, n, chunk_len)
}

/// Spans of `chunk_len` tokens covering `offset..offset + len`.
pub fn segment_token_range(offset: usize, len: usize, chunk_len: usize) -> Result<Vec<ParagraphSpan>> {
    if chunk_len == 0 {
        return Err(Error::InvalidConfig("chunk_len must be positive".into()));
    }
    Ok((0..len)
        .step_by(chunk_len)
        .enumerate()
        .map(|(index, s)| {
            let end = (s + chunk_len).min(len) - 1;
            ParagraphSpan::new(index, offset + s, offset + end)
        })
        .collect())
}

/// Deterministically permutes the paragraphs from `seed`.
///
/// With `edge_bias`, each of the first and last slots that does not already
/// hold a supporting paragraph is, with probability [`EDGE_BIAS_PROB`],
/// swapped with a randomly chosen supporting paragraph from the interior.
pub fn shuffle_paragraphs(sample: &RawSample, seed: u64, edge_bias: bool) -> RawSample {
    let n = sample.paragraphs.len();
    if n < 2 {
        return sample.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    if edge_bias {
        let is_supporting = |idx: usize| sample.paragraphs[idx].supporting == Some(true);
        for slot in [0, n - 1] {
            if is_supporting(order[slot]) || !rng.random_bool(EDGE_BIAS_PROB) {
                continue;
            }
            let interior: Vec<usize> = (1..n - 1).filter(|&pos| is_supporting(order[pos])).collect();
            if let Some(&pos) = interior.choose(&mut rng) {
                order.swap(slot, pos);
            }
        }
    }

    RawSample {
        paragraphs: order.iter().map(|&i| sample.paragraphs[i].clone()).collect(),
        question: sample.question.clone(),
        answers: sample.answers.clone(),
    }
}
