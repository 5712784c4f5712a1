//! Token-index geometry of a multi-document prompt.
//!
//! All spans are inclusive on both ends: a paragraph covering tokens
//! `start..=end` has `end - start + 1` tokens.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.end - self.start + 1
        }
    }

    pub fn contains(&self, token: usize) -> bool {
        self.start <= token && token <= self.end
    }

    pub fn tokens(&self) -> RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// One paragraph's token span, with an optional supporting/negative label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphSpan {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supporting: Option<bool>,
}

impl ParagraphSpan {
    pub fn new(index: usize, start: usize, end: usize) -> Self {
        Self {
            index,
            start,
            end,
            supporting: None,
        }
    }

    pub fn labelled(mut self, supporting: bool) -> Self {
        self.supporting = Some(supporting);
        self
    }

    pub fn span(&self) -> TokenSpan {
        TokenSpan::new(self.start, self.end)
    }

    pub fn len(&self) -> usize {
        self.span().len()
    }

    pub fn is_empty(&self) -> bool {
        self.span().is_empty()
    }

    pub fn contains(&self, token: usize) -> bool {
        self.span().contains(token)
    }

    pub fn tokens(&self) -> RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Paragraphs, question (or anchor) and target positions inside one input.
///
/// Always validated: the only ways to obtain one are [`PromptLayout::new`]
/// and deserialization, both of which run [`validate_layout`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "UncheckedLayout")]
pub struct PromptLayout {
    total_len: usize,
    paragraphs: Vec<ParagraphSpan>,
    question: TokenSpan,
    target: usize,
}

/// Field-for-field mirror of [`PromptLayout`] with no invariants enforced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncheckedLayout {
    pub total_len: usize,
    pub paragraphs: Vec<ParagraphSpan>,
    pub question: TokenSpan,
    pub target: usize,
}

impl TryFrom<UncheckedLayout> for PromptLayout {
    type Error = Error;

    fn try_from(raw: UncheckedLayout) -> Result<Self> {
        validate_layout(raw)
    }
}

/// Checks every layout invariant and returns the layout unchanged if they hold.
pub fn validate_layout(raw: UncheckedLayout) -> Result<PromptLayout> {
    let UncheckedLayout {
        total_len,
        paragraphs,
        question,
        target,
    } = raw;

    if paragraphs.is_empty() {
        return Err(Error::NoParagraphs);
    }
    if question.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    if total_len == 0 || target != total_len - 1 {
        return Err(Error::TargetNotLast { target, total_len });
    }

    let mut named: Vec<(String, TokenSpan)> = Vec::with_capacity(paragraphs.len() + 1);
    for (expected, p) in paragraphs.iter().enumerate() {
        if p.index != expected {
            return Err(Error::ParagraphOrder {
                expected,
                found: p.index,
            });
        }
        if p.is_empty() {
            return Err(Error::InvertedSpan {
                start: p.start,
                end: p.end,
            });
        }
        named.push((format!("paragraph {}", p.index), p.span()));
    }
    named.push(("question".to_string(), question));

    for (_, span) in &named {
        if span.end >= total_len {
            return Err(Error::SpanOutOfRange {
                start: span.start,
                end: span.end,
                len: total_len,
            });
        }
    }

    named.sort_by_key(|(_, span)| (span.start, span.end));
    for pair in named.windows(2) {
        let (first, a) = &pair[0];
        let (second, b) = &pair[1];
        if b.start <= a.end {
            return Err(Error::OverlappingSpans {
                first: first.clone(),
                second: second.clone(),
                token: b.start,
            });
        }
    }

    Ok(PromptLayout {
        total_len,
        paragraphs,
        question,
        target,
    })
}

impl PromptLayout {
    pub fn new(
        total_len: usize,
        paragraphs: Vec<ParagraphSpan>,
        question: TokenSpan,
        target: usize,
    ) -> Result<Self> {
        validate_layout(UncheckedLayout {
            total_len,
            paragraphs,
            question,
            target,
        })
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn paragraphs(&self) -> &[ParagraphSpan] {
        &self.paragraphs
    }

    pub fn num_paragraphs(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn paragraph(&self, m: usize) -> Result<&ParagraphSpan> {
        self.paragraphs.get(m).ok_or(Error::BadParagraphIndex {
            index: m,
            count: self.paragraphs.len(),
        })
    }

    pub fn question(&self) -> TokenSpan {
        self.question
    }

    /// Number of question (anchor) tokens, `Q`.
    pub fn question_len(&self) -> usize {
        self.question.len()
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Query rows rewritten by contextual gating: the question rows followed
    /// by the target row (deduplicated when the target sits inside the anchor).
    pub fn anchor_rows(&self) -> impl Iterator<Item = usize> + '_ {
        let target = (!self.question.contains(self.target)).then_some(self.target);
        self.question.tokens().chain(target)
    }

    /// Paragraph ordinal owning `token`, if any.
    pub fn paragraph_of(&self, token: usize) -> Option<usize> {
        let idx = self.paragraphs.partition_point(|p| p.end < token);
        self.paragraphs
            .get(idx)
            .filter(|p| p.contains(token))
            .map(|p| p.index)
    }

    /// True when every paragraph has a supporting/negative label.
    pub fn has_labels(&self) -> bool {
        self.paragraphs.iter().all(|p| p.supporting.is_some())
    }

    /// True when all paragraph tokens precede every question row and the
    /// target, so causal masking never hides a measured flow entry.
    pub fn paragraphs_precede_anchor(&self) -> bool {
        let last = self.paragraphs.iter().map(|p| p.end).max().unwrap_or(0);
        last < self.question.start && last < self.target
    }

    /// Returns a copy whose question span is replaced by `anchor`.
    pub fn with_anchor(&self, anchor: TokenSpan) -> Result<Self> {
        Self::new(self.total_len, self.paragraphs.clone(), anchor, self.target)
    }

    pub fn into_unchecked(self) -> UncheckedLayout {
        UncheckedLayout {
            total_len: self.total_len,
            paragraphs: self.paragraphs,
            question: self.question,
            target: self.target,
        }
    }
}
