//! Queue words over a finite class alphabet and the truncated word space.
//!
//! A queue is the list of customer classes present at a server, oldest
//! customer first. Arrivals append at the tail; a service event removes the
//! customer at a given position and keeps the relative order of the others.
//!
//! The truncated space `X_K` holds all words of length at most `K`, indexed
//! in canonical order: by length first, then lexicographically by class.
//! Every dense measure in this crate uses that index.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of words a truncated space may hold.
pub const DEFAULT_WORD_BUDGET: usize = 1 << 22;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WordError {
    #[error("service position {position} out of range for a queue of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("truncated word space with {classes} classes and K={max_len} exceeds the budget of {budget} words")]
    TruncationTooLarge {
        classes: usize,
        max_len: usize,
        budget: usize,
    },
    #[error("class label {label} outside 1..={classes}")]
    UnknownClass { label: usize, classes: usize },
    #[error("cannot parse queue word {0:?}")]
    Malformed(String),
}

/// A customer class. Stored zero-based; displayed with the 1-based label.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct ClassId(u16);

impl ClassId {
    pub fn new(index: usize) -> Self {
        ClassId(u16::try_from(index).expect("class index fits in u16"))
    }

    /// Class from its 1-based label.
    pub fn from_label(label: usize, classes: usize) -> Result<Self, WordError> {
        if label == 0 || label > classes {
            return Err(WordError::UnknownClass { label, classes });
        }
        Ok(ClassId::new(label - 1))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn label(self) -> usize {
        self.0 as usize + 1
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Ordered queue content, oldest customer first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueueWord(Vec<ClassId>);

impl QueueWord {
    pub fn empty() -> Self {
        QueueWord(Vec::new())
    }

    pub fn from_classes(entries: Vec<ClassId>) -> Self {
        QueueWord(entries)
    }

    /// Builds a word from 1-based class labels, e.g. `&[1, 2, 1]`.
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self, WordError> {
        labels
            .iter()
            .map(|&l| ClassId::from_label(l, classes))
            .collect::<Result<Vec<_>, _>>()
            .map(QueueWord)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn entries(&self) -> &[ClassId] {
        &self.0
    }

    /// `x ⊕ j`: a class-`j` customer joins the tail.
    pub fn arrival(&self, class: ClassId) -> QueueWord {
        let mut next = Vec::with_capacity(self.0.len() + 1);
        next.extend_from_slice(&self.0);
        next.push(class);
        QueueWord(next)
    }

    /// `x ⊖ *_r`: the customer at zero-based `position` leaves.
    pub fn service(&self, position: usize) -> Result<QueueWord, WordError> {
        if position >= self.0.len() {
            return Err(WordError::PositionOutOfRange {
                position,
                len: self.0.len(),
            });
        }
        let mut next = self.0.clone();
        next.remove(position);
        Ok(QueueWord(next))
    }

    pub fn push(&mut self, class: ClassId) {
        self.0.push(class);
    }

    pub fn remove(&mut self, position: usize) -> ClassId {
        self.0.remove(position)
    }

    /// Text form: `-` for the empty word, otherwise the 1-based labels as
    /// digits (`121`) when there are at most nine classes, or dot-separated
    /// (`1.12.3`) otherwise.
    pub fn encode(&self, classes: usize) -> String {
        if self.0.is_empty() {
            return "-".to_string();
        }
        let sep = if classes <= 9 { "" } else { "." };
        self.0
            .iter()
            .map(|c| c.label().to_string())
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Inverse of [`QueueWord::encode`].
    pub fn parse(text: &str, classes: usize) -> Result<Self, WordError> {
        let text = text.trim();
        if text == "-" || text.is_empty() {
            return Ok(QueueWord::empty());
        }
        let labels: Option<Vec<usize>> = if text.contains('.') || classes > 9 {
            text.split('.').map(|s| s.parse::<usize>().ok()).collect()
        } else {
            text.chars()
                .map(|c| c.to_digit(10).map(|d| d as usize))
                .collect()
        };
        let labels = labels.ok_or_else(|| WordError::Malformed(text.to_string()))?;
        QueueWord::from_labels(&labels, classes)
    }
}

fn space_size(classes: usize, max_len: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut layer: usize = 1;
    for k in 0..=max_len {
        if k > 0 {
            layer = layer.checked_mul(classes)?;
        }
        total = total.checked_add(layer)?;
    }
    Some(total)
}

/// All words of length at most `max_len`, in canonical order.
pub fn enumerate_words(
    classes: usize,
    max_len: usize,
    budget: usize,
) -> Result<Vec<QueueWord>, WordError> {
    let too_large = WordError::TruncationTooLarge {
        classes,
        max_len,
        budget,
    };
    let count = space_size(classes, max_len).ok_or_else(|| too_large.clone())?;
    if count > budget {
        return Err(too_large);
    }
    let mut words = Vec::with_capacity(count);
    words.push(QueueWord::empty());
    let mut layer_start = 0;
    for _ in 0..max_len {
        let layer_end = words.len();
        for idx in layer_start..layer_end {
            for c in 0..classes {
                let next = words[idx].arrival(ClassId::new(c));
                words.push(next);
            }
        }
        layer_start = layer_end;
    }
    Ok(words)
}

/// Truncated word space `X_K` with a closed-form canonical index.
#[derive(Clone, Debug)]
pub struct WordSpace {
    classes: usize,
    max_len: usize,
    words: Vec<QueueWord>,
    offsets: Vec<usize>,
}

impl WordSpace {
    pub fn new(classes: usize, max_len: usize) -> Result<Self, WordError> {
        Self::with_budget(classes, max_len, DEFAULT_WORD_BUDGET)
    }

    pub fn with_budget(classes: usize, max_len: usize, budget: usize) -> Result<Self, WordError> {
        let words = enumerate_words(classes, max_len, budget)?;
        let mut offsets = Vec::with_capacity(max_len + 2);
        let mut acc = 0;
        let mut layer = 1;
        for k in 0..=max_len {
            offsets.push(acc);
            acc += layer;
            if k < max_len {
                layer *= classes;
            }
        }
        offsets.push(acc);
        Ok(WordSpace {
            classes,
            max_len,
            words,
            offsets,
        })
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.words.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    #[inline]
    pub fn word(&self, index: usize) -> &QueueWord {
        &self.words[index]
    }

    pub fn words(&self) -> &[QueueWord] {
        &self.words
    }

    /// Index range of the words with exactly `len` customers.
    pub fn layer(&self, len: usize) -> std::ops::Range<usize> {
        self.offsets[len]..self.offsets[len + 1]
    }

    /// Canonical index, or `None` when the word is longer than `K` or uses
    /// a class outside the alphabet.
    pub fn index_of(&self, word: &QueueWord) -> Option<usize> {
        if word.len() > self.max_len {
            return None;
        }
        let mut rank = 0usize;
        for c in word.entries() {
            if c.index() >= self.classes {
                return None;
            }
            rank = rank * self.classes + c.index();
        }
        Some(self.offsets[word.len()] + rank)
    }
}
