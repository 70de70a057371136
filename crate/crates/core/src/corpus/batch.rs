use rand::seq::SliceRandom;
use rand::Rng;

use super::{Sentence, Style, EOS, PAD};

/// Single-style minibatch. Each row is the sentence, then EOS, then PAD up
/// to the batch width.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub style: Style,
    /// Row-major `rows × width` token ids.
    pub ids: Vec<usize>,
    /// Word counts, EOS excluded.
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl Batch {
    pub fn new(style: Style, sentences: &[&[usize]]) -> Self {
        let width = sentences.iter().map(|s| s.len()).max().unwrap_or(0) + 1;
        let mut ids = Vec::with_capacity(sentences.len() * width);
        for s in sentences {
            ids.extend_from_slice(s);
            ids.push(EOS);
            ids.extend(std::iter::repeat(PAD).take(width - s.len() - 1));
        }
        Self {
            style,
            ids,
            lengths: sentences.iter().map(|s| s.len()).collect(),
            width,
        }
    }

    pub fn from_sentences(style: Style, sentences: &[Sentence]) -> Self {
        let refs: Vec<&[usize]> = sentences.iter().map(|s| s.ids.as_slice()).collect();
        Self::new(style, &refs)
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    /// Sentence `r` without EOS or padding.
    pub fn tokens(&self, r: usize) -> &[usize] {
        &self.ids[r * self.width..r * self.width + self.lengths[r]]
    }

    pub fn labels(&self) -> Vec<usize> {
        vec![self.style.index(); self.rows()]
    }
}

/// Shuffles each style's sentences with `rng` and chunks them into
/// single-style batches, style 0 first.
pub fn make_batches<R: Rng + ?Sized>(
    split: &[Sentence],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    Style::BOTH
        .into_iter()
        .flat_map(|style| style_batches(split, style, batch_size, rng))
        .collect()
}

fn style_batches<R: Rng + ?Sized>(
    split: &[Sentence],
    style: Style,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut idx: Vec<&Sentence> = split.iter().filter(|s| s.style == style).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&[usize]> = chunk.iter().map(|s| s.ids.as_slice()).collect();
            Batch::new(style, &refs)
        })
        .collect()
}

/// One epoch of paired steps: every step sees one batch of each style. The
/// style with fewer batches is cycled (reshuffled on each pass) until the
/// larger one is exhausted.
#[derive(Debug, Clone)]
pub struct EpochPlan {
    pub steps: Vec<(Batch, Batch)>,
}

impl EpochPlan {
    pub fn new<R: Rng + ?Sized>(split: &[Sentence], batch_size: usize, rng: &mut R) -> Self {
        let mut b0 = style_batches(split, Style::Source, batch_size, rng);
        let mut b1 = style_batches(split, Style::Target, batch_size, rng);
        if b0.is_empty() || b1.is_empty() {
            return Self { steps: Vec::new() };
        }
        let n = b0.len().max(b1.len());
        while b0.len() < n {
            b0.extend(style_batches(split, Style::Source, batch_size, rng));
        }
        while b1.len() < n {
            b1.extend(style_batches(split, Style::Target, batch_size, rng));
        }
        b0.truncate(n);
        b1.truncate(n);
        Self {
            steps: b0.into_iter().zip(b1).collect(),
        }
    }
}
