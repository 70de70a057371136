use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{tokenize, Vocabulary};
use crate::error::{Error, Result};

/// Style label. `Source` is the offensive side, `Target` the non-offensive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Style {
    Source = 0,
    Target = 1,
}

impl Style {
    pub const BOTH: [Style; 2] = [Style::Source, Style::Target];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Style {
        match self {
            Style::Source => Style::Target,
            Style::Target => Style::Source,
        }
    }

    pub fn from_index(i: usize) -> Result<Style> {
        match i {
            0 => Ok(Style::Source),
            1 => Ok(Style::Target),
            _ => Err(Error::Index {
                op: "style",
                index: i,
                extent: 2,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub ids: Vec<usize>,
    pub style: Style,
}

/// Sentence length bounds in words (BOS/EOS excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusLimits {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for CorpusLimits {
    fn default() -> Self {
        Self {
            min_len: 2,
            max_len: 15,
        }
    }
}

impl CorpusLimits {
    pub fn admits(&self, len: usize) -> bool {
        (self.min_len..=self.max_len).contains(&len)
    }
}

/// Train/dev fractions; the test split takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
        }
    }
}

/// Two non-parallel sentence sets with style labels, split per style.
#[derive(Debug, Clone, PartialEq)]
pub struct StyledCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

impl StyledCorpus {
    /// Splits each style's sentences in order and assembles the corpus.
    pub fn from_styles(
        vocab: Vocabulary,
        per_style: [Vec<Vec<usize>>; 2],
        ratios: SplitRatios,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratios.train)
            || ratios.dev < 0.0
            || ratios.train + ratios.dev > 1.0
        {
            return Err(Error::Contract(format!("bad split ratios {ratios:?}")));
        }
        let mut corpus = Self {
            vocab,
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        };
        for (style, sents) in Style::BOTH.into_iter().zip(per_style) {
            let n = sents.len();
            let n_train = (n as f64 * ratios.train).round() as usize;
            let n_dev = ((n as f64 * ratios.dev).round() as usize).min(n - n_train);
            for (i, ids) in sents.into_iter().enumerate() {
                let s = Sentence { ids, style };
                if i < n_train {
                    corpus.train.push(s);
                } else if i < n_train + n_dev {
                    corpus.dev.push(s);
                } else {
                    corpus.test.push(s);
                }
            }
        }
        Ok(corpus)
    }

    pub fn of_style(split: &[Sentence], style: Style) -> impl Iterator<Item = &Sentence> {
        split.iter().filter(move |s| s.style == style)
    }
}

/// Reads one tokenized sentence per line.
pub fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(tokenize).collect())
}

/// Keeps sentences within `limits`, drops repeats in order of first occurrence.
pub(crate) fn filter_dedup(lines: Vec<Vec<String>>, limits: CorpusLimits) -> Vec<Vec<String>> {
    let mut seen = HashSet::new();
    lines
        .into_iter()
        .filter(|l| limits.admits(l.len()))
        .filter(|l| seen.insert(l.clone()))
        .collect()
}

/// Loads the two style files, filters by length, deduplicates within each
/// style and encodes with `vocab`. When `vocab` is `None` one is built from
/// the training portion of both files with threshold `min_frequency`.
pub fn load_styled_corpus(
    path0: &Path,
    path1: &Path,
    vocab: Option<Vocabulary>,
    min_frequency: usize,
    limits: CorpusLimits,
    ratios: SplitRatios,
) -> Result<StyledCorpus> {
    let styles = [
        filter_dedup(read_lines(path0)?, limits),
        filter_dedup(read_lines(path1)?, limits),
    ];
    if styles.iter().any(Vec::is_empty) {
        return Err(Error::Data(format!(
            "no sentences of {}..={} words left in {} or {}",
            limits.min_len,
            limits.max_len,
            path0.display(),
            path1.display()
        )));
    }
    let vocab = match vocab {
        Some(v) => v,
        None => {
            let train_part = styles.iter().flat_map(|s| {
                let n = (s.len() as f64 * ratios.train).round() as usize;
                s[..n.max(1).min(s.len())].iter()
            });
            Vocabulary::build(train_part, min_frequency)?
        }
    };
    let [a, b] = styles;
    let encoded = [
        a.iter().map(|s| vocab.encode(s)).collect(),
        b.iter().map(|s| vocab.encode(s)).collect(),
    ];
    StyledCorpus::from_styles(vocab, encoded, ratios)
}
