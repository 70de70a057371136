//! Synthetic two-style corpus.
//!
//! Style 0 sentences carry one or two "marked" tokens among neutral fillers;
//! style 1 sentences carry the lexicon counterparts of marked tokens, or only
//! fillers. Fillers follow a sparse Markov chain so a language model has
//! something to learn. Both styles are sampled independently, so no parallel
//! pairs exist.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;

use super::{SplitRatios, StyledCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Total vocabulary size including the four reserved ids.
    pub vocab_size: usize,
    pub n_marked: usize,
    pub per_style: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    pub split: SplitRatios,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 60,
            n_marked: 8,
            per_style: 2000,
            min_len: 3,
            max_len: 10,
            seed: 7,
            split: SplitRatios::default(),
        }
    }
}

const SUCCESSORS: usize = 3;
const CHAIN_PROB: f64 = 0.85;
/// Share of style-1 sentences carrying neutral counterparts; the rest are
/// pure filler.
const NEUTRAL_PROB: f64 = 0.9;

/// Bijective lexicon between marked (style-0-only) and neutral
/// (style-1-only) tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionOracle {
    pairs: Vec<(String, String)>,
    marked_ids: HashSet<usize>,
    to_neutral: HashMap<usize, usize>,
}

/// Result of [`oracle_transfer_score`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferScore {
    pub style_correct: bool,
    pub content_kept: f64,
}

impl SubstitutionOracle {
    pub fn new(pairs: Vec<(String, String)>, vocab: &Vocabulary) -> Result<Self> {
        let marked: HashSet<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
        let neutral: HashSet<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
        if marked.len() != pairs.len()
            || neutral.len() != pairs.len()
            || !marked.is_disjoint(&neutral)
        {
            return Err(Error::Data(
                "oracle lexicon must be a bijection between disjoint sets".into(),
            ));
        }
        let marked_ids = pairs
            .iter()
            .map(|p| vocab.id(&p.0))
            .filter(|&i| i != super::UNK)
            .collect();
        let to_neutral = pairs
            .iter()
            .map(|(m, n)| (vocab.id(m), vocab.id(n)))
            .filter(|&(m, _)| m != super::UNK)
            .collect();
        Ok(Self {
            pairs,
            marked_ids,
            to_neutral,
        })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn is_marked(&self, id: usize) -> bool {
        self.marked_ids.contains(&id)
    }

    /// 0 iff the sentence contains a marked token.
    pub fn classify(&self, ids: &[usize]) -> usize {
        if ids.iter().any(|i| self.is_marked(*i)) {
            0
        } else {
            1
        }
    }

    pub fn classify_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> usize {
        let marked = tokens
            .iter()
            .any(|t| self.pairs.iter().any(|(m, _)| m == t.as_ref()));
        if marked {
            0
        } else {
            1
        }
    }

    /// Replaces each marked token by its neutral counterpart.
    pub fn substitute(&self, ids: &[usize]) -> Vec<usize> {
        ids.iter()
            .map(|i| *self.to_neutral.get(i).unwrap_or(i))
            .collect()
    }

    pub fn to_file_string(&self) -> String {
        self.pairs
            .iter()
            .map(|(m, n)| format!("{m}\t{n}\n"))
            .collect()
    }

    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let pairs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.split_once('\t')
                    .map(|(m, n)| (m.to_string(), n.to_string()))
                    .ok_or_else(|| {
                        Error::Format(format!(
                            "oracle line {}: expected marked<TAB>neutral",
                            i + 1
                        ))
                    })
            })
            .collect::<Result<_>>()?;
        Self::new(pairs, vocab)
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, vocab)
    }
}

/// Scores a 0→1 transfer against the oracle: style correctness and the LCS
/// fraction of the source's non-marked tokens kept in order.
pub fn oracle_transfer_score(
    source: &[usize],
    transferred: &[usize],
    oracle: &SubstitutionOracle,
) -> TransferScore {
    let src: Vec<usize> = source
        .iter()
        .copied()
        .filter(|&t| !oracle.is_marked(t))
        .collect();
    let dst: Vec<usize> = transferred
        .iter()
        .copied()
        .filter(|&t| !oracle.is_marked(t))
        .collect();
    let content_kept = if src.is_empty() {
        1.0
    } else {
        lcs_len(&src, &dst) as f64 / src.len() as f64
    };
    TransferScore {
        style_correct: oracle.classify(transferred) == 1,
        content_kept,
    }
}

fn lcs_len(a: &[usize], b: &[usize]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token strings of the synthetic lexicon.
fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Generates the corpus as token strings per style, plus the lexicon.
pub fn synth_sentences(
    cfg: &SynthConfig,
) -> Result<([Vec<Vec<String>>; 2], Vec<(String, String)>)> {
    if cfg.n_marked == 0 || cfg.vocab_size <= 2 * cfg.n_marked + 4 {
        return Err(Error::Data(format!(
            "infeasible synthetic vocabulary: size {} with {} marked pairs",
            cfg.vocab_size, cfg.n_marked
        )));
    }
    if cfg.min_len < 2 || cfg.min_len > cfg.max_len {
        return Err(Error::Data(format!(
            "bad length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    let n_fill = cfg.vocab_size - 4 - 2 * cfg.n_marked;
    let marked = names("m", cfg.n_marked);
    let neutral = names("n", cfg.n_marked);
    let fillers = names("w", n_fill);
    let mut rng = seeded_rng(cfg.seed);

    let successors: Vec<Vec<usize>> = (0..n_fill)
        .map(|_| (0..SUCCESSORS).map(|_| rng.gen_range(0..n_fill)).collect())
        .collect();

    let filler_run = |rng: &mut crate::rng::Rng64, len: usize| -> Vec<usize> {
        let mut out = vec![rng.gen_range(0..n_fill)];
        while out.len() < len {
            let prev = *out.last().unwrap();
            let next = if rng.gen_bool(CHAIN_PROB) {
                successors[prev][rng.gen_range(0..SUCCESSORS)]
            } else {
                rng.gen_range(0..n_fill)
            };
            out.push(next);
        }
        out
    };

    let mut styles: [Vec<Vec<String>>; 2] = [Vec::new(), Vec::new()];
    let max_attempts = cfg.per_style * 200 + 1000;
    for (s, out) in styles.iter_mut().enumerate() {
        let mut seen = HashSet::new();
        let mut attempts = 0;
        while out.len() < cfg.per_style {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::Data(format!(
                    "could not draw {} distinct style-{s} sentences from this vocabulary",
                    cfg.per_style
                )));
            }
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let mut toks: Vec<String> = filler_run(&mut rng, len)
                .into_iter()
                .map(|i| fillers[i].clone())
                .collect();
            let carries_pair = s == 0 || rng.gen_bool(NEUTRAL_PROB);
            if carries_pair {
                let k = if len >= 3 && rng.gen_bool(0.5) { 2 } else { 1 };
                let mut positions: Vec<usize> = (0..len).collect();
                for i in 0..k {
                    let j = rng.gen_range(i..len);
                    positions.swap(i, j);
                }
                for &p in &positions[..k] {
                    let which = rng.gen_range(0..cfg.n_marked);
                    toks[p] = if s == 0 {
                        marked[which].clone()
                    } else {
                        neutral[which].clone()
                    };
                }
            }
            if seen.insert(toks.clone()) {
                out.push(toks);
            }
        }
    }
    let pairs = marked.into_iter().zip(neutral).collect();
    Ok((styles, pairs))
}

/// Generates an encoded corpus (vocabulary built from the generated text at
/// threshold 1) and its oracle.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(StyledCorpus, SubstitutionOracle)> {
    let (styles, pairs) = synth_sentences(cfg)?;
    let vocab = Vocabulary::build(styles.iter().flatten(), 1)?;
    let encoded = [
        styles[0].iter().map(|s| vocab.encode(s)).collect(),
        styles[1].iter().map(|s| vocab.encode(s)).collect(),
    ];
    let oracle = SubstitutionOracle::new(pairs, &vocab)?;
    Ok((
        StyledCorpus::from_styles(vocab, encoded, cfg.split)?,
        oracle,
    ))
}
