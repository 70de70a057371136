//! Style accuracy of transferred sentences under a frozen judge.

use crate::autodiff::Tape;
use crate::corpus::{Batch, Sentence, Style, SubstitutionOracle, PAD};
use crate::error::{Error, Result};
use crate::nn::{CnnClassifier, SeqInput};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeConfig {
    pub emb: usize,
    pub filters: usize,
    pub widths: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            emb: 100,
            filters: 128,
            widths: vec![1, 2, 3, 4],
            lr: 0.001,
            batch: 32,
            epochs: 10,
            seed: 23,
        }
    }
}

/// A CNN classifier with its own parameters, trained once and then only
/// read.
#[derive(Debug, Clone)]
pub struct FrozenClassifier {
    classifier: CnnClassifier,
    params: ParamStore,
}

impl FrozenClassifier {
    /// Trains on labelled sentences (the evaluation split, never seen by the
    /// transfer model).
    pub fn train(vocab_size: usize, sentences: &[Sentence], config: &JudgeConfig) -> Result<Self> {
        for style in Style::BOTH {
            if !sentences.iter().any(|s| s.style == style) {
                return Err(Error::Data(format!(
                    "frozen classifier needs style-{} sentences",
                    style.index()
                )));
            }
        }
        if config.batch == 0 {
            return Err(Error::Contract("batch must be positive".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let mut params = ParamStore::new();
        let classifier = CnnClassifier::new(
            &mut params,
            "judge",
            vocab_size,
            config.emb,
            config.filters,
            &config.widths,
            &mut rng,
        )?;
        let mut opt = AdamState::new(&params, config.lr);
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        for epoch in 1..=config.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            for chunk in order.chunks(config.batch) {
                let mut tape = Tape::new();
                let mut parts = Vec::new();
                for style in Style::BOTH {
                    let refs: Vec<&[usize]> = chunk
                        .iter()
                        .map(|&i| &sentences[i])
                        .filter(|s| s.style == style)
                        .map(|s| s.ids.as_slice())
                        .collect();
                    if refs.is_empty() {
                        continue;
                    }
                    let batch = Batch::new(style, &refs);
                    let w = refs.len() as f64 / chunk.len() as f64;
                    let l = classifier.loss(
                        &mut tape,
                        &params,
                        &SeqInput::from(&batch),
                        &batch.labels(),
                    )?;
                    parts.push(tape.scale(l, w));
                }
                let stacked = tape.concat_rows(&parts)?;
                let loss = tape.sum(stacked);
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::Numerical {
                        term: "judge",
                        context: format!("epoch {epoch}"),
                    });
                }
                tape.backward(loss, &mut params)?;
                opt.step(&mut params)?;
            }
        }
        Ok(Self { classifier, params })
    }

    pub fn predict(&self, sentences: &[Vec<usize>]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(sentences.len());
        // an empty output is judged as a lone PAD, i.e. an all-padding window
        let lone_pad = [PAD];
        for chunk in sentences.chunks(64) {
            let refs: Vec<&[usize]> = chunk
                .iter()
                .map(|s| {
                    if s.is_empty() {
                        &lone_pad[..]
                    } else {
                        s.as_slice()
                    }
                })
                .collect();
            let batch = Batch::new(Style::Source, &refs);
            out.extend(
                self.classifier
                    .predict(&self.params, &SeqInput::from(&batch))?,
            );
        }
        Ok(out)
    }
}

/// Decides the style of a sentence for accuracy.
#[derive(Debug, Clone)]
pub enum StyleJudge {
    Cnn(FrozenClassifier),
    Oracle(SubstitutionOracle),
}

impl StyleJudge {
    pub fn verdicts(&self, sentences: &[Vec<usize>]) -> Result<Vec<usize>> {
        match self {
            StyleJudge::Cnn(c) => c.predict(sentences),
            StyleJudge::Oracle(o) => Ok(sentences.iter().map(|s| o.classify(s)).collect()),
        }
    }
}

/// Percentage of `verdicts` equal to `target`.
pub fn accuracy_of(verdicts: &[usize], target: Style) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    let hits = verdicts.iter().filter(|&&v| v == target.index()).count();
    Ok(100.0 * hits as f64 / verdicts.len() as f64)
}

/// Percentage of `transferred` judged to be of style `target`.
pub fn eval_accuracy(transferred: &[Vec<usize>], target: Style, judge: &StyleJudge) -> Result<f64> {
    if transferred.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    accuracy_of(&judge.verdicts(transferred)?, target)
}
