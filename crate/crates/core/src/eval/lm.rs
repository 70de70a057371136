//! Word-level LSTM language model and perplexity.

use crate::autodiff::Tape;
use crate::corpus::{Batch, Style, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{Linear, Lstm, LstmState, INIT_SCALE};
use crate::optim::AdamState;
use crate::params::{ParamId, ParamStore};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

/// Anything that assigns natural-log probabilities to the words of a
/// sentence followed by EOS.
pub trait TokenScorer {
    /// One vector per sentence, `len + 1` entries each.
    fn log_probs(&self, sentences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

/// `exp(total NLL / token count)`, EOS counted as a token.
pub fn perplexity<S: TokenScorer + ?Sized>(scorer: &S, sentences: &[Vec<usize>]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Contract(
            "perplexity of an empty sentence set".into(),
        ));
    }
    let scores = scorer.log_probs(sentences)?;
    let (mut nll, mut count) = (0.0, 0usize);
    for s in &scores {
        nll -= s.iter().sum::<f64>();
        count += s.len();
    }
    Ok((nll / count as f64).exp())
}

/// Probability `1/V` for every token.
#[derive(Debug, Clone, Copy)]
pub struct UniformLm {
    pub vocab_size: usize,
}

impl TokenScorer for UniformLm {
    fn log_probs(&self, sentences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let lp = -(self.vocab_size as f64).ln();
        Ok(sentences.iter().map(|s| vec![lp; s.len() + 1]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub emb: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            emb: 100,
            hidden: 200,
            lr: 0.001,
            batch: 64,
            max_epochs: 20,
            patience: 2,
            seed: 11,
        }
    }
}

/// Single-layer LSTM LM over the transfer model's vocabulary.
#[derive(Debug, Clone)]
pub struct LstmLm {
    pub vocab_size: usize,
    pub params: ParamStore,
    emb: ParamId,
    lstm: Lstm,
    out: Linear,
}

impl LstmLm {
    pub fn new(vocab_size: usize, emb: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::new();
        let emb_id = params.add(
            "lm.emb",
            Tensor::uniform(&[vocab_size, emb], INIT_SCALE, &mut rng),
        )?;
        let lstm = Lstm::new(&mut params, "lm.lstm", emb, hidden, &mut rng)?;
        let out = Linear::new(&mut params, "lm.out", hidden, vocab_size, &mut rng)?;
        Ok(Self {
            vocab_size,
            params,
            emb: emb_id,
            lstm,
            out,
        })
    }

    /// Input embedding row of `id`.
    pub fn embedding(&self, id: usize) -> &[f64] {
        let t = self.params.get(self.emb);
        let d = t.shape()[1];
        &t.data()[id * d..(id + 1) * d]
    }

    /// Logits for each position of the batch (words then EOS).
    fn logits(&self, tape: &mut Tape, batch: &Batch) -> Result<Vec<crate::autodiff::Var>> {
        let b = batch.rows();
        let table = tape.param(&self.params, self.emb);
        let zeros = tape.constant_matrix(b, self.lstm.hidden, vec![0.0; b * self.lstm.hidden]);
        let mut state = LstmState { h: zeros, c: zeros };
        let mut prev: Vec<usize> = vec![BOS; b];
        let mut out = Vec::with_capacity(batch.width);
        for t in 0..batch.width {
            let x = tape.lookup(table, &prev)?;
            state = self.lstm.step(tape, &self.params, x, state)?;
            out.push(self.out.forward(tape, &self.params, state.h)?);
            prev = (0..b).map(|r| batch.ids[r * batch.width + t]).collect();
        }
        Ok(out)
    }

    fn batch_loss(&self, tape: &mut Tape, batch: &Batch) -> Result<crate::autodiff::Var> {
        let logits = self.logits(tape, batch)?;
        let stacked = tape.concat_rows(&logits)?;
        let b = batch.rows();
        let n: usize = batch.lengths.iter().map(|l| l + 1).sum();
        let mut targets = Vec::with_capacity(b * logits.len());
        let mut weights = Vec::with_capacity(b * logits.len());
        for t in 0..logits.len() {
            for r in 0..b {
                let live = t <= batch.lengths[r];
                targets.push(if live {
                    batch.ids[r * batch.width + t]
                } else {
                    PAD
                });
                weights.push(if live { 1.0 / n as f64 } else { 0.0 });
            }
        }
        tape.cross_entropy(stacked, &targets, &weights)
    }
}

impl TokenScorer for LstmLm {
    fn log_probs(&self, sentences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(64) {
            if let Some(bad) = chunk.iter().flatten().find(|&&id| id >= self.vocab_size) {
                return Err(Error::Index {
                    op: "lm_log_probs",
                    index: *bad,
                    extent: self.vocab_size,
                });
            }
            let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            let batch = Batch::new(Style::Target, &refs);
            let mut tape = Tape::new();
            let logits = self.logits(&mut tape, &batch)?;
            for (r, s) in chunk.iter().enumerate() {
                let lp = (0..=s.len())
                    .map(|t| {
                        let row = tape.row(logits[t], r);
                        let target = if t < s.len() { s[t] } else { EOS };
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                        row[target] - lse
                    })
                    .collect();
                out.push(lp);
            }
        }
        Ok(out)
    }
}

/// Outcome of [`train_lm`]: the best model and dev perplexity per epoch.
#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub lm: LstmLm,
    pub dev_ppl: Vec<f64>,
    pub best_epoch: usize,
}

/// Trains with Adam on `train`, early-stopping on dev perplexity. Without
/// dev sentences the training set doubles as the stopping criterion.
pub fn train_lm(
    vocab_size: usize,
    train: &[Vec<usize>],
    dev: &[Vec<usize>],
    config: &LmConfig,
) -> Result<LmOutcome> {
    if train.is_empty() {
        return Err(Error::Data(
            "language model needs training sentences".into(),
        ));
    }
    if config.batch == 0 || config.max_epochs == 0 {
        return Err(Error::Contract(
            "batch and max_epochs must be positive".into(),
        ));
    }
    let dev = if dev.is_empty() { train } else { dev };
    let mut lm = LstmLm::new(vocab_size, config.emb, config.hidden, config.seed)?;
    let mut opt = AdamState::new(&lm.params, config.lr);
    let mut rng = seeded_rng(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut dev_ppl = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for chunk in order.chunks(config.batch) {
            let refs: Vec<&[usize]> = chunk.iter().map(|&i| train[i].as_slice()).collect();
            let batch = Batch::new(Style::Target, &refs);
            let mut tape = Tape::new();
            let loss = lm.batch_loss(&mut tape, &batch)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::Numerical {
                    term: "lm",
                    context: format!("epoch {epoch}"),
                });
            }
            tape.backward(loss, &mut lm.params)?;
            opt.step(&mut lm.params)?;
        }
        let ppl = perplexity(&lm, dev)?;
        dev_ppl.push(ppl);
        if best.as_ref().map_or(true, |(b, _, _)| ppl < *b) {
            best = Some((ppl, epoch, lm.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    lm.params = params;
    Ok(LmOutcome {
        lm,
        dev_ppl,
        best_epoch,
    })
}
