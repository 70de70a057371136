use rand::Rng;

use super::cells::{Linear, INIT_SCALE};
use super::model::SeqInput;
use crate::autodiff::{Tape, Var};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Convolutional sentence classifier: per-width convolutions over word
/// embeddings, tanh, max over time, concatenation and a linear map to two
/// style logits. Inputs shorter than the widest filter are padded with the
/// PAD embedding.
#[derive(Debug, Clone)]
pub struct CnnClassifier {
    pub emb_dim: usize,
    pub filters: usize,
    pub widths: Vec<usize>,
    emb: ParamId,
    convs: Vec<Linear>,
    out: Linear,
}

impl CnnClassifier {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        vocab: usize,
        emb_dim: usize,
        filters: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || filters == 0 {
            return Err(Error::Contract(
                "classifier needs positive filter widths and counts".into(),
            ));
        }
        let emb = store.add(
            format!("{prefix}.emb"),
            Tensor::uniform(&[vocab, emb_dim], INIT_SCALE, rng),
        )?;
        let convs = widths
            .iter()
            .map(|&w| {
                Linear::new(
                    store,
                    &format!("{prefix}.conv{w}"),
                    w * emb_dim,
                    filters,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let out = Linear::new(
            store,
            &format!("{prefix}.out"),
            filters * widths.len(),
            2,
            rng,
        )?;
        Ok(Self {
            emb_dim,
            filters,
            widths: widths.to_vec(),
            emb,
            convs,
            out,
        })
    }

    pub fn embedding(&self) -> ParamId {
        self.emb
    }

    fn max_width(&self) -> usize {
        *self.widths.iter().max().unwrap()
    }

    /// Per-position embedding rows (`B×emb_dim` each) with PAD beyond each
    /// row's length, out to `max(longest, widest filter)` positions.
    fn positions(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &SeqInput,
    ) -> Result<(Vec<Var>, Vec<usize>)> {
        let lengths = input.lengths();
        if lengths.iter().any(|&l| l == 0) {
            return Err(Error::Contract("cannot classify an empty sentence".into()));
        }
        let b = lengths.len();
        let span = lengths
            .iter()
            .copied()
            .max()
            .unwrap_or(0)
            .max(self.max_width());
        let table = tape.param(store, self.emb);
        let mut out = Vec::with_capacity(span);
        for p in 0..span {
            let x = match input {
                SeqInput::Tokens {
                    ids,
                    width,
                    lengths,
                } => {
                    let col: Vec<usize> = (0..b)
                        .map(|r| {
                            if p < lengths[r] {
                                ids[r * width + p]
                            } else {
                                PAD
                            }
                        })
                        .collect();
                    tape.lookup(table, &col)?
                }
                SeqInput::Soft(seq) => {
                    let active: Vec<bool> = lengths.iter().map(|&l| p < l).collect();
                    if active.iter().all(|&a| !a) {
                        tape.lookup(table, &vec![PAD; b])?
                    } else {
                        let probs = seq.steps[p];
                        let rows = if active.iter().all(|&a| a) {
                            probs
                        } else {
                            let (_, v) = tape.dims(probs);
                            let mut mask = Vec::with_capacity(b * v);
                            let mut pad = Vec::with_capacity(b * v);
                            for &a in &active {
                                for j in 0..v {
                                    mask.push(if a { 1.0 } else { 0.0 });
                                    pad.push(if !a && j == PAD { 1.0 } else { 0.0 });
                                }
                            }
                            let m = tape.constant_matrix(b, v, mask);
                            let pad = tape.constant_matrix(b, v, pad);
                            let kept = tape.mul(m, probs)?;
                            tape.add(kept, pad)?
                        };
                        tape.matmul(rows, table)?
                    }
                }
            };
            out.push(x);
        }
        let padded = lengths.iter().map(|&l| l.max(self.max_width())).collect();
        Ok((out, padded))
    }

    /// Style logits, `B×2`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &SeqInput) -> Result<Var> {
        let (xs, padded) = self.positions(tape, store, input)?;
        let b = padded.len();
        let span = xs.len();
        let mut pooled = Vec::with_capacity(self.widths.len());
        for (&w, conv) in self.widths.iter().zip(&self.convs) {
            let windows = span - w + 1;
            let mut feats = Vec::with_capacity(windows);
            for p in 0..windows {
                let win = tape.concat_cols(&xs[p..p + w])?;
                let f = conv.forward(tape, store, win)?;
                feats.push(tape.tanh(f));
            }
            let stacked = tape.concat_cols(&feats)?;
            let stacked = tape.reshape(stacked, b * windows, self.filters)?;
            let valid: Vec<usize> = padded.iter().map(|&l| l - w + 1).collect();
            pooled.push(tape.max_over_time(stacked, &valid)?);
        }
        let features = tape.concat_cols(&pooled)?;
        self.out.forward(tape, store, features)
    }

    /// Mean cross-entropy of `labels` under the classifier.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &SeqInput,
        labels: &[usize],
    ) -> Result<Var> {
        let logits = self.forward(tape, store, input)?;
        let w = vec![1.0 / labels.len() as f64; labels.len()];
        tape.cross_entropy(logits, labels, &w)
    }

    /// Argmax style per row, evaluated on a scratch tape.
    pub fn predict(&self, store: &ParamStore, input: &SeqInput) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, store, input)?;
        Ok((0..input.lengths().len())
            .map(|r| {
                let row = tape.row(logits, r);
                usize::from(row[1] > row[0])
            })
            .collect())
    }
}
