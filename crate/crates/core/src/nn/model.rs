use rand::Rng;

use super::attention::{Attention, AttentionKeys};
use super::cells::{blend_rows, Gru, Linear, INIT_SCALE};
use super::classifier::CnnClassifier;
use crate::autodiff::{Axis, Tape, Var};
use crate::corpus::{Batch, Style, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

/// Longest generated sentence: the corpus bound of 15 words plus EOS.
pub const MAX_GEN_LEN: usize = 16;

/// Architecture sizes. Defaults are the full-scale configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub emb: usize,
    pub hidden: usize,
    pub cls_emb: usize,
    pub filters: usize,
    pub widths: Vec<usize>,
    /// When false the decoder sees the encoder's final state as a fixed
    /// context instead of attending over all states.
    pub attention: bool,
}

impl ModelDims {
    pub fn for_vocab(vocab: usize) -> Self {
        Self {
            vocab,
            emb: 100,
            hidden: 200,
            cls_emb: 100,
            filters: 128,
            widths: vec![1, 2, 3, 4],
            attention: true,
        }
    }
}

/// A batch of sentences as seen by the encoder or the classifier: either
/// token ids, or per-step probability rows over the vocabulary.
#[derive(Debug, Clone, Copy)]
pub enum SeqInput<'a> {
    Tokens {
        /// Row-major `rows × width` ids; entries at or past a row's length
        /// are ignored.
        ids: &'a [usize],
        width: usize,
        lengths: &'a [usize],
    },
    Soft(&'a SoftSequence),
}

impl<'a> SeqInput<'a> {
    pub fn lengths(&self) -> &[usize] {
        match self {
            SeqInput::Tokens { lengths, .. } => lengths,
            SeqInput::Soft(s) => &s.lengths,
        }
    }
}

impl<'a> From<&'a Batch> for SeqInput<'a> {
    fn from(b: &'a Batch) -> Self {
        SeqInput::Tokens {
            ids: &b.ids,
            width: b.width,
            lengths: &b.lengths,
        }
    }
}

impl<'a> From<&'a SoftSequence> for SeqInput<'a> {
    fn from(s: &'a SoftSequence) -> Self {
        SeqInput::Soft(s)
    }
}

/// Generated sentences kept differentiable: one `B×V` probability matrix
/// per step. `lengths[b]` counts the content steps of row `b`, i.e. the
/// steps before its first argmax-EOS (at least one).
#[derive(Debug, Clone)]
pub struct SoftSequence {
    pub steps: Vec<Var>,
    pub lengths: Vec<usize>,
}

impl SoftSequence {
    /// Exact one-hot encoding of a token batch.
    pub fn one_hot(tape: &mut Tape, batch: &Batch, vocab: usize) -> Self {
        let b = batch.rows();
        let t_max = batch.lengths.iter().copied().max().unwrap_or(0);
        let steps = (0..t_max)
            .map(|t| {
                let mut data = vec![0.0; b * vocab];
                for r in 0..b {
                    let id = if t < batch.lengths[r] {
                        batch.ids[r * batch.width + t]
                    } else {
                        PAD
                    };
                    data[r * vocab + id] = 1.0;
                }
                tape.constant_matrix(b, vocab, data)
            })
            .collect();
        Self {
            steps,
            lengths: batch.lengths.clone(),
        }
    }

    /// Argmax token ids of each row's content steps.
    pub fn argmax_tokens(&self, tape: &Tape) -> Vec<Vec<usize>> {
        (0..self.lengths.len())
            .map(|r| {
                (0..self.lengths[r])
                    .map(|t| argmax(tape.row(self.steps[t], r)))
                    .collect()
            })
            .collect()
    }
}

/// Encoder hidden states for a batch.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `(B·T)×hidden`, row `b·T + t` is the state after word `t` of row `b`.
    pub states: Var,
    /// `B×hidden`, the state after each row's last word.
    pub final_state: Var,
    pub lengths: Vec<usize>,
    pub steps: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Encoder E, decoder G, and classifier C sharing one parameter store.
#[derive(Debug, Clone)]
pub struct TransferModel {
    pub vocab: Vocabulary,
    pub dims: ModelDims,
    pub params: ParamStore,
    word_emb: ParamId,
    style_emb: ParamId,
    encoder: Gru,
    decoder: Gru,
    attention: Attention,
    out: Linear,
    classifier: CnnClassifier,
}

impl TransferModel {
    pub fn new(vocab: Vocabulary, dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.vocab != vocab.len() {
            return Err(Error::shape(
                "transfer_model",
                &[dims.vocab],
                &[vocab.len()],
            ));
        }
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let rng = &mut rng;
        let word_emb = store.add(
            "emb.word",
            Tensor::uniform(&[dims.vocab, dims.emb], INIT_SCALE, rng),
        )?;
        let style_emb = store.add(
            "emb.style",
            Tensor::uniform(&[2, dims.hidden], INIT_SCALE, rng),
        )?;
        let encoder = Gru::new(&mut store, "enc.gru", dims.emb, dims.hidden, rng)?;
        let decoder = Gru::new(
            &mut store,
            "dec.gru",
            dims.emb + dims.hidden,
            dims.hidden,
            rng,
        )?;
        let attention = Attention::new(
            &mut store,
            "dec.att",
            dims.hidden,
            dims.hidden,
            dims.hidden,
            rng,
        )?;
        let out = Linear::new(&mut store, "dec.out", dims.hidden, dims.vocab, rng)?;
        let classifier = CnnClassifier::new(
            &mut store,
            "cls",
            dims.vocab,
            dims.cls_emb,
            dims.filters,
            &dims.widths,
            rng,
        )?;
        Ok(Self {
            vocab,
            dims,
            params: store,
            word_emb,
            style_emb,
            encoder,
            decoder,
            attention,
            out,
            classifier,
        })
    }

    pub fn classifier(&self) -> &CnnClassifier {
        &self.classifier
    }

    /// True for parameters of the classifier C.
    pub fn is_classifier_param(&self, id: ParamId) -> bool {
        self.params.name(id).starts_with("cls.")
    }

    fn style_rows(&self, tape: &mut Tape, styles: &[Style]) -> Result<Var> {
        let table = tape.param(&self.params, self.style_emb);
        let ids: Vec<usize> = styles.iter().map(|s| s.index()).collect();
        tape.lookup(table, &ids)
    }

    fn input_rows(&self, tape: &mut Tape, input: &SeqInput, t: usize) -> Result<Var> {
        let table = tape.param(&self.params, self.word_emb);
        match input {
            SeqInput::Tokens {
                ids,
                width,
                lengths,
            } => {
                let col: Vec<usize> = (0..lengths.len())
                    .map(|r| {
                        if t < lengths[r] {
                            ids[r * width + t]
                        } else {
                            PAD
                        }
                    })
                    .collect();
                tape.lookup(table, &col)
            }
            SeqInput::Soft(seq) => tape.matmul(seq.steps[t], table),
        }
    }

    /// Runs E over the input with the style embedding as initial state.
    pub fn encode(
        &self,
        tape: &mut Tape,
        input: &SeqInput,
        styles: &[Style],
    ) -> Result<EncoderOutput> {
        let lengths = input.lengths().to_vec();
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        if styles.len() != lengths.len() {
            return Err(Error::shape("encode", &[lengths.len()], &[styles.len()]));
        }
        if let SeqInput::Soft(seq) = input {
            let (_, v) = tape.dims(seq.steps[0]);
            if v != self.dims.vocab {
                return Err(Error::shape("encode", &[self.dims.vocab], &[v]));
            }
        }
        let b = lengths.len();
        let steps = *lengths.iter().max().unwrap();
        let mut h = self.style_rows(tape, styles)?;
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = self.input_rows(tape, input, t)?;
            let next = self.encoder.step(tape, &self.params, x, h)?;
            let active: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
            h = blend_rows(tape, h, next, &active)?;
            states.push(h);
        }
        let stacked = tape.concat_cols(&states)?;
        let stacked = tape.reshape(stacked, b * steps, self.dims.hidden)?;
        Ok(EncoderOutput {
            states: stacked,
            final_state: h,
            lengths,
            steps,
        })
    }

    /// Additive attention of decoder state `query` over `enc`.
    pub fn attend(&self, tape: &mut Tape, enc: &EncoderOutput, query: Var) -> Result<(Var, Var)> {
        let keys = self.attention.keys(tape, &self.params, enc.states)?;
        self.attention
            .attend(tape, &self.params, query, keys, enc.states, &enc.lengths)
    }

    fn decoder_step(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        keys: Option<AttentionKeys>,
        state: Var,
        prev: Var,
    ) -> Result<(Var, Var)> {
        let context = match keys {
            Some(k) => {
                self.attention
                    .attend(tape, &self.params, state, k, enc.states, &enc.lengths)?
                    .0
            }
            None => enc.final_state,
        };
        let x = tape.concat_cols(&[prev, context])?;
        let next = self.decoder.step(tape, &self.params, x, state)?;
        let logits = self.out.forward(tape, &self.params, next)?;
        Ok((next, logits))
    }

    fn decoder_start(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        styles: &[Style],
    ) -> Result<(Option<AttentionKeys>, Var, Var)> {
        if styles.len() != enc.lengths.len() {
            return Err(Error::shape(
                "decode",
                &[enc.lengths.len()],
                &[styles.len()],
            ));
        }
        let keys = if self.dims.attention {
            Some(self.attention.keys(tape, &self.params, enc.states)?)
        } else {
            None
        };
        let state = self.style_rows(tape, styles)?;
        let table = tape.param(&self.params, self.word_emb);
        let bos = tape.lookup(table, &vec![BOS; styles.len()])?;
        Ok((keys, state, bos))
    }

    /// Logits (`B×V`) for every position of `target` (words then EOS),
    /// feeding the reference token of the previous position.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        styles: &[Style],
        target: &Batch,
    ) -> Result<Vec<Var>> {
        if target.rows() != enc.lengths.len() {
            return Err(Error::shape(
                "decode_teacher_forced",
                &[enc.lengths.len()],
                &[target.rows()],
            ));
        }
        let (keys, mut state, mut prev) = self.decoder_start(tape, enc, styles)?;
        let table = tape.param(&self.params, self.word_emb);
        let mut logits = Vec::with_capacity(target.width);
        for t in 0..target.width {
            let (next, l) = self.decoder_step(tape, enc, keys, state, prev)?;
            logits.push(l);
            state = next;
            if t + 1 < target.width {
                let col: Vec<usize> = (0..target.rows())
                    .map(|r| target.ids[r * target.width + t])
                    .collect();
                prev = tape.lookup(table, &col)?;
            }
        }
        Ok(logits)
    }

    /// Per-token mean of `−log p(target)` over words and EOS.
    pub fn sequence_nll(&self, tape: &mut Tape, logits: &[Var], target: &Batch) -> Result<Var> {
        let stacked = tape.concat_rows(logits)?;
        let b = target.rows();
        let n_tokens: usize = target.lengths.iter().map(|l| l + 1).sum();
        let mut targets = Vec::with_capacity(b * logits.len());
        let mut weights = Vec::with_capacity(b * logits.len());
        for t in 0..logits.len() {
            for r in 0..b {
                let live = t <= target.lengths[r];
                targets.push(if live {
                    target.ids[r * target.width + t]
                } else {
                    PAD
                });
                weights.push(if live { 1.0 / n_tokens as f64 } else { 0.0 });
            }
        }
        tape.cross_entropy(stacked, &targets, &weights)
    }

    /// Differentiable generation: each step feeds back the expected
    /// embedding under `softmax(logits / temperature)`.
    pub fn decode_soft(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        styles: &[Style],
        temperature: f64,
        max_len: usize,
    ) -> Result<SoftSequence> {
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(Error::Contract(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let b = styles.len();
        let (keys, mut state, mut prev) = self.decoder_start(tape, enc, styles)?;
        let table = tape.param(&self.params, self.word_emb);
        let mut stop: Vec<Option<usize>> = vec![None; b];
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let (next, logits) = self.decoder_step(tape, enc, keys, state, prev)?;
            state = next;
            let scaled = tape.scale(logits, 1.0 / temperature);
            let probs = tape.softmax(scaled, Axis::Cols);
            steps.push(probs);
            for (r, s) in stop.iter_mut().enumerate() {
                if s.is_none() && argmax(tape.row(probs, r)) == EOS {
                    *s = Some(t);
                }
            }
            if stop.iter().all(Option::is_some) {
                break;
            }
            prev = tape.matmul(probs, table)?;
        }
        let lengths = stop
            .iter()
            .map(|s| s.unwrap_or(steps.len()).max(1))
            .collect();
        Ok(SoftSequence { steps, lengths })
    }

    /// Greedy argmax decoding; each output stops before its first EOS.
    pub fn decode_greedy(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        styles: &[Style],
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let b = styles.len();
        let (keys, mut state, mut prev) = self.decoder_start(tape, enc, styles)?;
        let table = tape.param(&self.params, self.word_emb);
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        for _ in 0..max_len {
            let (next, logits) = self.decoder_step(tape, enc, keys, state, prev)?;
            state = next;
            let ids: Vec<usize> = (0..b).map(|r| argmax(tape.row(logits, r))).collect();
            for r in 0..b {
                if !done[r] {
                    if ids[r] == EOS {
                        done[r] = true;
                    } else {
                        out[r].push(ids[r]);
                    }
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
            prev = tape.lookup(table, &ids)?;
        }
        Ok(out)
    }

    /// Style logits `B×2` from C.
    pub fn classify(&self, tape: &mut Tape, input: &SeqInput) -> Result<Var> {
        self.classifier.forward(tape, &self.params, input)
    }

    /// Greedy transfer of token sentences from `from` to `to`, batched.
    /// Empty inputs give empty outputs.
    pub fn transfer(
        &self,
        sentences: &[Vec<usize>],
        from: Style,
        to: Style,
    ) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![Vec::new(); sentences.len()];
        let live: Vec<usize> = (0..sentences.len())
            .filter(|&i| !sentences[i].is_empty())
            .collect();
        for chunk in live.chunks(64) {
            let refs: Vec<&[usize]> = chunk.iter().map(|&i| sentences[i].as_slice()).collect();
            let batch = Batch::new(from, &refs);
            let mut tape = Tape::new();
            let enc = self.encode(&mut tape, &SeqInput::from(&batch), &vec![from; chunk.len()])?;
            let dec = self.decode_greedy(&mut tape, &enc, &vec![to; chunk.len()], MAX_GEN_LEN)?;
            for (&i, d) in chunk.iter().zip(dec) {
                out[i] = d;
            }
        }
        Ok(out)
    }

    /// Samples replacement values for every parameter (used by tests that
    /// need larger-than-init weights).
    pub fn randomize<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for id in self.params.ids().collect::<Vec<_>>() {
            let t = self.params.get_mut(id);
            for x in t.data_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
    }
}
