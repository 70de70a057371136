//! Loss terms for one single-style batch of style `s_i`, transferred toward
//! `s_j = other(s_i)`. Token-level terms are averaged per token, classifier
//! terms per sentence.

use crate::autodiff::{Tape, Var};
use crate::corpus::Batch;
use crate::error::Result;
use crate::nn::{SeqInput, SoftSequence, TransferModel};

/// Generation settings shared by every term that decodes softly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub temperature: f64,
    pub max_gen_len: usize,
    pub back_transfer: bool,
}

/// Scalar values of the five terms, averaged over both transfer directions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub class_td: f64,
    pub class_od: f64,
    pub back_rec: f64,
    pub class_btd: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_terms(
        rec: f64,
        class_td: f64,
        class_od: f64,
        back_rec: f64,
        class_btd: f64,
    ) -> Self {
        Self {
            rec,
            class_td,
            class_od,
            back_rec,
            class_btd,
            total: rec + back_rec + class_od + class_td + class_btd,
        }
    }

    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("rec", self.rec),
            ("class_td", self.class_td),
            ("class_od", self.class_od),
            ("back_rec", self.back_rec),
            ("class_btd", self.class_btd),
        ]
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let s = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self::from_terms(
            s(|b| b.rec),
            s(|b| b.class_td),
            s(|b| b.class_od),
            s(|b| b.back_rec),
            s(|b| b.class_btd),
        )
    }
}

/// Tape nodes of each term for one batch; back-transfer terms are `None`
/// when that path is disabled.
#[derive(Debug, Clone, Copy)]
pub struct DirectionLosses {
    pub rec: Var,
    pub class_td: Var,
    pub class_od: Var,
    pub back_rec: Option<Var>,
    pub class_btd: Option<Var>,
}

fn styles(batch: &Batch) -> (Vec<crate::corpus::Style>, Vec<crate::corpus::Style>) {
    let n = batch.rows();
    (vec![batch.style; n], vec![batch.style.other(); n])
}

fn mean_ce(tape: &mut Tape, logits: Var, label: usize, rows: usize) -> Result<Var> {
    tape.cross_entropy(logits, &vec![label; rows], &vec![1.0 / rows as f64; rows])
}

/// `−log p_G(x | E(x, s_i), s_i)` under teacher forcing.
pub fn loss_reconstruction(tape: &mut Tape, model: &TransferModel, batch: &Batch) -> Result<Var> {
    let (own, _) = styles(batch);
    let enc = model.encode(tape, &SeqInput::from(batch), &own)?;
    let logits = model.decode_teacher_forced(tape, &enc, &own, batch)?;
    model.sequence_nll(tape, &logits, batch)
}

/// `−log p_C(s_i | x)` on real sentences; touches only C.
pub fn loss_class_od(tape: &mut Tape, model: &TransferModel, batch: &Batch) -> Result<Var> {
    let logits = model.classify(tape, &SeqInput::from(batch))?;
    mean_ce(tape, logits, batch.style.index(), batch.rows())
}

/// `x̂^{i→j} = G(E(x, s_i), s_j)` as a soft sequence.
pub fn forward_transfer(
    tape: &mut Tape,
    model: &TransferModel,
    batch: &Batch,
    temperature: f64,
    max_gen_len: usize,
) -> Result<SoftSequence> {
    let (own, other) = styles(batch);
    let enc = model.encode(tape, &SeqInput::from(batch), &own)?;
    model.decode_soft(tape, &enc, &other, temperature, max_gen_len)
}

/// `−log p_C(s_j | x̂^{i→j})` for an already transferred batch.
pub fn loss_class_td_from(
    tape: &mut Tape,
    model: &TransferModel,
    transferred: &SoftSequence,
    batch: &Batch,
) -> Result<Var> {
    let logits = model.classify(tape, &SeqInput::Soft(transferred))?;
    mean_ce(tape, logits, batch.style.other().index(), batch.rows())
}

pub fn loss_class_td(
    tape: &mut Tape,
    model: &TransferModel,
    batch: &Batch,
    temperature: f64,
    max_gen_len: usize,
) -> Result<Var> {
    let soft = forward_transfer(tape, model, batch, temperature, max_gen_len)?;
    loss_class_td_from(tape, model, &soft, batch)
}

/// Re-encodes `x̂^{i→j}` with `s_j` and returns
/// `(−log p_G(x | E(x̂, s_j), s_i), −log p_C(s_i | G(E(x̂, s_j), s_i)))`.
pub fn back_transfer_losses(
    tape: &mut Tape,
    model: &TransferModel,
    transferred: &SoftSequence,
    batch: &Batch,
    temperature: f64,
    max_gen_len: usize,
) -> Result<(Var, Var)> {
    let (own, other) = styles(batch);
    let enc = model.encode(tape, &SeqInput::Soft(transferred), &other)?;
    let logits = model.decode_teacher_forced(tape, &enc, &own, batch)?;
    let back_rec = model.sequence_nll(tape, &logits, batch)?;
    let back = model.decode_soft(tape, &enc, &own, temperature, max_gen_len)?;
    let cls = model.classify(tape, &SeqInput::Soft(&back))?;
    let class_btd = mean_ce(tape, cls, batch.style.index(), batch.rows())?;
    Ok((back_rec, class_btd))
}

pub fn loss_back_rec(
    tape: &mut Tape,
    model: &TransferModel,
    batch: &Batch,
    temperature: f64,
    max_gen_len: usize,
) -> Result<Var> {
    let (own, other) = styles(batch);
    let soft = forward_transfer(tape, model, batch, temperature, max_gen_len)?;
    let enc = model.encode(tape, &SeqInput::Soft(&soft), &other)?;
    let logits = model.decode_teacher_forced(tape, &enc, &own, batch)?;
    model.sequence_nll(tape, &logits, batch)
}

pub fn loss_class_btd(
    tape: &mut Tape,
    model: &TransferModel,
    batch: &Batch,
    temperature: f64,
    max_gen_len: usize,
) -> Result<Var> {
    let soft = forward_transfer(tape, model, batch, temperature, max_gen_len)?;
    Ok(back_transfer_losses(tape, model, &soft, batch, temperature, max_gen_len)?.1)
}

impl DirectionLosses {
    /// All terms for one batch, sharing the encoding and the forward transfer.
    pub fn compute(
        tape: &mut Tape,
        model: &TransferModel,
        batch: &Batch,
        opts: LossOptions,
    ) -> Result<Self> {
        let (own, other) = styles(batch);
        let enc = model.encode(tape, &SeqInput::from(batch), &own)?;
        let logits = model.decode_teacher_forced(tape, &enc, &own, batch)?;
        let rec = model.sequence_nll(tape, &logits, batch)?;
        let class_od = loss_class_od(tape, model, batch)?;
        let soft = model.decode_soft(tape, &enc, &other, opts.temperature, opts.max_gen_len)?;
        let class_td = loss_class_td_from(tape, model, &soft, batch)?;
        let (back_rec, class_btd) = if opts.back_transfer {
            let (a, b) = back_transfer_losses(
                tape,
                model,
                &soft,
                batch,
                opts.temperature,
                opts.max_gen_len,
            )?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        Ok(Self {
            rec,
            class_td,
            class_od,
            back_rec,
            class_btd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Style, Vocabulary};
    use crate::nn::ModelDims;
    use crate::rng::seeded_rng;

    fn model(seed: u64) -> TransferModel {
        let vocab = Vocabulary::from_tokens((0..10).map(|i| format!("t{i}")), 1);
        let dims = ModelDims {
            vocab: vocab.len(),
            emb: 4,
            hidden: 5,
            cls_emb: 3,
            filters: 2,
            widths: vec![1, 2, 3, 4],
            attention: true,
        };
        TransferModel::new(vocab, dims, seed).unwrap()
    }

    fn batch(style: Style) -> Batch {
        Batch::new(style, &[&[4, 5, 6], &[7, 8, 9, 10, 11], &[12, 13]])
    }

    fn zero(model: &mut TransferModel, prefix: &str) {
        for id in model.params.ids().collect::<Vec<_>>() {
            if model.params.name(id).starts_with(prefix) {
                model
                    .params
                    .get_mut(id)
                    .data_mut()
                    .iter_mut()
                    .for_each(|x| *x = 0.0);
            }
        }
    }

    #[test]
    fn uniform_decoder_gives_ln_v() {
        let mut m = model(1);
        zero(&mut m, "dec.out");
        let mut tape = Tape::new();
        let l = loss_reconstruction(&mut tape, &m, &batch(Style::Source)).unwrap();
        assert!((tape.scalar(l) - (m.dims.vocab as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn uniform_classifier_gives_ln_2() {
        let mut m = model(2);
        zero(&mut m, "cls.out");
        let b = batch(Style::Target);
        let mut tape = Tape::new();
        let od = loss_class_od(&mut tape, &m, &b).unwrap();
        let td = loss_class_td(&mut tape, &m, &b, 1.0, 16).unwrap();
        let btd = loss_class_btd(&mut tape, &m, &b, 1.0, 16).unwrap();
        for v in [od, td, btd] {
            assert!((tape.scalar(v) - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_classifier_gives_near_zero() {
        let mut m = model(3);
        zero(&mut m, "cls.out");
        // bias toward the transfer target of a style-0 batch
        let b_id = m.params.id("cls.out.b").unwrap();
        m.params
            .get_mut(b_id)
            .data_mut()
            .copy_from_slice(&[-40.0, 40.0]);
        let mut tape = Tape::new();
        let td = loss_class_td(&mut tape, &m, &batch(Style::Source), 1.0, 16).unwrap();
        assert!(tape.scalar(td) < 1e-12);
    }

    #[test]
    fn perfect_decoder_gives_zero_reconstruction() {
        // A decoder whose logits put all mass on the reference token is
        // emulated by scoring one-hot-correct logits directly.
        let m = model(4);
        let b = batch(Style::Source);
        let mut tape = Tape::new();
        let v = m.dims.vocab;
        let logits: Vec<Var> = (0..b.width)
            .map(|t| {
                let mut data = vec![0.0; b.rows() * v];
                for r in 0..b.rows() {
                    data[r * v + b.ids[r * b.width + t]] = 1e3;
                }
                tape.constant_matrix(b.rows(), v, data)
            })
            .collect();
        let l = m.sequence_nll(&mut tape, &logits, &b).unwrap();
        assert!(tape.scalar(l) < 1e-12);
    }

    #[test]
    fn identity_transfer_collapses_back_rec_to_rec() {
        let mut m = model(5);
        let mut rng = seeded_rng(6);
        m.randomize(0.5, &mut rng);
        // both styles share one embedding, so E(x̂, s_j) = E(x, s_i)
        let sid = m.params.id("emb.style").unwrap();
        let t = m.params.get_mut(sid);
        let row: Vec<f64> = t.data()[..5].to_vec();
        t.data_mut()[5..].copy_from_slice(&row);
        let b = batch(Style::Source);
        let mut tape = Tape::new();
        let rec = loss_reconstruction(&mut tape, &m, &b).unwrap();
        let ident = SoftSequence::one_hot(&mut tape, &b, m.dims.vocab);
        let (back, _) = back_transfer_losses(&mut tape, &m, &ident, &b, 1.0, 16).unwrap();
        assert!((tape.scalar(rec) - tape.scalar(back)).abs() < 1e-9);
    }

    #[test]
    fn terms_are_non_negative() {
        let mut m = model(7);
        m.randomize(1.0, &mut seeded_rng(8));
        let mut tape = Tape::new();
        for style in Style::BOTH {
            let d = DirectionLosses::compute(
                &mut tape,
                &m,
                &batch(style),
                LossOptions {
                    temperature: 0.5,
                    max_gen_len: 16,
                    back_transfer: true,
                },
            )
            .unwrap();
            for v in [
                d.rec,
                d.class_td,
                d.class_od,
                d.back_rec.unwrap(),
                d.class_btd.unwrap(),
            ] {
                assert!(tape.scalar(v) >= 0.0);
            }
        }
    }

    #[test]
    fn class_od_ignores_decoder() {
        let m = model(9);
        let mut other = m.clone();
        zero(&mut other, "dec.");
        zero(&mut other, "enc.");
        let b = batch(Style::Source);
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = loss_class_od(&mut t1, &m, &b).unwrap();
        let c = loss_class_od(&mut t2, &other, &b).unwrap();
        assert_eq!(t1.scalar(a), t2.scalar(c));
    }

    #[test]
    fn breakdown_total_is_sum() {
        let b = LossBreakdown::from_terms(1.5, 0.25, 0.125, 2.0, 0.0625);
        assert_eq!(b.total, 3.9375);
        let m = LossBreakdown::mean(&[b, LossBreakdown::from_terms(0.5, 0.0, 0.0, 0.0, 0.0)]);
        assert!(
            (m.total - (m.rec + m.class_td + m.class_od + m.back_rec + m.class_btd)).abs() < 1e-12
        );
    }
}
