use super::config::TrainConfig;
use super::losses::{
    loss_class_od, loss_reconstruction, DirectionLosses, LossBreakdown, LossOptions,
};
use crate::autodiff::{Tape, Var};
use crate::corpus::{Batch, EpochPlan, StyledCorpus};
use crate::error::{Error, Result};
use crate::nn::TransferModel;
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::rng::seeded_rng;

/// One logged epoch: mean training losses and the dev-set total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub dev_total: f64,
    pub temperature: f64,
}

impl EpochRecord {
    /// `epoch rec class_td class_od back_rec class_btd total dev_total`, tab-separated.
    pub fn log_line(&self) -> String {
        let t = &self.train;
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            t.rec,
            t.class_td,
            t.class_od,
            t.back_rec,
            t.class_btd,
            t.total,
            self.dev_total
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest dev total.
    pub model: TransferModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

struct StepGraph {
    terms: [Var; 3],
    back: Option<[Var; 2]>,
}

fn build_step(
    tape: &mut Tape,
    model: &TransferModel,
    batches: [&Batch; 2],
    opts: LossOptions,
) -> Result<(Vec<DirectionLosses>, StepGraph)> {
    let dirs = batches
        .iter()
        .map(|b| DirectionLosses::compute(tape, model, b, opts))
        .collect::<Result<Vec<_>>>()?;
    let avg = |tape: &mut Tape, a: Var, b: Var| -> Result<Var> {
        let s = tape.add(a, b)?;
        Ok(tape.scale(s, 0.5))
    };
    let rec = avg(tape, dirs[0].rec, dirs[1].rec)?;
    let td = avg(tape, dirs[0].class_td, dirs[1].class_td)?;
    let od = avg(tape, dirs[0].class_od, dirs[1].class_od)?;
    let back = match (
        dirs[0].back_rec,
        dirs[1].back_rec,
        dirs[0].class_btd,
        dirs[1].class_btd,
    ) {
        (Some(r0), Some(r1), Some(c0), Some(c1)) => Some([avg(tape, r0, r1)?, avg(tape, c0, c1)?]),
        _ => None,
    };
    Ok((
        dirs,
        StepGraph {
            terms: [rec, td, od],
            back,
        },
    ))
}

fn breakdown(tape: &Tape, g: &StepGraph) -> LossBreakdown {
    let [rec, td, od] = g.terms.map(|v| tape.scalar(v));
    let (br, btd) = g
        .back
        .map_or((0.0, 0.0), |[a, b]| (tape.scalar(a), tape.scalar(b)));
    LossBreakdown::from_terms(rec, td, od, br, btd)
}

fn check_finite(b: &LossBreakdown, context: &str) -> Result<()> {
    for (term, v) in b.terms() {
        if !v.is_finite() {
            return Err(Error::Numerical {
                term,
                context: context.to_string(),
            });
        }
    }
    Ok(())
}

fn options(config: &TrainConfig, temperature: f64) -> LossOptions {
    LossOptions {
        temperature,
        max_gen_len: config.max_gen_len,
        back_transfer: !config.no_back_transfer,
    }
}

/// The weighted joint objective over both directions on `tape`, with the
/// unweighted per-term breakdown.
pub fn objective(
    tape: &mut Tape,
    model: &TransferModel,
    batch0: &Batch,
    batch1: &Batch,
    config: &TrainConfig,
    temperature: f64,
) -> Result<(Var, LossBreakdown)> {
    let (_, graph) = build_step(tape, model, [batch0, batch1], options(config, temperature))?;
    let b = breakdown(tape, &graph);
    let w = &config.weights;
    let [rec, td, od] = graph.terms;
    let mut weighted = vec![
        tape.scale(rec, w.rec),
        tape.scale(td, w.class_td),
        tape.scale(od, w.class_od),
    ];
    if let Some([br, btd]) = graph.back {
        weighted.push(tape.scale(br, w.back_rec));
        weighted.push(tape.scale(btd, w.class_btd));
    }
    let stacked = tape.concat_rows(&weighted)?;
    Ok((tape.sum(stacked), b))
}

/// One joint update: all five terms over both directions, one backward pass,
/// one Adam step over E, G and C together.
pub fn train_step(
    model: &mut TransferModel,
    optimizer: &mut AdamState,
    batch0: &Batch,
    batch1: &Batch,
    config: &TrainConfig,
    temperature: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let (loss, b) = objective(&mut tape, model, batch0, batch1, config, temperature)?;
    check_finite(&b, &format!("step {}", optimizer.step_count() + 1))?;
    tape.backward(loss, &mut model.params)?;
    optimizer.step(&mut model.params)?;
    Ok(b)
}

/// Classifier-only update on real sentences of both styles.
pub fn warmup_step(
    model: &mut TransferModel,
    optimizer: &mut AdamState,
    batch0: &Batch,
    batch1: &Batch,
) -> Result<f64> {
    let mut tape = Tape::new();
    let a = loss_class_od(&mut tape, model, batch0)?;
    let b = loss_class_od(&mut tape, model, batch1)?;
    let s = tape.add(a, b)?;
    let loss = tape.scale(s, 0.5);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numerical {
            term: "class_od",
            context: "classifier warm-up".into(),
        });
    }
    tape.backward(loss, &mut model.params)?;
    optimizer.step(&mut model.params)?;
    Ok(value)
}

/// Update on `rec` and `class_od` only, averaged over both styles; the
/// transfer terms are not built.
pub fn pretrain_step(
    model: &mut TransferModel,
    optimizer: &mut AdamState,
    batch0: &Batch,
    batch1: &Batch,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut parts = Vec::with_capacity(4);
    for b in [batch0, batch1] {
        parts.push(loss_reconstruction(&mut tape, model, b)?);
        parts.push(loss_class_od(&mut tape, model, b)?);
    }
    let stacked = tape.concat_rows(&parts)?;
    let sum = tape.sum(stacked);
    let loss = tape.scale(sum, 0.5);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numerical {
            term: "rec",
            context: "pretraining".into(),
        });
    }
    tape.backward(loss, &mut model.params)?;
    optimizer.step(&mut model.params)?;
    Ok(value)
}

/// Loss breakdown without any update.
pub fn evaluate_losses(
    model: &TransferModel,
    batch0: &Batch,
    batch1: &Batch,
    config: &TrainConfig,
    temperature: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let (_, graph) = build_step(
        &mut tape,
        model,
        [batch0, batch1],
        options(config, temperature),
    )?;
    Ok(breakdown(&tape, &graph))
}

fn dev_total(
    model: &TransferModel,
    corpus: &StyledCorpus,
    config: &TrainConfig,
    temperature: f64,
) -> Result<f64> {
    // dev batches are drawn the same way every epoch
    let plan = EpochPlan::new(
        &corpus.dev,
        config.batch,
        &mut seeded_rng(config.seed ^ 0xDE5),
    );
    let parts = plan
        .steps
        .iter()
        .map(|(a, b)| evaluate_losses(model, a, b, config, temperature))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&parts).total)
}

/// Trains a fresh model with early stopping on the dev total loss.
///
/// `on_epoch` sees every epoch record, whether it improved on the best dev
/// loss so far, and the current model; it can persist checkpoints so the
/// best one survives a later numerical abort.
pub fn train<F>(
    corpus: &StyledCorpus,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, bool, &TransferModel) -> Result<()>,
{
    let plan_ok = |split: &[crate::corpus::Sentence]| {
        crate::corpus::Style::BOTH
            .iter()
            .all(|&s| split.iter().any(|x| x.style == s))
    };
    if !plan_ok(&corpus.train) || !plan_ok(&corpus.dev) {
        return Err(Error::Data(
            "training needs both styles in the train and dev splits".into(),
        ));
    }
    if config.batch == 0 || config.max_epochs == 0 {
        return Err(Error::Contract(
            "batch and max_epochs must be positive".into(),
        ));
    }
    let dims = config.model_dims(corpus.vocab.len());
    let mut model = TransferModel::new(corpus.vocab.clone(), dims, config.seed)?;
    let mut optimizer = AdamState::new(&model.params, config.lr);
    let mut rng = seeded_rng(config.seed.wrapping_add(1));

    for _ in 0..config.warmup_epochs {
        for (a, b) in EpochPlan::new(&corpus.train, config.batch, &mut rng).steps {
            warmup_step(&mut model, &mut optimizer, &a, &b)?;
        }
    }
    for _ in 0..config.pretrain_epochs {
        for (a, b) in EpochPlan::new(&corpus.train, config.batch, &mut rng).steps {
            pretrain_step(&mut model, &mut optimizer, &a, &b)?;
        }
    }

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let tau = config.temperature.at(epoch);
        let plan = EpochPlan::new(&corpus.train, config.batch, &mut rng);
        let mut parts = Vec::with_capacity(plan.steps.len());
        for (a, b) in &plan.steps {
            parts.push(
                train_step(&mut model, &mut optimizer, a, b, config, tau).map_err(|e| match e {
                    Error::Numerical { term, context } => Error::Numerical {
                        term,
                        context: format!("epoch {epoch}, {context}"),
                    },
                    other => other,
                })?,
            );
        }
        let dev = dev_total(&model, corpus, config, tau)?;
        let record = EpochRecord {
            epoch,
            train: LossBreakdown::mean(&parts),
            dev_total: dev,
            temperature: tau,
        };
        if !dev.is_finite() {
            on_epoch(&record, false, &model)?;
            return Err(Error::Numerical {
                term: "dev_total",
                context: format!("epoch {epoch}"),
            });
        }
        let improved = best.as_ref().map_or(true, |(b, _, _)| dev < *b);
        on_epoch(&record, improved, &model)?;
        log.push(record);
        if improved {
            best = Some((dev, epoch, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Style;
    use crate::corpus::Vocabulary;
    use crate::nn::ModelDims;

    fn tiny_model() -> TransferModel {
        let vocab = Vocabulary::from_tokens((0..8).map(|i| format!("t{i}")), 1);
        let dims = ModelDims {
            vocab: vocab.len(),
            emb: 4,
            hidden: 5,
            cls_emb: 3,
            filters: 2,
            widths: vec![1, 2],
            attention: true,
        };
        TransferModel::new(vocab, dims, 3).unwrap()
    }

    fn batches() -> (Batch, Batch) {
        (
            Batch::new(Style::Source, &[&[4, 5, 6], &[7, 8]]),
            Batch::new(Style::Target, &[&[9, 10, 11, 4], &[5, 6]]),
        )
    }

    #[test]
    fn total_is_sum_of_terms() {
        let mut m = tiny_model();
        let mut opt = AdamState::new(&m.params, 0.01);
        let (a, b) = batches();
        let cfg = TrainConfig::default();
        for _ in 0..3 {
            let l = train_step(&mut m, &mut opt, &a, &b, &cfg, 1.0).unwrap();
            let sum = l.rec + l.back_rec + l.class_od + l.class_td + l.class_btd;
            assert!((l.total - sum).abs() < 1e-9);
        }
        assert_eq!(opt.step_count(), 3);
    }

    #[test]
    fn no_back_transfer_zeroes_and_excludes_terms() {
        let (a, b) = batches();
        let cfg = TrainConfig {
            no_back_transfer: true,
            ..TrainConfig::default()
        };
        let m = tiny_model();
        let l = evaluate_losses(&m, &a, &b, &cfg, 1.0).unwrap();
        assert_eq!((l.back_rec, l.class_btd), (0.0, 0.0));

        // With only rec, class_td and class_od in the objective, the update
        // equals one computed from those three terms directly.
        let mut m1 = tiny_model();
        let mut o1 = AdamState::new(&m1.params, 0.01);
        train_step(&mut m1, &mut o1, &a, &b, &cfg, 1.0).unwrap();

        let mut m2 = tiny_model();
        let mut o2 = AdamState::new(&m2.params, 0.01);
        let mut tape = Tape::new();
        let opts = LossOptions {
            temperature: 1.0,
            max_gen_len: cfg.max_gen_len,
            back_transfer: false,
        };
        let d0 = DirectionLosses::compute(&mut tape, &m2, &a, opts).unwrap();
        let d1 = DirectionLosses::compute(&mut tape, &m2, &b, opts).unwrap();
        let all = tape
            .concat_rows(&[
                d0.rec,
                d1.rec,
                d0.class_td,
                d1.class_td,
                d0.class_od,
                d1.class_od,
            ])
            .unwrap();
        let s = tape.sum(all);
        let obj = tape.scale(s, 0.5);
        tape.backward(obj, &mut m2.params).unwrap();
        o2.step(&mut m2.params).unwrap();
        for ((_, n, x), (_, _, y)) in m1.params.iter().zip(m2.params.iter()) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q).abs() < 1e-12, "{n}");
            }
        }
    }

    #[test]
    fn nan_loss_aborts_naming_term() {
        let mut m = tiny_model();
        let id = m.params.id("cls.out.b").unwrap();
        m.params.get_mut(id).data_mut()[0] = f64::NAN;
        let mut opt = AdamState::new(&m.params, 0.01);
        let (a, b) = batches();
        let err = train_step(&mut m, &mut opt, &a, &b, &TrainConfig::default(), 1.0).unwrap_err();
        match err {
            Error::Numerical { term, .. } => assert_eq!(term, "class_td"),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn log_line_has_eight_fields() {
        let r = EpochRecord {
            epoch: 3,
            train: LossBreakdown::from_terms(1.0, 2.0, 3.0, 4.0, 5.0),
            dev_total: 16.5,
            temperature: 0.25,
        };
        assert_eq!(
            r.log_line(),
            "3\t1.000000\t2.000000\t3.000000\t4.000000\t5.000000\t15.000000\t16.500000"
        );
    }
}
