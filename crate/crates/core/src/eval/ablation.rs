use std::fmt;
use std::thread;
use std::time::Instant;

use super::{EvalReport, Evaluator};
use crate::corpus::{Style, StyledCorpus};
use crate::error::{Error, Result};
use crate::nn::TransferModel;
use crate::train::{train, EpochRecord, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoAttention,
    NoBackTransfer,
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoAttention,
        Variant::NoBackTransfer,
        Variant::Neither,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAttention => "no_attention",
            Variant::NoBackTransfer => "no_back_transfer",
            Variant::Neither => "neither",
        }
    }

    /// `base` with this variant's switches; everything else, seed included,
    /// is shared.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let (no_att, no_back) = match self {
            Variant::Full => (false, false),
            Variant::NoAttention => (true, false),
            Variant::NoBackTransfer => (false, true),
            Variant::Neither => (true, true),
        };
        TrainConfig {
            no_attention: no_att,
            no_back_transfer: no_back,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
    pub model: TransferModel,
    pub log: Vec<EpochRecord>,
    /// Wall-clock seconds spent in training.
    pub train_seconds: f64,
}

impl AblationRow {
    pub fn table_line(&self) -> String {
        format!(
            "{}\t{:.4}\t{:.6}\t{:.6}",
            self.variant, self.report.acc, self.report.cp, self.report.ppl
        )
    }
}

fn run_variant(
    corpus: &StyledCorpus,
    base: &TrainConfig,
    evaluator: &Evaluator,
    variant: Variant,
) -> Result<AblationRow> {
    let start = Instant::now();
    let outcome = train(corpus, &variant.apply(base), |_, _, _| Ok(()))?;
    let train_seconds = start.elapsed().as_secs_f64();
    let sources: Vec<Vec<usize>> = StyledCorpus::of_style(&corpus.test, Style::Source)
        .map(|s| s.ids.clone())
        .collect();
    let transferred = outcome
        .model
        .transfer(&sources, Style::Source, Style::Target)?;
    let report = evaluator.evaluate(&sources, &transferred)?;
    Ok(AblationRow {
        variant,
        report,
        model: outcome.model,
        log: outcome.log,
        train_seconds,
    })
}

/// Trains and evaluates the four variants on style-0 test sentences, rows in
/// [`Variant::ALL`] order. Variants run on parallel threads, at most one per
/// available core.
pub fn run_ablations(
    corpus: &StyledCorpus,
    base: &TrainConfig,
    evaluator: &Evaluator,
) -> Result<Vec<AblationRow>> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for group in Variant::ALL.chunks(workers) {
        let done: Vec<Result<AblationRow>> = thread::scope(|scope| {
            let handles: Vec<_> = group
                .iter()
                .map(|&v| scope.spawn(move || run_variant(corpus, base, evaluator, v)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Contract("ablation worker panicked".into())))
                })
                .collect()
        });
        for r in done {
            rows.push(r?);
        }
    }
    Ok(rows)
}
