//! Accuracy under a frozen judge, embedding content preservation, LM
//! perplexity, and the ablation harness.

mod ablation;
mod accuracy;
mod cp;
mod lm;
mod report;

pub use ablation::{run_ablations, AblationRow, Variant};
pub use accuracy::{accuracy_of, eval_accuracy, FrozenClassifier, JudgeConfig, StyleJudge};
pub use cp::{content_preservation, corpus_content_preservation, EmbeddingTable};
pub use lm::{perplexity, train_lm, LmConfig, LmOutcome, LstmLm, TokenScorer, UniformLm};
pub use report::{EvalReport, SentenceRecord};

use crate::corpus::{Style, StyledCorpus, SubstitutionOracle, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalConfig {
    pub lm: LmConfig,
    pub judge: JudgeConfig,
}

/// Input embeddings of `lm` for every token that occurs in `sentences`.
pub fn lm_embeddings(lm: &LstmLm, vocab: &Vocabulary, sentences: &[Vec<usize>]) -> EmbeddingTable {
    let mut seen = vec![false; vocab.len()];
    for &id in sentences.iter().flatten() {
        seen[id] = true;
    }
    let dim = lm.embedding(0).len();
    let mut table = EmbeddingTable::new(dim);
    for (id, _) in seen.iter().enumerate().filter(|(_, &s)| s) {
        table
            .insert(vocab.token(id), lm.embedding(id).to_vec())
            .expect("LM embeddings share one dimension");
    }
    table
}

/// Everything needed to score transfers into style 1: the LM, the
/// embeddings for CP and the style judge. Built once and shared.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub vocab: Vocabulary,
    pub lm: LstmLm,
    pub embeddings: EmbeddingTable,
    pub judge: StyleJudge,
}

impl Evaluator {
    /// Trains the LM on style-1 train sentences (early-stopped on style-1
    /// dev), and the CNN judge on the test split unless an oracle is given.
    /// Without an external table, CP uses the LM's input embeddings.
    pub fn build(
        corpus: &StyledCorpus,
        oracle: Option<&SubstitutionOracle>,
        embeddings: Option<EmbeddingTable>,
        config: &EvalConfig,
    ) -> Result<Self> {
        let target = |split: &[crate::corpus::Sentence]| -> Vec<Vec<usize>> {
            StyledCorpus::of_style(split, Style::Target)
                .map(|s| s.ids.clone())
                .collect()
        };
        let lm_train = target(&corpus.train);
        let lm = train_lm(
            corpus.vocab.len(),
            &lm_train,
            &target(&corpus.dev),
            &config.lm,
        )?
        .lm;
        let embeddings = match embeddings {
            Some(t) => t,
            None => lm_embeddings(&lm, &corpus.vocab, &lm_train),
        };
        let judge = match oracle {
            Some(o) => StyleJudge::Oracle(o.clone()),
            None => StyleJudge::Cnn(FrozenClassifier::train(
                corpus.vocab.len(),
                &corpus.test,
                &config.judge,
            )?),
        };
        Ok(Self {
            vocab: corpus.vocab.clone(),
            lm,
            embeddings,
            judge,
        })
    }

    /// Scores aligned source/transferred pairs, transfer direction 0→1.
    pub fn evaluate(
        &self,
        sources: &[Vec<usize>],
        transferred: &[Vec<usize>],
    ) -> Result<EvalReport> {
        if sources.len() != transferred.len() {
            return Err(Error::Data(format!(
                "{} source sentences but {} transferred",
                sources.len(),
                transferred.len()
            )));
        }
        let verdicts = self.judge.verdicts(transferred)?;
        let acc = accuracy_of(&verdicts, Style::Target)?;
        let scores = self.lm.log_probs(transferred)?;
        let ppl = perplexity(&self.lm, transferred)?;
        let mut records = Vec::with_capacity(sources.len());
        for (i, (s, t)) in sources.iter().zip(transferred).enumerate() {
            let source = self.vocab.decode(s);
            let out = self.vocab.decode(t);
            records.push(SentenceRecord {
                cp: content_preservation(&source, &out, &self.embeddings),
                source,
                transferred: out,
                verdict: verdicts[i],
                nll: -scores[i].iter().sum::<f64>(),
            });
        }
        let cps: Vec<f64> = records.iter().filter_map(|r| r.cp).collect();
        let cp = if cps.is_empty() {
            0.0
        } else {
            cps.iter().sum::<f64>() / cps.len() as f64
        };
        Ok(EvalReport {
            acc,
            cp,
            ppl,
            cp_skipped: records.len() - cps.len(),
            records,
        })
    }
}
