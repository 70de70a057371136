use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::detokenize;
use crate::error::{Error, Result};

/// One transferred sentence with its per-metric details.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub source: Vec<String>,
    pub transferred: Vec<String>,
    pub verdict: usize,
    /// `None` when the pair was skipped by CP.
    pub cp: Option<f64>,
    /// Total NLL of the transferred sentence (EOS included) under the LM.
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Percentage judged target-style.
    pub acc: f64,
    pub cp: f64,
    pub ppl: f64,
    pub cp_skipped: usize,
    pub records: Vec<SentenceRecord>,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        format!("acc={:.4} cp={:.6} ppl={:.6}", self.acc, self.cp, self.ppl)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("source\ttransferred\tverdict\tcp\tnll\n");
        for r in &self.records {
            let cp = r.cp.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}",
                detokenize(&r.source),
                detokenize(&r.transferred),
                r.verdict,
                cp,
                r.nll
            );
        }
        out
    }

    /// Writes the TSV to `path` and the summary line to `path` with a
    /// `.summary` suffix appended.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))?;
        let mut summary = path.as_os_str().to_owned();
        summary.push(".summary");
        let summary = Path::new(&summary);
        fs::write(summary, format!("{}\n", self.summary_line())).map_err(|e| Error::io(summary, e))
    }
}
