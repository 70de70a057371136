//! Flat `key = value` run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, JudgeConfig, LmConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub min_freq: usize,
    /// Directory holding `style0.txt` and `style1.txt`.
    pub data: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            eval: EvalConfig {
                lm: LmConfig::default(),
                judge: JudgeConfig::default(),
            },
            min_freq: 1,
            data: None,
            vocab: None,
            checkpoint: None,
            embeddings: None,
            report: None,
        }
    }
}

/// Every recognised key, in file order of `to_file_string`.
pub const KEYS: &[&str] = &[
    "hidden",
    "emb",
    "cls_emb",
    "filters",
    "widths",
    "lr",
    "batch",
    "max_epochs",
    "patience",
    "warmup_epochs",
    "pretrain_epochs",
    "tau_initial",
    "tau_decay",
    "tau_floor",
    "max_gen_len",
    "w_rec",
    "w_class_td",
    "w_class_od",
    "w_back_rec",
    "w_class_btd",
    "seed",
    "no_attention",
    "no_back_transfer",
    "min_freq",
    "lm_emb",
    "lm_hidden",
    "lm_lr",
    "lm_batch",
    "lm_epochs",
    "lm_patience",
    "lm_seed",
    "judge_emb",
    "judge_filters",
    "judge_lr",
    "judge_batch",
    "judge_epochs",
    "judge_seed",
    "data",
    "vocab",
    "checkpoint",
    "embeddings",
    "report",
];

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn positive(v: &str) -> std::result::Result<usize, String> {
    match num::<usize>(v)? {
        0 => Err("must be positive".into()),
        n => Ok(n),
    }
}

fn real(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{v:?} is not finite"))
    }
}

fn positive_real(v: &str) -> std::result::Result<f64, String> {
    match real(v)? {
        x if x > 0.0 => Ok(x),
        _ => Err("must be positive".into()),
    }
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn widths(v: &str) -> std::result::Result<Vec<usize>, String> {
    let ws = v
        .split(',')
        .map(|p| positive(p.trim()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if ws.is_empty() {
        return Err("need at least one width".into());
    }
    Ok(ws)
}

impl RunConfig {
    /// Assigns one key. `location` names the line or flag for errors.
    pub fn set(&mut self, key: &str, value: &str, location: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        let e = &mut self.eval;
        let res: std::result::Result<(), String> = (|| {
            match key {
                "hidden" => t.hidden = positive(value)?,
                "emb" => t.emb = positive(value)?,
                "cls_emb" => t.cls_emb = positive(value)?,
                "filters" => t.filters = positive(value)?,
                "widths" => t.widths = widths(value)?,
                "lr" => t.lr = positive_real(value)?,
                "batch" => t.batch = positive(value)?,
                "max_epochs" => t.max_epochs = positive(value)?,
                "patience" => t.patience = positive(value)?,
                "warmup_epochs" => t.warmup_epochs = num(value)?,
                "pretrain_epochs" => t.pretrain_epochs = num(value)?,
                "tau_initial" => t.temperature.initial = positive_real(value)?,
                "tau_decay" => t.temperature.decay = positive_real(value)?,
                "tau_floor" => t.temperature.floor = positive_real(value)?,
                "max_gen_len" => t.max_gen_len = positive(value)?,
                "w_rec" => t.weights.rec = real(value)?,
                "w_class_td" => t.weights.class_td = real(value)?,
                "w_class_od" => t.weights.class_od = real(value)?,
                "w_back_rec" => t.weights.back_rec = real(value)?,
                "w_class_btd" => t.weights.class_btd = real(value)?,
                "seed" => t.seed = num(value)?,
                "no_attention" => t.no_attention = flag(value)?,
                "no_back_transfer" => t.no_back_transfer = flag(value)?,
                "min_freq" => self.min_freq = positive(value)?,
                "lm_emb" => e.lm.emb = positive(value)?,
                "lm_hidden" => e.lm.hidden = positive(value)?,
                "lm_lr" => e.lm.lr = positive_real(value)?,
                "lm_batch" => e.lm.batch = positive(value)?,
                "lm_epochs" => e.lm.max_epochs = positive(value)?,
                "lm_patience" => e.lm.patience = positive(value)?,
                "lm_seed" => e.lm.seed = num(value)?,
                "judge_emb" => e.judge.emb = positive(value)?,
                "judge_filters" => e.judge.filters = positive(value)?,
                "judge_lr" => e.judge.lr = positive_real(value)?,
                "judge_batch" => e.judge.batch = positive(value)?,
                "judge_epochs" => e.judge.epochs = positive(value)?,
                "judge_seed" => e.judge.seed = num(value)?,
                "data" => self.data = Some(PathBuf::from(value)),
                "vocab" => self.vocab = Some(PathBuf::from(value)),
                "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
                "embeddings" => self.embeddings = Some(PathBuf::from(value)),
                "report" => self.report = Some(PathBuf::from(value)),
                _ => return Err("unknown key".into()),
            }
            Ok(())
        })();
        res.map_err(|message| Error::Config {
            key: key.to_string(),
            location: location.to_string(),
            message,
        })
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let location = format!("line {}", i + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                location: location.clone(),
                message: "expected `key = value`".into(),
            })?;
            self.set(key.trim(), value, &location)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text).map_err(|e| match e {
            Error::Config {
                key,
                location,
                message,
            } => Error::Config {
                key,
                location: format!("{}:{}", path.display(), location),
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    fn value_of(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let e = &self.eval;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "hidden" => t.hidden.to_string(),
            "emb" => t.emb.to_string(),
            "cls_emb" => t.cls_emb.to_string(),
            "filters" => t.filters.to_string(),
            "widths" => t
                .widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "lr" => t.lr.to_string(),
            "batch" => t.batch.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "patience" => t.patience.to_string(),
            "warmup_epochs" => t.warmup_epochs.to_string(),
            "pretrain_epochs" => t.pretrain_epochs.to_string(),
            "tau_initial" => t.temperature.initial.to_string(),
            "tau_decay" => t.temperature.decay.to_string(),
            "tau_floor" => t.temperature.floor.to_string(),
            "max_gen_len" => t.max_gen_len.to_string(),
            "w_rec" => t.weights.rec.to_string(),
            "w_class_td" => t.weights.class_td.to_string(),
            "w_class_od" => t.weights.class_od.to_string(),
            "w_back_rec" => t.weights.back_rec.to_string(),
            "w_class_btd" => t.weights.class_btd.to_string(),
            "seed" => t.seed.to_string(),
            "no_attention" => t.no_attention.to_string(),
            "no_back_transfer" => t.no_back_transfer.to_string(),
            "min_freq" => self.min_freq.to_string(),
            "lm_emb" => e.lm.emb.to_string(),
            "lm_hidden" => e.lm.hidden.to_string(),
            "lm_lr" => e.lm.lr.to_string(),
            "lm_batch" => e.lm.batch.to_string(),
            "lm_epochs" => e.lm.max_epochs.to_string(),
            "lm_patience" => e.lm.patience.to_string(),
            "lm_seed" => e.lm.seed.to_string(),
            "judge_emb" => e.judge.emb.to_string(),
            "judge_filters" => e.judge.filters.to_string(),
            "judge_lr" => e.judge.lr.to_string(),
            "judge_batch" => e.judge.batch.to_string(),
            "judge_epochs" => e.judge.epochs.to_string(),
            "judge_seed" => e.judge.seed.to_string(),
            "data" => path(&self.data)?,
            "vocab" => path(&self.vocab)?,
            "checkpoint" => path(&self.checkpoint)?,
            "embeddings" => path(&self.embeddings)?,
            "report" => path(&self.report)?,
            _ => return None,
        })
    }

    /// Every set key as `key = value`, parseable by [`RunConfig::parse`].
    pub fn to_file_string(&self) -> String {
        KEYS.iter()
            .filter_map(|k| self.value_of(k).map(|v| format!("{k} = {v}\n")))
            .collect()
    }
}
