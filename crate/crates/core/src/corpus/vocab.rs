use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Token ↔ id bijection. Ids 0..4 are reserved; tokens below the frequency
/// threshold map to [`UNK`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_frequency: usize,
}

impl Vocabulary {
    /// Counts tokens over `corpora` and keeps those seen at least
    /// `min_frequency` times, ordered by descending count and then by first
    /// occurrence.
    pub fn build<I, S>(corpora: I, min_frequency: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        if min_frequency == 0 {
            return Err(Error::Contract("min_frequency must be >= 1".into()));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let sentences: Vec<S> = corpora.into_iter().collect();
        let mut order = 0;
        for s in &sentences {
            for tok in s.as_ref() {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                let e = counts.entry(tok.as_str()).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                e.0 += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Data(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut kept: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= min_frequency)
            .map(|(t, (c, o))| (t, c, o))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        Ok(Self::from_tokens(
            kept.into_iter().map(|(t, _, _)| t.to_string()),
            min_frequency,
        ))
    }

    /// Builds from an explicit ordered token list (reserved tokens excluded).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I, min_frequency: usize) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for t in tokens {
            if !RESERVED.contains(&t.as_str()) && !all.contains(&t) {
                all.push(t);
            }
        }
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens: all,
            index,
            min_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) if i >= RESERVED.len() => i,
            _ => UNK,
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id(token) != UNK
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Decodes ids to tokens, stopping at the first EOS and skipping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("#minfreq={}\n", self.min_frequency);
        for t in self.tokens() {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty vocabulary file".into()))?;
        let min_frequency = header
            .strip_prefix("#minfreq=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("bad vocabulary header `{header}`")))?;
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        let vocab = Self::from_tokens(tokens.iter().cloned(), min_frequency);
        if vocab.tokens().len() != tokens.len() {
            return Err(Error::Format(
                "vocabulary file has duplicate or reserved tokens".into(),
            ));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
