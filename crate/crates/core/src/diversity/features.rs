//! Response features for the per-user preference regressions.
//!
//! Syntactic features are computed in-core with a self-contained tokenizer:
//! whitespace split, then punctuation stripped from both ends of each token;
//! a word is a non-empty stripped token. Semantic features (formality,
//! educational value, emotions) are only ingested from `features.csv`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Characters counted as punctuation and stripped from token edges.
pub const PUNCTUATION: &[char] = &[
    '.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']', '{', '}', '<', '>', '-', '\u{2014}', '*', '#', '`',
];

pub const SYNTACTIC_FEATURES: [&str; 7] = [
    "token_count",
    "unique_word_count",
    "avg_word_length",
    "stopword_count",
    "punctuation_count",
    "list_item_count",
    "adj_adv_count",
];

const STOPWORDS_TXT: &str = include_str!("../../assets/lexicon/stopwords.txt");
const ADJECTIVES_TXT: &str = include_str!("../../assets/lexicon/adjectives.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS_TXT.lines().filter(|l| !l.is_empty()).collect())
}

pub fn adjectives() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| ADJECTIVES_TXT.lines().filter(|l| !l.is_empty()).collect())
}

pub fn strip_punct(token: &str) -> &str {
    token.trim_matches(PUNCTUATION)
}

fn is_list_item(line: &str) -> bool {
    let t = line.trim_start();
    if t.starts_with(['-', '*', '•']) {
        return true;
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    digits > 0 && matches!(t[digits..].chars().next(), Some('.') | Some(')'))
}

/// `[token_count, unique_word_count, avg_word_length, stopword_count,
/// punctuation_count, list_item_count, adj_adv_count]`.
pub fn extract_syntactic_features(text: &str) -> [f64; 7] {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let words: Vec<String> = tokens
        .iter()
        .map(|t| strip_punct(t))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let unique: HashSet<&str> = words.iter().map(String::as_str).collect();
    let avg_len = if words.is_empty() {
        0.0
    } else {
        words.iter().map(|w| w.chars().count()).sum::<usize>() as f64 / words.len() as f64
    };
    let stop = stopwords();
    let adj = adjectives();
    let stop_count = words.iter().filter(|w| stop.contains(w.as_str())).count();
    let punct = text.chars().filter(|c| PUNCTUATION.contains(c)).count();
    let lists = text.lines().filter(|l| is_list_item(l)).count();
    let adj_adv = words
        .iter()
        .filter(|w| (w.chars().count() > 2 && w.ends_with("ly")) || adj.contains(w.as_str()))
        .count();
    [
        tokens.len() as f64,
        unique.len() as f64,
        avg_len,
        stop_count as f64,
        punct as f64,
        lists as f64,
        adj_adv as f64,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Syntactic,
    Semantic,
}

/// `(prompt_id, model_id) -> named feature vector`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub kind: FeatureKind,
    rows: BTreeMap<(String, String), Vec<f64>>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, kind: FeatureKind) -> Self {
        Self {
            names,
            kind,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, prompt_id: &str, model_id: &str, values: Vec<f64>) -> Result<()> {
        let id = format!("{prompt_id}::{model_id}");
        if values.len() != self.names.len() {
            return Err(Error::Shape(format!(
                "feature row `{id}` has {} values, expected {}",
                values.len(),
                self.names.len()
            )));
        }
        if let Some(c) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "features",
                id,
                column: c,
            });
        }
        if self
            .rows
            .insert((prompt_id.to_string(), model_id.to_string()), values)
            .is_some()
        {
            return Err(Error::DuplicateId { what: "features", id });
        }
        Ok(())
    }

    pub fn get(&self, prompt_id: &str, model_id: &str) -> Option<&[f64]> {
        self.rows
            .get(&(prompt_id.to_string(), model_id.to_string()))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Syntactic features of every stored response.
    pub fn syntactic(corpus: &Corpus) -> Result<Self> {
        let mut t = Self::new(
            SYNTACTIC_FEATURES.iter().map(|s| s.to_string()).collect(),
            FeatureKind::Syntactic,
        );
        for (p, prompt) in corpus.prompts().iter().enumerate() {
            for (m, text) in corpus.responses_at(p).iter().enumerate() {
                t.insert(
                    &prompt.prompt_id,
                    &corpus.model_ids()[m],
                    extract_syntactic_features(text).to_vec(),
                )?;
            }
        }
        Ok(t)
    }

    /// Replaces columns that `other` also names (e.g. tagger-computed
    /// `adj_adv_count`) for every row present in both tables.
    pub fn with_overrides(mut self, other: &FeatureTable) -> Self {
        let cols: Vec<(usize, usize)> = other
            .names
            .iter()
            .enumerate()
            .filter_map(|(j, n)| self.names.iter().position(|m| m == n).map(|i| (i, j)))
            .collect();
        for (key, row) in self.rows.iter_mut() {
            if let Some(src) = other.rows.get(key) {
                for &(i, j) in &cols {
                    row[i] = src[j];
                }
            }
        }
        self
    }

    /// Reads `features.csv` (`prompt_id,model_id,<feature names...>`).
    pub fn load_csv(path: &Path, kind: FeatureKind) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::schema(path, 1, format!("{other:?}")),
        })?;
        let header = reader.headers()?.clone();
        if header.get(0) != Some("prompt_id") || header.get(1) != Some("model_id") || header.len() < 3 {
            return Err(Error::schema(
                path,
                1,
                "header must be `prompt_id,model_id,<features...>`",
            ));
        }
        let mut t = Self::new(header.iter().skip(2).map(str::to_string).collect(), kind);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let values = rec
                .iter()
                .skip(2)
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::schema(path, line, format!("`{f}` is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            t.insert(&rec[0], &rec[1], values)?;
        }
        Ok(t)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["prompt_id".to_string(), "model_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for ((p, m), row) in &self.rows {
            let mut rec = vec![p.clone(), m.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_sizes() {
        assert_eq!(stopwords().len(), 127);
        assert!(adjectives().len() >= 500);
    }

    #[test]
    fn empty_text() {
        assert_eq!(extract_syntactic_features(""), [0.0; 7]);
    }

    #[test]
    fn bullet_lines() {
        let f = extract_syntactic_features("- apples\n- pears");
        assert_eq!(f[5], 2.0);
        assert_eq!(f[0], 4.0);
        assert_eq!(f[1], 2.0);
        assert_eq!(f[4], 2.0);
    }

    #[test]
    fn numbered_list_items() {
        assert!(is_list_item("  1. first"));
        assert!(is_list_item("12) twelfth"));
        assert!(is_list_item("• dot"));
        assert!(!is_list_item("1995 was a year"));
        assert!(!is_list_item("plain"));
    }

    #[test]
    fn overrides_replace_named_columns() {
        let mut a = FeatureTable::new(vec!["x".into(), "adj_adv_count".into()], FeatureKind::Syntactic);
        a.insert("p", "m", vec![1.0, 2.0]).unwrap();
        let mut b = FeatureTable::new(vec!["adj_adv_count".into()], FeatureKind::Syntactic);
        b.insert("p", "m", vec![9.0]).unwrap();
        let c = a.with_overrides(&b);
        assert_eq!(c.get("p", "m").unwrap(), &[1.0, 9.0]);
    }
}
