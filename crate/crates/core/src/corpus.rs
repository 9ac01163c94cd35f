//! Prompt / response / reward-score corpus, dataset splits and embedding tables.
//!
//! A [`Corpus`] is immutable once built. Normalization returns a new value
//! flagged with the statistics that produced it.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub text: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub prompt_id: String,
    pub model_id: String,
    pub text: String,
}

/// Row-major `L x B` score matrix for one prompt. Rows follow the corpus
/// model order, columns the corpus reward-model order.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RewardMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "reward matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Name of the split the statistics were computed over.
    pub split: String,
}

impl NormalizationStats {
    pub fn identity(b: usize) -> Self {
        Self {
            mean: vec![0.0; b],
            std: vec![1.0; b],
            split: "identity".to_string(),
        }
    }
}

/// How reward scores were prepared before ensembling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    Raw,
    Zscore,
}

impl NormalizationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NormalizationMode::Raw => "raw",
            NormalizationMode::Zscore => "zscore",
        }
    }
}

/// The loaded corpus: `P` prompts, each with `L` responses and an `L x B`
/// reward matrix.
#[derive(Clone, Debug)]
pub struct Corpus {
    prompts: Vec<PromptRecord>,
    index: HashMap<String, usize>,
    model_ids: Vec<String>,
    reward_models: Vec<String>,
    /// `responses[p][l]` is the text of model `l` for prompt `p`.
    responses: Vec<Vec<String>>,
    rewards: Vec<RewardMatrix>,
    normalization: Option<NormalizationStats>,
    content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub prompts: usize,
    pub responses_per_prompt: usize,
    pub reward_models: usize,
}

impl Corpus {
    /// Assembles a corpus from in-memory parts and validates it.
    ///
    /// `responses[p]` and `rewards[p]` must follow `model_ids` order.
    pub fn from_parts(
        prompts: Vec<PromptRecord>,
        model_ids: Vec<String>,
        reward_models: Vec<String>,
        responses: Vec<Vec<String>>,
        rewards: Vec<RewardMatrix>,
    ) -> Result<Self> {
        let mut hasher = Sha256::new();
        for (p, prompt) in prompts.iter().enumerate() {
            hasher.update(prompt.prompt_id.as_bytes());
            hasher.update([0]);
            hasher.update(prompt.text.as_bytes());
            hasher.update([0]);
            if let Some(texts) = responses.get(p) {
                for t in texts {
                    hasher.update(t.as_bytes());
                    hasher.update([0]);
                }
            }
            if let Some(m) = rewards.get(p) {
                for v in &m.data {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        for id in model_ids.iter().chain(&reward_models) {
            hasher.update(id.as_bytes());
            hasher.update([0]);
        }
        let hash = hex(&hasher.finalize());
        Self::build(prompts, model_ids, reward_models, responses, rewards, hash)
    }

    fn build(
        prompts: Vec<PromptRecord>,
        model_ids: Vec<String>,
        reward_models: Vec<String>,
        responses: Vec<Vec<String>>,
        rewards: Vec<RewardMatrix>,
        content_hash: String,
    ) -> Result<Self> {
        let l = model_ids.len();
        let b = reward_models.len();
        if l == 0 {
            return Err(Error::Shape("corpus has no response models".into()));
        }
        if b == 0 {
            return Err(Error::Shape("corpus has no reward models".into()));
        }
        if responses.len() != prompts.len() || rewards.len() != prompts.len() {
            return Err(Error::Shape(format!(
                "{} prompts but {} response sets and {} reward matrices",
                prompts.len(),
                responses.len(),
                rewards.len()
            )));
        }
        let mut seen = HashSet::new();
        for m in &model_ids {
            if !seen.insert(m.as_str()) {
                return Err(Error::DuplicateId {
                    what: "model ids",
                    id: m.clone(),
                });
            }
        }
        let mut index = HashMap::with_capacity(prompts.len());
        for (p, prompt) in prompts.iter().enumerate() {
            if prompt.text.is_empty() {
                return Err(Error::Shape(format!("prompt `{}` has empty text", prompt.prompt_id)));
            }
            if index.insert(prompt.prompt_id.clone(), p).is_some() {
                return Err(Error::DuplicateId {
                    what: "prompts",
                    id: prompt.prompt_id.clone(),
                });
            }
            if responses[p].len() != l {
                return Err(Error::Shape(format!(
                    "prompt `{}` has {} responses, expected {l}",
                    prompt.prompt_id,
                    responses[p].len()
                )));
            }
            let m = &rewards[p];
            if m.rows != l || m.cols != b {
                return Err(Error::Shape(format!(
                    "prompt `{}` has a {}x{} reward matrix, expected {l}x{b}",
                    prompt.prompt_id, m.rows, m.cols
                )));
            }
            if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "rewards",
                    id: prompt.prompt_id.clone(),
                    column: pos % b,
                });
            }
        }
        Ok(Self {
            prompts,
            index,
            model_ids,
            reward_models,
            responses,
            rewards,
            normalization: None,
            content_hash,
        })
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            prompts: self.prompts.len(),
            responses_per_prompt: self.num_responses(),
            reward_models: self.num_reward_models(),
        }
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    /// `L`.
    pub fn num_responses(&self) -> usize {
        self.model_ids.len()
    }

    /// `B`.
    pub fn num_reward_models(&self) -> usize {
        self.reward_models.len()
    }

    pub fn prompts(&self) -> &[PromptRecord] {
        &self.prompts
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn reward_models(&self) -> &[String] {
        &self.reward_models
    }

    pub fn prompt_index(&self, prompt_id: &str) -> Result<usize> {
        self.index.get(prompt_id).copied().ok_or_else(|| Error::NotFound {
            what: "prompt",
            id: prompt_id.to_string(),
        })
    }

    pub fn prompt(&self, prompt_id: &str) -> Result<&PromptRecord> {
        Ok(&self.prompts[self.prompt_index(prompt_id)?])
    }

    pub fn model_index(&self, model_id: &str) -> Result<usize> {
        self.model_ids
            .iter()
            .position(|m| m == model_id)
            .ok_or_else(|| Error::NotFound {
                what: "model",
                id: model_id.to_string(),
            })
    }

    pub fn rewards(&self, prompt_id: &str) -> Result<&RewardMatrix> {
        Ok(&self.rewards[self.prompt_index(prompt_id)?])
    }

    pub fn rewards_at(&self, prompt: usize) -> &RewardMatrix {
        &self.rewards[prompt]
    }

    pub fn response_text(&self, prompt_id: &str, response: usize) -> Result<&str> {
        let p = self.prompt_index(prompt_id)?;
        self.responses[p]
            .get(response)
            .map(String::as_str)
            .ok_or_else(|| Error::NotFound {
                what: "response index",
                id: format!("{prompt_id}[{response}]"),
            })
    }

    pub fn responses_at(&self, prompt: usize) -> &[String] {
        &self.responses[prompt]
    }

    pub fn normalization(&self) -> Option<&NormalizationStats> {
        self.normalization.as_ref()
    }

    pub fn mode(&self) -> NormalizationMode {
        if self.normalization.is_some() {
            NormalizationMode::Zscore
        } else {
            NormalizationMode::Raw
        }
    }

    /// SHA-256 of the source files (or of the in-memory content).
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }
}

/// Embedding-table key for a stored response.
pub fn response_key(prompt_id: &str, model_id: &str) -> String {
    format!("{prompt_id}::{model_id}")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptLine {
    prompt_id: String,
    prompt: String,
    source: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseLine {
    prompt_id: String,
    model_id: String,
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardHeader {
    reward_models: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardLine {
    prompt_id: String,
    model_id: String,
    scores: Vec<Option<f64>>,
}

/// Non-empty lines of a text file, numbered from 1.
pub(crate) fn read_lines(path: &Path) -> Result<(String, Vec<(usize, String)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect();
    Ok((text, lines))
}

pub(crate) fn parse_line<T: for<'de> Deserialize<'de>>(path: &Path, line: usize, s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::schema(path, line, e.to_string()))
}

/// Replaces bare `NaN`, `Infinity` and `-Infinity` tokens (emitted by some
/// JSON writers) with `null` so they surface as non-finite scores instead of
/// parse errors.
fn nullify_non_finite(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        } else {
            let token = ["-Infinity", "Infinity", "NaN"]
                .into_iter()
                .find(|t| rest.starts_with(t));
            if let Some(t) = token {
                out.push_str("null");
                rest = &rest[t.len()..];
                continue;
            }
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

/// Loads and validates `prompts.jsonl`, `responses.jsonl` and `rewards.jsonl`.
///
/// The model order is the order in which model ids first appear in the
/// responses file; every prompt must carry exactly that set of models.
pub fn load_corpus(prompts_path: &Path, responses_path: &Path, rewards_path: &Path) -> Result<Corpus> {
    let mut hasher = Sha256::new();

    let (raw, lines) = read_lines(prompts_path)?;
    hasher.update(raw.as_bytes());
    let mut prompts = Vec::with_capacity(lines.len());
    for (n, line) in &lines {
        let rec: PromptLine = parse_line(prompts_path, *n, line)?;
        if rec.prompt.is_empty() {
            return Err(Error::schema(prompts_path, *n, "empty prompt text"));
        }
        prompts.push(PromptRecord {
            prompt_id: rec.prompt_id,
            text: rec.prompt,
            source: rec.source,
        });
    }
    let mut index = HashMap::with_capacity(prompts.len());
    for (p, rec) in prompts.iter().enumerate() {
        if index.insert(rec.prompt_id.clone(), p).is_some() {
            return Err(Error::DuplicateId {
                what: "prompts",
                id: rec.prompt_id.clone(),
            });
        }
    }

    let (raw, lines) = read_lines(responses_path)?;
    hasher.update(raw.as_bytes());
    let mut model_ids: Vec<String> = Vec::new();
    let mut by_prompt: Vec<HashMap<String, String>> = vec![HashMap::new(); prompts.len()];
    for (n, line) in &lines {
        let rec: ResponseLine = parse_line(responses_path, *n, line)?;
        let p = *index
            .get(&rec.prompt_id)
            .ok_or_else(|| Error::schema(responses_path, *n, format!("unknown prompt_id `{}`", rec.prompt_id)))?;
        if !model_ids.contains(&rec.model_id) {
            model_ids.push(rec.model_id.clone());
        }
        let key = response_key(&rec.prompt_id, &rec.model_id);
        if by_prompt[p].insert(rec.model_id, rec.text).is_some() {
            return Err(Error::DuplicateId {
                what: "responses",
                id: key,
            });
        }
    }
    let l = model_ids.len();
    let mut responses = Vec::with_capacity(prompts.len());
    for (p, mut texts) in by_prompt.into_iter().enumerate() {
        if texts.len() != l {
            return Err(Error::Shape(format!(
                "prompt `{}` has {} responses, expected {l}",
                prompts[p].prompt_id,
                texts.len()
            )));
        }
        let row = model_ids
            .iter()
            .map(|m| {
                texts.remove(m).ok_or_else(|| {
                    Error::Shape(format!("prompt `{}` lacks a response from `{m}`", prompts[p].prompt_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        responses.push(row);
    }

    let (raw, lines) = read_lines(rewards_path)?;
    hasher.update(raw.as_bytes());
    let mut iter = lines.iter();
    let (hn, hline) = iter
        .next()
        .ok_or_else(|| Error::schema(rewards_path, 1, "missing reward_models header"))?;
    let header: RewardHeader = parse_line(rewards_path, *hn, hline)?;
    let b = header.reward_models.len();
    if b == 0 {
        return Err(Error::schema(rewards_path, *hn, "empty reward_models header"));
    }
    let mut cells: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; l]; prompts.len()];
    for (n, line) in iter {
        let rec: RewardLine = parse_line(rewards_path, *n, &nullify_non_finite(line))?;
        let p = *index
            .get(&rec.prompt_id)
            .ok_or_else(|| Error::schema(rewards_path, *n, format!("unknown prompt_id `{}`", rec.prompt_id)))?;
        let m = model_ids
            .iter()
            .position(|m| *m == rec.model_id)
            .ok_or_else(|| Error::schema(rewards_path, *n, format!("unknown model_id `{}`", rec.model_id)))?;
        if rec.scores.len() != b {
            return Err(Error::Shape(format!(
                "{}:{n}: `{}` has {} scores, expected B={b}",
                rewards_path.display(),
                response_key(&rec.prompt_id, &rec.model_id),
                rec.scores.len()
            )));
        }
        let mut row = Vec::with_capacity(b);
        for (c, v) in rec.scores.iter().enumerate() {
            match v {
                Some(x) if x.is_finite() => row.push(*x),
                _ => {
                    return Err(Error::NonFinite {
                        what: "rewards",
                        id: rec.prompt_id.clone(),
                        column: c,
                    })
                }
            }
        }
        if cells[p][m].replace(row).is_some() {
            return Err(Error::DuplicateId {
                what: "rewards",
                id: response_key(&rec.prompt_id, &rec.model_id),
            });
        }
    }
    let mut rewards = Vec::with_capacity(prompts.len());
    for (p, rows) in cells.into_iter().enumerate() {
        let mut data = Vec::with_capacity(l * b);
        for (m, row) in rows.into_iter().enumerate() {
            let row = row.ok_or_else(|| {
                Error::Shape(format!(
                    "no reward scores for `{}`",
                    response_key(&prompts[p].prompt_id, &model_ids[m])
                ))
            })?;
            data.extend(row);
        }
        rewards.push(RewardMatrix::new(l, b, data)?);
    }

    let hash = hex(&hasher.finalize());
    Corpus::build(prompts, model_ids, header.reward_models, responses, rewards, hash)
}

/// Loads `prompts.jsonl`, `responses.jsonl` and `rewards.jsonl` from one directory.
pub fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    load_corpus(
        &dir.join("prompts.jsonl"),
        &dir.join("responses.jsonl"),
        &dir.join("rewards.jsonl"),
    )
}

/// Per-column sample mean and sample standard deviation (`n - 1`) over every
/// `(prompt, response)` cell of the given prompts.
pub fn compute_normalization(corpus: &Corpus, split_name: &str, prompt_ids: &[String]) -> Result<NormalizationStats> {
    if prompt_ids.is_empty() {
        return Err(Error::InvalidArgument(format!("split `{split_name}` is empty")));
    }
    let b = corpus.num_reward_models();
    let mut count = 0usize;
    let mut mean = vec![0.0; b];
    let mut m2 = vec![0.0; b];
    // Welford accumulation per column.
    for id in prompt_ids {
        let m = corpus.rewards(id)?;
        for r in 0..m.rows() {
            count += 1;
            for (c, &x) in m.row(r).iter().enumerate() {
                let delta = x - mean[c];
                mean[c] += delta / count as f64;
                m2[c] += delta * (x - mean[c]);
            }
        }
    }
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "split `{split_name}` has {count} cell(s); sample std needs at least 2"
        )));
    }
    let std: Vec<f64> = m2.iter().map(|s| (s / (count - 1) as f64).sqrt()).collect();
    if let Some(c) = std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::ZeroVariance {
            column: c,
            name: corpus.reward_models()[c].clone(),
            split: split_name.to_string(),
        });
    }
    Ok(NormalizationStats {
        mean,
        std,
        split: split_name.to_string(),
    })
}

/// Z-scores every reward column; the input corpus is left untouched.
pub fn normalize_rewards(corpus: &Corpus, stats: &NormalizationStats) -> Result<Corpus> {
    let b = corpus.num_reward_models();
    if stats.mean.len() != b || stats.std.len() != b {
        return Err(Error::Shape(format!(
            "normalization stats have {} means / {} stds, corpus has B={b}",
            stats.mean.len(),
            stats.std.len()
        )));
    }
    if let Some(c) = stats.std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::ZeroVariance {
            column: c,
            name: corpus.reward_models()[c].clone(),
            split: stats.split.clone(),
        });
    }
    let rewards = corpus
        .rewards
        .iter()
        .map(|m| {
            let data = m
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let c = i % b;
                    (x - stats.mean[c]) / stats.std[c]
                })
                .collect();
            RewardMatrix {
                rows: m.rows,
                cols: m.cols,
                data,
            }
        })
        .collect();
    Ok(Corpus {
        rewards,
        normalization: Some(stats.clone()),
        ..corpus.clone()
    })
}

/// Train/test partition of prompt ids, in file order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
}

impl SplitSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SplitSpec = serde_json::from_str(&text).map_err(|e| Error::schema(path, 1, e.to_string()))?;
        spec.check_disjoint()?;
        Ok(spec)
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train_ids.iter().chain(&self.test_ids) {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId {
                    what: "splits (train and test must be disjoint)",
                    id: id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Checks disjointness and that every id exists in the corpus.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        self.check_disjoint()?;
        for id in self.train_ids.iter().chain(&self.test_ids) {
            corpus.prompt_index(id)?;
        }
        Ok(())
    }

    /// Every corpus prompt in the test split; used when no split file is given.
    pub fn all_test(corpus: &Corpus) -> Self {
        Self {
            train_ids: Vec::new(),
            test_ids: corpus.prompts().iter().map(|p| p.prompt_id.clone()).collect(),
        }
    }

    pub fn ids(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train_ids,
            SplitPart::Test => &self.test_ids,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Test,
}

impl SplitPart {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Test => "test",
        }
    }
}

/// id -> fixed-dimension vector. Ids missing from the table are allowed;
/// lookups of absent ids fail individually.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        Ok(Self {
            dim,
            entries: HashMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::RaggedEmbedding {
                id,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if let Some(c) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "embeddings",
                id,
                column: c,
            });
        }
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateId { what: "embeddings", id });
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.entries.keys().map(String::as_str).collect();
        set.into_iter().collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for id in self.ids() {
            let mut row = vec![id.to_string()];
            row.extend(self.entries[id].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Loads `embeddings.csv` (`id,v0,...,v{dim-1}`).
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::schema(path, 1, format!("{other:?}")),
        })?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("id") || header.len() < 2 {
        return Err(Error::schema(path, 1, "header must be `id,v0,...,v{dim-1}`"));
    }
    for (i, h) in header.iter().skip(1).enumerate() {
        if h != format!("v{i}") {
            return Err(Error::schema(path, 1, format!("expected column `v{i}`, found `{h}`")));
        }
    }
    let mut table = EmbeddingTable::new(header.len() - 1)?;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let id = record
            .get(0)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::schema(path, line, "missing id"))?
            .to_string();
        let mut vector = Vec::with_capacity(record.len().saturating_sub(1));
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::schema(path, line, format!("`{field}` is not a decimal float")))?;
            vector.push(v);
        }
        table.insert(id, vector)?;
    }
    Ok(table)
}
