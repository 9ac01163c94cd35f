//! Population-level preference analyses: who wins each prompt, how
//! concentrated the votes are, and what features predict a user's choices.

pub mod features;
pub mod regression;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::persona::{self, Population};

pub use features::{extract_syntactic_features, FeatureKind, FeatureTable, SYNTACTIC_FEATURES};
pub use regression::{fit_user_regression, labeled_pairs, LabeledPair, RegressionOptions, RegressionResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub population_seed: u64,
    pub alpha: f64,
    pub normalization: String,
    pub corpus_hash: String,
}

impl Provenance {
    pub fn of(population: &Population, corpus: &Corpus) -> Self {
        Self {
            population_seed: population.seed,
            alpha: population.alpha,
            normalization: corpus.mode().as_str().to_string(),
            corpus_hash: corpus.content_hash().to_string(),
        }
    }
}

/// `users x prompts` matrix of winning response indices.
#[derive(Clone, Debug, PartialEq)]
pub struct WinnerTable {
    pub persona_ids: Vec<String>,
    pub prompt_ids: Vec<String>,
    /// `L`.
    pub num_responses: usize,
    /// Row-major by user.
    winners: Vec<u32>,
    pub provenance: Option<Provenance>,
}

impl WinnerTable {
    pub fn from_rows(
        persona_ids: Vec<String>,
        prompt_ids: Vec<String>,
        num_responses: usize,
        rows: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if rows.len() != persona_ids.len() {
            return Err(Error::Shape(format!(
                "{} winner rows for {} users",
                rows.len(),
                persona_ids.len()
            )));
        }
        let mut winners = Vec::with_capacity(rows.len() * prompt_ids.len());
        for row in rows {
            if row.len() != prompt_ids.len() {
                return Err(Error::Shape(format!(
                    "winner row of length {} for {} prompts",
                    row.len(),
                    prompt_ids.len()
                )));
            }
            for w in row {
                if w >= num_responses {
                    return Err(Error::Shape(format!("winner index {w} outside [0, {num_responses})")));
                }
                winners.push(w as u32);
            }
        }
        Ok(Self {
            persona_ids,
            prompt_ids,
            num_responses,
            winners,
            provenance: None,
        })
    }

    pub fn num_users(&self) -> usize {
        self.persona_ids.len()
    }

    pub fn num_prompts(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn get(&self, user: usize, prompt: usize) -> usize {
        self.winners[user * self.prompt_ids.len() + prompt] as usize
    }

    fn check_non_empty(&self) -> Result<()> {
        if self.num_users() == 0 || self.num_prompts() == 0 {
            return Err(Error::InvalidArgument("winner table is empty".into()));
        }
        Ok(())
    }

    /// Votes per response for one prompt.
    pub fn votes(&self, prompt: usize) -> Vec<usize> {
        let mut v = vec![0; self.num_responses];
        for u in 0..self.num_users() {
            v[self.get(u, prompt)] += 1;
        }
        v
    }
}

/// Entry `(i, p)` is persona `i`'s winner on prompt `p`.
pub fn compute_winners(population: &Population, corpus: &Corpus, prompt_ids: &[String]) -> Result<WinnerTable> {
    if population.b != corpus.num_reward_models() {
        return Err(Error::Shape(format!(
            "population has B={}, corpus has B={}",
            population.b,
            corpus.num_reward_models()
        )));
    }
    let matrices = prompt_ids
        .iter()
        .map(|id| corpus.rewards(id))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<usize>> = population
        .personas
        .par_iter()
        .map(|p| {
            matrices
                .iter()
                .map(|m| persona::winner_loser(&p.weights, m).0)
                .collect()
        })
        .collect();
    let mut table = WinnerTable::from_rows(
        population.personas.iter().map(|p| p.persona_id.clone()).collect(),
        prompt_ids.to_vec(),
        corpus.num_responses(),
        rows,
    )?;
    table.provenance = Some(Provenance::of(population, corpus));
    Ok(table)
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.95];

/// For each threshold `t`, the fraction of prompts whose most-voted response
/// has vote share `<= t`.
pub fn vote_share_summary(table: &WinnerTable, thresholds: &[f64]) -> Result<Vec<f64>> {
    table.check_non_empty()?;
    let users = table.num_users() as f64;
    let shares: Vec<f64> = (0..table.num_prompts())
        .map(|p| *table.votes(p).iter().max().unwrap_or(&0) as f64 / users)
        .collect();
    let n = shares.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| shares.iter().filter(|&&s| s <= t).count() as f64 / n)
        .collect())
}

/// `hist[k - 1]` counts prompts where exactly `k` responses got at least one vote.
pub fn distinct_winner_histogram(table: &WinnerTable) -> Result<Vec<usize>> {
    table.check_non_empty()?;
    let mut hist = vec![0; table.num_responses];
    for p in 0..table.num_prompts() {
        let k = table.votes(p).iter().filter(|&&v| v > 0).count();
        hist[k - 1] += 1;
    }
    Ok(hist)
}

/// Fraction of all `(user, prompt)` cells won by each model, in corpus model order.
pub fn model_win_rates(table: &WinnerTable, corpus: &Corpus) -> Result<Vec<(String, f64)>> {
    table.check_non_empty()?;
    if table.num_responses != corpus.num_responses() {
        return Err(Error::Shape(format!(
            "winner table has L={}, corpus has L={}",
            table.num_responses,
            corpus.num_responses()
        )));
    }
    let mut counts = vec![0usize; table.num_responses];
    for w in &table.winners {
        counts[*w as usize] += 1;
    }
    let total = table.winners.len() as f64;
    Ok(corpus
        .model_ids()
        .iter()
        .zip(counts)
        .map(|(m, c)| (m.clone(), c as f64 / total))
        .collect())
}

/// Shannon entropy in bits of a vote vector.
pub fn vote_entropy_bits(votes: &[usize]) -> f64 {
    let n: usize = votes.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    votes
        .iter()
        .filter(|&&v| v > 0)
        .map(|&v| {
            let p = v as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "pattern", rename_all = "snake_case")]
pub enum MatchRule {
    /// Case-insensitive substring anywhere in the prompt.
    Contains(String),
    /// Case-insensitive match of the prompt's first word.
    FirstWord(String),
}

impl MatchRule {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            MatchRule::Contains(s) => text.to_lowercase().contains(&s.to_lowercase()),
            MatchRule::FirstWord(w) => text
                .split_whitespace()
                .next()
                .map(|t| features::strip_punct(t).to_lowercase() == w.to_lowercase())
                .unwrap_or(false),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    #[serde(flatten)]
    pub rule: MatchRule,
}

impl GroupSpec {
    pub fn contains(label: &str) -> Self {
        Self {
            label: label.to_string(),
            rule: MatchRule::Contains(label.to_string()),
        }
    }

    pub fn first_word(label: &str) -> Self {
        Self {
            label: label.to_string(),
            rule: MatchRule::FirstWord(label.to_string()),
        }
    }
}

/// Keyword groups from the preference-entropy analysis.
pub fn default_groups() -> Vec<GroupSpec> {
    vec![
        GroupSpec::contains("imagine"),
        GroupSpec::contains("opinion"),
        GroupSpec::contains("poem"),
        GroupSpec::first_word("who"),
        GroupSpec::first_word("when"),
        GroupSpec::first_word("where"),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEntropy {
    pub label: String,
    pub matched_prompts: usize,
    /// `None` when no prompt matched.
    pub mean_entropy_bits: Option<f64>,
}

pub fn keyword_entropy(table: &WinnerTable, corpus: &Corpus, groups: &[GroupSpec]) -> Result<Vec<GroupEntropy>> {
    table.check_non_empty()?;
    let texts = table
        .prompt_ids
        .iter()
        .map(|id| corpus.prompt(id).map(|p| p.text.as_str()))
        .collect::<Result<Vec<_>>>()?;
    let entropies: Vec<f64> = (0..table.num_prompts())
        .map(|p| vote_entropy_bits(&table.votes(p)))
        .collect();
    Ok(groups
        .iter()
        .map(|g| {
            let hits: Vec<f64> = texts
                .iter()
                .zip(&entropies)
                .filter(|(t, _)| g.rule.matches(t))
                .map(|(_, h)| *h)
                .collect();
            GroupEntropy {
                label: g.label.clone(),
                matched_prompts: hits.len(),
                mean_entropy_bits: (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64),
            }
        })
        .collect())
}
