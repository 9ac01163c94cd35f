//! Survey representativeness: how close a simulated population's answers to
//! ordinal multiple-choice questions are to human answer distributions.
//!
//! Each persona answers with the option its ensemble scores highest (same
//! tie-break as response ranking). Options sit at `j / (K - 1)` on `[0, 1]`,
//! so the 1-D Wasserstein distance and the score `1 - W` both lie in `[0, 1]`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{parse_line, read_lines, RewardMatrix};
use crate::error::{Error, Result};
use crate::persona::{self, Population};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionQuestion {
    pub question_id: String,
    pub text: String,
    /// Ordered answer scale.
    pub options: Vec<String>,
    /// Indices of non-substantive options (e.g. "Refused") in the raw file,
    /// removed from the scale at ingest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub non_substantive: Vec<usize>,
}

impl OpinionQuestion {
    /// Number of options on the substantive scale.
    pub fn k(&self) -> usize {
        self.options.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub question_id: String,
    pub probabilities: Vec<f64>,
}

impl AnswerDistribution {
    pub fn new(question_id: impl Into<String>, probabilities: Vec<f64>) -> Result<Self> {
        let question_id = question_id.into();
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "distribution for `{question_id}` has a negative or non-finite entry"
            )));
        }
        let s: f64 = probabilities.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "distribution for `{question_id}` sums to {s}"
            )));
        }
        Ok(Self {
            question_id,
            probabilities,
        })
    }
}

/// `question_id -> K x B` scores of each (question, option) pair.
pub type OptionScores = HashMap<String, RewardMatrix>;

/// Vote fractions of the population's argmax options.
pub fn simulate_answers(
    population: &Population,
    question: &OpinionQuestion,
    option_scores: &OptionScores,
) -> Result<AnswerDistribution> {
    let m = option_scores
        .get(&question.question_id)
        .ok_or_else(|| Error::NotFound {
            what: "option scores for question",
            id: question.question_id.clone(),
        })?;
    if m.rows() != question.k() {
        return Err(Error::Shape(format!(
            "question `{}` has {} options but {} scored",
            question.question_id,
            question.k(),
            m.rows()
        )));
    }
    if m.cols() != population.b {
        return Err(Error::Shape(format!(
            "option scores have B={}, population has B={}",
            m.cols(),
            population.b
        )));
    }
    if population.is_empty() {
        return Err(Error::InvalidArgument("empty population".into()));
    }
    let mut votes = vec![0usize; question.k()];
    for p in &population.personas {
        votes[persona::winner_loser(&p.weights, m).0] += 1;
    }
    let n = population.len() as f64;
    AnswerDistribution::new(
        question.question_id.clone(),
        votes.into_iter().map(|v| v as f64 / n).collect(),
    )
}

/// `sum_{j < K-1} |CDF_p(j) - CDF_q(j)| / (K - 1)`.
pub fn wasserstein_1d(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<f64> {
    let k = p.probabilities.len();
    if k != q.probabilities.len() {
        return Err(Error::Shape(format!(
            "distributions have K={} and K={}",
            k,
            q.probabilities.len()
        )));
    }
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 options".into()));
    }
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for j in 0..k - 1 {
        cp += p.probabilities[j];
        cq += q.probabilities[j];
        total += (cp - cq).abs();
    }
    Ok((total / (k - 1) as f64).clamp(0.0, 1.0))
}

pub fn representativeness(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<f64> {
    Ok(1.0 - wasserstein_1d(p, q)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanDistribution {
    pub question_id: String,
    pub group: String,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    pub mean_score: f64,
    pub questions: usize,
}

/// Unweighted mean of `1 - W` per demographic group, in first-seen group order.
pub fn representativeness_table(
    population: &Population,
    questions: &[OpinionQuestion],
    human: &[HumanDistribution],
    option_scores: &OptionScores,
) -> Result<Vec<GroupScore>> {
    let by_id: HashMap<&str, &OpinionQuestion> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let mut simulated: HashMap<&str, AnswerDistribution> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
    for h in human {
        let q = by_id.get(h.question_id.as_str()).ok_or_else(|| Error::NotFound {
            what: "question",
            id: h.question_id.clone(),
        })?;
        if !simulated.contains_key(q.question_id.as_str()) {
            let d = simulate_answers(population, q, option_scores)?;
            simulated.insert(q.question_id.as_str(), d);
        }
        let sim = &simulated[q.question_id.as_str()];
        let human_dist = AnswerDistribution::new(h.question_id.clone(), h.probabilities.clone())?;
        let score = representativeness(sim, &human_dist)?;
        let e = sums.entry(h.group.clone()).or_insert_with(|| {
            order.push(h.group.clone());
            (0.0, 0)
        });
        e.0 += score;
        e.1 += 1;
    }
    Ok(order
        .into_iter()
        .map(|g| {
            let (s, n) = sums[&g];
            GroupScore {
                group: g,
                mean_score: s / n as f64,
                questions: n,
            }
        })
        .collect())
}

#[derive(Deserialize)]
struct QuestionLine {
    question_id: String,
    text: String,
    options: Vec<String>,
    #[serde(default)]
    non_substantive: Vec<usize>,
}

/// Reads `questions.jsonl`; flagged non-substantive options are dropped from
/// `options` (their raw indices are kept in `non_substantive`).
pub fn load_questions(path: &Path) -> Result<Vec<OpinionQuestion>> {
    let (_, lines) = read_lines(path)?;
    let mut out = Vec::new();
    for (n, line) in &lines {
        let rec: QuestionLine = parse_line(path, *n, line)?;
        if let Some(bad) = rec.non_substantive.iter().find(|&&i| i >= rec.options.len()) {
            return Err(Error::schema(
                path,
                *n,
                format!("non_substantive index {bad} out of range"),
            ));
        }
        let options: Vec<String> = rec
            .options
            .iter()
            .enumerate()
            .filter(|(i, _)| !rec.non_substantive.contains(i))
            .map(|(_, o)| o.clone())
            .collect();
        if options.len() < 2 {
            return Err(Error::schema(path, *n, "need at least 2 substantive options"));
        }
        out.push(OpinionQuestion {
            question_id: rec.question_id,
            text: rec.text,
            options,
            non_substantive: rec.non_substantive,
        });
    }
    Ok(out)
}

/// Keeps the substantive entries of a raw-scale vector.
fn substantive<T: Clone>(q: &OpinionQuestion, raw: &[T]) -> Vec<T> {
    raw.iter()
        .enumerate()
        .filter(|(i, _)| !q.non_substantive.contains(i))
        .map(|(_, v)| v.clone())
        .collect()
}

/// Reads `human_dist.jsonl`. Vectors over the raw option list are reduced to
/// the substantive scale and renormalized.
pub fn load_human_distributions(path: &Path, questions: &[OpinionQuestion]) -> Result<Vec<HumanDistribution>> {
    let by_id: HashMap<&str, &OpinionQuestion> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let (_, lines) = read_lines(path)?;
    let mut out = Vec::new();
    for (n, line) in &lines {
        let mut rec: HumanDistribution = parse_line(path, *n, line)?;
        let q = by_id
            .get(rec.question_id.as_str())
            .ok_or_else(|| Error::schema(path, *n, format!("unknown question `{}`", rec.question_id)))?;
        let raw_k = q.k() + q.non_substantive.len();
        if rec.probabilities.len() == raw_k && raw_k != q.k() {
            let kept = substantive(q, &rec.probabilities);
            let s: f64 = kept.iter().sum();
            if s <= 0.0 {
                return Err(Error::schema(path, *n, "no mass on substantive options"));
            }
            rec.probabilities = kept.into_iter().map(|p| p / s).collect();
        } else if rec.probabilities.len() != q.k() {
            return Err(Error::schema(
                path,
                *n,
                format!("{} probabilities for K={}", rec.probabilities.len(), q.k()),
            ));
        }
        AnswerDistribution::new(rec.question_id.clone(), rec.probabilities.clone())
            .map_err(|e| Error::schema(path, *n, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OptionScoreLine {
    question_id: String,
    option_index: usize,
    scores: Vec<f64>,
}

/// Reads `option_scores.jsonl`; `option_index` refers to the raw option list.
pub fn load_option_scores(path: &Path, questions: &[OpinionQuestion], b: usize) -> Result<OptionScores> {
    let by_id: HashMap<&str, &OpinionQuestion> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let (_, lines) = read_lines(path)?;
    let mut raw: HashMap<String, Vec<Option<Vec<f64>>>> = HashMap::new();
    for (n, line) in &lines {
        let rec: OptionScoreLine = parse_line(path, *n, line)?;
        let q = by_id
            .get(rec.question_id.as_str())
            .ok_or_else(|| Error::schema(path, *n, format!("unknown question `{}`", rec.question_id)))?;
        let raw_k = q.k() + q.non_substantive.len();
        if rec.option_index >= raw_k {
            return Err(Error::schema(
                path,
                *n,
                format!("option_index {} out of range", rec.option_index),
            ));
        }
        if rec.scores.len() != b {
            return Err(Error::schema(
                path,
                *n,
                format!("{} scores, expected B={b}", rec.scores.len()),
            ));
        }
        if let Some(c) = rec.scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "option scores",
                id: rec.question_id,
                column: c,
            });
        }
        let slot = raw.entry(rec.question_id.clone()).or_insert_with(|| vec![None; raw_k]);
        if slot[rec.option_index].replace(rec.scores).is_some() {
            return Err(Error::DuplicateId {
                what: "option scores",
                id: format!("{}[{}]", rec.question_id, rec.option_index),
            });
        }
    }
    let mut out = OptionScores::new();
    for (qid, rows) in raw {
        let q = by_id[qid.as_str()];
        let kept = substantive(q, &rows);
        let mut data = Vec::with_capacity(kept.len() * b);
        for (j, row) in kept.into_iter().enumerate() {
            let row = row.ok_or_else(|| Error::NotFound {
                what: "option score",
                id: format!("{qid}[{j}]"),
            })?;
            data.extend(row);
        }
        out.insert(qid, RewardMatrix::new(q.k(), b, data)?);
    }
    Ok(out)
}
