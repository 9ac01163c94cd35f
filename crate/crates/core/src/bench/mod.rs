//! Evaluation and comparison of policy outcomes.

pub mod config;
pub mod svg;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::persona::{self, Population};
use crate::policies::{Mode, OutcomeStatus, PolicyOutcome, PolicySpec};

pub use config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalProvenance {
    pub population_seed: u64,
    pub alpha: f64,
    pub normalization: String,
    pub corpus_hash: String,
    pub reference_model: String,
    /// Any further seeds that fed the run (history, assignment, policy).
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub test_case_id: String,
    pub reward: f64,
    pub win: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: PolicySpec,
    pub mode: Mode,
    pub n_cases: usize,
    pub mean_reward: f64,
    pub win_rate: f64,
    /// Outcomes excluded because their client calls failed.
    #[serde(default)]
    pub n_failed: usize,
    pub cases: Vec<CaseRecord>,
    pub provenance: EvalProvenance,
}

fn case_record(o: &PolicyOutcome, population: &Population, corpus: &Corpus, reference: usize) -> Result<CaseRecord> {
    let persona = population.get(&o.persona_id)?;
    let m = corpus.rewards(&o.test_prompt_id)?;
    let reward = match (o.chosen_index, &o.scores) {
        (Some(i), _) => {
            if i >= m.rows() {
                return Err(Error::Shape(format!(
                    "case {} chose response {i}, prompt has {}",
                    o.test_case_id,
                    m.rows()
                )));
            }
            persona::mix(&persona.weights, m.row(i))
        }
        (None, Some(s)) => {
            if s.len() != persona.dim() {
                return Err(Error::Shape(format!(
                    "case {} has {} scores, persona has B={}",
                    o.test_case_id,
                    s.len(),
                    persona.dim()
                )));
            }
            persona::mix(&persona.weights, s)
        }
        (None, None) => {
            return Err(Error::InvalidArgument(format!(
                "case {} has neither a chosen response nor scores",
                o.test_case_id
            )))
        }
    };
    let base = persona::mix(&persona.weights, m.row(reference));
    let win = if reward > base {
        1.0
    } else if reward == base {
        0.5
    } else {
        0.0
    };
    Ok(CaseRecord {
        test_case_id: o.test_case_id.clone(),
        reward,
        win,
    })
}

/// Sequential means over the case records, in order.
pub fn aggregate(cases: &[CaseRecord]) -> (f64, f64) {
    let n = cases.len() as f64;
    let (r, w) = cases.iter().fold((0.0, 0.0), |(r, w), c| (r + c.reward, w + c.win));
    (r / n, w / n)
}

/// Scores every successful outcome under its persona and compares it with
/// the reference model's stored response for the same prompt.
pub fn evaluate(
    outcomes: &[PolicyOutcome],
    population: &Population,
    corpus: &Corpus,
    reference_model_id: &str,
) -> Result<EvalReport> {
    let first = outcomes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no outcomes to evaluate".into()))?;
    let reference = corpus.model_index(reference_model_id)?;
    let ok: Vec<&PolicyOutcome> = outcomes.iter().filter(|o| o.status == OutcomeStatus::Ok).collect();
    if ok.is_empty() {
        return Err(Error::InvalidArgument(
            "every outcome failed; nothing to evaluate".into(),
        ));
    }
    let cases: Vec<CaseRecord> = ok
        .par_iter()
        .map(|o| case_record(o, population, corpus, reference))
        .collect::<Result<_>>()?;
    let (mean_reward, win_rate) = aggregate(&cases);
    Ok(EvalReport {
        policy: first.policy.clone(),
        mode: first.mode,
        n_cases: cases.len(),
        mean_reward,
        win_rate,
        n_failed: outcomes.len() - ok.len(),
        cases,
        provenance: EvalProvenance {
            population_seed: population.seed,
            alpha: population.alpha,
            normalization: corpus.mode().as_str().to_string(),
            corpus_hash: corpus.content_hash().to_string(),
            reference_model: reference_model_id.to_string(),
            seeds: BTreeMap::new(),
        },
    })
}

impl EvalReport {
    /// Recomputes the aggregates from the stored case records.
    pub fn recompute_aggregates(&self) -> (f64, f64) {
        aggregate(&self.cases)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, 1, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// Exact two-sided binomial p-value over the non-tied pairs.
    pub p_value: f64,
}

/// Exact two-sided sign test, computed in log space.
pub fn sign_test(positive: usize, negative: usize, ties: usize) -> SignTest {
    let n = positive + negative;
    let p_value = if n == 0 {
        1.0
    } else {
        let k = positive.min(negative);
        let ln2n = n as f64 * std::f64::consts::LN_2;
        let mut ln_c = 0.0;
        let mut terms = Vec::with_capacity(k + 1);
        for i in 0..=k {
            terms.push(ln_c - ln2n);
            ln_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tail = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        (2.0 * tail.exp()).min(1.0)
    };
    SignTest {
        positive,
        negative,
        ties,
        p_value,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub n_cases: usize,
    pub mean_reward: f64,
    pub win_rate: f64,
    /// Mean of per-case reward differences against the first report.
    pub delta_mean_reward: f64,
    pub delta_win_rate: f64,
    pub sign_test: SignTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

/// Aligns reports on test case ids and reports paired deltas against the
/// first one.
pub fn compare(reports: &[EvalReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two reports".into()));
    }
    let base = &reports[0];
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        let by_id: HashMap<&str, &CaseRecord> = r.cases.iter().map(|c| (c.test_case_id.as_str(), c)).collect();
        if by_id.len() != base.cases.len() || r.cases.len() != base.cases.len() {
            return Err(Error::InvalidArgument(format!(
                "{} covers {} cases, baseline covers {}",
                r.policy.label(),
                r.cases.len(),
                base.cases.len()
            )));
        }
        let (mut dr, mut dw) = (0.0, 0.0);
        let (mut pos, mut neg, mut ties) = (0, 0, 0);
        for b in &base.cases {
            let c = by_id
                .get(b.test_case_id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("{} lacks case {}", r.policy.label(), b.test_case_id)))?;
            let d = c.reward - b.reward;
            dr += d;
            dw += c.win - b.win;
            if d > 0.0 {
                pos += 1;
            } else if d < 0.0 {
                neg += 1;
            } else {
                ties += 1;
            }
        }
        let n = base.cases.len() as f64;
        rows.push(ComparisonRow {
            policy: r.policy.label(),
            n_cases: r.n_cases,
            mean_reward: r.mean_reward,
            win_rate: r.win_rate,
            delta_mean_reward: dr / n,
            delta_win_rate: dw / n,
            sign_test: sign_test(pos, neg, ties),
        });
    }
    Ok(Comparison {
        baseline: base.policy.label(),
        rows,
    })
}

impl Comparison {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "policy",
            "n_cases",
            "mean_reward",
            "win_rate",
            "delta_mean_reward",
            "delta_win_rate",
            "positive",
            "negative",
            "ties",
            "p_value",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.policy.clone(),
                r.n_cases.to_string(),
                r.mean_reward.to_string(),
                r.win_rate.to_string(),
                r.delta_mean_reward.to_string(),
                r.delta_win_rate.to_string(),
                r.sign_test.positive.to_string(),
                r.sign_test.negative.to_string(),
                r.sign_test.ties.to_string(),
                r.sign_test.p_value.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_small_cases() {
        assert_eq!(sign_test(0, 0, 3).p_value, 1.0);
        // n = 3, k = 0: 2 * 1/8
        assert!((sign_test(3, 0, 0).p_value - 0.25).abs() < 1e-15);
        // n = 4, k = 1: 2 * 5/16
        assert!((sign_test(1, 3, 0).p_value - 0.625).abs() < 1e-15);
        assert_eq!(sign_test(2, 2, 0).p_value, 1.0);
    }

    #[test]
    fn aggregate_is_plain_mean() {
        let cases = vec![
            CaseRecord {
                test_case_id: "a".into(),
                reward: 1.0,
                win: 1.0,
            },
            CaseRecord {
                test_case_id: "b".into(),
                reward: -3.0,
                win: 0.5,
            },
        ];
        assert_eq!(aggregate(&cases), (-1.0, 0.75));
    }
}
