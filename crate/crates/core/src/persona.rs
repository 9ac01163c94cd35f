//! Synthetic users as convex mixtures of base reward models.
//!
//! A persona's reward for a response is `sum_b w[b] * score[b]`, with the
//! weight vector drawn from a symmetric Dirichlet distribution.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_line, read_lines, Corpus, RewardMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on `sum(weights) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub persona_id: String,
    pub weights: Vec<f64>,
    pub alpha: f64,
    /// Seed of this persona's own stream.
    pub seed: u64,
}

impl Persona {
    pub fn new(persona_id: impl Into<String>, weights: Vec<f64>, alpha: f64, seed: u64) -> Result<Self> {
        let persona_id = persona_id.into();
        check_simplex(&persona_id, &weights)?;
        Ok(Self {
            persona_id,
            weights,
            alpha,
            seed,
        })
    }

    /// Persona putting all weight on base model `b`.
    pub fn one_hot(persona_id: impl Into<String>, b: usize, dim: usize) -> Result<Self> {
        if b >= dim {
            return Err(Error::InvalidArgument(format!(
                "one-hot index {b} out of range for B={dim}"
            )));
        }
        let mut w = vec![0.0; dim];
        w[b] = 1.0;
        Self::new(persona_id, w, 0.0, 0)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

fn check_simplex(id: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidArgument(format!("persona `{id}` has no weights")));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "persona `{id}` has a negative or non-finite weight"
        )));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument(format!(
            "persona `{id}` weights sum to {s}, not 1"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub personas: Vec<Persona>,
    pub alpha: f64,
    pub seed: u64,
    pub b: usize,
    /// Column names for the weights, when known.
    pub reward_models: Vec<String>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }

    pub fn get(&self, persona_id: &str) -> Result<&Persona> {
        self.personas
            .iter()
            .find(|p| p.persona_id == persona_id)
            .ok_or_else(|| Error::NotFound {
                what: "persona",
                id: persona_id.to_string(),
            })
    }

    pub fn with_reward_models(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.b {
            return Err(Error::Shape(format!(
                "{} reward model names for B={}",
                names.len(),
                self.b
            )));
        }
        self.reward_models = names;
        Ok(self)
    }

    /// Builds a population from explicit personas.
    pub fn from_personas(personas: Vec<Persona>, alpha: f64, seed: u64) -> Result<Self> {
        let b = personas
            .first()
            .map(Persona::dim)
            .ok_or_else(|| Error::InvalidArgument("empty population".into()))?;
        let mut ids = std::collections::HashSet::new();
        for p in &personas {
            if p.dim() != b {
                return Err(Error::Shape(format!(
                    "persona `{}` has {} weights, expected {b}",
                    p.persona_id,
                    p.dim()
                )));
            }
            if !ids.insert(p.persona_id.as_str()) {
                return Err(Error::DuplicateId {
                    what: "personas",
                    id: p.persona_id.clone(),
                });
            }
        }
        Ok(Self {
            personas,
            alpha,
            seed,
            b,
            reward_models: Vec::new(),
        })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header = PopulationHeader {
            b: self.b,
            alpha: self.alpha,
            seed: self.seed,
            reward_models: self.reward_models.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for p in &self.personas {
            serde_json::to_writer(
                &mut out,
                &PersonaLine {
                    persona_id: p.persona_id.clone(),
                    weights: p.weights.clone(),
                },
            )?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Reads `population.jsonl`. Per-persona seeds are re-derived from the
    /// header seed.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let (_, lines) = read_lines(path)?;
        let mut iter = lines.iter();
        let (hn, hl) = iter
            .next()
            .ok_or_else(|| Error::schema(path, 1, "missing population header"))?;
        let header: PopulationHeader = parse_line(path, *hn, hl)?;
        let mut personas = Vec::new();
        for (i, (n, line)) in iter.enumerate() {
            let rec: PersonaLine = parse_line(path, *n, line)?;
            if rec.weights.len() != header.b {
                return Err(Error::schema(
                    path,
                    *n,
                    format!("{} weights, header says B={}", rec.weights.len(), header.b),
                ));
            }
            personas.push(Persona::new(
                rec.persona_id,
                rec.weights,
                header.alpha,
                rng::sub_seed(header.seed, i as u64),
            )?);
        }
        let mut pop = Population::from_personas(personas, header.alpha, header.seed)?;
        if !header.reward_models.is_empty() {
            pop = pop.with_reward_models(header.reward_models)?;
        }
        Ok(pop)
    }
}

#[derive(Serialize, Deserialize)]
struct PopulationHeader {
    #[serde(rename = "B")]
    b: usize,
    alpha: f64,
    seed: u64,
    #[serde(default)]
    reward_models: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonaLine {
    persona_id: String,
    weights: Vec<f64>,
}

/// `ln X` for `X ~ Gamma(shape, 1)`.
///
/// Marsaglia-Tsang squeeze/rejection for `shape >= 1`. For `shape < 1` uses
/// `X = Y * U^(1/shape)` with `Y ~ Gamma(shape + 1)`, kept in log space because
/// `U^(1/shape)` underflows for small shapes.
pub fn sample_ln_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.gen::<f64>();
        return sample_ln_gamma(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.gen();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

/// One draw from symmetric `Dirichlet(alpha * 1_B)` by normalizing `B`
/// independent gamma variates (normalization done in log space).
pub fn sample_dirichlet<R: Rng + ?Sized>(b: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..b).map(|_| sample_ln_gamma(alpha, rng)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn persona_id(prefix: &str, index: usize) -> String {
    format!("{prefix}-{index:06}")
}

/// `n` personas named `user-000000`, `user-000001`, ...
pub fn sample_population(b: usize, n: usize, alpha: f64, seed: u64) -> Result<Population> {
    sample_population_with_prefix("user", b, n, alpha, seed)
}

/// Persona `i` draws from its own stream seeded by `sub_seed(seed, i)`, so
/// the output does not depend on thread count.
pub fn sample_population_with_prefix(prefix: &str, b: usize, n: usize, alpha: f64, seed: u64) -> Result<Population> {
    if b == 0 {
        return Err(Error::InvalidArgument("B must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("population size must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let personas = (0..n)
        .into_par_iter()
        .map(|i| {
            let sub = rng::sub_seed(seed, i as u64);
            let mut r = rng::stream(seed, i as u64);
            Persona {
                persona_id: persona_id(prefix, i),
                weights: sample_dirichlet(b, alpha, &mut r),
                alpha,
                seed: sub,
            }
        })
        .collect();
    Ok(Population {
        personas,
        alpha,
        seed,
        b,
        reward_models: Vec::new(),
    })
}

/// Mixture score of one score row.
#[inline]
pub fn mix(weights: &[f64], row: &[f64]) -> f64 {
    weights.iter().zip(row).map(|(w, s)| w * s).sum()
}

fn check_dims(persona: &Persona, corpus: &Corpus) -> Result<()> {
    if persona.dim() != corpus.num_reward_models() {
        return Err(Error::Shape(format!(
            "persona `{}` has B={}, corpus has B={}",
            persona.persona_id,
            persona.dim(),
            corpus.num_reward_models()
        )));
    }
    Ok(())
}

pub fn ensemble_reward(persona: &Persona, prompt_id: &str, response_index: usize, corpus: &Corpus) -> Result<f64> {
    check_dims(persona, corpus)?;
    let m = corpus.rewards(prompt_id)?;
    if response_index >= m.rows() {
        return Err(Error::NotFound {
            what: "response index",
            id: format!("{prompt_id}[{response_index}]"),
        });
    }
    Ok(mix(&persona.weights, m.row(response_index)))
}

/// Mixture scores of every response in `m`.
pub fn ensemble_rewards_for(weights: &[f64], m: &RewardMatrix) -> Vec<f64> {
    (0..m.rows()).map(|r| mix(weights, m.row(r))).collect()
}

/// Indices sorted by reward descending, ties by ascending index.
pub fn rank_by_reward(rewards: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rewards.len()).collect();
    idx.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    idx
}

/// `(winner, loser)` = first and last of [`rank_by_reward`], computed in one pass.
pub fn winner_loser(weights: &[f64], m: &RewardMatrix) -> (usize, usize) {
    let mut best = (0, f64::NEG_INFINITY);
    let mut worst = (0, f64::INFINITY);
    for r in 0..m.rows() {
        let s = mix(weights, m.row(r));
        if s > best.1 {
            best = (r, s);
        }
        if s <= worst.1 {
            worst = (r, s);
        }
    }
    (best.0, worst.0)
}

pub fn rank_responses(persona: &Persona, prompt_id: &str, corpus: &Corpus) -> Result<Vec<usize>> {
    check_dims(persona, corpus)?;
    let m = corpus.rewards(prompt_id)?;
    Ok(rank_by_reward(&ensemble_rewards_for(&persona.weights, m)))
}

pub fn pick_winner(persona: &Persona, prompt_id: &str, corpus: &Corpus) -> Result<usize> {
    check_dims(persona, corpus)?;
    Ok(winner_loser(&persona.weights, corpus.rewards(prompt_id)?).0)
}

pub fn pick_loser(persona: &Persona, prompt_id: &str, corpus: &Corpus) -> Result<usize> {
    check_dims(persona, corpus)?;
    Ok(winner_loser(&persona.weights, corpus.rewards(prompt_id)?).1)
}
