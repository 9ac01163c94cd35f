//! Simulated interaction histories: the historical user database and the
//! test users' relevant or random histories.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_line, read_lines, Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::persona::{self, Persona, Population};
use crate::retrieval;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTriplet {
    pub prompt_id: String,
    pub winner_index: usize,
    pub loser_index: usize,
    pub winner_reward: f64,
    pub loser_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub persona_id: String,
    pub triplets: Vec<InteractionTriplet>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryKind {
    Relevant,
    Random,
}

impl HistoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HistoryKind::Relevant => "relevant",
            HistoryKind::Random => "random",
        }
    }
}

/// One test user with their test prompt and prior history. The case id is
/// the persona id (each test user has exactly one test prompt).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub persona_id: String,
    pub test_prompt_id: String,
    pub history: UserHistory,
    pub history_kind: HistoryKind,
}

impl TestCase {
    pub fn id(&self) -> &str {
        &self.persona_id
    }
}

/// The persona's winner/loser triplet for one prompt.
pub fn triplet(persona: &Persona, corpus: &Corpus, prompt_id: &str) -> Result<InteractionTriplet> {
    let m = corpus.rewards(prompt_id)?;
    if m.cols() != persona.dim() {
        return Err(Error::Shape(format!(
            "persona `{}` has B={}, corpus has B={}",
            persona.persona_id,
            persona.dim(),
            m.cols()
        )));
    }
    let (w, l) = persona::winner_loser(&persona.weights, m);
    Ok(InteractionTriplet {
        prompt_id: prompt_id.to_string(),
        winner_index: w,
        loser_index: l,
        winner_reward: persona::mix(&persona.weights, m.row(w)),
        loser_reward: persona::mix(&persona.weights, m.row(l)),
    })
}

/// First `m` positions of a seeded Fisher-Yates shuffle of `0..n`.
pub fn sample_without_replacement<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for j in 0..m.min(n) {
        let r = rng.gen_range(j..n);
        idx.swap(j, r);
    }
    idx.truncate(m.min(n));
    idx
}

/// Each user draws `m` distinct train prompts from their own sub-seeded stream.
pub fn build_historical_db(
    population: &Population,
    corpus: &Corpus,
    train_ids: &[String],
    m: usize,
    seed: u64,
) -> Result<Vec<UserHistory>> {
    if m > train_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {m} prompts from a split of {}",
            train_ids.len()
        )));
    }
    let stream_seed = rng::tagged_seed(seed, "history");
    population
        .personas
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = rng::stream(stream_seed, i as u64);
            let triplets = sample_without_replacement(train_ids.len(), m, &mut r)
                .into_iter()
                .map(|j| triplet(p, corpus, &train_ids[j]))
                .collect::<Result<Vec<_>>>()?;
            Ok(UserHistory {
                persona_id: p.persona_id.clone(),
                triplets,
            })
        })
        .collect()
}

/// A random bijection when there are as many users as prompts, otherwise
/// uniform draws with replacement. Returned in population order.
pub fn assign_test_prompts(population: &Population, test_ids: &[String], seed: u64) -> Result<Vec<(String, String)>> {
    if test_ids.is_empty() {
        return Err(Error::InvalidArgument("test split is empty".into()));
    }
    let stream_seed = rng::tagged_seed(seed, "assign");
    let n = population.len();
    let picks: Vec<usize> = if n == test_ids.len() {
        let mut r = rng::stream(stream_seed, 0);
        sample_without_replacement(n, n, &mut r)
    } else {
        (0..n)
            .map(|i| rng::stream(stream_seed, i as u64).gen_range(0..test_ids.len()))
            .collect()
    };
    Ok(population
        .personas
        .iter()
        .zip(picks)
        .map(|(p, j)| (p.persona_id.clone(), test_ids[j].clone()))
        .collect())
}

/// History = the `k` pool prompts most cosine-similar to the test prompt.
pub fn build_test_cases_relevant(
    population: &Population,
    corpus: &Corpus,
    prompt_embeddings: &EmbeddingTable,
    assignments: &[(String, String)],
    pool: &[String],
    k: usize,
) -> Result<Vec<TestCase>> {
    assignments
        .par_iter()
        .map(|(pid, test_prompt)| {
            let persona = population.get(pid)?;
            corpus.prompt_index(test_prompt)?;
            let ids: Vec<String> = if k == 0 {
                Vec::new()
            } else {
                retrieval::knn_prompts(test_prompt, pool, prompt_embeddings, k)?
                    .neighbors
                    .into_iter()
                    .map(|n| n.id)
                    .collect()
            };
            let triplets = ids
                .iter()
                .map(|id| triplet(persona, corpus, id))
                .collect::<Result<Vec<_>>>()?;
            Ok(TestCase {
                persona_id: pid.clone(),
                test_prompt_id: test_prompt.clone(),
                history: UserHistory {
                    persona_id: pid.clone(),
                    triplets,
                },
                history_kind: HistoryKind::Relevant,
            })
        })
        .collect()
}

/// History = `k` pool prompts drawn uniformly without replacement, excluding
/// the test prompt.
pub fn build_test_cases_random(
    population: &Population,
    corpus: &Corpus,
    assignments: &[(String, String)],
    pool: &[String],
    k: usize,
    seed: u64,
) -> Result<Vec<TestCase>> {
    let stream_seed = rng::tagged_seed(seed, "random-history");
    assignments
        .par_iter()
        .enumerate()
        .map(|(i, (pid, test_prompt))| {
            let persona = population.get(pid)?;
            corpus.prompt_index(test_prompt)?;
            let mut seen = HashSet::new();
            let eligible: Vec<&String> = pool
                .iter()
                .filter(|id| *id != test_prompt && seen.insert(id.as_str()))
                .collect();
            if k > eligible.len() {
                return Err(Error::InvalidArgument(format!(
                    "cannot draw {k} history prompts from {} eligible",
                    eligible.len()
                )));
            }
            let mut r = rng::stream(stream_seed, i as u64);
            let triplets = sample_without_replacement(eligible.len(), k, &mut r)
                .into_iter()
                .map(|j| triplet(persona, corpus, eligible[j]))
                .collect::<Result<Vec<_>>>()?;
            Ok(TestCase {
                persona_id: pid.clone(),
                test_prompt_id: test_prompt.clone(),
                history: UserHistory {
                    persona_id: pid.clone(),
                    triplets,
                },
                history_kind: HistoryKind::Random,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletLine {
    prompt_id: String,
    winner_model: String,
    loser_model: String,
    winner_reward: f64,
    loser_reward: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryLine {
    persona_id: String,
    triplets: Vec<TripletLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    test_prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    history_kind: Option<HistoryKind>,
}

fn to_line(h: &UserHistory, corpus: &Corpus) -> HistoryLine {
    HistoryLine {
        persona_id: h.persona_id.clone(),
        triplets: h
            .triplets
            .iter()
            .map(|t| TripletLine {
                prompt_id: t.prompt_id.clone(),
                winner_model: corpus.model_ids()[t.winner_index].clone(),
                loser_model: corpus.model_ids()[t.loser_index].clone(),
                winner_reward: t.winner_reward,
                loser_reward: t.loser_reward,
            })
            .collect(),
        test_prompt_id: None,
        history_kind: None,
    }
}

fn from_line(line: HistoryLine, corpus: &Corpus) -> Result<UserHistory> {
    let triplets = line
        .triplets
        .into_iter()
        .map(|t| {
            corpus.prompt_index(&t.prompt_id)?;
            Ok(InteractionTriplet {
                winner_index: corpus.model_index(&t.winner_model)?,
                loser_index: corpus.model_index(&t.loser_model)?,
                prompt_id: t.prompt_id,
                winner_reward: t.winner_reward,
                loser_reward: t.loser_reward,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UserHistory {
        persona_id: line.persona_id,
        triplets,
    })
}

fn write_lines(path: &Path, lines: &[HistoryLine]) -> Result<()> {
    let mut out = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut out, l)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// `histories.jsonl`: one user per line, responses named by model id.
pub fn write_histories(path: &Path, histories: &[UserHistory], corpus: &Corpus) -> Result<()> {
    let lines: Vec<HistoryLine> = histories.iter().map(|h| to_line(h, corpus)).collect();
    write_lines(path, &lines)
}

pub fn read_histories(path: &Path, corpus: &Corpus) -> Result<Vec<UserHistory>> {
    let (_, lines) = read_lines(path)?;
    lines
        .iter()
        .map(|(n, l)| {
            let rec: HistoryLine = parse_line(path, *n, l)?;
            from_line(rec, corpus).map_err(|e| Error::schema(path, *n, e.to_string()))
        })
        .collect()
}

/// `testcases.jsonl`: history lines plus `test_prompt_id` and `history_kind`.
pub fn write_test_cases(path: &Path, cases: &[TestCase], corpus: &Corpus) -> Result<()> {
    let lines: Vec<HistoryLine> = cases
        .iter()
        .map(|c| HistoryLine {
            test_prompt_id: Some(c.test_prompt_id.clone()),
            history_kind: Some(c.history_kind),
            ..to_line(&c.history, corpus)
        })
        .collect();
    write_lines(path, &lines)
}

pub fn read_test_cases(path: &Path, corpus: &Corpus) -> Result<Vec<TestCase>> {
    let (_, lines) = read_lines(path)?;
    lines
        .iter()
        .map(|(n, l)| {
            let mut rec: HistoryLine = parse_line(path, *n, l)?;
            let test_prompt_id = rec
                .test_prompt_id
                .take()
                .ok_or_else(|| Error::schema(path, *n, "missing test_prompt_id"))?;
            let history_kind = rec
                .history_kind
                .take()
                .ok_or_else(|| Error::schema(path, *n, "missing history_kind"))?;
            let history = from_line(rec, corpus).map_err(|e| Error::schema(path, *n, e.to_string()))?;
            Ok(TestCase {
                persona_id: history.persona_id.clone(),
                test_prompt_id,
                history,
                history_kind,
            })
        })
        .collect()
}
