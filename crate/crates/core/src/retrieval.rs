//! User embeddings from preference feedback and exact cosine kNN.
//!
//! Neighbor lists are ordered by similarity descending, ties by ascending id,
//! so results never depend on database insertion order.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{response_key, Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::interactions::UserHistory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMethod {
    WinningMinusLosing,
    WinningOnly,
    LosingOnly,
}

impl EmbedMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbedMethod::WinningMinusLosing => "winning_minus_losing",
            EmbedMethod::WinningOnly => "winning_only",
            EmbedMethod::LosingOnly => "losing_only",
        }
    }
}

impl std::str::FromStr for EmbedMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "winning_minus_losing" => Ok(EmbedMethod::WinningMinusLosing),
            "winning_only" => Ok(EmbedMethod::WinningOnly),
            "losing_only" => Ok(EmbedMethod::LosingOnly),
            other => Err(Error::InvalidArgument(format!("unknown embedding method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserEmbedding {
    pub persona_id: String,
    pub vector: Vec<f64>,
    pub method: EmbedMethod,
    /// The mean vector is zero; such a user cannot be retrieved by cosine.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
    /// `k` exceeded the number of candidates; every candidate was returned.
    pub truncated: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
fn cosine_with_norms(u: &[f64], nu: f64, v: &[f64], nv: f64) -> f64 {
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of dims {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector("cosine similarity with a zero vector".into()));
    }
    Ok(cosine_with_norms(u, nu, v, nv))
}

fn by_similarity(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id))
}

fn top_k(query_id: &str, mut all: Vec<Neighbor>, k: usize) -> NeighborList {
    all.sort_by(by_similarity);
    let truncated = k > all.len();
    all.truncate(k);
    NeighborList {
        query_id: query_id.to_string(),
        neighbors: all,
        truncated,
    }
}

/// Mean over the history of the chosen response-embedding combination.
pub fn embed_user(
    history: &UserHistory,
    corpus: &Corpus,
    response_embeddings: &EmbeddingTable,
    method: EmbedMethod,
) -> Result<UserEmbedding> {
    if history.triplets.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cannot embed `{}` from an empty history",
            history.persona_id
        )));
    }
    let dim = response_embeddings.dim();
    let mut acc = vec![0.0; dim];
    for t in &history.triplets {
        let model = |i: usize| {
            corpus.model_ids().get(i).ok_or_else(|| Error::NotFound {
                what: "response index",
                id: format!("{}[{i}]", t.prompt_id),
            })
        };
        let win = response_embeddings.require(&response_key(&t.prompt_id, model(t.winner_index)?))?;
        let lose = response_embeddings.require(&response_key(&t.prompt_id, model(t.loser_index)?))?;
        for j in 0..dim {
            acc[j] += match method {
                EmbedMethod::WinningMinusLosing => win[j] - lose[j],
                EmbedMethod::WinningOnly => win[j],
                EmbedMethod::LosingOnly => lose[j],
            };
        }
    }
    let n = history.triplets.len() as f64;
    let vector: Vec<f64> = acc.into_iter().map(|x| x / n).collect();
    let degenerate = norm(&vector) == 0.0;
    Ok(UserEmbedding {
        persona_id: history.persona_id.clone(),
        vector,
        method,
        degenerate,
    })
}

/// [`embed_user`], replacing a degenerate embedding with the winning-only one.
pub fn embed_user_with_fallback(
    history: &UserHistory,
    corpus: &Corpus,
    response_embeddings: &EmbeddingTable,
    method: EmbedMethod,
) -> Result<UserEmbedding> {
    let e = embed_user(history, corpus, response_embeddings, method)?;
    if e.degenerate && method != EmbedMethod::WinningOnly {
        return embed_user(history, corpus, response_embeddings, EmbedMethod::WinningOnly);
    }
    Ok(e)
}

/// Exact top-`k` users by cosine. Degenerate (zero) database entries are skipped.
pub fn knn_users(query: &UserEmbedding, db: &[UserEmbedding], k: usize) -> Result<NeighborList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if db.is_empty() {
        return Err(Error::InvalidArgument("empty user database".into()));
    }
    let nq = norm(&query.vector);
    if nq == 0.0 {
        return Err(Error::ZeroVector(format!("query user `{}`", query.persona_id)));
    }
    let mut all = Vec::with_capacity(db.len());
    for u in db {
        if u.vector.len() != query.vector.len() {
            return Err(Error::Shape(format!(
                "user `{}` has dim {}, query has {}",
                u.persona_id,
                u.vector.len(),
                query.vector.len()
            )));
        }
        let nu = norm(&u.vector);
        if nu == 0.0 {
            continue;
        }
        all.push(Neighbor {
            id: u.persona_id.clone(),
            similarity: cosine_with_norms(&query.vector, nq, &u.vector, nu),
        });
    }
    Ok(top_k(&query.persona_id, all, k))
}

/// Exact top-`k` candidate prompts by cosine of prompt embeddings. Candidates
/// are deduplicated and the query prompt itself is excluded.
pub fn knn_prompts(
    query_prompt_id: &str,
    candidate_prompt_ids: &[String],
    prompt_embeddings: &EmbeddingTable,
    k: usize,
) -> Result<NeighborList> {
    let q = prompt_embeddings.require(query_prompt_id)?;
    let nq = norm(q);
    if nq == 0.0 {
        return Err(Error::ZeroVector(format!("prompt `{query_prompt_id}`")));
    }
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for id in candidate_prompt_ids {
        if id == query_prompt_id || !seen.insert(id.as_str()) {
            continue;
        }
        let v = prompt_embeddings.require(id)?;
        let nv = norm(v);
        if nv == 0.0 {
            continue;
        }
        all.push(Neighbor {
            id: id.clone(),
            similarity: cosine_with_norms(q, nq, v, nv),
        });
    }
    Ok(top_k(query_prompt_id, all, k))
}

/// User database with cached norms; built once, queried concurrently.
/// Returns exactly what [`knn_users`] returns over the same entries.
#[derive(Clone, Debug)]
pub struct UserIndex {
    method: EmbedMethod,
    entries: Vec<(String, Vec<f64>, f64)>,
}

impl UserIndex {
    pub fn build(db: &[UserEmbedding]) -> Result<Self> {
        let method = db
            .first()
            .map(|u| u.method)
            .ok_or_else(|| Error::InvalidArgument("empty user database".into()))?;
        let dim = db[0].vector.len();
        let mut entries = Vec::with_capacity(db.len());
        for u in db {
            if u.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "user `{}` has dim {}",
                    u.persona_id,
                    u.vector.len()
                )));
            }
            let n = norm(&u.vector);
            if n > 0.0 {
                entries.push((u.persona_id.clone(), u.vector.clone(), n));
            }
        }
        Ok(Self { method, entries })
    }

    pub fn method(&self) -> EmbedMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn query(&self, query: &UserEmbedding, k: usize) -> Result<NeighborList> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let nq = norm(&query.vector);
        if nq == 0.0 {
            return Err(Error::ZeroVector(format!("query user `{}`", query.persona_id)));
        }
        let all = self
            .entries
            .iter()
            .map(|(id, v, n)| Neighbor {
                id: id.clone(),
                similarity: cosine_with_norms(&query.vector, nq, v, *n),
            })
            .collect();
        Ok(top_k(&query.persona_id, all, k))
    }
}

/// Writes `user_embeddings.csv` (`persona_id,method,v0,...`).
pub fn write_user_embeddings(path: &Path, users: &[UserEmbedding]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = users.first().map_or(0, |u| u.vector.len());
    let mut header = vec!["persona_id".to_string(), "method".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for u in users {
        let mut row = vec![u.persona_id.clone(), u.method.as_str().to_string()];
        row.extend(u.vector.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
