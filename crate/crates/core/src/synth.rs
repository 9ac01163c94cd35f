//! Synthetic corpora and worlds with known structure.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::corpus::{response_key, Corpus, EmbeddingTable, PromptRecord, RewardMatrix, SplitSpec};
use crate::error::{Error, Result};
use crate::persona::{self, Persona, Population};
use crate::rng;

fn prompt_id(i: usize) -> String {
    format!("p{i:05}")
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Independent standard-normal scores for `p` prompts, `l` responses and
/// `b` reward models.
pub fn normal_corpus(p: usize, l: usize, b: usize, seed: u64) -> Result<Corpus> {
    let prompts = (0..p)
        .map(|i| PromptRecord {
            prompt_id: prompt_id(i),
            text: format!("synthetic prompt {i}"),
            source: "synthetic".into(),
        })
        .collect();
    let responses = (0..p)
        .map(|i| (0..l).map(|m| format!("response {m} to prompt {i}")).collect())
        .collect();
    let rewards = (0..p)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let data = (0..l * b).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            RewardMatrix::new(l, b, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::from_parts(prompts, names("gen", l), names("rm", b), responses, rewards)
}

/// A prompt/response corpus with embeddings and a split, ready to be
/// written to disk.
pub struct Dataset {
    pub corpus: Corpus,
    pub prompt_embeddings: EmbeddingTable,
    pub response_embeddings: EmbeddingTable,
    pub splits: SplitSpec,
}

fn random_unit<R: Rng>(dim: usize, r: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Normal scores plus random unit embeddings; the first `train` prompts form
/// the train split and the rest the test split.
pub fn random_dataset(p: usize, l: usize, b: usize, dim: usize, train: usize, seed: u64) -> Result<Dataset> {
    if train > p {
        return Err(Error::InvalidArgument(format!(
            "train size {train} exceeds {p} prompts"
        )));
    }
    let corpus = normal_corpus(p, l, b, seed)?;
    let mut prompt_embeddings = EmbeddingTable::new(dim)?;
    let mut response_embeddings = EmbeddingTable::new(dim)?;
    let emb_seed = rng::tagged_seed(seed, "embeddings");
    for (i, pr) in corpus.prompts().iter().enumerate() {
        let mut r = rng::stream(emb_seed, i as u64);
        prompt_embeddings.insert(pr.prompt_id.clone(), random_unit(dim, &mut r))?;
        for m in corpus.model_ids() {
            response_embeddings.insert(response_key(&pr.prompt_id, m), random_unit(dim, &mut r))?;
        }
    }
    let ids: Vec<String> = corpus.prompts().iter().map(|p| p.prompt_id.clone()).collect();
    let splits = SplitSpec {
        train_ids: ids[..train].to_vec(),
        test_ids: ids[train..].to_vec(),
    };
    Ok(Dataset {
        corpus,
        prompt_embeddings,
        response_embeddings,
        splits,
    })
}

/// Two user archetypes over a corpus whose responses come in two styles.
///
/// Response 0 of every prompt is written in style A and response 1 in style
/// B; the remaining responses are neutral. Reward model 0 ranks style A
/// first and style B last, reward model 1 the reverse. Style A responses
/// embed near `e0`, style B near `e1`, neutral ones near `e2..`, each with
/// noise of norm at most 0.1.
pub struct ArchetypeWorld {
    pub dataset: Dataset,
    pub population: Population,
    /// Archetype (0 or 1) of every persona.
    pub archetype: HashMap<String, usize>,
}

pub fn archetype_world(p: usize, l: usize, n_users: usize, dim: usize, seed: u64) -> Result<ArchetypeWorld> {
    if l < 3 || dim < l {
        return Err(Error::InvalidArgument(
            "archetype world needs l >= 3 and dim >= l".into(),
        ));
    }
    let mut rewards = Vec::with_capacity(p);
    let mut prompt_embeddings = EmbeddingTable::new(dim)?;
    let mut response_embeddings = EmbeddingTable::new(dim)?;
    let models = names("gen", l);
    let mut prompts = Vec::with_capacity(p);
    let mut responses = Vec::with_capacity(p);
    for i in 0..p {
        let mut r = rng::stream(seed, i as u64);
        let id = prompt_id(i);
        // Neutral responses score strictly between the two styled ones.
        let mut data = vec![0.0; l * 2];
        data[0] = 2.0 + r.gen::<f64>();
        data[1] = -2.0 - r.gen::<f64>();
        data[2] = -2.0 - r.gen::<f64>();
        data[3] = 2.0 + r.gen::<f64>();
        for m in 2..l {
            data[m * 2] = r.gen_range(-1.0..1.0);
            data[m * 2 + 1] = r.gen_range(-1.0..1.0);
        }
        rewards.push(RewardMatrix::new(l, 2, data)?);
        prompt_embeddings.insert(id.clone(), random_unit(dim, &mut r))?;
        for (m, model) in models.iter().enumerate() {
            let noise = random_unit(dim, &mut r);
            let scale = 0.1 * r.gen::<f64>();
            let v = (0..dim)
                .map(|j| if j == m { 1.0 } else { 0.0 } + scale * noise[j])
                .collect();
            response_embeddings.insert(response_key(&id, model), v)?;
        }
        prompts.push(PromptRecord {
            prompt_id: id,
            text: format!("archetype prompt {i}"),
            source: "synthetic".into(),
        });
        responses.push((0..l).map(|m| format!("style {m} answer to prompt {i}")).collect());
    }
    let corpus = Corpus::from_parts(prompts, models, names("rm", 2), responses, rewards)?;
    let mut archetype = HashMap::new();
    let personas = (0..n_users)
        .map(|u| {
            let id = persona::persona_id("hist", u);
            let a = u % 2;
            archetype.insert(id.clone(), a);
            Persona::one_hot(id, a, 2)
        })
        .collect::<Result<Vec<_>>>()?;
    let population = Population::from_personas(personas, 0.0, seed)?.with_reward_models(names("rm", 2))?;
    let ids: Vec<String> = corpus.prompts().iter().map(|p| p.prompt_id.clone()).collect();
    let half = p / 2;
    Ok(ArchetypeWorld {
        dataset: Dataset {
            corpus,
            prompt_embeddings,
            response_embeddings,
            splits: SplitSpec {
                train_ids: ids[..half].to_vec(),
                test_ids: ids[half..].to_vec(),
            },
        },
        population,
        archetype,
    })
}

fn write_jsonl(path: &Path, lines: impl IntoIterator<Item = serde_json::Value>) -> Result<()> {
    let mut out = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut out, &l)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Writes the corpus files plus `prompt_embeddings.csv`,
/// `response_embeddings.csv` and `splits.json` into `dir`.
pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_corpus(dir, &d.corpus)?;
    d.prompt_embeddings.write_csv(&dir.join("prompt_embeddings.csv"))?;
    d.response_embeddings.write_csv(&dir.join("response_embeddings.csv"))?;
    let splits = dir.join("splits.json");
    fs::write(&splits, serde_json::to_string_pretty(&d.splits)? + "\n").map_err(|e| Error::io(&splits, e))
}

/// Writes `prompts.jsonl`, `responses.jsonl` and `rewards.jsonl`.
pub fn write_corpus(dir: &Path, c: &Corpus) -> Result<()> {
    write_jsonl(
        &dir.join("prompts.jsonl"),
        c.prompts()
            .iter()
            .map(|p| json!({"prompt_id": p.prompt_id, "prompt": p.text, "source": p.source})),
    )?;
    let mut responses = Vec::new();
    let mut rewards = vec![json!({"reward_models": c.reward_models()})];
    for (i, p) in c.prompts().iter().enumerate() {
        for (m, model) in c.model_ids().iter().enumerate() {
            responses.push(json!({"prompt_id": p.prompt_id, "model_id": model, "text": c.responses_at(i)[m]}));
            rewards.push(json!({"prompt_id": p.prompt_id, "model_id": model, "scores": c.rewards_at(i).row(m)}));
        }
    }
    write_jsonl(&dir.join("responses.jsonl"), responses)?;
    write_jsonl(&dir.join("rewards.jsonl"), rewards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus_dir;

    #[test]
    fn corpus_round_trips_through_disk() {
        let c = normal_corpus(5, 3, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &c).unwrap();
        let back = load_corpus_dir(dir.path()).unwrap();
        for i in 0..5 {
            assert_eq!(back.rewards_at(i), c.rewards_at(i));
        }
        assert_eq!(back.model_ids(), c.model_ids());
    }

    #[test]
    fn archetype_rankings_follow_styles() {
        let w = archetype_world(6, 4, 4, 6, 3).unwrap();
        for (id, &a) in &w.archetype {
            let persona = w.population.get(id).unwrap();
            for p in w.dataset.corpus.prompts() {
                let c = &w.dataset.corpus;
                assert_eq!(persona::pick_winner(persona, &p.prompt_id, c).unwrap(), a);
                assert_eq!(persona::pick_loser(persona, &p.prompt_id, c).unwrap(), 1 - a);
            }
        }
    }
}
