mod common;

use std::collections::HashSet;

use prefsim::corpus::{self, EmbeddingTable};
use prefsim::interactions::{self, HistoryKind};
use prefsim::persona::{self, Persona, Population};
use prefsim::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn toy_embeddings() -> EmbeddingTable {
    corpus::load_embeddings(&common::toy_dir().join("prompt_embeddings.csv")).unwrap()
}

#[test]
fn single_prompt_split_gives_everyone_that_prompt() {
    let c = common::toy();
    let pop = persona::sample_population(2, 20, 0.5, 1).unwrap();
    let db = interactions::build_historical_db(&pop, &c, &ids(&["p1"]), 1, 3).unwrap();
    assert_eq!(db.len(), 20);
    for (h, p) in db.iter().zip(&pop.personas) {
        assert_eq!(h.persona_id, p.persona_id);
        assert_eq!(h.triplets.len(), 1);
        let t = &h.triplets[0];
        assert_eq!(t.prompt_id, "p1");
        assert_eq!(t.winner_index, persona::pick_winner(p, "p1", &c).unwrap());
        assert_eq!(t.loser_index, persona::pick_loser(p, "p1", &c).unwrap());
    }
    assert!(interactions::build_historical_db(&pop, &c, &ids(&["p1"]), 2, 3).is_err());
}

#[test]
fn toy_triplets_match_enumeration() {
    let c = common::toy();
    let pop = persona::sample_population(2, 50, 0.3, 2).unwrap();
    let db = interactions::build_historical_db(&pop, &c, &ids(&["p1", "p2"]), 2, 9).unwrap();
    for (h, p) in db.iter().zip(&pop.personas) {
        let seen: HashSet<&str> = h.triplets.iter().map(|t| t.prompt_id.as_str()).collect();
        assert_eq!(seen.len(), 2);
        for t in &h.triplets {
            let m = c.rewards(&t.prompt_id).unwrap();
            let vals: Vec<f64> = (0..3).map(|r| common::dot(&p.weights, m.row(r))).collect();
            let order = common::oracle_ranking(&vals);
            assert_eq!(t.winner_index, order[0]);
            assert_eq!(t.loser_index, order[2]);
            assert_eq!(t.winner_reward, vals[order[0]]);
            assert_eq!(t.loser_reward, vals[order[2]]);
            assert!(t.winner_reward >= t.loser_reward);
            assert_ne!(t.winner_index, t.loser_index);
        }
    }
}

#[test]
fn history_construction_is_deterministic() {
    let d = synth::random_dataset(30, 4, 3, 5, 20, 1).unwrap();
    let pop = persona::sample_population(3, 40, 0.1, 2).unwrap();
    let a = interactions::build_historical_db(&pop, &d.corpus, &d.splits.train_ids, 7, 5).unwrap();
    let b = interactions::build_historical_db(&pop, &d.corpus, &d.splits.train_ids, 7, 5).unwrap();
    assert_eq!(a, b);
    let c = interactions::build_historical_db(&pop, &d.corpus, &d.splits.train_ids, 7, 6).unwrap();
    assert_ne!(a, c);
}

#[test]
fn assignment_shapes() {
    let pop = persona::sample_population(2, 1000, 0.05, 1).unwrap();
    let test: Vec<String> = (0..1000).map(|i| format!("t{i}")).collect();
    let a = interactions::assign_test_prompts(&pop, &test, 4).unwrap();
    let used: HashSet<&str> = a.iter().map(|(_, t)| t.as_str()).collect();
    assert_eq!(used.len(), 1000);
    assert!(a.iter().zip(&pop.personas).all(|((u, _), p)| *u == p.persona_id));

    let one = Population::from_personas(vec![Persona::one_hot("u", 0, 2).unwrap()], 1.0, 0).unwrap();
    assert_eq!(
        interactions::assign_test_prompts(&one, &ids(&["x"]), 1).unwrap(),
        [("u".to_string(), "x".to_string())]
    );

    let three = persona::sample_population(2, 3, 1.0, 1).unwrap();
    let a = interactions::assign_test_prompts(&three, &ids(&["x", "y"]), 1).unwrap();
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|(_, t)| t == "x" || t == "y"));
    assert!(interactions::assign_test_prompts(&three, &[], 1).is_err());
}

#[test]
fn relevant_k0_is_empty() {
    let c = common::toy();
    let pop = persona::sample_population(2, 3, 1.0, 1).unwrap();
    let a = interactions::assign_test_prompts(&pop, &ids(&["p2"]), 1).unwrap();
    let cases =
        interactions::build_test_cases_relevant(&pop, &c, &toy_embeddings(), &a, &ids(&["p1", "p2"]), 0).unwrap();
    assert!(cases.iter().all(|tc| tc.history.triplets.is_empty()));
    assert!(cases.iter().all(|tc| tc.history_kind == HistoryKind::Relevant));
}

#[test]
fn relevant_neighbors_match_exhaustive_cosine() {
    let d = synth::random_dataset(10, 3, 2, 4, 0, 8).unwrap();
    let pool = d.splits.test_ids.clone();
    let pop = persona::sample_population(2, 10, 0.5, 3).unwrap();
    let a = interactions::assign_test_prompts(&pop, &pool, 2).unwrap();
    let k = 4;
    let cases = interactions::build_test_cases_relevant(&pop, &d.corpus, &d.prompt_embeddings, &a, &pool, k).unwrap();
    for tc in &cases {
        let q = d.prompt_embeddings.get(&tc.test_prompt_id).unwrap();
        let mut ranked: Vec<(String, f64)> = pool
            .iter()
            .filter(|id| **id != tc.test_prompt_id)
            .map(|id| {
                (
                    id.clone(),
                    common::oracle_cosine(q, d.prompt_embeddings.get(id).unwrap()),
                )
            })
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got: Vec<&str> = tc.history.triplets.iter().map(|t| t.prompt_id.as_str()).collect();
        let expect: Vec<&str> = ranked[..k].iter().map(|r| r.0.as_str()).collect();
        assert_eq!(got, expect);
        // every kept prompt is at least as similar as every excluded one
        let worst_kept = ranked[k - 1].1;
        assert!(ranked[k..].iter().all(|r| r.1 <= worst_kept));
        assert!(!got.contains(&tc.test_prompt_id.as_str()));
    }
}

#[test]
fn missing_prompt_embedding_errors() {
    let c = common::toy();
    let pop = persona::sample_population(2, 1, 1.0, 1).unwrap();
    let a = interactions::assign_test_prompts(&pop, &ids(&["p2"]), 1).unwrap();
    let empty = EmbeddingTable::new(3).unwrap();
    assert!(interactions::build_test_cases_relevant(&pop, &c, &empty, &a, &ids(&["p1"]), 1).is_err());
}

#[test]
fn random_histories_cover_split_and_are_seeded() {
    let d = synth::random_dataset(8, 3, 2, 4, 0, 2).unwrap();
    let pool = d.splits.test_ids.clone();
    let pop = persona::sample_population(2, 5, 0.5, 1).unwrap();
    let a = interactions::assign_test_prompts(&pop, &pool, 3).unwrap();
    let full = interactions::build_test_cases_random(&pop, &d.corpus, &a, &pool, 7, 1).unwrap();
    for tc in &full {
        let got: HashSet<&str> = tc.history.triplets.iter().map(|t| t.prompt_id.as_str()).collect();
        let expect: HashSet<&str> = pool
            .iter()
            .map(String::as_str)
            .filter(|p| *p != tc.test_prompt_id)
            .collect();
        assert_eq!(got, expect);
        assert_eq!(tc.history_kind, HistoryKind::Random);
    }
    let x = interactions::build_test_cases_random(&pop, &d.corpus, &a, &pool, 3, 9).unwrap();
    let y = interactions::build_test_cases_random(&pop, &d.corpus, &a, &pool, 3, 9).unwrap();
    assert_eq!(x, y);
    assert!(interactions::build_test_cases_random(&pop, &d.corpus, &a, &pool, 8, 1).is_err());
}

#[test]
fn random_single_draws_are_uniform() {
    let d = synth::random_dataset(6, 2, 1, 2, 0, 4).unwrap();
    let pool = d.splits.test_ids.clone();
    let n = 10_000;
    let pop = persona::sample_population(1, n, 1.0, 1).unwrap();
    let test = pool[0].clone();
    let a: Vec<(String, String)> = pop
        .personas
        .iter()
        .map(|p| (p.persona_id.clone(), test.clone()))
        .collect();
    let cases = interactions::build_test_cases_random(&pop, &d.corpus, &a, &pool, 1, 11).unwrap();
    let mut counts = std::collections::HashMap::new();
    for tc in &cases {
        *counts.entry(tc.history.triplets[0].prompt_id.clone()).or_insert(0usize) += 1;
    }
    let eligible = pool.len() - 1;
    assert_eq!(counts.len(), eligible);
    let p = 1.0 / eligible as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (_, c) in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma);
    }
}

#[test]
fn jsonl_round_trip() {
    let d = synth::random_dataset(12, 3, 2, 4, 6, 3).unwrap();
    let pop = persona::sample_population(2, 4, 0.5, 1).unwrap();
    let db = interactions::build_historical_db(&pop, &d.corpus, &d.splits.train_ids, 3, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("histories.jsonl");
    interactions::write_histories(&p, &db, &d.corpus).unwrap();
    assert_eq!(interactions::read_histories(&p, &d.corpus).unwrap(), db);
    let line = std::fs::read_to_string(&p).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert!(first["triplets"][0]["winner_model"]
        .as_str()
        .unwrap()
        .starts_with("gen"));

    let a = interactions::assign_test_prompts(&pop, &d.splits.test_ids, 5).unwrap();
    let cases = interactions::build_test_cases_random(&pop, &d.corpus, &a, &d.splits.test_ids, 2, 4).unwrap();
    let tp = dir.path().join("testcases.jsonl");
    interactions::write_test_cases(&tp, &cases, &d.corpus).unwrap();
    assert_eq!(interactions::read_test_cases(&tp, &d.corpus).unwrap(), cases);
}

#[test]
fn triplet_rewards_rescore() {
    let d = synth::random_dataset(20, 5, 3, 4, 20, 6).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let pop = persona::sample_population(3, 30, r.gen_range(0.05..2.0), 3).unwrap();
    let db = interactions::build_historical_db(&pop, &d.corpus, &d.splits.train_ids, 10, 1).unwrap();
    for (h, p) in db.iter().zip(&pop.personas) {
        for t in &h.triplets {
            let w = persona::ensemble_reward(p, &t.prompt_id, t.winner_index, &d.corpus).unwrap();
            let l = persona::ensemble_reward(p, &t.prompt_id, t.loser_index, &d.corpus).unwrap();
            assert_eq!((w, l), (t.winner_reward, t.loser_reward));
            assert!(w >= l);
        }
    }
}
