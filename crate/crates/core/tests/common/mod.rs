#![allow(dead_code)]

use std::path::PathBuf;

use prefsim::corpus::{self, Corpus};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

pub fn toy_dir() -> PathBuf {
    fixture("fixtures/toy")
}

pub fn toy() -> Corpus {
    corpus::load_corpus_dir(&toy_dir()).unwrap()
}

/// Sample mean and `n - 1` standard deviation, two-pass.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Exhaustive descending sort with ties to the lower index.
pub fn oracle_ranking(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    idx
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Z-scores columns with the sample std, dropping constant ones.
pub fn oracle_standardize(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = rows[0].len();
    let mut kept = Vec::new();
    let mut cols = Vec::new();
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (m, s) = mean_std(&col);
        if s > 1e-12 {
            kept.push(j);
            cols.push(col.iter().map(|x| (x - m) / s).collect::<Vec<f64>>());
        }
    }
    let scaled = (0..rows.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    (scaled, kept)
}

/// Plain full-batch gradient descent on
/// `sum_i [log(1 + e^{z_i}) - y_i z_i] + (l2 / 2) |w|^2`, intercept last.
pub fn oracle_logistic_gd(x: &[Vec<f64>], y: &[f64], l2: f64) -> Vec<f64> {
    let d = x[0].len();
    let frob: f64 = x.iter().map(|r| dot(r, r) + 1.0).sum();
    let step = 1.0 / (0.25 * frob + l2);
    let mut theta = vec![0.0; d + 1];
    for _ in 0..2_000_000 {
        let mut g = vec![0.0; d + 1];
        for (r, &yi) in x.iter().zip(y) {
            let z = dot(r, &theta[..d]) + theta[d];
            let p = 1.0 / (1.0 + (-z).exp());
            for j in 0..d {
                g[j] += (p - yi) * r[j];
            }
            g[d] += p - yi;
        }
        for j in 0..d {
            g[j] += l2 * theta[j];
        }
        if g.iter().all(|v| v.abs() < 1e-11) {
            break;
        }
        for j in 0..=d {
            theta[j] -= step * g[j];
        }
    }
    theta
}

/// Text of `n` filler tokens that are neither stopwords, adjectives nor
/// adverbs, with word lengths drawn from `rng`.
pub fn filler_text<R: rand::Rng>(n: usize, rng: &mut R) -> String {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..9);
            (0..len)
                .map(|_| (b'q' + rng.gen_range(0..4u8)) as char)
                .collect::<String>()
                + "x"
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Winner/loser pairs over `n` prompts where the winner is the response with
/// more tokens, together with the syntactic features of both responses.
pub fn longer_wins_fixture(
    n: usize,
    seed: u64,
) -> (
    Vec<prefsim::diversity::regression::LabeledPair>,
    prefsim::diversity::features::FeatureTable,
) {
    use prefsim::diversity::features::{extract_syntactic_features, FeatureKind, FeatureTable, SYNTACTIC_FEATURES};
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut table = FeatureTable::new(
        SYNTACTIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        FeatureKind::Syntactic,
    );
    let mut pairs = Vec::new();
    for i in 0..n {
        let pid = format!("q{i}");
        let la = r.gen_range(5..60);
        let mut lb = r.gen_range(5..60);
        while lb == la {
            lb = r.gen_range(5..60);
        }
        let a = filler_text(la, &mut r);
        let b = filler_text(lb, &mut r);
        table
            .insert(&pid, "a", extract_syntactic_features(&a).to_vec())
            .unwrap();
        table
            .insert(&pid, "b", extract_syntactic_features(&b).to_vec())
            .unwrap();
        let (w, l) = if la > lb { ("a", "b") } else { ("b", "a") };
        pairs.push(prefsim::diversity::regression::LabeledPair {
            prompt_id: pid,
            winner_model: w.into(),
            loser_model: l.into(),
        });
    }
    (pairs, table)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Optimal transport cost between two distributions over `K` equally spaced
/// points on `[0, 1]` whose masses are `counts / n`: split each into `n` unit
/// atoms and try every pairing.
pub fn oracle_transport(p_counts: &[usize], q_counts: &[usize]) -> f64 {
    let k = p_counts.len();
    let atoms = |c: &[usize]| -> Vec<f64> {
        c.iter()
            .enumerate()
            .flat_map(|(j, &m)| std::iter::repeat(j as f64 / (k - 1) as f64).take(m))
            .collect()
    };
    let a = atoms(p_counts);
    let b = atoms(q_counts);
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    permutations(a.len())
        .iter()
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum::<f64>() / n)
        .fold(f64::INFINITY, f64::min)
}

/// Mean fraction of same-archetype users among each historical user's
/// `k` nearest other users, embedding with `method`.
pub fn archetype_precision(
    n_users: usize,
    m: usize,
    k: usize,
    method: prefsim::retrieval::EmbedMethod,
    seed: u64,
) -> f64 {
    use prefsim::{interactions, retrieval, synth};
    let w = synth::archetype_world(40, 8, n_users, 8, seed).unwrap();
    let d = &w.dataset;
    let hist = interactions::build_historical_db(&w.population, &d.corpus, &d.splits.train_ids, m, seed).unwrap();
    let emb: Vec<_> = hist
        .iter()
        .map(|h| retrieval::embed_user(h, &d.corpus, &d.response_embeddings, method).unwrap())
        .collect();
    let mut total = 0.0;
    for q in &emb {
        let nl = retrieval::knn_users(q, &emb, k + 1).unwrap();
        let others: Vec<_> = nl.neighbors.iter().filter(|n| n.id != q.persona_id).take(k).collect();
        let same = others
            .iter()
            .filter(|n| w.archetype[&n.id] == w.archetype[&q.persona_id])
            .count();
        total += same as f64 / others.len() as f64;
    }
    total / emb.len() as f64
}

/// Corpus holding the two example interactions used by the template golden
/// files plus the test prompt, and a test case over it.
pub fn golden_case() -> (Corpus, prefsim::interactions::TestCase) {
    use prefsim::corpus::{PromptRecord, RewardMatrix};
    use prefsim::interactions::{HistoryKind, InteractionTriplet, TestCase, UserHistory};
    let rows = [
        (
            "g1",
            "What is a good name for a cat?",
            "Whiskers, after the obvious.",
            "Dog.",
        ),
        (
            "g2",
            "Write a haiku about rain",
            "Soft rain on the roof\nwhispers to the sleeping town\npuddles hold the sky",
            "Rain is wet.",
        ),
        ("g3", "Suggest a weekend hobby.", "Hiking.", "Sleeping."),
    ];
    let prompts = rows
        .iter()
        .map(|r| PromptRecord {
            prompt_id: r.0.into(),
            text: r.1.into(),
            source: "golden".into(),
        })
        .collect();
    let responses = rows.iter().map(|r| vec![r.2.to_string(), r.3.to_string()]).collect();
    let rewards = rows
        .iter()
        .map(|_| RewardMatrix::new(2, 1, vec![1.0, 0.0]).unwrap())
        .collect();
    let corpus = Corpus::from_parts(
        prompts,
        vec!["w".into(), "l".into()],
        vec!["rm".into()],
        responses,
        rewards,
    )
    .unwrap();
    let t = |p: &str| InteractionTriplet {
        prompt_id: p.into(),
        winner_index: 0,
        loser_index: 1,
        winner_reward: 1.0,
        loser_reward: 0.0,
    };
    let case = TestCase {
        persona_id: "u".into(),
        test_prompt_id: "g3".into(),
        history: UserHistory {
            persona_id: "u".into(),
            triplets: vec![t("g1"), t("g2")],
        },
        history_kind: HistoryKind::Relevant,
    };
    (corpus, case)
}

/// Test cases over a normal-score corpus: `n` users at `alpha`, each with a
/// test prompt and `k` relevant history prompts from the test split.
pub struct SelectionWorld {
    pub dataset: prefsim::synth::Dataset,
    pub population: prefsim::Population,
    pub cases: Vec<prefsim::interactions::TestCase>,
}

pub fn selection_world(n: usize, p: usize, l: usize, b: usize, alpha: f64, k: usize, seed: u64) -> SelectionWorld {
    use prefsim::{interactions, persona, synth};
    let dataset = synth::random_dataset(p, l, b, 8, 0, seed).unwrap();
    let population = persona::sample_population(b, n, alpha, seed).unwrap();
    let a = interactions::assign_test_prompts(&population, &dataset.splits.test_ids, seed).unwrap();
    let cases = interactions::build_test_cases_relevant(
        &population,
        &dataset.corpus,
        &dataset.prompt_embeddings,
        &a,
        &dataset.splits.test_ids,
        k,
    )
    .unwrap();
    SelectionWorld {
        dataset,
        population,
        cases,
    }
}

/// Expected win rate of a uniformly random pick against `reference`, by
/// enumerating every response of every case.
pub fn random_pick_expectation(world: &SelectionWorld, reference: usize) -> f64 {
    let c = &world.dataset.corpus;
    let mut total = 0.0;
    for case in &world.cases {
        let w = &world.population.get(&case.persona_id).unwrap().weights;
        let m = c.rewards(&case.test_prompt_id).unwrap();
        let r_ref = dot(w, m.row(reference));
        let l = m.rows();
        let wins: f64 = (0..l)
            .map(|i| {
                let r = dot(w, m.row(i));
                if r > r_ref {
                    1.0
                } else if r == r_ref {
                    0.5
                } else {
                    0.0
                }
            })
            .sum();
        total += wins / l as f64;
    }
    total / world.cases.len() as f64
}

/// 100 prompts with two 3-feature responses each; the winner is drawn from a
/// logistic model with weights (1, -0.5, 0) on the feature difference.
pub fn noisy_pairs_fixture(
    seed: u64,
) -> (
    Vec<prefsim::diversity::regression::LabeledPair>,
    prefsim::diversity::features::FeatureTable,
) {
    use prefsim::diversity::features::{FeatureKind, FeatureTable};
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut table = FeatureTable::new((0..3).map(|j| format!("f{j}")).collect(), FeatureKind::Semantic);
    let mut pairs = Vec::new();
    let truth = [1.0, -0.5, 0.0];
    for i in 0..100 {
        let pid = format!("q{i}");
        let a: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
        let margin: f64 = (0..3).map(|j| truth[j] * (a[j] - b[j])).sum();
        let a_wins = r.gen::<f64>() < 1.0 / (1.0 + (-margin).exp());
        table.insert(&pid, "a", a).unwrap();
        table.insert(&pid, "b", b).unwrap();
        let (w, l) = if a_wins { ("a", "b") } else { ("b", "a") };
        pairs.push(prefsim::diversity::regression::LabeledPair {
            prompt_id: pid,
            winner_model: w.into(),
            loser_model: l.into(),
        });
    }
    (pairs, table)
}

/// Winner rows labeled 1 followed by their loser rows labeled 0, pair by pair.
pub fn stacked_rows(
    pairs: &[prefsim::diversity::regression::LabeledPair],
    table: &prefsim::diversity::features::FeatureTable,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for p in pairs {
        rows.push(table.get(&p.prompt_id, &p.winner_model).unwrap().to_vec());
        y.push(1.0);
        rows.push(table.get(&p.prompt_id, &p.loser_model).unwrap().to_vec());
        y.push(0.0);
    }
    (rows, y)
}
