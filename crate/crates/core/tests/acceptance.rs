//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use prefsim::corpus::{self, SplitSpec};
use prefsim::diversity::{self, regression};
use prefsim::opinion::{self, AnswerDistribution};
use prefsim::persona;
use prefsim::policies::clients::{EchoGenerator, StubScorer};
use prefsim::policies::{self, assemble_context, IclVariant, Mode, PolicyContext, PolicyKind, PolicySpec};
use prefsim::retrieval::{self, EmbedMethod, UserEmbedding, UserIndex};
use prefsim::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Environment variable naming a corpus directory in the ingest layout.
const CORPUS_ENV: &str = "PREFSIM_CORPUS_DIR";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    let e = t.elapsed();
    if e < limit {
        Ok(())
    } else {
        Err(format!("took {e:.2?}, limit {limit:?}"))
    }
}

fn dirichlet() -> Verdict {
    let start = Instant::now();
    let (b, n, alpha) = (10, 100_000, 0.05);
    let pop = persona::sample_population(b, n, alpha, 7).unwrap();
    let elapsed = start.elapsed();
    let mut sum = vec![0.0; b];
    let mut sq = vec![0.0; b];
    let mut worst_sum: f64 = 0.0;
    for p in &pop.personas {
        worst_sum = worst_sum.max((p.weights.iter().sum::<f64>() - 1.0).abs());
        for j in 0..b {
            sum[j] += p.weights[j];
            sq[j] += p.weights[j] * p.weights[j];
        }
    }
    let nf = n as f64;
    let inv_b = 1.0 / b as f64;
    let target_var = inv_b * (1.0 - inv_b) / (b as f64 * alpha + 1.0);
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for j in 0..b {
        let mean = sum[j] / nf;
        let var = (sq[j] - nf * mean * mean) / (nf - 1.0);
        worst_mean = worst_mean.max((mean - inv_b).abs());
        worst_var = worst_var.max((var / target_var - 1.0).abs());
    }
    check(
        worst_sum <= 1e-9 && worst_mean <= 0.005 && worst_var <= 0.10 && elapsed < Duration::from_secs(10),
        format!(
            "max |sum-1| {worst_sum:.1e}, max |mean-0.1| {worst_mean:.4}, max var rel err {:.3}, {elapsed:.2?}",
            worst_var
        ),
    )
}

fn alpha_trend() -> Verdict {
    let start = Instant::now();
    let c = synth::normal_corpus(500, 8, 10, 7).unwrap();
    let ids: Vec<String> = c.prompts().iter().map(|p| p.prompt_id.clone()).collect();
    let fracs: Vec<f64> = [0.05, 1.0, 10.0]
        .iter()
        .map(|&a| {
            let pop = persona::sample_population(10, 1000, a, 7).unwrap();
            let t = diversity::compute_winners(&pop, &c, &ids).unwrap();
            diversity::vote_share_summary(&t, &[0.5]).unwrap()[0]
        })
        .collect();
    let time = within(start, Duration::from_secs(60));
    check(
        fracs[0] > fracs[1] && fracs[1] > fracs[2] && time.is_ok(),
        format!(
            "share<=0.5 fractions at alpha 0.05/1/10: {fracs:.3?} {}",
            time.err().unwrap_or_default()
        ),
    )
}

fn published_corpus() -> Verdict {
    let Some(dir) = std::env::var_os(CORPUS_ENV).map(PathBuf::from) else {
        return Verdict::Skip(format!("{CORPUS_ENV} not set"));
    };
    if !dir.join("rewards.jsonl").exists() {
        return Verdict::Skip(format!("no corpus at {}", dir.display()));
    }
    let start = Instant::now();
    let raw = corpus::load_corpus_dir(&dir).unwrap();
    let splits = SplitSpec::load(&dir.join("splits.json")).unwrap();
    splits.validate(&raw).unwrap();
    let stats = corpus::compute_normalization(&raw, "train", &splits.train_ids).unwrap();
    let c = corpus::normalize_rewards(&raw, &stats).unwrap();
    let test: Vec<String> = splits.test_ids.iter().take(1000).cloned().collect();
    let pop = persona::sample_population(c.num_reward_models(), 1000, 0.05, 7).unwrap();
    let t = diversity::compute_winners(&pop, &c, &test).unwrap();
    let majority = 1.0 - diversity::vote_share_summary(&t, &[0.5]).unwrap()[0];
    let hist = diversity::distinct_winner_histogram(&t).unwrap();
    let five_plus = hist.iter().skip(4).sum::<usize>() as f64 / test.len() as f64;
    let time = within(start, Duration::from_secs(300));
    check(
        (0.40..=0.60).contains(&majority) && (0.50..=0.70).contains(&five_plus) && time.is_ok(),
        format!(
            "majority fraction {majority:.3}, >=5 distinct {five_plus:.3} {}",
            time.err().unwrap_or_default()
        ),
    )
}

fn representativeness() -> Verdict {
    let d = |p: &[f64]| AnswerDistribution::new("q", p.to_vec()).unwrap();
    let same = d(&[0.2, 0.3, 0.5]);
    let identical = opinion::representativeness(&same, &same).unwrap();
    let opposite = opinion::representativeness(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap();
    let three = opinion::representativeness(&d(&[0.5, 0.5, 0.0]), &d(&[0.0, 0.5, 0.5])).unwrap();
    let oracle = 1.0 - common::oracle_transport(&[1, 1, 0], &[0, 1, 1]);
    let table = group_table();
    check(
        identical == 1.0
            && opposite == 0.0
            && (three - 0.5).abs() < 1e-12
            && (three - oracle).abs() < 1e-12
            && table.is_ok(),
        format!(
            "identical {identical}, opposite {opposite}, K=3 {three} (oracle {oracle}), table {}",
            table.unwrap_or_else(|e| e)
        ),
    )
}

/// Runs `represent` on a one-question, two-group survey and returns the CSV header.
fn group_table() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let w = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let q = w(
        "questions.jsonl",
        "{\"question_id\":\"q1\",\"text\":\"How worried?\",\"options\":[\"Very\",\"Somewhat\",\"Not\"]}\n",
    );
    let h = w(
        "human.jsonl",
        "{\"question_id\":\"q1\",\"group\":\"Overall\",\"probabilities\":[0.2,0.5,0.3]}\n{\"question_id\":\"q1\",\"group\":\"Democrat\",\"probabilities\":[0.4,0.4,0.2]}\n",
    );
    let s = w(
        "scores.jsonl",
        "{\"question_id\":\"q1\",\"option_index\":0,\"scores\":[1.0,0.0]}\n{\"question_id\":\"q1\",\"option_index\":1,\"scores\":[0.0,1.0]}\n{\"question_id\":\"q1\",\"option_index\":2,\"scores\":[0.4,0.4]}\n",
    );
    let out = dir.path().to_str().unwrap();
    let ok = Command::new(env!("CARGO_BIN_EXE_prefsim"))
        .args(["sample-users", "--B", "2", "--n", "50", "--seed", "7", "--out", out])
        .status()
        .unwrap()
        .success();
    if !ok {
        return Err("sample-users failed".into());
    }
    let res = Command::new(env!("CARGO_BIN_EXE_prefsim"))
        .args(["represent", "--population"])
        .arg(dir.path().join("population.jsonl"))
        .arg("--questions")
        .arg(&q)
        .arg("--human")
        .arg(&h)
        .arg("--option-scores")
        .arg(&s)
        .args(["--out", out])
        .output()
        .unwrap();
    if !res.status.success() {
        return Err(String::from_utf8_lossy(&res.stderr).into_owned());
    }
    let csv = std::fs::read_to_string(dir.path().join("representativeness.csv")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    if lines.len() == 3 && lines[0] == "group,mean_score,questions" && lines[1].starts_with("Overall,") {
        Ok(lines[0].to_string())
    } else {
        Err(format!("unexpected table {csv:?}"))
    }
}

fn regression_sanity() -> Verdict {
    let opts = regression::RegressionOptions::default();
    let positive = (0..100u64)
        .filter(|&u| {
            let (pairs, table) = common::longer_wins_fixture(30, 1000 + u);
            let fit = regression::fit_user_regression(&format!("u{u}"), &pairs, &table, &opts).unwrap();
            fit.coefficient("token_count").unwrap() > 0.0
        })
        .count();
    let (pairs, table) = common::noisy_pairs_fixture(8);
    let fit = regression::fit_user_regression("u", &pairs, &table, &opts).unwrap();
    let (rows, y) = common::stacked_rows(&pairs, &table);
    let (x, _) = common::oracle_standardize(&rows);
    let theta = common::oracle_logistic_gd(&x, &y, 1.0);
    let gap = fit
        .coefficients
        .iter()
        .chain([&fit.intercept])
        .zip(&theta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(
        positive >= 95 && gap < 1e-4,
        format!(
            "token_count > 0 for {positive}/100 users, max |coef - GD oracle| {gap:.2e} on {} rows",
            rows.len()
        ),
    )
}

fn retrieval() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut vec16 = |id: String| UserEmbedding {
        persona_id: id,
        vector: (0..16).map(|_| r.gen_range(-1.0..1.0)).collect(),
        method: EmbedMethod::WinningMinusLosing,
        degenerate: false,
    };
    let db: Vec<UserEmbedding> = (0..1000).map(|i| vec16(format!("u{i:04}"))).collect();
    let queries: Vec<UserEmbedding> = (0..25).map(|i| vec16(format!("q{i}"))).collect();
    let index = UserIndex::build(&db).unwrap();
    let mut mismatches = 0;
    for k in [1, 10, 20] {
        for q in &queries {
            let mut all: Vec<(String, f64)> = db
                .iter()
                .map(|u| (u.persona_id.clone(), common::oracle_cosine(&q.vector, &u.vector)))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for got in [retrieval::knn_users(q, &db, k).unwrap(), index.query(q, k).unwrap()] {
                let same = got.neighbors.len() == k
                    && got
                        .neighbors
                        .iter()
                        .zip(&all)
                        .all(|(n, e)| n.id == e.0 && (n.similarity - e.1).abs() < 1e-12);
                if !same {
                    mismatches += 1;
                }
            }
        }
    }
    let precision = common::archetype_precision(200, 10, 20, EmbedMethod::WinningMinusLosing, 7);
    check(
        mismatches == 0 && precision >= 0.9,
        format!("{mismatches} oracle mismatches over k in {{1,10,20}}, archetype precision@20 {precision:.3}"),
    )
}

fn policy_coherence() -> Verdict {
    let w = common::selection_world(1000, 1000, 8, 10, 0.05, 3, 7);
    let stub = StubScorer::new(Arc::new(w.dataset.corpus.clone()));
    let ctx = PolicyContext {
        corpus: &w.dataset.corpus,
        population: &w.population,
        prompt_embeddings: Some(&w.dataset.prompt_embeddings),
        response_embeddings: Some(&w.dataset.response_embeddings),
        historical: None,
        reference_model: "gen0".into(),
        generator: &EchoGenerator,
        scorer: &stub,
    };
    let eval = |kind| {
        let mut spec = PolicySpec::new(kind);
        spec.seed = 7;
        let out = policies::run_policy_batch(&w.cases, &ctx, &spec, Mode::Selection, 8).unwrap();
        prefsim::bench::evaluate(&out, &w.population, &w.dataset.corpus, "gen0").unwrap()
    };
    let oracle = eval(PolicyKind::OracleSelect);
    let reference = eval(PolicyKind::ZeroShot);
    let random = eval(PolicyKind::RandomSelect);
    let nearest = eval(PolicyKind::NearestWinnerSelect);
    let expect = common::random_pick_expectation(&w, 0);
    let dominates = [&reference, &random, &nearest]
        .iter()
        .all(|o| oracle.win_rate >= o.win_rate);
    check(
        dominates && reference.win_rate == 0.5 && (random.win_rate - expect).abs() <= 0.03 && oracle.n_cases == 1000,
        format!(
            "win rates oracle {:.3}, nearest {:.3}, random {:.3} (expected {expect:.3}), reference {}",
            oracle.win_rate, nearest.win_rate, random.win_rate, reference.win_rate
        ),
    )
}

fn templates() -> Verdict {
    let (c, case) = common::golden_case();
    let mut bad = Vec::new();
    for (variant, tag) in [
        (IclVariant::WinAndLose, "win_and_lose"),
        (IclVariant::WinOnly, "win_only"),
    ] {
        for k in [1, 2] {
            let name = format!("{tag}_k{k}");
            let want = std::fs::read_to_string(common::fixture(&format!("golden/{name}.txt"))).unwrap();
            if assemble_context(&case, &c, variant, k).unwrap().text != want {
                bad.push(name);
            }
        }
    }
    check(bad.is_empty(), format!("4 golden contexts, mismatched: {bad:?}"))
}

fn pipeline(dir: &Path) -> Result<Vec<u8>, String> {
    let toy = common::toy_dir();
    let toy = toy.to_str().unwrap();
    let out = dir.to_str().unwrap();
    let steps: [&[&str]; 6] = [
        &[
            "sample-users",
            "--data-dir",
            toy,
            "--n",
            "30",
            "--prefix",
            "hist",
            "--file",
            "hist.jsonl",
        ],
        &[
            "sample-users",
            "--data-dir",
            toy,
            "--n",
            "5",
            "--prefix",
            "test",
            "--file",
            "test.jsonl",
        ],
        &[
            "build-history",
            "--data-dir",
            toy,
            "--population",
            "hist.jsonl",
            "--m",
            "1",
        ],
        &[
            "build-testcases",
            "--data-dir",
            toy,
            "--population",
            "test.jsonl",
            "--kind",
            "relevant",
            "--pool",
            "train",
            "--k",
            "1",
        ],
        &[
            "run-policy",
            "--data-dir",
            toy,
            "--population",
            "test.jsonl",
            "--testcases",
            "testcases.jsonl",
            "--histories",
            "histories.jsonl",
            "--policy",
            "meta_learn",
        ],
        &[
            "evaluate",
            "--data-dir",
            toy,
            "--population",
            "test.jsonl",
            "--outcomes",
            "outcomes.jsonl",
        ],
    ];
    for step in steps {
        let res = Command::new(env!("CARGO_BIN_EXE_prefsim"))
            .current_dir(dir)
            .args(step)
            .args(["--seed", "7", "--out", out])
            .output()
            .map_err(|e| e.to_string())?;
        if !res.status.success() {
            return Err(format!("{} failed: {}", step[0], String::from_utf8_lossy(&res.stderr)));
        }
    }
    std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())
}

fn determinism() -> Verdict {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let runs = pipeline(a.path()).and_then(|x| pipeline(b.path()).map(|y| (x, y)));
    let time = within(start, Duration::from_secs(120));
    match runs {
        Ok((x, y)) => check(
            x == y && time.is_ok(),
            format!(
                "report.json {} bytes, identical: {}, {:.2?}",
                x.len(),
                x == y,
                start.elapsed()
            ),
        ),
        Err(e) => Verdict::Fail(e),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("dirichlet sampling", dirichlet),
        ("diversity falls as alpha grows", alpha_trend),
        ("published corpus diversity", published_corpus),
        ("representativeness", representativeness),
        ("regression sanity", regression_sanity),
        ("retrieval", retrieval),
        ("policy and evaluation coherence", policy_coherence),
        ("template goldens", templates),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {}. {name}: {detail}", i + 1);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
