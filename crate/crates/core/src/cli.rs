//! `prefsim` command line.
//!
//! Exit codes: 0 success, 1 data or validation error (a JSON object
//! `{"error": kind, "message": ...}` is printed on stderr), 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bench::{self, svg, EvalReport, RunConfig};
use crate::corpus::{self, Corpus, EmbeddingTable, NormalizationMode, SplitSpec};
use crate::diversity::{self, regression, FeatureKind, FeatureTable, GroupSpec};
use crate::error::{Error, Result};
use crate::interactions;
use crate::opinion;
use crate::persona::{self, Population};
use crate::policies::{self, clients, HistoricalDb, Mode, PolicyContext, PolicyKind, PolicyOutcome, PolicySpec};

#[derive(Parser, Debug)]
#[command(name = "prefsim", version, about = "Synthetic-user personalization testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Directory holding prompts.jsonl, responses.jsonl and rewards.jsonl;
    /// splits.json and *_embeddings.csv there are picked up automatically.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long)]
    prompt_embeddings: Option<PathBuf>,
    #[arg(long)]
    response_embeddings: Option<PathBuf>,
    /// `zscore` (default, over the train split) or `raw`.
    #[arg(long)]
    normalization: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and normalize a corpus.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Sample a Dirichlet population.
    SampleUsers {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "B")]
        b: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value = "user")]
        prefix: String,
        #[arg(long, default_value = "population.jsonl")]
        file: String,
    },
    /// Vote-share, distinct-winner and per-model win-rate analysis.
    AnalyzeDiversity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        population: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = diversity::DEFAULT_THRESHOLDS.to_vec())]
        thresholds: Vec<f64>,
        /// `train`, `test` or `all`.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write SVG bar charts.
        #[arg(long)]
        svg: bool,
    },
    /// Mean winner entropy per keyword group.
    AnalyzeEntropy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        population: PathBuf,
        /// JSON array of `{"label", "rule": "contains"|"first_word", "pattern"}`.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Per-user logistic regression of winner vs. loser on response features.
    Regress {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        population: PathBuf,
        /// features.csv; syntactic columns it names override the built-in ones.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Fit on the supplied features only (`semantic`) or on syntactic
        /// features with overrides (`syntactic`).
        #[arg(long, default_value = "syntactic")]
        feature_kind: String,
        #[arg(long)]
        max_users: Option<usize>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Opinion-survey representativeness per group.
    Represent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        human: Option<PathBuf>,
        #[arg(long)]
        option_scores: Option<PathBuf>,
    },
    /// Historical database of winner/loser triplets over the train split.
    BuildHistory {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        population: PathBuf,
        /// Prompts per user.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Test cases with relevant or random histories.
    BuildTestcases {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        population: PathBuf,
        /// `relevant` or `random`.
        #[arg(long, default_value = "relevant")]
        kind: String,
        #[arg(long)]
        k: Option<usize>,
        /// Split the history prompts come from: `test` or `train`.
        #[arg(long, default_value = "test")]
        pool: String,
    },
    /// Run one policy over a set of test cases.
    RunPolicy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        testcases: PathBuf,
        /// Historical database (histories.jsonl); needed by meta_learn.
        #[arg(long)]
        histories: Option<PathBuf>,
        #[arg(long)]
        policy: Option<String>,
        /// `generative` or `selection`; defaults by policy.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        k_shots: Option<usize>,
        #[arg(long)]
        icl_variant: Option<String>,
        #[arg(long)]
        embed_method: Option<String>,
        #[arg(long)]
        top_users: Option<usize>,
        #[arg(long)]
        top_examples: Option<usize>,
        #[arg(long)]
        reference_model: Option<String>,
        #[arg(long, default_value_t = 8)]
        max_in_flight: usize,
    },
    /// Score policy outcomes into report.json.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        reference_model: Option<String>,
    },
    /// Compare two or more reports over the same cases.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        svg: bool,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Data(e)) => {
            let body = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{body}");
            1
        }
    }
}

#[derive(Serialize)]
struct Provenance {
    command: &'static str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    population_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalization: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus_hash: Option<String>,
    /// SHA-256 of each input file, keyed by file name.
    inputs: BTreeMap<String, String>,
}

impl Provenance {
    fn new(command: &'static str, seed: u64) -> Self {
        Self {
            command,
            seed,
            population_seed: None,
            alpha: None,
            normalization: None,
            corpus_hash: None,
            inputs: BTreeMap::new(),
        }
    }

    fn corpus(mut self, c: &Corpus) -> Self {
        self.normalization = Some(c.mode().as_str().to_string());
        self.corpus_hash = Some(c.content_hash().to_string());
        self
    }

    fn population(mut self, p: &Population) -> Self {
        self.population_seed = Some(p.seed);
        self.alpha = Some(p.alpha);
        self
    }

    fn input(mut self, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.insert(name, digest);
        Ok(self)
    }
}

#[derive(Serialize)]
struct AnalysisReport<P: Serialize, V: Serialize> {
    metric: &'static str,
    parameters: P,
    values: V,
    provenance: Provenance,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(common.out.clone())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn seed_of(common: &Common, cfg: &RunConfig) -> u64 {
    common.seed.or(cfg.seed).unwrap_or(0)
}

struct Data {
    corpus: Corpus,
    splits: SplitSpec,
    prompt_embeddings: Option<EmbeddingTable>,
    response_embeddings: Option<EmbeddingTable>,
    inputs: Vec<PathBuf>,
}

impl Data {
    fn prompt_embeddings(&self) -> Result<&EmbeddingTable> {
        self.prompt_embeddings
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("prompt embeddings required (--prompt-embeddings)".into()))
    }

    fn split(&self, name: &str) -> CliResult<Vec<String>> {
        match name {
            "train" => Ok(self.splits.train_ids.clone()),
            "test" => Ok(self.splits.test_ids.clone()),
            "all" => Ok(self.corpus.prompts().iter().map(|p| p.prompt_id.clone()).collect()),
            other => Err(usage(format!("unknown split `{other}` (train, test, all)"))),
        }
    }

    fn provenance(&self, p: Provenance) -> Result<Provenance> {
        self.inputs.iter().try_fold(p.corpus(&self.corpus), |p, f| p.input(f))
    }
}

fn pick(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, dir: &Path, default: &str) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.clone()).or_else(|| {
        let p = dir.join(default);
        p.exists().then_some(p)
    })
}

fn load_data(args: &DataArgs, cfg: &RunConfig) -> CliResult<Data> {
    let dir = args
        .data_dir
        .clone()
        .or_else(|| cfg.data_dir.clone())
        .ok_or_else(|| usage("--data-dir is required"))?;
    let raw = corpus::load_corpus_dir(&dir)?;
    let mut inputs: Vec<PathBuf> = ["prompts.jsonl", "responses.jsonl", "rewards.jsonl"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let splits = match pick(&args.splits, &cfg.splits, &dir, "splits.json") {
        Some(p) => {
            let s = SplitSpec::load(&p)?;
            s.validate(&raw)?;
            inputs.push(p);
            s
        }
        None => SplitSpec::all_test(&raw),
    };
    let mode = match args.normalization.as_deref() {
        Some("raw") => NormalizationMode::Raw,
        Some("zscore") => NormalizationMode::Zscore,
        Some(other) => return Err(usage(format!("unknown normalization `{other}` (raw, zscore)"))),
        None => cfg.normalization.unwrap_or(NormalizationMode::Zscore),
    };
    let corpus = match mode {
        NormalizationMode::Raw => raw,
        NormalizationMode::Zscore => {
            let stats = if splits.train_ids.is_empty() {
                let all: Vec<String> = raw.prompts().iter().map(|p| p.prompt_id.clone()).collect();
                corpus::compute_normalization(&raw, "all", &all)?
            } else {
                corpus::compute_normalization(&raw, "train", &splits.train_ids)?
            };
            corpus::normalize_rewards(&raw, &stats)?
        }
    };
    let mut load_emb = |flag: &Option<PathBuf>, c: &Option<PathBuf>, name: &str| -> Result<Option<EmbeddingTable>> {
        match pick(flag, c, &dir, name) {
            Some(p) => {
                let t = corpus::load_embeddings(&p)?;
                inputs.push(p);
                Ok(Some(t))
            }
            None => Ok(None),
        }
    };
    let prompt_embeddings = load_emb(&args.prompt_embeddings, &cfg.prompt_embeddings, "prompt_embeddings.csv")?;
    let response_embeddings = load_emb(
        &args.response_embeddings,
        &cfg.response_embeddings,
        "response_embeddings.csv",
    )?;
    Ok(Data {
        corpus,
        splits,
        prompt_embeddings,
        response_embeddings,
        inputs,
    })
}

fn load_population(path: &Path, corpus: Option<&Corpus>) -> Result<Population> {
    let p = Population::read_jsonl(path)?;
    if let Some(c) = corpus {
        if p.b != c.num_reward_models() {
            return Err(Error::Shape(format!(
                "population has B={}, corpus has B={}",
                p.b,
                c.num_reward_models()
            )));
        }
    }
    Ok(p)
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Ingest { common, data } => ingest(&common, &data),
        Command::SampleUsers {
            common,
            data,
            b,
            n,
            alpha,
            prefix,
            file,
        } => sample_users(&common, &data, b, n, alpha, &prefix, &file),
        Command::AnalyzeDiversity {
            common,
            data,
            population,
            thresholds,
            split,
            svg,
        } => analyze_diversity(&common, &data, &population, &thresholds, &split, svg),
        Command::AnalyzeEntropy {
            common,
            data,
            population,
            groups,
            split,
        } => analyze_entropy(&common, &data, &population, groups.as_deref(), &split),
        Command::Regress {
            common,
            data,
            population,
            features,
            feature_kind,
            max_users,
            split,
        } => regress(
            &common,
            &data,
            &population,
            features.as_deref(),
            &feature_kind,
            max_users,
            &split,
        ),
        Command::Represent {
            common,
            population,
            questions,
            human,
            option_scores,
        } => represent(&common, &population, questions, human, option_scores),
        Command::BuildHistory {
            common,
            data,
            population,
            m,
        } => build_history(&common, &data, &population, m),
        Command::BuildTestcases {
            common,
            data,
            population,
            kind,
            k,
            pool,
        } => build_testcases(&common, &data, &population, &kind, k, &pool),
        Command::RunPolicy {
            common,
            data,
            population,
            testcases,
            histories,
            policy,
            mode,
            k_shots,
            icl_variant,
            embed_method,
            top_users,
            top_examples,
            reference_model,
            max_in_flight,
        } => {
            let cfg = load_config(&common)?;
            let mut spec = match (policy, cfg.policies.first()) {
                (Some(p), _) => PolicySpec::new(p.parse::<PolicyKind>().map_err(|e| usage(e.to_string()))?),
                (None, Some(s)) => s.clone(),
                (None, None) => return Err(usage("--policy is required")),
            };
            if let Some(k) = k_shots {
                spec.k_shots = k;
            }
            if let Some(v) = icl_variant {
                spec.icl_variant = v.parse().map_err(|e: Error| usage(e.to_string()))?;
            }
            if let Some(m) = embed_method {
                spec.embed_method = m.parse().map_err(|e: Error| usage(e.to_string()))?;
            }
            if let Some(u) = top_users {
                spec.top_users = u;
            }
            if let Some(e) = top_examples {
                spec.top_examples = e;
            }
            spec.seed = seed_of(&common, &cfg);
            let mode = match mode.as_deref() {
                None => spec.kind.default_mode(),
                Some("generative") => Mode::Generative,
                Some("selection") => Mode::Selection,
                Some(other) => return Err(usage(format!("unknown mode `{other}` (generative, selection)"))),
            };
            spec.validate(mode).map_err(|e| usage(e.to_string()))?;
            let reference = reference_model.or(cfg.reference_model_id.clone());
            run_policy(
                &common,
                &cfg,
                &data,
                &population,
                &testcases,
                histories.as_deref(),
                &spec,
                mode,
                reference,
                max_in_flight,
            )
        }
        Command::Evaluate {
            common,
            data,
            population,
            outcomes,
            reference_model,
        } => evaluate(&common, &data, &population, &outcomes, reference_model),
        Command::Compare { common, reports, svg } => compare(&common, &reports, svg),
    }
}

fn ingest(common: &Common, args: &DataArgs) -> CliResult<()> {
    let cfg = load_config(common)?;
    let data = load_data(args, &cfg)?;
    let out = out_dir(common)?;
    #[derive(Serialize)]
    struct Values<'a> {
        summary: corpus::CorpusSummary,
        model_ids: &'a [String],
        reward_models: &'a [String],
        normalization: Option<&'a corpus::NormalizationStats>,
        train_prompts: usize,
        test_prompts: usize,
        prompt_embedding_dim: Option<usize>,
        response_embedding_dim: Option<usize>,
    }
    let c = &data.corpus;
    let report = AnalysisReport {
        metric: "ingest",
        parameters: serde_json::json!({}),
        values: Values {
            summary: c.summary(),
            model_ids: c.model_ids(),
            reward_models: c.reward_models(),
            normalization: c.normalization(),
            train_prompts: data.splits.train_ids.len(),
            test_prompts: data.splits.test_ids.len(),
            prompt_embedding_dim: data.prompt_embeddings.as_ref().map(EmbeddingTable::dim),
            response_embedding_dim: data.response_embeddings.as_ref().map(EmbeddingTable::dim),
        },
        provenance: data.provenance(Provenance::new("ingest", seed_of(common, &cfg)))?,
    };
    write_json(&out.join("ingest.json"), &report)?;
    Ok(())
}

fn sample_users(
    common: &Common,
    args: &DataArgs,
    b: Option<usize>,
    n: Option<usize>,
    alpha: Option<f64>,
    prefix: &str,
    file: &str,
) -> CliResult<()> {
    let cfg = load_config(common)?;
    let names = if args.data_dir.is_some() || cfg.data_dir.is_some() {
        Some(load_data(args, &cfg)?.corpus.reward_models().to_vec())
    } else {
        None
    };
    let b = match (b, &names) {
        (Some(b), Some(n)) if b != n.len() => {
            return Err(Error::Shape(format!("--B {b} but the corpus has B={}", n.len())).into())
        }
        (Some(b), _) => b,
        (None, Some(n)) => n.len(),
        (None, None) => return Err(usage("--B is required without --data-dir")),
    };
    let n = n.or(cfg.n_users).unwrap_or(1000);
    let alpha = alpha.or(cfg.alpha).unwrap_or(0.05);
    let seed = seed_of(common, &cfg);
    let mut pop = persona::sample_population_with_prefix(prefix, b, n, alpha, seed)?;
    if let Some(names) = names {
        pop = pop.with_reward_models(names)?;
    }
    let out = out_dir(common)?;
    pop.write_jsonl(&out.join(file))?;
    Ok(())
}

fn winners_for(
    common: &Common,
    args: &DataArgs,
    population: &Path,
    split: &str,
) -> CliResult<(RunConfig, Data, Population, diversity::WinnerTable)> {
    let cfg = load_config(common)?;
    let data = load_data(args, &cfg)?;
    let pop = load_population(population, Some(&data.corpus))?;
    let ids = data.split(split)?;
    let table = diversity::compute_winners(&pop, &data.corpus, &ids)?;
    Ok((cfg, data, pop, table))
}

fn analyze_diversity(
    common: &Common,
    args: &DataArgs,
    population: &Path,
    thresholds: &[f64],
    split: &str,
    draw: bool,
) -> CliResult<()> {
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(usage("thresholds must lie in [0, 1]"));
    }
    let (cfg, data, pop, table) = winners_for(common, args, population, split)?;
    let shares = diversity::vote_share_summary(&table, thresholds)?;
    let hist = diversity::distinct_winner_histogram(&table)?;
    let rates = diversity::model_win_rates(&table, &data.corpus)?;
    let prompts = table.num_prompts() as f64;
    #[derive(Serialize)]
    struct Share {
        threshold: f64,
        fraction_of_prompts: f64,
    }
    #[derive(Serialize)]
    struct Distinct {
        distinct_winners: usize,
        prompts: usize,
        fraction: f64,
    }
    #[derive(Serialize)]
    struct Rate {
        model_id: String,
        win_rate: f64,
    }
    #[derive(Serialize)]
    struct Values {
        top_vote_share_at_most: Vec<Share>,
        distinct_winner_histogram: Vec<Distinct>,
        model_win_rates: Vec<Rate>,
    }
    let values = Values {
        top_vote_share_at_most: thresholds
            .iter()
            .zip(&shares)
            .map(|(&threshold, &f)| Share {
                threshold,
                fraction_of_prompts: f,
            })
            .collect(),
        distinct_winner_histogram: hist
            .iter()
            .enumerate()
            .map(|(k, &c)| Distinct {
                distinct_winners: k + 1,
                prompts: c,
                fraction: c as f64 / prompts,
            })
            .collect(),
        model_win_rates: rates
            .iter()
            .map(|(m, r)| Rate {
                model_id: m.clone(),
                win_rate: *r,
            })
            .collect(),
    };
    let out = out_dir(common)?;
    let mut rows = Vec::new();
    for s in &values.top_vote_share_at_most {
        rows.push(vec![
            "top_vote_share_at_most".into(),
            s.threshold.to_string(),
            s.fraction_of_prompts.to_string(),
        ]);
    }
    for d in &values.distinct_winner_histogram {
        rows.push(vec![
            "distinct_winners".into(),
            d.distinct_winners.to_string(),
            d.fraction.to_string(),
        ]);
    }
    for r in &values.model_win_rates {
        rows.push(vec![
            "model_win_rate".into(),
            r.model_id.clone(),
            r.win_rate.to_string(),
        ]);
    }
    write_csv(&out.join("diversity.csv"), &["metric", "key", "value"], &rows)?;
    if draw {
        let bars = |m: &str| -> Vec<(String, f64)> {
            rows.iter()
                .filter(|r| r[0] == m)
                .map(|r| (r[1].clone(), r[2].parse().unwrap_or(0.0)))
                .collect()
        };
        write_text(
            &out.join("vote_share.svg"),
            &svg::bar_chart("Prompts with top vote share at most t", &bars("top_vote_share_at_most")),
        )?;
        write_text(
            &out.join("distinct_winners.svg"),
            &svg::bar_chart("Responses receiving at least one vote", &bars("distinct_winners")),
        )?;
        write_text(
            &out.join("model_win_rates.svg"),
            &svg::bar_chart("Win rate per generator", &bars("model_win_rate")),
        )?;
    }
    let report = AnalysisReport {
        metric: "diversity",
        parameters: serde_json::json!({
            "thresholds": thresholds,
            "split": split,
            "users": table.num_users(),
            "prompts": table.num_prompts(),
        }),
        values,
        provenance: data
            .provenance(Provenance::new("analyze-diversity", seed_of(common, &cfg)).population(&pop))?
            .input(population)?,
    };
    write_json(&out.join("diversity.json"), &report)?;
    Ok(())
}

fn analyze_entropy(
    common: &Common,
    args: &DataArgs,
    population: &Path,
    groups: Option<&Path>,
    split: &str,
) -> CliResult<()> {
    let specs: Vec<GroupSpec> = match groups {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::schema(p, 1, e.to_string()))?
        }
        None => diversity::default_groups(),
    };
    let (cfg, data, pop, table) = winners_for(common, args, population, split)?;
    let result = diversity::keyword_entropy(&table, &data.corpus, &specs)?;
    let out = out_dir(common)?;
    let rows: Vec<Vec<String>> = result
        .iter()
        .map(|g| {
            vec![
                g.label.clone(),
                g.matched_prompts.to_string(),
                g.mean_entropy_bits.map_or_else(String::new, |h| h.to_string()),
            ]
        })
        .collect();
    write_csv(
        &out.join("entropy.csv"),
        &["group", "matched_prompts", "mean_entropy_bits"],
        &rows,
    )?;
    let mut prov = data.provenance(Provenance::new("analyze-entropy", seed_of(common, &cfg)).population(&pop))?;
    prov = prov.input(population)?;
    if let Some(g) = groups {
        prov = prov.input(g)?;
    }
    let report = AnalysisReport {
        metric: "keyword_entropy",
        parameters: serde_json::json!({"groups": specs, "split": split, "log_base": 2}),
        values: result,
        provenance: prov,
    };
    write_json(&out.join("entropy.json"), &report)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn regress(
    common: &Common,
    args: &DataArgs,
    population: &Path,
    features: Option<&Path>,
    feature_kind: &str,
    max_users: Option<usize>,
    split: &str,
) -> CliResult<()> {
    let cfg = load_config(common)?;
    let data = load_data(args, &cfg)?;
    let pop = load_population(population, Some(&data.corpus))?;
    let features_path = features.map(Path::to_path_buf).or_else(|| cfg.features.clone());
    let table = match (feature_kind, &features_path) {
        ("syntactic", None) => FeatureTable::syntactic(&data.corpus)?,
        ("syntactic", Some(p)) => {
            FeatureTable::syntactic(&data.corpus)?.with_overrides(&FeatureTable::load_csv(p, FeatureKind::Syntactic)?)
        }
        ("semantic", Some(p)) => FeatureTable::load_csv(p, FeatureKind::Semantic)?,
        ("semantic", None) => return Err(usage("--feature-kind semantic needs --features")),
        (other, _) => return Err(usage(format!("unknown feature kind `{other}` (syntactic, semantic)"))),
    };
    let ids = data.split(split)?;
    let n = max_users.unwrap_or(pop.len()).min(pop.len());
    let opts = regression::RegressionOptions::default();
    use rayon::prelude::*;
    let results: Vec<regression::RegressionResult> = pop.personas[..n]
        .par_iter()
        .map(|p| {
            let pairs = regression::labeled_pairs(p, &data.corpus, &ids)?;
            let mut r = regression::fit_user_regression(&p.persona_id, &pairs, &table, &opts)?;
            r.loss_history.clear();
            Ok(r)
        })
        .collect::<Result<_>>()?;
    #[derive(Serialize)]
    struct FeatureSummary {
        feature: String,
        mean_coefficient: f64,
        fraction_positive: f64,
    }
    let summary: Vec<FeatureSummary> = table
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let c: Vec<f64> = results.iter().map(|r| r.coefficients[j]).collect();
            FeatureSummary {
                feature: name.clone(),
                mean_coefficient: c.iter().sum::<f64>() / c.len() as f64,
                fraction_positive: c.iter().filter(|&&x| x > 0.0).count() as f64 / c.len() as f64,
            }
        })
        .collect();
    let out = out_dir(common)?;
    let mut header = vec!["persona_id", "intercept", "converged"];
    header.extend(table.names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut row = vec![r.persona_id.clone(), r.intercept.to_string(), r.converged.to_string()];
            row.extend(r.coefficients.iter().map(|c| c.to_string()));
            row
        })
        .collect();
    write_csv(&out.join("regression.csv"), &header, &rows)?;
    let mut prov = data.provenance(Provenance::new("regress", seed_of(common, &cfg)).population(&pop))?;
    prov = prov.input(population)?;
    if let Some(p) = &features_path {
        prov = prov.input(p)?;
    }
    let report = AnalysisReport {
        metric: "user_regression",
        parameters: serde_json::json!({
            "options": opts,
            "feature_kind": table.kind,
            "features": table.names,
            "split": split,
            "users": n,
        }),
        values: serde_json::json!({"summary": summary, "users": results}),
        provenance: prov,
    };
    write_json(&out.join("regression.json"), &report)?;
    Ok(())
}

fn represent(
    common: &Common,
    population: &Path,
    questions: Option<PathBuf>,
    human: Option<PathBuf>,
    option_scores: Option<PathBuf>,
) -> CliResult<()> {
    let cfg = load_config(common)?;
    let qp = questions
        .or_else(|| cfg.questions.clone())
        .ok_or_else(|| usage("--questions is required"))?;
    let hp = human
        .or_else(|| cfg.human_distributions.clone())
        .ok_or_else(|| usage("--human is required"))?;
    let sp = option_scores
        .or_else(|| cfg.option_scores.clone())
        .ok_or_else(|| usage("--option-scores is required"))?;
    let pop = load_population(population, None)?;
    let qs = opinion::load_questions(&qp)?;
    let human = opinion::load_human_distributions(&hp, &qs)?;
    let scores = opinion::load_option_scores(&sp, &qs, pop.b)?;
    let table = opinion::representativeness_table(&pop, &qs, &human, &scores)?;
    let out = out_dir(common)?;
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|g| vec![g.group.clone(), g.mean_score.to_string(), g.questions.to_string()])
        .collect();
    write_csv(
        &out.join("representativeness.csv"),
        &["group", "mean_score", "questions"],
        &rows,
    )?;
    let prov = Provenance::new("represent", seed_of(common, &cfg))
        .population(&pop)
        .input(population)?
        .input(&qp)?
        .input(&hp)?
        .input(&sp)?;
    let report = AnalysisReport {
        metric: "representativeness",
        parameters: serde_json::json!({"answer_rule": "argmax", "positions": "equally spaced on [0,1]"}),
        values: table,
        provenance: prov,
    };
    write_json(&out.join("representativeness.json"), &report)?;
    Ok(())
}

fn build_history(common: &Common, args: &DataArgs, population: &Path, m: Option<usize>) -> CliResult<()> {
    let cfg = load_config(common)?;
    let data = load_data(args, &cfg)?;
    let pop = load_population(population, Some(&data.corpus))?;
    let m = m.or(cfg.history_len).unwrap_or(50);
    let seed = seed_of(common, &cfg);
    if data.splits.train_ids.is_empty() {
        return Err(Error::InvalidArgument("the train split is empty; supply --splits".into()).into());
    }
    let histories = interactions::build_historical_db(&pop, &data.corpus, &data.splits.train_ids, m, seed)?;
    let out = out_dir(common)?;
    interactions::write_histories(&out.join("histories.jsonl"), &histories, &data.corpus)?;
    let prov = data
        .provenance(Provenance::new("build-history", seed).population(&pop))?
        .input(population)?;
    write_json(
        &out.join("histories.provenance.json"),
        &serde_json::json!({"parameters": {"m": m, "users": pop.len()}, "provenance": prov}),
    )?;
    Ok(())
}

fn build_testcases(
    common: &Common,
    args: &DataArgs,
    population: &Path,
    kind: &str,
    k: Option<usize>,
    pool: &str,
) -> CliResult<()> {
    let cfg = load_config(common)?;
    let data = load_data(args, &cfg)?;
    let pop = load_population(population, Some(&data.corpus))?;
    let k = k.or(cfg.k).unwrap_or(5);
    let seed = seed_of(common, &cfg);
    let pool_ids = match pool {
        "test" | "train" => data.split(pool)?,
        other => return Err(usage(format!("unknown pool `{other}` (test, train)"))),
    };
    let assignments = interactions::assign_test_prompts(&pop, &data.splits.test_ids, seed)?;
    let cases = match kind {
        "relevant" => interactions::build_test_cases_relevant(
            &pop,
            &data.corpus,
            data.prompt_embeddings()?,
            &assignments,
            &pool_ids,
            k,
        )?,
        "random" => interactions::build_test_cases_random(&pop, &data.corpus, &assignments, &pool_ids, k, seed)?,
        other => return Err(usage(format!("unknown history kind `{other}` (relevant, random)"))),
    };
    let out = out_dir(common)?;
    interactions::write_test_cases(&out.join("testcases.jsonl"), &cases, &data.corpus)?;
    let prov = data
        .provenance(Provenance::new("build-testcases", seed).population(&pop))?
        .input(population)?;
    write_json(
        &out.join("testcases.provenance.json"),
        &serde_json::json!({"parameters": {"kind": kind, "k": k, "pool": pool}, "provenance": prov}),
    )?;
    Ok(())
}

fn write_outcomes(path: &Path, outcomes: &[PolicyOutcome]) -> Result<()> {
    let mut text = String::new();
    for o in outcomes {
        text.push_str(&serde_json::to_string(o)?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn read_outcomes(path: &Path) -> Result<Vec<PolicyOutcome>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::schema(path, i + 1, e.to_string())))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_policy(
    common: &Common,
    cfg: &RunConfig,
    args: &DataArgs,
    population: &Path,
    testcases: &Path,
    histories: Option<&Path>,
    spec: &PolicySpec,
    mode: Mode,
    reference: Option<String>,
    max_in_flight: usize,
) -> CliResult<()> {
    let data = load_data(args, cfg)?;
    let pop = load_population(population, Some(&data.corpus))?;
    let cases = interactions::read_test_cases(testcases, &data.corpus)?;
    let needs_db = spec.kind == PolicyKind::MetaLearn;
    let db = match histories {
        Some(h) => {
            let hist = interactions::read_histories(h, &data.corpus)?;
            let emb = data
                .response_embeddings
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("response embeddings required for retrieval".into()))?;
            Some(HistoricalDb::build(hist, &data.corpus, emb, &[spec.embed_method])?)
        }
        None if needs_db => return Err(usage("meta_learn needs --histories")),
        None => None,
    };
    let reference = reference.unwrap_or_else(|| policies::default_reference_model(&data.corpus));
    let shared = Arc::new(data.corpus.clone());
    let (generator, scorer) = clients::clients_from_env(shared);
    let ctx = PolicyContext {
        corpus: &data.corpus,
        population: &pop,
        prompt_embeddings: data.prompt_embeddings.as_ref(),
        response_embeddings: data.response_embeddings.as_ref(),
        historical: db.as_ref(),
        reference_model: reference,
        generator: generator.as_ref(),
        scorer: scorer.as_ref(),
    };
    let outcomes = policies::run_policy_batch(&cases, &ctx, spec, mode, max_in_flight)?;
    let out = out_dir(common)?;
    write_outcomes(&out.join("outcomes.jsonl"), &outcomes)?;
    let mut prov = data
        .provenance(Provenance::new("run-policy", spec.seed).population(&pop))?
        .input(population)?
        .input(testcases)?;
    if let Some(h) = histories {
        prov = prov.input(h)?;
    }
    let failed = outcomes
        .iter()
        .filter(|o| o.status == policies::OutcomeStatus::Failed)
        .count();
    write_json(
        &out.join("outcomes.provenance.json"),
        &serde_json::json!({
            "parameters": {"policy": spec, "mode": mode, "reference_model": ctx.reference_model,
                           "generator": ctx.generator.name(), "scorer": ctx.scorer.name()},
            "cases": outcomes.len(),
            "failed": failed,
            "provenance": prov,
        }),
    )?;
    Ok(())
}

fn evaluate(
    common: &Common,
    args: &DataArgs,
    population: &Path,
    outcomes: &Path,
    reference: Option<String>,
) -> CliResult<()> {
    let cfg = load_config(common)?;
    let data = load_data(args, &cfg)?;
    let pop = load_population(population, Some(&data.corpus))?;
    let outs = read_outcomes(outcomes)?;
    let reference = reference
        .or(cfg.reference_model_id.clone())
        .unwrap_or_else(|| policies::default_reference_model(&data.corpus));
    let mut report = bench::evaluate(&outs, &pop, &data.corpus, &reference)?;
    report.provenance.seeds.insert("policy".into(), report.policy.seed);
    report.provenance.seeds.insert("evaluate".into(), seed_of(common, &cfg));
    let out = out_dir(common)?;
    report.write(&out.join("report.json"))?;
    let rows: Vec<Vec<String>> = report
        .cases
        .iter()
        .map(|c| vec![c.test_case_id.clone(), c.reward.to_string(), c.win.to_string()])
        .collect();
    write_csv(&out.join("report.csv"), &["test_case_id", "reward", "win"], &rows)?;
    Ok(())
}

fn compare(common: &Common, reports: &[PathBuf], draw: bool) -> CliResult<()> {
    if reports.len() < 2 {
        return Err(usage("--reports needs at least two report files"));
    }
    let loaded = reports
        .iter()
        .map(|p| EvalReport::read(p))
        .collect::<Result<Vec<_>>>()?;
    let table = bench::compare(&loaded)?;
    let out = out_dir(common)?;
    table.write_csv(&out.join("comparison.csv"))?;
    let cfg = load_config(common)?;
    let prov = reports
        .iter()
        .try_fold(Provenance::new("compare", seed_of(common, &cfg)), |p, r| p.input(r))?;
    write_json(
        &out.join("comparison.json"),
        &serde_json::json!({"metric": "comparison", "values": table, "provenance": prov,
                            "report_provenance": loaded.iter().map(|r| &r.provenance).collect::<Vec<_>>()}),
    )?;
    if draw {
        let bars = |f: fn(&bench::ComparisonRow) -> f64| -> Vec<(String, f64)> {
            table.rows.iter().map(|r| (r.policy.clone(), f(r))).collect()
        };
        write_text(
            &out.join("mean_reward.svg"),
            &svg::bar_chart("Mean reward", &bars(|r| r.mean_reward)),
        )?;
        write_text(
            &out.join("win_rate.svg"),
            &svg::bar_chart("Win rate vs. reference", &bars(|r| r.win_rate)),
        )?;
    }
    Ok(())
}
