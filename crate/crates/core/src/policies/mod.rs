//! Personalization policies.
//!
//! Generative policies render an ICL context and call a [`GenerationClient`];
//! the generated text is then scored by a [`ScorerClient`]. Selection
//! policies pick one of the stored, pre-scored responses, so they can be
//! evaluated without any external model.

pub mod clients;
pub mod templates;

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{response_key, Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::interactions::{InteractionTriplet, TestCase, UserHistory};
use crate::persona::{self, Population};
use crate::retrieval::{self, EmbedMethod, UserEmbedding, UserIndex};
use crate::rng;

pub use clients::{
    EchoGenerator, GenerationClient, HttpGenerationClient, HttpScorerClient, RenderedPrompt, ScoreVector, ScorerClient,
    StubScorer,
};
pub use templates::{render, IclExample, IclVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ZeroShot,
    SelfIcl,
    RelevantIcl,
    MetaLearn,
    OracleSelect,
    RandomSelect,
    NearestWinnerSelect,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::ZeroShot => "zero_shot",
            PolicyKind::SelfIcl => "self_icl",
            PolicyKind::RelevantIcl => "relevant_icl",
            PolicyKind::MetaLearn => "meta_learn",
            PolicyKind::OracleSelect => "oracle_select",
            PolicyKind::RandomSelect => "random_select",
            PolicyKind::NearestWinnerSelect => "nearest_winner_select",
        }
    }

    /// Mode used when none is requested.
    pub fn default_mode(self) -> Mode {
        match self {
            PolicyKind::OracleSelect | PolicyKind::RandomSelect | PolicyKind::NearestWinnerSelect => Mode::Selection,
            _ => Mode::Generative,
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zero_shot" => PolicyKind::ZeroShot,
            "self_icl" => PolicyKind::SelfIcl,
            "relevant_icl" => PolicyKind::RelevantIcl,
            "meta_learn" => PolicyKind::MetaLearn,
            "oracle_select" => PolicyKind::OracleSelect,
            "random_select" => PolicyKind::RandomSelect,
            "nearest_winner_select" => PolicyKind::NearestWinnerSelect,
            other => return Err(Error::InvalidArgument(format!("unknown policy `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Generative,
    Selection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub k_shots: usize,
    pub icl_variant: IclVariant,
    pub embed_method: EmbedMethod,
    pub top_users: usize,
    pub top_examples: usize,
    /// Seed for `random_select`.
    #[serde(default)]
    pub seed: u64,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            k_shots: 3,
            icl_variant: IclVariant::WinOnly,
            embed_method: EmbedMethod::WinningMinusLosing,
            top_users: 20,
            top_examples: 3,
            seed: 0,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            PolicyKind::RelevantIcl => {
                format!("{}:{}:k{}", self.kind.as_str(), self.icl_variant.as_str(), self.k_shots)
            }
            PolicyKind::SelfIcl => format!("{}:k{}", self.kind.as_str(), self.k_shots),
            PolicyKind::MetaLearn => format!(
                "{}:{}:u{}:e{}",
                self.kind.as_str(),
                self.embed_method.as_str(),
                self.top_users,
                self.top_examples
            ),
            _ => self.kind.as_str().to_string(),
        }
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        let selection_ok = matches!(
            self.kind,
            PolicyKind::ZeroShot
                | PolicyKind::OracleSelect
                | PolicyKind::RandomSelect
                | PolicyKind::NearestWinnerSelect
        );
        let generative_ok = matches!(
            self.kind,
            PolicyKind::ZeroShot | PolicyKind::SelfIcl | PolicyKind::RelevantIcl | PolicyKind::MetaLearn
        );
        match mode {
            Mode::Selection if !selection_ok => {
                return Err(Error::InvalidArgument(format!(
                    "{} has no selection-mode analog",
                    self.kind.as_str()
                )))
            }
            Mode::Generative if !generative_ok => {
                return Err(Error::InvalidArgument(format!(
                    "{} is selection-only",
                    self.kind.as_str()
                )))
            }
            _ => {}
        }
        if matches!(self.kind, PolicyKind::SelfIcl | PolicyKind::RelevantIcl) && self.k_shots == 0 {
            return Err(Error::InvalidArgument("k_shots must be at least 1".into()));
        }
        if self.kind == PolicyKind::MetaLearn && (self.top_users == 0 || self.top_examples == 0) {
            return Err(Error::InvalidArgument(
                "top_users and top_examples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMeta {
    pub generator: Option<String>,
    pub scorer: Option<String>,
    /// Set when the policy fell back to a simpler one.
    pub fallback: Option<String>,
    pub retrieved_users: Vec<String>,
    pub retrieved_prompts: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub test_case_id: String,
    pub persona_id: String,
    pub test_prompt_id: String,
    pub policy: PolicySpec,
    pub mode: Mode,
    pub status: OutcomeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_text: Option<String>,
    /// Scorer output for generated text.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub rendered_prompt: String,
    pub meta: OutcomeMeta,
}

/// Historical users, their histories, and one embedding index per method.
/// A winning-only index is always built so degenerate queries can fall back.
pub struct HistoricalDb {
    histories: Vec<UserHistory>,
    by_id: HashMap<String, usize>,
    indexes: HashMap<EmbedMethod, UserIndex>,
    /// Users whose embedding under a method is zero; they cannot be retrieved
    /// through that method's index.
    pub unretrievable: HashMap<EmbedMethod, Vec<String>>,
}

impl HistoricalDb {
    pub fn build(
        histories: Vec<UserHistory>,
        corpus: &Corpus,
        response_embeddings: &EmbeddingTable,
        methods: &[EmbedMethod],
    ) -> Result<Self> {
        let by_id = histories
            .iter()
            .enumerate()
            .map(|(i, h)| (h.persona_id.clone(), i))
            .collect();
        let mut all_methods = methods.to_vec();
        if !all_methods.contains(&EmbedMethod::WinningOnly) {
            all_methods.push(EmbedMethod::WinningOnly);
        }
        let mut indexes = HashMap::new();
        let mut unretrievable = HashMap::new();
        for m in all_methods {
            let embedded: Vec<UserEmbedding> = histories
                .par_iter()
                .filter(|h| !h.triplets.is_empty())
                .map(|h| retrieval::embed_user(h, corpus, response_embeddings, m))
                .collect::<Result<_>>()?;
            let zero: Vec<String> = embedded
                .iter()
                .filter(|e| e.degenerate)
                .map(|e| e.persona_id.clone())
                .collect();
            unretrievable.insert(m, zero);
            indexes.insert(m, UserIndex::build(&embedded)?);
        }
        Ok(Self {
            histories,
            by_id,
            indexes,
            unretrievable,
        })
    }

    pub fn history(&self, persona_id: &str) -> Option<&UserHistory> {
        self.by_id.get(persona_id).map(|&i| &self.histories[i])
    }

    pub fn index(&self, method: EmbedMethod) -> Result<&UserIndex> {
        self.indexes
            .get(&method)
            .ok_or_else(|| Error::InvalidArgument(format!("no {} index built", method.as_str())))
    }

    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }
}

/// Everything a policy may consult.
pub struct PolicyContext<'a> {
    pub corpus: &'a Corpus,
    pub population: &'a Population,
    pub prompt_embeddings: Option<&'a EmbeddingTable>,
    pub response_embeddings: Option<&'a EmbeddingTable>,
    pub historical: Option<&'a HistoricalDb>,
    pub reference_model: String,
    pub generator: &'a dyn GenerationClient,
    pub scorer: &'a dyn ScorerClient,
}

impl PolicyContext<'_> {
    fn prompt_embeddings(&self) -> Result<&EmbeddingTable> {
        self.prompt_embeddings
            .ok_or_else(|| Error::InvalidArgument("prompt embeddings required".into()))
    }

    fn response_embeddings(&self) -> Result<&EmbeddingTable> {
        self.response_embeddings
            .ok_or_else(|| Error::InvalidArgument("response embeddings required".into()))
    }
}

/// The reference model: the first generator whose id names GPT-4o, else the
/// first generator.
pub fn default_reference_model(corpus: &Corpus) -> String {
    corpus
        .model_ids()
        .iter()
        .find(|m| {
            let l = m.to_lowercase().replace(['-', '_', ' '], "");
            l.contains("gpt4o")
        })
        .unwrap_or(&corpus.model_ids()[0])
        .clone()
}

fn examples_from(triplets: &[InteractionTriplet], corpus: &Corpus, variant: IclVariant) -> Result<Vec<IclExample>> {
    triplets
        .iter()
        .map(|t| {
            Ok(variant.example(
                &corpus.prompt(&t.prompt_id)?.text,
                corpus.response_text(&t.prompt_id, t.winner_index)?,
                corpus.response_text(&t.prompt_id, t.loser_index)?,
            ))
        })
        .collect()
}

/// Renders the first `k` history entries of the case under `variant`.
pub fn assemble_context(case: &TestCase, corpus: &Corpus, variant: IclVariant, k: usize) -> Result<RenderedPrompt> {
    let available = case.history.triplets.len();
    if k > available {
        return Err(Error::InsufficientHistory { needed: k, available });
    }
    let examples = examples_from(&case.history.triplets[..k], corpus, variant)?;
    let test_prompt = corpus.prompt(&case.test_prompt_id)?.text.clone();
    Ok(RenderedPrompt {
        text: render(variant, &examples, &test_prompt)?,
        examples,
        test_prompt,
    })
}

/// Result of the user and example retrieval steps of meta-learning.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaRetrieval {
    pub users: Vec<String>,
    /// Chosen triplets, most prompt-similar first.
    pub examples: Vec<InteractionTriplet>,
    pub fell_back_to_winning_only: bool,
}

/// Embeds the test user, finds the `top_users` most similar historical
/// users, pools their triplets and keeps the `top_examples` pooled prompts
/// closest to the test prompt. When a prompt appears for several retrieved
/// users, the most similar user's triplet is used.
pub fn meta_retrieve(case: &TestCase, ctx: &PolicyContext<'_>, spec: &PolicySpec) -> Result<MetaRetrieval> {
    let db = ctx
        .historical
        .ok_or_else(|| Error::InvalidArgument("meta-learning needs a historical database".into()))?;
    if case.history.triplets.is_empty() {
        return Ok(MetaRetrieval {
            users: Vec::new(),
            examples: Vec::new(),
            fell_back_to_winning_only: false,
        });
    }
    let query =
        retrieval::embed_user_with_fallback(&case.history, ctx.corpus, ctx.response_embeddings()?, spec.embed_method)?;
    let fell_back = query.method != spec.embed_method;
    if query.degenerate {
        return Ok(MetaRetrieval {
            users: Vec::new(),
            examples: Vec::new(),
            fell_back_to_winning_only: fell_back,
        });
    }
    let index = db.index(query.method)?;
    let neighbors = index.query(&query, spec.top_users)?;
    let mut pool: Vec<&InteractionTriplet> = Vec::new();
    for n in &neighbors.neighbors {
        if let Some(h) = db.history(&n.id) {
            pool.extend(h.triplets.iter());
        }
    }
    let candidates: Vec<String> = pool.iter().map(|t| t.prompt_id.clone()).collect();
    let examples = if candidates.is_empty() {
        Vec::new()
    } else {
        retrieval::knn_prompts(
            &case.test_prompt_id,
            &candidates,
            ctx.prompt_embeddings()?,
            spec.top_examples,
        )?
        .neighbors
        .iter()
        .filter_map(|n| pool.iter().find(|t| t.prompt_id == n.id).map(|t| (*t).clone()))
        .collect()
    };
    Ok(MetaRetrieval {
        users: neighbors.neighbors.into_iter().map(|n| n.id).collect(),
        examples,
        fell_back_to_winning_only: fell_back,
    })
}

fn base_outcome(case: &TestCase, spec: &PolicySpec, mode: Mode) -> PolicyOutcome {
    PolicyOutcome {
        test_case_id: case.id().to_string(),
        persona_id: case.persona_id.clone(),
        test_prompt_id: case.test_prompt_id.clone(),
        policy: spec.clone(),
        mode,
        status: OutcomeStatus::Ok,
        chosen_index: None,
        generated_text: None,
        scores: None,
        rendered_prompt: String::new(),
        meta: OutcomeMeta::default(),
    }
}

fn generate_and_score(
    mut outcome: PolicyOutcome,
    rendered: RenderedPrompt,
    ctx: &PolicyContext<'_>,
) -> Result<PolicyOutcome> {
    outcome.rendered_prompt = rendered.text.clone();
    outcome.meta.generator = Some(ctx.generator.name().to_string());
    outcome.meta.scorer = Some(ctx.scorer.name().to_string());
    let result = ctx.generator.generate(&rendered).and_then(|text| {
        let scores = ctx
            .scorer
            .score(&outcome.test_prompt_id, &rendered.test_prompt, &text)?;
        Ok((text, scores))
    });
    match result {
        Ok((text, scores)) => {
            if scores.scores.len() != ctx.corpus.num_reward_models() {
                return Err(Error::Protocol(format!(
                    "scorer returned {} scores, corpus has B={}",
                    scores.scores.len(),
                    ctx.corpus.num_reward_models()
                )));
            }
            // Stub scores are stored rows, already in corpus space; live
            // scores are raw and get the corpus normalization applied.
            let values = match (scores.stub, ctx.corpus.normalization()) {
                (false, Some(stats)) => scores
                    .scores
                    .iter()
                    .enumerate()
                    .map(|(c, x)| (x - stats.mean[c]) / stats.std[c])
                    .collect(),
                _ => scores.scores,
            };
            outcome.generated_text = Some(text);
            outcome.scores = Some(values);
        }
        Err(e @ (Error::Transport { .. } | Error::Protocol(_))) => {
            outcome.status = OutcomeStatus::Failed;
            outcome.meta.error = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(outcome)
}

/// Self-ICL: the user's own (possibly irrelevant) history, winners only.
fn self_icl_prompt(case: &TestCase, ctx: &PolicyContext<'_>, k: usize) -> Result<RenderedPrompt> {
    assemble_context(
        case,
        ctx.corpus,
        IclVariant::WinOnly,
        k.min(case.history.triplets.len()),
    )
}

/// Meta-learning ICL: retrieve similar users, pool their feedback, render
/// the closest examples (winners only) and generate.
pub fn run_meta_learn(case: &TestCase, ctx: &PolicyContext<'_>, spec: &PolicySpec) -> Result<PolicyOutcome> {
    let mut outcome = base_outcome(case, spec, Mode::Generative);
    let retrieved = meta_retrieve(case, ctx, spec)?;
    outcome.meta.retrieved_users = retrieved.users.clone();
    outcome.meta.retrieved_prompts = retrieved.examples.iter().map(|t| t.prompt_id.clone()).collect();
    if retrieved.fell_back_to_winning_only {
        outcome.meta.fallback = Some("user_embedding:winning_only".into());
    }
    let rendered = if retrieved.examples.is_empty() {
        outcome.meta.fallback = Some("self_icl".into());
        self_icl_prompt(case, ctx, spec.top_examples)?
    } else {
        let examples = examples_from(&retrieved.examples, ctx.corpus, IclVariant::WinOnly)?;
        let test_prompt = ctx.corpus.prompt(&case.test_prompt_id)?.text.clone();
        RenderedPrompt {
            text: render(IclVariant::WinOnly, &examples, &test_prompt)?,
            examples,
            test_prompt,
        }
    };
    generate_and_score(outcome, rendered, ctx)
}

fn run_generative(case: &TestCase, ctx: &PolicyContext<'_>, spec: &PolicySpec) -> Result<PolicyOutcome> {
    let rendered = match spec.kind {
        PolicyKind::ZeroShot => assemble_context(case, ctx.corpus, IclVariant::WinOnly, 0)?,
        PolicyKind::SelfIcl => assemble_context(case, ctx.corpus, IclVariant::WinOnly, spec.k_shots)?,
        PolicyKind::RelevantIcl => assemble_context(case, ctx.corpus, spec.icl_variant, spec.k_shots)?,
        PolicyKind::MetaLearn => return run_meta_learn(case, ctx, spec),
        other => {
            return Err(Error::InvalidArgument(format!("{} is selection-only", other.as_str())));
        }
    };
    generate_and_score(base_outcome(case, spec, Mode::Generative), rendered, ctx)
}

fn mean_vector(keys: &[String], table: &EmbeddingTable) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; table.dim()];
    for k in keys {
        for (a, v) in acc.iter_mut().zip(table.require(k)?) {
            *a += v;
        }
    }
    let n = keys.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Offline analogs that choose among the test prompt's stored responses.
pub fn run_selection_policy(case: &TestCase, ctx: &PolicyContext<'_>, spec: &PolicySpec) -> Result<PolicyOutcome> {
    let mut outcome = base_outcome(case, spec, Mode::Selection);
    let l = ctx.corpus.num_responses();
    let chosen = match spec.kind {
        PolicyKind::OracleSelect => {
            let persona = ctx.population.get(&case.persona_id)?;
            persona::pick_winner(persona, &case.test_prompt_id, ctx.corpus)?
        }
        PolicyKind::RandomSelect => {
            let mut r = rng::stream(rng::tagged_seed(spec.seed, &case.persona_id), 0);
            r.gen_range(0..l)
        }
        PolicyKind::ZeroShot => ctx.corpus.model_index(&ctx.reference_model)?,
        PolicyKind::NearestWinnerSelect => {
            let emb = ctx.response_embeddings()?;
            let liked: Vec<InteractionTriplet> = if ctx.historical.is_some() {
                let r = meta_retrieve(case, ctx, spec)?;
                outcome.meta.retrieved_users = r.users;
                outcome.meta.retrieved_prompts = r.examples.iter().map(|t| t.prompt_id.clone()).collect();
                r.examples
            } else {
                case.history.triplets.clone()
            };
            let keys: Vec<String> = liked
                .iter()
                .map(|t| response_key(&t.prompt_id, &ctx.corpus.model_ids()[t.winner_index]))
                .collect();
            if keys.is_empty() {
                outcome.meta.fallback = Some("zero_shot".into());
                ctx.corpus.model_index(&ctx.reference_model)?
            } else {
                let target = mean_vector(&keys, emb)?;
                let mut best = (0, f64::NEG_INFINITY);
                for (i, m) in ctx.corpus.model_ids().iter().enumerate() {
                    let v = emb.require(&response_key(&case.test_prompt_id, m))?;
                    let s = retrieval::cosine_similarity(&target, v).unwrap_or(f64::NEG_INFINITY);
                    if s > best.1 {
                        best = (i, s);
                    }
                }
                best.0
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "{} has no selection-mode analog",
                other.as_str()
            )))
        }
    };
    outcome.chosen_index = Some(chosen);
    outcome.rendered_prompt = ctx.corpus.prompt(&case.test_prompt_id)?.text.clone();
    Ok(outcome)
}

pub fn run_policy(case: &TestCase, ctx: &PolicyContext<'_>, spec: &PolicySpec, mode: Mode) -> Result<PolicyOutcome> {
    spec.validate(mode)?;
    match mode {
        Mode::Selection => run_selection_policy(case, ctx, spec),
        Mode::Generative => run_generative(case, ctx, spec),
    }
}

/// Runs every case with at most `max_in_flight` concurrent client calls;
/// outcomes come back in case order.
pub fn run_policy_batch(
    cases: &[TestCase],
    ctx: &PolicyContext<'_>,
    spec: &PolicySpec,
    mode: Mode,
    max_in_flight: usize,
) -> Result<Vec<PolicyOutcome>> {
    spec.validate(mode)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| cases.par_iter().map(|c| run_policy(c, ctx, spec, mode)).collect())
}
