//! Generation and scoring clients: HTTP endpoints with retry, plus
//! deterministic offline stubs.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::retrieval::cosine_similarity;

use super::templates::IclExample;

pub const GEN_URL_ENV: &str = "PREFSIM_GEN_URL";
pub const SCORE_URL_ENV: &str = "PREFSIM_SCORE_URL";

/// A rendered ICL context together with the pieces it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub examples: Vec<IclExample>,
    pub test_prompt: String,
}

pub trait GenerationClient: Send + Sync {
    fn generate(&self, prompt: &RenderedPrompt) -> Result<String>;
    fn name(&self) -> &str;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub reward_models: Vec<String>,
    #[serde(default)]
    pub stub: bool,
}

pub trait ScorerClient: Send + Sync {
    /// `prompt_id` lets offline scorers find the stored candidates; HTTP
    /// scorers send only the prompt text.
    fn score(&self, prompt_id: &str, prompt: &str, response: &str) -> Result<ScoreVector>;
    fn name(&self) -> &str;
}

/// Echoes the first liked response, or the test prompt when there is none.
#[derive(Clone, Debug, Default)]
pub struct EchoGenerator;

impl GenerationClient for EchoGenerator {
    fn generate(&self, prompt: &RenderedPrompt) -> Result<String> {
        Ok(prompt
            .examples
            .iter()
            .find_map(|e| e.liked.clone())
            .unwrap_or_else(|| prompt.test_prompt.clone()))
    }

    fn name(&self) -> &str {
        "stub-echo"
    }
}

const BOW_DIM: usize = 256;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Hashed bag-of-words vector (lowercased alphanumeric words).
pub fn bag_of_words(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; BOW_DIM];
    for w in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        v[(fnv1a(w.to_lowercase().as_bytes()) % BOW_DIM as u64) as usize] += 1.0;
    }
    v
}

/// Returns the stored score row of the prompt's candidate closest to the
/// text: an exact text match if present, otherwise the highest bag-of-words
/// cosine (ties to the lowest index).
#[derive(Clone, Debug)]
pub struct StubScorer {
    corpus: Arc<Corpus>,
}

impl StubScorer {
    pub fn new(corpus: Arc<Corpus>) -> Self {
        Self { corpus }
    }

    pub fn closest(&self, prompt_id: &str, response: &str) -> Result<usize> {
        let p = self.corpus.prompt_index(prompt_id)?;
        let texts = self.corpus.responses_at(p);
        if let Some(i) = texts.iter().position(|t| t == response) {
            return Ok(i);
        }
        let q = bag_of_words(response);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, t) in texts.iter().enumerate() {
            let s = cosine_similarity(&q, &bag_of_words(t)).unwrap_or(0.0);
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(best.0)
    }
}

impl ScorerClient for StubScorer {
    fn score(&self, prompt_id: &str, _prompt: &str, response: &str) -> Result<ScoreVector> {
        let i = self.closest(prompt_id, response)?;
        Ok(ScoreVector {
            scores: self.corpus.rewards(prompt_id)?.row(i).to_vec(),
            reward_models: self.corpus.reward_models().to_vec(),
            stub: true,
        })
    }

    fn name(&self) -> &str {
        "stub-nearest-stored"
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Clone, Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    /// Delay before each retry; its length is the retry count.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(1),
                Duration::from_secs(2),
            ],
        }
    }
}

pub(crate) enum Attempt {
    Retry(String),
    Fatal(Error),
}

pub(crate) fn with_retry<T>(
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
    mut call: impl FnMut() -> std::result::Result<T, Attempt>,
) -> Result<T> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match call() {
            Ok(v) => return Ok(v),
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::Retry(message)) => match policy.backoff.get(attempts - 1) {
                Some(d) => sleeper.sleep(*d),
                None => return Err(Error::Transport { attempts, message }),
            },
        }
    }
}

fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    body: &Req,
) -> std::result::Result<Resp, Attempt> {
    match agent.post(url).send_json(body) {
        Ok(resp) => {
            let text = resp
                .into_string()
                .map_err(|e| Attempt::Retry(format!("reading body: {e}")))?;
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(Error::Protocol(format!("{url}: {e}"))))
        }
        Err(ureq::Error::Status(code, _)) if code >= 500 || code == 429 => {
            Err(Attempt::Retry(format!("{url}: HTTP {code}")))
        }
        Err(ureq::Error::Status(code, _)) => Err(Attempt::Fatal(Error::Protocol(format!("{url}: HTTP {code}")))),
        Err(e) => Err(Attempt::Retry(format!("{url}: {e}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
    pub reward_models: Vec<String>,
}

/// `POST {base}/generate`.
pub struct HttpGenerationClient {
    url: String,
    agent: ureq::Agent,
    pub max_tokens: u32,
    pub temperature: f64,
    pub retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl HttpGenerationClient {
    pub fn new(base_url: &str) -> Self {
        Self::with_sleeper(base_url, Arc::new(ThreadSleeper))
    }

    pub fn with_sleeper(base_url: &str, sleeper: Arc<dyn Sleeper>) -> Self {
        Self {
            url: format!("{}/generate", base_url.trim_end_matches('/')),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
            max_tokens: 512,
            temperature: 1.0,
            retry: RetryPolicy::default(),
            sleeper,
        }
    }
}

impl GenerationClient for HttpGenerationClient {
    fn generate(&self, prompt: &RenderedPrompt) -> Result<String> {
        let req = GenerateRequest {
            prompt: prompt.text.clone(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        };
        let resp: GenerateResponse = with_retry(&self.retry, self.sleeper.as_ref(), || {
            post_json(&self.agent, &self.url, &req)
        })?;
        Ok(resp.text)
    }

    fn name(&self) -> &str {
        &self.url
    }
}

/// `POST {base}/score`.
pub struct HttpScorerClient {
    url: String,
    agent: ureq::Agent,
    expected_b: usize,
    pub retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl HttpScorerClient {
    pub fn new(base_url: &str, expected_b: usize) -> Self {
        Self::with_sleeper(base_url, expected_b, Arc::new(ThreadSleeper))
    }

    pub fn with_sleeper(base_url: &str, expected_b: usize, sleeper: Arc<dyn Sleeper>) -> Self {
        Self {
            url: format!("{}/score", base_url.trim_end_matches('/')),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
            expected_b,
            retry: RetryPolicy::default(),
            sleeper,
        }
    }
}

impl ScorerClient for HttpScorerClient {
    fn score(&self, _prompt_id: &str, prompt: &str, response: &str) -> Result<ScoreVector> {
        let req = ScoreRequest {
            prompt: prompt.to_string(),
            response: response.to_string(),
        };
        let resp: ScoreResponse = with_retry(&self.retry, self.sleeper.as_ref(), || {
            post_json(&self.agent, &self.url, &req)
        })?;
        if resp.scores.len() != self.expected_b || resp.reward_models.len() != resp.scores.len() {
            return Err(Error::Protocol(format!(
                "{}: {} scores / {} names, expected B={}",
                self.url,
                resp.scores.len(),
                resp.reward_models.len(),
                self.expected_b
            )));
        }
        if resp.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Protocol(format!("{}: non-finite score", self.url)));
        }
        Ok(ScoreVector {
            scores: resp.scores,
            reward_models: resp.reward_models,
            stub: false,
        })
    }

    fn name(&self) -> &str {
        &self.url
    }
}

/// HTTP clients when the endpoint variables are set, stubs otherwise.
pub fn clients_from_env(corpus: Arc<Corpus>) -> (Box<dyn GenerationClient>, Box<dyn ScorerClient>) {
    let generator: Box<dyn GenerationClient> = match std::env::var(GEN_URL_ENV) {
        Ok(url) if !url.is_empty() => Box::new(HttpGenerationClient::new(&url)),
        _ => Box::new(EchoGenerator),
    };
    let b = corpus.num_reward_models();
    let scorer: Box<dyn ScorerClient> = match std::env::var(SCORE_URL_ENV) {
        Ok(url) if !url.is_empty() => Box::new(HttpScorerClient::new(&url, b)),
        _ => Box::new(StubScorer::new(corpus)),
    };
    (generator, scorer)
}
