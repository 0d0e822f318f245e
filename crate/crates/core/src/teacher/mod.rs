//! Completion client for teacher and evaluated models: caching, retries with
//! backoff, request budgets and bounded parallelism, plus inference-chain
//! generation and validation.

mod cache;
mod chain;
mod http;
pub mod stub;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::MicRecord;
use crate::foundations::parse_foundations;
use crate::prompts::{build_teacher_prompt, TaskKind};

pub use cache::{CacheEntry, ResponseCache};
pub(crate) use chain::marker_positions;
pub use chain::{segment_chain, InferenceChain};
pub use http::{EndpointConfig, HttpEndpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingParams {
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self { max_tokens: 512, temperature: 0.0, stop: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub endpoint: String,
    pub prompt: String,
    pub params: DecodingParams,
}

impl CompletionRequest {
    pub fn new(endpoint: impl Into<String>, prompt: impl Into<String>, params: DecodingParams) -> Self {
        Self { endpoint: endpoint.into(), prompt: prompt.into(), params }
    }

    pub fn validate(&self) -> Result<(), TeacherError> {
        if self.params.max_tokens < 1 {
            return Err(TeacherError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if self.params.temperature.is_nan() || self.params.temperature < 0.0 {
            return Err(TeacherError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 over the serialized (endpoint, prompt, params) triple.
    pub fn cache_key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Per-token log-probability request for perplexity evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub text: String,
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("transient endpoint failure: {0}")]
    Transient(String),
    #[error("endpoint rejected request: {0}")]
    Fatal(String),
    #[error("endpoint does not support {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TeacherError {
    #[error("endpoint unreachable after {attempts} attempts: {last}")]
    EndpointUnreachable { attempts: u32, last: String },
    #[error("request budget of {cap} calls exhausted")]
    BudgetExceeded { cap: usize },
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("malformed inference chain: {0}")]
    MalformedChain(String),
    #[error("chain generation failed for {id} after {attempts} attempts: {reason}")]
    ChainGenerationFailed { id: String, attempts: u32, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint error: {0}")]
    Endpoint(EndpointError),
    #[error("cache failure: {0}")]
    Cache(String),
}

/// Anything that can complete a prompt: an HTTP server, or an in-process
/// stub for offline runs.
pub trait Endpoint: Send + Sync {
    fn id(&self) -> String;

    fn complete(&self, req: &CompletionRequest) -> Result<String, EndpointError>;

    fn score(&self, _req: &ScoreRequest) -> Result<Vec<f64>, EndpointError> {
        Err(EndpointError::Unsupported("scoring"))
    }
}

impl<E: Endpoint + ?Sized> Endpoint for Arc<E> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, EndpointError> {
        (**self).complete(req)
    }

    fn score(&self, req: &ScoreRequest) -> Result<Vec<f64>, EndpointError> {
        (**self).score(req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientPolicy {
    /// Retries after the first attempt on transient failures.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Upper bound on network calls over the client's lifetime.
    pub request_cap: Option<usize>,
    pub max_in_flight: usize,
    /// Minimum spacing between consecutive network calls.
    pub min_interval_ms: u64,
}

impl Default for ClientPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            request_cap: None,
            max_in_flight: 8,
            min_interval_ms: 0,
        }
    }
}

pub struct CompletionClient {
    endpoint: Arc<dyn Endpoint>,
    endpoint_id: String,
    cache: ResponseCache,
    policy: ClientPolicy,
    network_calls: AtomicUsize,
    next_slot: Mutex<Instant>,
    pool: rayon::ThreadPool,
}

impl CompletionClient {
    pub fn new(endpoint: Arc<dyn Endpoint>, cache: ResponseCache, policy: ClientPolicy) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(policy.max_in_flight.max(1))
            .build()
            .expect("thread pool");
        let endpoint_id = endpoint.id();
        Self {
            endpoint,
            endpoint_id,
            cache,
            policy,
            network_calls: AtomicUsize::new(0),
            next_slot: Mutex::new(Instant::now()),
            pool,
        }
    }

    pub fn endpoint_id(&self) -> &str {
        &self.endpoint_id
    }

    pub fn request(&self, prompt: impl Into<String>, params: DecodingParams) -> CompletionRequest {
        CompletionRequest::new(self.endpoint_id.clone(), prompt, params)
    }

    /// Network calls issued so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    fn acquire_call(&self) -> Result<(), TeacherError> {
        let n = self.network_calls.fetch_add(1, Ordering::SeqCst);
        if let Some(cap) = self.policy.request_cap {
            if n >= cap {
                self.network_calls.fetch_sub(1, Ordering::SeqCst);
                return Err(TeacherError::BudgetExceeded { cap });
            }
        }
        if self.policy.min_interval_ms > 0 {
            let wait = {
                let mut slot = self.next_slot.lock().unwrap();
                let now = Instant::now();
                let start = (*slot).max(now);
                *slot = start + Duration::from_millis(self.policy.min_interval_ms);
                start - now
            };
            std::thread::sleep(wait);
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .policy
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.policy.backoff_max_ms);
        Duration::from_millis(ms)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, EndpointError>) -> Result<T, TeacherError> {
        let mut attempt = 0u32;
        loop {
            self.acquire_call()?;
            match call() {
                Ok(v) => return Ok(v),
                Err(EndpointError::Transient(msg)) => {
                    if attempt >= self.policy.max_retries {
                        return Err(TeacherError::EndpointUnreachable { attempts: attempt + 1, last: msg });
                    }
                    log::debug!("transient failure (attempt {}): {msg}", attempt + 1);
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(TeacherError::Endpoint(e)),
            }
        }
    }

    /// Completes `req`, serving repeated requests from the cache.
    pub fn complete(&self, req: &CompletionRequest) -> Result<String, TeacherError> {
        req.validate()?;
        let key = req.cache_key();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let text = self.with_retries(|| self.endpoint.complete(req))?;
        if text.trim().is_empty() {
            return Err(TeacherError::EmptyCompletion);
        }
        self.cache.put(&key, req, &text)?;
        Ok(text)
    }

    /// Completes every request with at most `max_in_flight` concurrent calls;
    /// results come back in input order.
    pub fn complete_many(&self, reqs: &[CompletionRequest]) -> Vec<Result<String, TeacherError>> {
        self.pool.install(|| reqs.par_iter().map(|r| self.complete(r)).collect())
    }

    /// Runs `f` over `items` inside the client's bounded pool, keeping order.
    pub fn map_bounded<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
        self.pool.install(|| items.par_iter().map(&f).collect())
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<Vec<f64>, TeacherError> {
        self.with_retries(|| self.endpoint.score(req))
    }
}

/// Temperature used for regeneration attempt `attempt` (0 = first try).
pub fn escalated_temperature(base: f64, attempt: u32) -> f64 {
    if attempt == 0 {
        base
    } else {
        (base + 0.3 * f64::from(attempt)).min(base.max(1.0))
    }
}

/// Index of the step that must name every gold foundation.
pub fn foundation_step(task: TaskKind) -> usize {
    match task {
        TaskKind::Joint => 2,
        TaskKind::Mfc | TaskKind::Judgment => 3,
    }
}

/// Checks that the task's foundation-linking step names every gold foundation.
pub fn check_chain(chain: &InferenceChain, record: &MicRecord, task: TaskKind) -> Result<(), String> {
    let n = foundation_step(task);
    let step = chain.step(n).unwrap_or_default();
    let named = parse_foundations(step).ok();
    let missing: Vec<&str> = record
        .gold_foundations
        .iter()
        .filter(|f| !named.is_some_and(|s| s.contains(*f)))
        .map(|f| f.name())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(format!("step {n} omits {}", missing.join(", ")))
    }
}

/// Asks the teacher for the record's inference chain, regenerating with a
/// higher temperature when the answer is malformed or omits a gold
/// foundation. Endpoint-level failures are returned as-is.
pub fn generate_chain(
    client: &CompletionClient,
    record: &MicRecord,
    task: TaskKind,
    max_regens: u32,
    params: &DecodingParams,
) -> Result<InferenceChain, TeacherError> {
    let prompt = build_teacher_prompt(record, task);
    let mut reason = String::new();
    for attempt in 0..=max_regens {
        let mut p = params.clone();
        p.temperature = escalated_temperature(params.temperature, attempt);
        let raw = match client.complete(&client.request(prompt.clone(), p)) {
            Ok(raw) => raw,
            Err(TeacherError::EmptyCompletion) => {
                reason = "empty completion".into();
                continue;
            }
            Err(e) => return Err(e),
        };
        match segment_chain(&raw) {
            Ok(chain) => match check_chain(&chain, record, task) {
                Ok(()) => return Ok(chain),
                Err(why) => reason = why,
            },
            Err(e) => reason = e.to_string(),
        }
    }
    Err(TeacherError::ChainGenerationFailed { id: record.id.clone(), attempts: max_regens + 1, reason })
}

#[cfg(test)]
mod tests {
    use super::stub::{ScriptedEndpoint, StubTeacher};
    use super::*;
    use crate::dataset::{Agreement, Judgment};
    use crate::foundations::{FoundationSet, MoralFoundation::*};

    fn fast_policy(max_retries: u32) -> ClientPolicy {
        ClientPolicy { max_retries, backoff_base_ms: 0, backoff_max_ms: 0, ..ClientPolicy::default() }
    }

    fn client(ep: Arc<dyn Endpoint>, policy: ClientPolicy) -> CompletionClient {
        CompletionClient::new(ep, ResponseCache::in_memory(), policy)
    }

    fn money_record() -> MicRecord {
        MicRecord {
            id: "money".into(),
            prompt: "Why don't we just print a bunch of money to pay off our massive world debt?".into(),
            reply: "Because the value of that money then becomes less and less.".into(),
            rot: "Don't think that printing money can fix all of your problems.".into(),
            gold_foundations: FoundationSet::new([Care, Fairness, Sanctity]).unwrap(),
            gold_judgment: Judgment::Agree,
            agreement: Agreement::Full,
        }
    }

    const JUDGMENT_ANSWER: &str = "(1) The moral foundations care, fairness, sanctity refer to a \
        framework for understanding human morality where care involves protecting others from harm, \
        fairness involves justice and proportional reciprocity, and sanctity involves respecting \
        purity and avoiding degradation. (2) The conclusion of the Reply is that printing money to \
        pay off debt is a bad idea because it leads to a severe decrease in the currency's value \
        which causes significant economic problems. (3) The conclusion of the Reply upholds care by \
        preventing the widespread harm of hyperinflation which would hurt the most vulnerable people \
        in society. It upholds fairness by preventing an unjust solution that would erode the real \
        value of savings and contracts. It upholds sanctity by respecting the integrity and \
        stability of the economic system rather than degrading it through a reckless and impure \
        shortcut.";

    #[test]
    fn identical_requests_hit_cache() {
        let ep = Arc::new(ScriptedEndpoint::constant("answer"));
        let c = client(ep.clone(), fast_policy(3));
        let req = c.request("p", DecodingParams::default());
        assert_eq!(c.complete(&req).unwrap(), "answer");
        assert_eq!(c.complete(&req).unwrap(), "answer");
        assert_eq!(ep.calls(), 1);
        assert_eq!(c.network_calls(), 1);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let c = client(Arc::new(ScriptedEndpoint::constant("")), fast_policy(0));
        let req = c.request("p", DecodingParams::default());
        assert_eq!(c.complete(&req), Err(TeacherError::EmptyCompletion));
    }

    #[test]
    fn unreachable_after_retry_cap() {
        let ep = Arc::new(ScriptedEndpoint::failing());
        let c = client(ep.clone(), fast_policy(3));
        let err = c.complete(&c.request("p", DecodingParams::default())).unwrap_err();
        assert!(matches!(err, TeacherError::EndpointUnreachable { attempts: 4, .. }));
        assert_eq!(ep.calls(), 4);
    }

    #[test]
    fn budget_caps_network_calls() {
        let ep = Arc::new(ScriptedEndpoint::echo());
        let c = client(ep.clone(), ClientPolicy { request_cap: Some(2), ..fast_policy(0) });
        let p = DecodingParams::default();
        c.complete(&c.request("a", p.clone())).unwrap();
        c.complete(&c.request("b", p.clone())).unwrap();
        assert_eq!(c.complete(&c.request("c", p.clone())), Err(TeacherError::BudgetExceeded { cap: 2 }));
        assert_eq!(c.complete(&c.request("a", p)).unwrap(), "a");
        assert_eq!(ep.calls(), 2);
    }

    #[test]
    fn parallel_results_keep_order_and_dedupe() {
        let ep = Arc::new(ScriptedEndpoint::echo());
        let c = client(ep.clone(), fast_policy(0));
        let reqs: Vec<_> =
            (0..40).map(|i| c.request(format!("p{}", i % 10), DecodingParams::default())).collect();
        let first = c.complete_many(&reqs[..10]);
        let all = c.complete_many(&reqs);
        assert!(first.iter().all(Result::is_ok));
        for (i, r) in all.iter().enumerate() {
            assert_eq!(r.as_deref().unwrap(), format!("p{}", i % 10));
        }
        assert_eq!(ep.calls(), 10);
    }

    #[test]
    fn invalid_requests_rejected() {
        let c = client(Arc::new(ScriptedEndpoint::echo()), fast_policy(0));
        let bad = c.request("p", DecodingParams { max_tokens: 0, ..DecodingParams::default() });
        assert!(matches!(c.complete(&bad), Err(TeacherError::InvalidRequest(_))));
        let bad = c.request("p", DecodingParams { temperature: -1.0, ..DecodingParams::default() });
        assert!(matches!(c.complete(&bad), Err(TeacherError::InvalidRequest(_))));
    }

    #[test]
    fn worked_judgment_answer_is_accepted() {
        let ep = Arc::new(ScriptedEndpoint::constant(JUDGMENT_ANSWER));
        let c = client(ep.clone(), fast_policy(0));
        let chain =
            generate_chain(&c, &money_record(), TaskKind::Judgment, 2, &DecodingParams::default()).unwrap();
        assert!(chain.step3.contains("upholds care by preventing"));
        assert_eq!(ep.calls(), 1);
    }

    #[test]
    fn unmarked_prose_fails_after_all_regenerations() {
        let ep = Arc::new(ScriptedEndpoint::constant("just some prose without markers"));
        let c = client(ep.clone(), fast_policy(0));
        let err =
            generate_chain(&c, &money_record(), TaskKind::Mfc, 2, &DecodingParams::default()).unwrap_err();
        assert!(matches!(err, TeacherError::ChainGenerationFailed { attempts: 3, .. }));
        assert_eq!(ep.calls(), 3);
    }

    #[test]
    fn chain_missing_gold_foundation_is_regenerated() {
        let ep = Arc::new(ScriptedEndpoint::sequence(vec![
            "(1) a (2) b (3) relevant to care only".into(),
            "(1) a (2) b (3) relevant to care, fairness, and sanctity".into(),
        ]));
        let c = client(ep.clone(), fast_policy(0));
        let chain =
            generate_chain(&c, &money_record(), TaskKind::Mfc, 2, &DecodingParams::default()).unwrap();
        assert!(chain.step3.contains("sanctity"));
        assert_eq!(ep.calls(), 2);
        let temps = ep.temperatures();
        assert!(temps[1] > temps[0]);
    }

    #[test]
    fn stub_teacher_chains_pass_validation() {
        let c = client(Arc::new(StubTeacher), fast_policy(0));
        for r in crate::dataset::synthetic_dataset(30, 9) {
            for task in TaskKind::ALL {
                let chain = generate_chain(&c, &r, task, 0, &DecodingParams::default()).unwrap();
                assert!(check_chain(&chain, &r, task).is_ok());
            }
        }
    }

    #[test]
    fn temperature_escalation() {
        assert_eq!(escalated_temperature(0.0, 0), 0.0);
        assert!((escalated_temperature(0.0, 1) - 0.3).abs() < 1e-12);
        assert_eq!(escalated_temperature(0.0, 10), 1.0);
        assert_eq!(escalated_temperature(1.5, 3), 1.5);
    }
}
