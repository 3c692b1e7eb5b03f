//! Federated training rounds over client-local data with shared passage
//! stores, plus local and centralized baselines and the test-time inference
//! path.
//!
//! A collaborative round sends the global parameters to every client, trains
//! each client full-batch against its assigned train store, aggregates with
//! weighted parameter averaging, and evaluates on every client's own test
//! store. Reports track the best client-averaged EM across rounds.

use crate::benchmark::{QaPartition, StoreAssignment};
use crate::corpus::{Corpus, QAPair};
use crate::index::{Bm25Index, Bm25Params};
use crate::metrics;
use crate::model::{
    train_epochs, GenerationContext, ModelError, ModelParams, PreparedExample, RetrievedContext,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("fedavg needs at least one update")]
    NoUpdates,
    #[error("duplicate client id {0} in aggregation")]
    DuplicateClient(usize),
    #[error("aggregation weights must be finite, nonnegative, and sum to > 0")]
    BadWeights,
    #[error("parameter dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("client {client} diverged in round {round}: {source}")]
    ClientDiverged {
        round: usize,
        client: usize,
        #[source]
        source: ModelError,
    },
    #[error("client {client}: qa `{qa_id}` retrieved no passages from its train store")]
    EmptyRetrieval { client: usize, qa_id: String },
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Training configuration modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Collaborative,
    Local,
    Centralized,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Collaborative => "collaborative",
            Mode::Local => "local",
            Mode::Centralized => "centralized",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collab" | "collaborative" => Ok(Mode::Collaborative),
            "local" => Ok(Mode::Local),
            "central" | "centralized" => Ok(Mode::Centralized),
            other => Err(format!("unknown mode `{other}` (collab|local|central)")),
        }
    }
}

/// Round/loop configuration shared by all modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundConfig {
    pub mode: Mode,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub lr: f64,
    pub top_k: usize,
    /// Local mode: evaluate every this many epochs. Defaults to
    /// `epochs_per_round`, which aligns local checkpoints with rounds.
    pub eval_interval: Option<usize>,
    /// Local mode: total epoch budget. Defaults to
    /// `rounds * epochs_per_round`.
    pub local_total_epochs: Option<usize>,
    pub max_answer_len: usize,
    pub bm25: Bm25Params,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            mode: Mode::Collaborative,
            rounds: 10,
            epochs_per_round: 64,
            lr: 0.3,
            top_k: 40,
            eval_interval: None,
            local_total_epochs: None,
            max_answer_len: 10,
            bm25: Bm25Params::default(),
        }
    }
}

impl RoundConfig {
    fn validate(&self) -> Result<(), FederationError> {
        if self.epochs_per_round == 0 {
            return Err(FederationError::InvalidConfig("epochs_per_round must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FederationError::InvalidConfig("lr must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(FederationError::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.max_answer_len == 0 {
            return Err(FederationError::InvalidConfig("max_answer_len must be >= 1".into()));
        }
        if self.eval_interval == Some(0) {
            return Err(FederationError::InvalidConfig("eval_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// One client's parameter update with its aggregation weight.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client: usize,
    pub params: ModelParams,
    pub weight: f64,
}

/// Weighted parameter average.
///
/// Updates are summed in ascending client-id order regardless of input
/// order, and the mean is computed as `base + sum(w * (x - base)) / W`, so
/// permuting the input leaves the result bit-identical and averaging
/// identical models returns them unchanged.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ModelParams, FederationError> {
    if updates.is_empty() {
        return Err(FederationError::NoUpdates);
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client);
    for pair in sorted.windows(2) {
        if pair[0].client == pair[1].client {
            return Err(FederationError::DuplicateClient(pair[0].client));
        }
    }
    let retriever_dim = sorted[0].params.retriever_w.len();
    let reader_dim = sorted[0].params.reader_w.len();
    let mut total_weight = 0.0;
    for u in &sorted {
        if u.params.retriever_w.len() != retriever_dim || u.params.reader_w.len() != reader_dim {
            return Err(FederationError::DimensionMismatch(format!(
                "client {} params have different dimensions",
                u.client
            )));
        }
        if !(u.weight.is_finite() && u.weight >= 0.0) {
            return Err(FederationError::BadWeights);
        }
        total_weight += u.weight;
    }
    if !(total_weight > 0.0) {
        return Err(FederationError::BadWeights);
    }

    let base = &sorted[0].params;
    let mut result = base.clone();
    for dim in 0..retriever_dim {
        let mut acc = 0.0;
        for u in &sorted {
            acc += u.weight * (u.params.retriever_w[dim] - base.retriever_w[dim]);
        }
        result.retriever_w[dim] = base.retriever_w[dim] + acc / total_weight;
    }
    for dim in 0..reader_dim {
        let mut acc = 0.0;
        for u in &sorted {
            acc += u.weight * (u.params.reader_w[dim] - base.reader_w[dim]);
        }
        result.reader_w[dim] = base.reader_w[dim] + acc / total_weight;
    }
    let mut acc = 0.0;
    for u in &sorted {
        acc += u.weight * (u.params.tau - base.tau);
    }
    result.tau = base.tau + acc / total_weight;
    Ok(result)
}

/// Per-client, per-round evaluation scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub client: usize,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub per_client: Vec<ClientEval>,
    pub avg_em: f64,
    pub avg_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub qa_id: String,
    pub client: usize,
    pub prediction: String,
}

/// Full run outcome. `best_avg_em` is the maximum round average (the
/// earliest such round wins ties); `predictions` are the decoded answers
/// from that round. Scores are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub variant: String,
    /// "client_avg" for collaborative/local runs, "micro" for centralized.
    pub aggregation: String,
    pub rounds: Vec<RoundReport>,
    pub best_avg_em: f64,
    pub best_round: usize,
    pub predictions: Vec<Prediction>,
}

impl RunReport {
    pub fn save(&self, path: &std::path::Path) -> Result<(), FederationError> {
        let body = serde_json::to_string_pretty(self)
            .expect("run report serialization cannot fail");
        std::fs::write(path, body).map_err(|e| {
            FederationError::InvalidConfig(format!("cannot write {}: {e}", path.display()))
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, FederationError> {
        let body = std::fs::read_to_string(path).map_err(|e| {
            FederationError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
        })?;
        serde_json::from_str(&body)
            .map_err(|e| FederationError::InvalidConfig(format!("bad run report: {e}")))
    }
}

struct TestExample {
    qa: QAPair,
    generation: GenerationContext,
}

struct ClientData {
    client: usize,
    train: Vec<PreparedExample>,
    test: Vec<TestExample>,
}

/// A fully prepared run: indices built, retrieval pools frozen, reader
/// tables cached. Training then touches no randomness at all.
pub struct Session {
    config: RoundConfig,
    variant: String,
    clients: Vec<ClientData>,
    /// Centralized mode only: all clients' train QA against the union store.
    central_train: Vec<PreparedExample>,
}

fn store_fingerprint(ids: &std::collections::BTreeSet<String>) -> String {
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update([0u8]);
    }
    format!("{:x}", hasher.finalize())
}

impl Session {
    pub fn prepare(
        corpus: &Corpus,
        partition: &QaPartition,
        assignment: &StoreAssignment,
        config: RoundConfig,
    ) -> Result<Self, FederationError> {
        config.validate()?;
        let m = partition.clients();
        if assignment.clients() != m {
            return Err(FederationError::InvalidConfig(format!(
                "assignment covers {} clients, partition has {m}",
                assignment.clients()
            )));
        }

        let init = ModelParams::init();
        let mut index_cache: HashMap<String, Arc<Bm25Index>> = HashMap::new();
        let mut index_for = |ids: &std::collections::BTreeSet<String>| -> Result<Arc<Bm25Index>, FederationError> {
            let key = store_fingerprint(ids);
            if let Some(found) = index_cache.get(&key) {
                return Ok(found.clone());
            }
            let passages = corpus.subset(ids)?;
            let index = Arc::new(Bm25Index::build(&passages, config.bm25)?);
            index_cache.insert(key, index.clone());
            Ok(index)
        };

        let prepare_batch = |index: &Bm25Index,
                             qas: &[QAPair],
                             client: usize|
         -> Result<Vec<PreparedExample>, FederationError> {
            let mut sorted: Vec<&QAPair> = qas.iter().collect();
            sorted.sort_by(|a, b| a.id.cmp(&b.id));
            let mut batch = Vec::with_capacity(sorted.len());
            let mut skipped = 0usize;
            for qa in sorted {
                let ctx =
                    RetrievedContext::retrieve(&qa.question, index, corpus, config.top_k, &init)?;
                let example = PreparedExample::new(qa, ctx).map_err(|e| match e {
                    ModelError::EmptyContext { qa_id } => {
                        FederationError::EmptyRetrieval { client, qa_id }
                    }
                    other => other.into(),
                })?;
                // An example whose candidate pool holds no answer evidence
                // has no finite loss; it cannot contribute a gradient.
                if example.reachable() {
                    batch.push(example);
                } else {
                    skipped += 1;
                }
            }
            if skipped > 0 {
                log::warn!(
                    "client {client}: skipped {skipped}/{} train examples with no retrievable \
                     answer evidence in the assigned store",
                    skipped + batch.len()
                );
            }
            Ok(batch)
        };

        let mut clients = Vec::with_capacity(m);
        for client in 0..m {
            let train_index = index_for(assignment.train_store(client))?;
            let test_index = index_for(&assignment.test[client])?;
            let train = prepare_batch(&train_index, &partition.train[client], client)?;
            let mut test = Vec::with_capacity(partition.test[client].len());
            let mut sorted_test: Vec<&QAPair> = partition.test[client].iter().collect();
            sorted_test.sort_by(|a, b| a.id.cmp(&b.id));
            for qa in sorted_test {
                let ctx = RetrievedContext::retrieve(
                    &qa.question,
                    &test_index,
                    corpus,
                    config.top_k,
                    &init,
                )?;
                test.push(TestExample { qa: qa.clone(), generation: GenerationContext::new(ctx) });
            }
            clients.push(ClientData { client, train, test });
        }

        let central_train = if config.mode == Mode::Centralized {
            let union = assignment.train_union();
            let union_index = index_for(&union)?;
            let all_qa: Vec<QAPair> =
                partition.train.iter().flatten().cloned().collect();
            prepare_batch(&union_index, &all_qa, 0)?
        } else {
            Vec::new()
        };

        let trainable: usize = clients.iter().map(|c| c.train.len()).sum();
        if trainable == 0 && config.mode != Mode::Centralized {
            return Err(FederationError::InvalidConfig(
                "no client retains any trainable example against its assigned store".into(),
            ));
        }
        if config.mode == Mode::Centralized && central_train.is_empty() {
            return Err(FederationError::InvalidConfig(
                "no trainable example against the union store".into(),
            ));
        }

        Ok(Session {
            config,
            variant: assignment.variant.as_str().to_string(),
            clients,
            central_train,
        })
    }

    pub fn config(&self) -> &RoundConfig {
        &self.config
    }

    /// Per-client training batches in client order (useful for replaying
    /// rounds externally).
    pub fn train_batches(&self) -> impl Iterator<Item = (usize, &[PreparedExample])> {
        self.clients.iter().map(|c| (c.client, c.train.as_slice()))
    }

    fn evaluate(&self, params: &ModelParams) -> (Vec<ClientEval>, Vec<Prediction>, f64, f64) {
        let mut per_client = Vec::with_capacity(self.clients.len());
        let mut predictions = Vec::new();
        let mut all_scores = Vec::new();
        for data in &self.clients {
            let mut scores = Vec::with_capacity(data.test.len());
            for example in &data.test {
                let decoded =
                    example.generation.generate(params, self.config.max_answer_len).join();
                let score = metrics::score_pair(
                    &example.qa.id,
                    data.client,
                    &decoded,
                    &example.qa.answers,
                );
                predictions.push(Prediction {
                    qa_id: example.qa.id.clone(),
                    client: data.client,
                    prediction: decoded,
                });
                scores.push(score);
            }
            let n = scores.len().max(1) as f64;
            per_client.push(ClientEval {
                client: data.client,
                em: scores.iter().map(|s| s.em).sum::<f64>() / n,
                f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
            });
            all_scores.extend(scores);
        }
        let micro_em = metrics::aggregate(&all_scores, metrics::Aggregation::Micro);
        let micro_f1 = if all_scores.is_empty() {
            0.0
        } else {
            all_scores.iter().map(|s| s.f1).sum::<f64>() / all_scores.len() as f64
        };
        (per_client, predictions, micro_em, micro_f1)
    }

    fn round_report(&self, round: usize, params: &ModelParams) -> (RoundReport, Vec<Prediction>) {
        let (per_client, predictions, micro_em, micro_f1) = self.evaluate(params);
        let (avg_em, avg_f1) = match self.config.mode {
            Mode::Centralized => (micro_em, micro_f1),
            _ => {
                let n = per_client.len().max(1) as f64;
                (
                    per_client.iter().map(|c| c.em).sum::<f64>() / n,
                    per_client.iter().map(|c| c.f1).sum::<f64>() / n,
                )
            }
        };
        (RoundReport { round, per_client, avg_em, avg_f1 }, predictions)
    }
}

struct BestTracker {
    rounds: Vec<RoundReport>,
    best_round: usize,
    best_avg_em: f64,
    best_predictions: Vec<Prediction>,
}

impl BestTracker {
    fn new() -> Self {
        BestTracker {
            rounds: Vec::new(),
            best_round: 0,
            best_avg_em: f64::NEG_INFINITY,
            best_predictions: Vec::new(),
        }
    }

    fn record(&mut self, report: RoundReport, predictions: Vec<Prediction>) {
        if report.avg_em > self.best_avg_em {
            self.best_avg_em = report.avg_em;
            self.best_round = report.round;
            self.best_predictions = predictions;
        }
        self.rounds.push(report);
    }

    fn finish(self, mode: Mode, variant: &str) -> RunReport {
        RunReport {
            mode: mode.as_str().to_string(),
            variant: variant.to_string(),
            aggregation: match mode {
                Mode::Centralized => "micro".to_string(),
                _ => "client_avg".to_string(),
            },
            rounds: self.rounds,
            best_avg_em: self.best_avg_em,
            best_round: self.best_round,
            predictions: self.best_predictions,
        }
    }
}

/// Dispatches on the configured mode.
pub fn run(session: &Session) -> Result<RunReport, FederationError> {
    match session.config.mode {
        Mode::Collaborative => run_collaborative(session),
        Mode::Local => run_local(session),
        Mode::Centralized => run_centralized(session),
    }
}

/// Collaborative rounds: broadcast, local training, weighted aggregation,
/// evaluation at every round end. Zero rounds means evaluating the initial
/// parameters only.
pub fn run_collaborative(session: &Session) -> Result<RunReport, FederationError> {
    let config = &session.config;
    let mut tracker = BestTracker::new();
    let mut global = ModelParams::init();
    if config.rounds == 0 {
        let (report, predictions) = session.round_report(0, &global);
        tracker.record(report, predictions);
    }
    for round in 1..=config.rounds {
        let mut updates = Vec::with_capacity(session.clients.len());
        for data in &session.clients {
            let (trained, _trace) =
                train_epochs(&global, &data.train, config.lr, config.epochs_per_round).map_err(
                    |e| match e {
                        e @ (ModelError::Divergence { .. } | ModelError::NonFinite { .. }) => {
                            FederationError::ClientDiverged { round, client: data.client, source: e }
                        }
                        other => other.into(),
                    },
                )?;
            updates.push(ClientUpdate {
                client: data.client,
                params: trained,
                weight: data.train.len() as f64,
            });
        }
        global = fedavg(&updates)?;
        let (report, predictions) = session.round_report(round, &global);
        tracker.record(report, predictions);
    }
    Ok(tracker.finish(Mode::Collaborative, &session.variant))
}

/// Independent per-client training with periodic evaluation and no
/// aggregation. Checkpoint `c` reports every client after `c * interval`
/// epochs.
pub fn run_local(session: &Session) -> Result<RunReport, FederationError> {
    let config = &session.config;
    let total = config
        .local_total_epochs
        .unwrap_or(config.rounds * config.epochs_per_round);
    let interval = config.eval_interval.unwrap_or(config.epochs_per_round);
    let checkpoints = total / interval;
    let mut tracker = BestTracker::new();
    let mut params: Vec<ModelParams> =
        session.clients.iter().map(|_| ModelParams::init()).collect();
    if checkpoints == 0 {
        let (report, predictions) = session.round_report(0, &ModelParams::init());
        tracker.record(report, predictions);
        return Ok(tracker.finish(Mode::Local, &session.variant));
    }
    for checkpoint in 1..=checkpoints {
        let mut per_client = Vec::with_capacity(session.clients.len());
        let mut predictions = Vec::new();
        let mut all_scores = Vec::new();
        for (i, data) in session.clients.iter().enumerate() {
            let (trained, _trace) = train_epochs(&params[i], &data.train, config.lr, interval)
                .map_err(|e| match e {
                    e @ (ModelError::Divergence { .. } | ModelError::NonFinite { .. }) => {
                        FederationError::ClientDiverged {
                            round: checkpoint,
                            client: data.client,
                            source: e,
                        }
                    }
                    other => other.into(),
                })?;
            params[i] = trained;
            // Evaluate this client at its own checkpoint.
            let mut scores = Vec::with_capacity(data.test.len());
            for example in &data.test {
                let decoded =
                    example.generation.generate(&params[i], config.max_answer_len).join();
                let score = metrics::score_pair(
                    &example.qa.id,
                    data.client,
                    &decoded,
                    &example.qa.answers,
                );
                predictions.push(Prediction {
                    qa_id: example.qa.id.clone(),
                    client: data.client,
                    prediction: decoded,
                });
                scores.push(score);
            }
            let n = scores.len().max(1) as f64;
            per_client.push(ClientEval {
                client: data.client,
                em: scores.iter().map(|s| s.em).sum::<f64>() / n,
                f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
            });
            all_scores.extend(scores);
        }
        let n = per_client.len().max(1) as f64;
        let report = RoundReport {
            round: checkpoint,
            avg_em: per_client.iter().map(|c| c.em).sum::<f64>() / n,
            avg_f1: per_client.iter().map(|c| c.f1).sum::<f64>() / n,
            per_client,
        };
        tracker.record(report, predictions);
    }
    Ok(tracker.finish(Mode::Local, &session.variant))
}

/// A single model trained on the union of all clients' QA against the union
/// train store, evaluated micro-averaged over every client's test store.
pub fn run_centralized(session: &Session) -> Result<RunReport, FederationError> {
    let config = &session.config;
    let mut tracker = BestTracker::new();
    let mut params = ModelParams::init();
    if config.rounds == 0 {
        let (report, predictions) = session.round_report(0, &params);
        tracker.record(report, predictions);
    }
    for round in 1..=config.rounds {
        let (trained, _trace) =
            train_epochs(&params, &session.central_train, config.lr, config.epochs_per_round)
                .map_err(|e| match e {
                    e @ (ModelError::Divergence { .. } | ModelError::NonFinite { .. }) => {
                        FederationError::ClientDiverged { round, client: 0, source: e }
                    }
                    other => other.into(),
                })?;
        params = trained;
        let (report, predictions) = session.round_report(round, &params);
        tracker.record(report, predictions);
    }
    Ok(tracker.finish(Mode::Centralized, &session.variant))
}

/// Test-time inference: BM25 top-k from the given store index, retriever
/// re-rank, greedy decode. Returns one prediction per query in input order.
pub fn inference(
    params: &ModelParams,
    queries: &[QAPair],
    test_index: &Bm25Index,
    corpus: &Corpus,
    top_k: usize,
    max_answer_len: usize,
) -> Result<Vec<Prediction>, FederationError> {
    let mut out = Vec::with_capacity(queries.len());
    for qa in queries {
        let ctx = RetrievedContext::retrieve(&qa.question, test_index, corpus, top_k, params)?;
        let decoded = crate::model::generate(&ctx, params, max_answer_len).join();
        out.push(Prediction { qa_id: qa.id.clone(), client: qa.client, prediction: decoded });
    }
    Ok(out)
}
