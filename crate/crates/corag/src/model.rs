//! Surrogate differentiable RAG model.
//!
//! A learnable linear re-ranker scores BM25 candidates and a log-linear
//! reader emits answer tokens; the two are combined by marginalizing the
//! reader likelihood over the retrieved passages:
//!
//! ```text
//! p(y|x) = sum_z R(z|x) * prod_i G(y_i | z, x, y_{1:i-1})
//! ```
//!
//! Training pairs a reader loss (the marginal sequence NLL, with the
//! retriever distribution held fixed) with a distillation loss that pulls
//! the retriever toward the reader-likelihood posterior over passages. Both
//! gradients are analytic and checked against finite differences in the
//! test suite.

use crate::corpus::{normalize, Corpus, Passage, QAPair, TokenSeq};
use crate::index::Bm25Index;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Generation-stop sentinel. Never collides with real tokens because the
/// tokenizer strips punctuation.
pub const END_MARKER: &str = "</s>";

/// Retriever feature count: bm25 score, lexical overlap, title overlap, bias.
pub const RETRIEVER_DIM: usize = 4;
/// Reader feature count: in-passage, in-question, repeats-previous,
/// ln(1+tf), bias.
pub const READER_DIM: usize = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("qa `{qa_id}`: no retrieved passages")]
    EmptyContext { qa_id: String },
    #[error("qa `{qa_id}`: non-finite loss (degenerate feature scaling or out-of-vocabulary target)")]
    NonFinite { qa_id: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("params io: {0}")]
    Io(String),
}

/// The federated unit: retriever re-ranker weights, reader weights, and the
/// retriever softmax temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub retriever_w: Vec<f64>,
    pub reader_w: Vec<f64>,
    pub tau: f64,
}

impl ModelParams {
    /// Pure-BM25 retriever, a reader biased toward repeated in-passage
    /// terms, unit temperature. The reader bias stands in for pretraining:
    /// it makes the reader-likelihood posterior informative from the first
    /// epoch, which the distillation loss needs to keep the retriever
    /// anchored on answer-bearing passages.
    pub fn init() -> Self {
        let mut retriever_w = vec![0.0; RETRIEVER_DIM];
        retriever_w[0] = 1.0;
        let mut reader_w = vec![0.0; READER_DIM];
        reader_w[0] = 1.0; // in-passage
        reader_w[3] = 1.0; // ln(1 + tf)
        ModelParams {
            retriever_w,
            reader_w,
            tau: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.retriever_w.len() != RETRIEVER_DIM {
            return Err(ModelError::DimensionMismatch(format!(
                "retriever_w has {} entries, expected {}",
                self.retriever_w.len(),
                RETRIEVER_DIM
            )));
        }
        if self.reader_w.len() != READER_DIM {
            return Err(ModelError::DimensionMismatch(format!(
                "reader_w has {} entries, expected {}",
                self.reader_w.len(),
                READER_DIM
            )));
        }
        let finite = self.retriever_w.iter().chain(&self.reader_w).all(|v| v.is_finite());
        if !finite || !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(ModelError::DimensionMismatch(
                "params must be finite with tau > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let body = serde_json::to_string_pretty(self).map_err(|e| ModelError::Io(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| ModelError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let body = std::fs::read_to_string(path).map_err(|e| ModelError::Io(e.to_string()))?;
        let params: ModelParams =
            serde_json::from_str(&body).map_err(|e| ModelError::Io(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }
}

/// Retriever feature vector for one (query, passage) candidate.
pub fn retriever_features(query: &TokenSeq, passage: &Passage, bm25: f64) -> [f64; RETRIEVER_DIM] {
    let q_set: BTreeSet<&str> = query.iter().map(String::as_str).collect();
    if q_set.is_empty() {
        return [bm25, 0.0, 0.0, 1.0];
    }
    let p_tokens = normalize(&passage.text);
    let p_set: BTreeSet<&str> = p_tokens.iter().map(String::as_str).collect();
    let lex = q_set.iter().filter(|t| p_set.contains(**t)).count() as f64 / q_set.len() as f64;
    let title = match &passage.title {
        Some(t) => {
            let t_tokens = normalize(t);
            let t_set: BTreeSet<&str> = t_tokens.iter().map(String::as_str).collect();
            q_set.iter().filter(|t| t_set.contains(**t)).count() as f64 / q_set.len() as f64
        }
        None => 0.0,
    };
    [bm25, lex, title, 1.0]
}

/// Dot product of retriever weights with a feature vector.
pub fn retriever_score(weights: &[f64], features: &[f64; RETRIEVER_DIM]) -> f64 {
    weights.iter().zip(features).map(|(w, f)| w * f).sum()
}

/// Temperature softmax with max subtraction. Returns an empty vector for an
/// empty input.
pub fn retriever_dist(scores: &[f64], tau: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    log_softmax(scores, tau).into_iter().map(f64::exp).collect()
}

fn log_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|s| s - lse).collect()
}

/// One retrieved candidate with its static retriever features.
#[derive(Debug, Clone)]
pub struct ScoredPassage {
    pub passage: Arc<Passage>,
    pub bm25: f64,
    pub features: [f64; RETRIEVER_DIM],
}

/// BM25 top-k candidates for a query plus the retriever distribution over
/// them. The candidate pool is frozen; re-ranking recomputes only the probs.
#[derive(Debug, Clone)]
pub struct RetrievedContext {
    pub query: TokenSeq,
    pub passages: Vec<ScoredPassage>,
    pub probs: Vec<f64>,
}

impl RetrievedContext {
    /// Retrieves the BM25 top-k for `question` from `index` and attaches
    /// retriever features and probabilities.
    pub fn retrieve(
        question: &str,
        index: &Bm25Index,
        corpus: &Corpus,
        k: usize,
        params: &ModelParams,
    ) -> Result<Self, ModelError> {
        let query = normalize(question);
        let ranked = index.search(&query, k);
        let mut passages = Vec::with_capacity(ranked.len());
        for (id, bm25) in &ranked.entries {
            let passage = corpus
                .get(id)
                .ok_or_else(|| ModelError::DimensionMismatch(format!("unknown passage `{id}`")))?
                .clone();
            let features = retriever_features(&query, &passage, *bm25);
            passages.push(ScoredPassage { passage, bm25: *bm25, features });
        }
        let mut ctx = RetrievedContext { query, passages, probs: Vec::new() };
        ctx.rerank(params);
        Ok(ctx)
    }

    /// Raw retriever scores under the given parameters.
    pub fn scores(&self, params: &ModelParams) -> Vec<f64> {
        self.passages
            .iter()
            .map(|p| retriever_score(&params.retriever_w, &p.features))
            .collect()
    }

    /// Recomputes the retriever distribution over the frozen candidate pool.
    pub fn rerank(&mut self, params: &ModelParams) {
        self.probs = retriever_dist(&self.scores(params), params.tau);
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

/// Precomputed reader candidate table for one (passage, question) pair.
///
/// Candidates are the distinct tokens of the passage and the question plus
/// the end marker, which sits at index `vocab.len()`.
#[derive(Debug, Clone)]
pub struct ReaderContext {
    vocab: Vec<String>,
    in_passage: Vec<f64>,
    in_question: Vec<f64>,
    log_tf: Vec<f64>,
}

impl ReaderContext {
    pub fn new(passage: &Passage, question: &TokenSeq) -> Self {
        let p_tokens = normalize(&passage.text);
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in p_tokens.iter() {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
        let mut vocab: BTreeSet<&str> = tf.keys().copied().collect();
        for t in question.iter() {
            vocab.insert(t.as_str());
        }
        let vocab: Vec<String> = vocab.into_iter().map(str::to_string).collect();
        let q_set: BTreeSet<&str> = question.iter().map(String::as_str).collect();

        let n = vocab.len() + 1; // trailing end-marker slot
        let mut in_passage = vec![0.0; n];
        let mut in_question = vec![0.0; n];
        let mut log_tf = vec![0.0; n];
        for (i, tok) in vocab.iter().enumerate() {
            let count = tf.get(tok.as_str()).copied().unwrap_or(0);
            if count > 0 {
                in_passage[i] = 1.0;
                log_tf[i] = (1.0 + count as f64).ln();
            }
            if q_set.contains(tok.as_str()) {
                in_question[i] = 1.0;
            }
        }
        ReaderContext { vocab, in_passage, in_question, log_tf }
    }

    /// Candidate count including the end marker.
    pub fn n_candidates(&self) -> usize {
        self.vocab.len() + 1
    }

    /// Candidate token at `idx` (the last index is the end marker).
    pub fn token(&self, idx: usize) -> &str {
        if idx == self.vocab.len() {
            END_MARKER
        } else {
            &self.vocab[idx]
        }
    }

    fn candidate_index(&self, token: &str) -> Option<usize> {
        if token == END_MARKER {
            return Some(self.vocab.len());
        }
        self.vocab.binary_search_by(|probe| probe.as_str().cmp(token)).ok()
    }

    /// Logits without the repeats-previous feature, which is the only
    /// step-dependent part.
    fn base_logits(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n_candidates();
        let mut logits = vec![0.0; n];
        for i in 0..n {
            logits[i] =
                w[0] * self.in_passage[i] + w[1] * self.in_question[i] + w[3] * self.log_tf[i] + w[4];
        }
        logits
    }

    fn prev_index(&self, prev: Option<&str>) -> Option<usize> {
        prev.and_then(|t| self.candidate_index(t))
    }

    /// Probability vector over candidates for one generation step.
    pub fn step_probs(&self, prev: Option<&str>, w: &[f64]) -> Vec<f64> {
        let mut logits = self.base_logits(w);
        if let Some(p) = self.prev_index(prev) {
            logits[p] += w[2];
        }
        let logp = log_softmax(&logits, 1.0);
        logp.into_iter().map(f64::exp).collect()
    }
}

/// Public single-step reader distribution as (token, probability) pairs in
/// ascending token order, end marker included.
pub fn reader_step(
    passage: &Passage,
    question: &TokenSeq,
    prev: Option<&str>,
    reader_w: &[f64],
) -> Vec<(String, f64)> {
    let ctx = ReaderContext::new(passage, question);
    let probs = ctx.step_probs(prev, reader_w);
    (0..ctx.n_candidates())
        .map(|i| (ctx.token(i).to_string(), probs[i]))
        .collect()
}

/// Log-likelihood of a target step sequence under one reader context.
/// Returns `NEG_INFINITY` when a target token is outside the candidate
/// vocabulary. Also accumulates the analytic gradient when `grad` is given.
fn sequence_logprob(
    reader: &ReaderContext,
    target: &[String],
    w: &[f64],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let base = reader.base_logits(w);
    let mut total = 0.0;
    let mut prev: Option<usize> = None;
    for step_token in target {
        let Some(target_idx) = reader.candidate_index(step_token) else {
            return f64::NEG_INFINITY;
        };
        // Stable log-softmax with the prev adjustment applied on the fly.
        let mut max = f64::NEG_INFINITY;
        for (i, b) in base.iter().enumerate() {
            let logit = b + if Some(i) == prev { w[2] } else { 0.0 };
            if logit > max {
                max = logit;
            }
        }
        let mut denom = 0.0;
        for (i, b) in base.iter().enumerate() {
            let logit = b + if Some(i) == prev { w[2] } else { 0.0 };
            denom += (logit - max).exp();
        }
        let lse = max + denom.ln();
        let target_logit = base[target_idx] + if Some(target_idx) == prev { w[2] } else { 0.0 };
        total += target_logit - lse;

        if let Some(g) = grad.as_deref_mut() {
            // d log p(y) / dw = phi(y) - E_p[phi]
            let mut exp_inp = 0.0;
            let mut exp_inq = 0.0;
            let mut exp_prev = 0.0;
            let mut exp_ltf = 0.0;
            for (i, b) in base.iter().enumerate() {
                let logit = b + if Some(i) == prev { w[2] } else { 0.0 };
                let p = (logit - lse).exp();
                exp_inp += p * reader.in_passage[i];
                exp_inq += p * reader.in_question[i];
                exp_ltf += p * reader.log_tf[i];
                if Some(i) == prev {
                    exp_prev += p;
                }
            }
            g[0] += reader.in_passage[target_idx] - exp_inp;
            g[1] += reader.in_question[target_idx] - exp_inq;
            g[2] += if Some(target_idx) == prev { 1.0 } else { 0.0 } - exp_prev;
            g[3] += reader.log_tf[target_idx] - exp_ltf;
            // The bias feature is shared by every candidate, so its gradient
            // vanishes identically.
        }
        prev = Some(target_idx);
    }
    total
}

/// Marginal likelihood of `answer` under the retrieved context, computed in
/// log-space per passage then mixed. Passages that cannot produce the answer
/// contribute zero mass.
pub fn p_rag(answer: &TokenSeq, ctx: &RetrievedContext, params: &ModelParams) -> f64 {
    if answer.is_empty() || ctx.is_empty() {
        return 0.0;
    }
    let log_r = log_softmax(&ctx.scores(params), params.tau);
    let target: Vec<String> = answer.as_slice().to_vec();
    let mut terms = Vec::with_capacity(ctx.len());
    for (scored, lr) in ctx.passages.iter().zip(&log_r) {
        let reader = ReaderContext::new(&scored.passage, &ctx.query);
        let ell = sequence_logprob(&reader, &target, &params.reader_w, None);
        if ell.is_finite() {
            terms.push(lr + ell);
        }
    }
    if terms.is_empty() {
        return 0.0;
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    lse.exp()
}

/// A training example with its frozen candidate pool and precomputed reader
/// tables. The supervision target is the first gold answer followed by the
/// end marker.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub qa_id: String,
    pub client: usize,
    pub target: Vec<String>,
    pub context: RetrievedContext,
    readers: Vec<ReaderContext>,
}

impl PreparedExample {
    pub fn new(qa: &QAPair, context: RetrievedContext) -> Result<Self, ModelError> {
        if context.is_empty() {
            return Err(ModelError::EmptyContext { qa_id: qa.id.clone() });
        }
        let first = qa.answers.first().map(String::as_str).unwrap_or("");
        let mut target = normalize(first).0;
        target.push(END_MARKER.to_string());
        let readers = context
            .passages
            .iter()
            .map(|p| ReaderContext::new(&p.passage, &context.query))
            .collect();
        Ok(PreparedExample {
            qa_id: qa.id.clone(),
            client: qa.client,
            target,
            context,
            readers,
        })
    }

    /// True iff at least one retrieved passage can produce the whole target
    /// sequence, i.e. the marginal likelihood is positive. Examples without
    /// retrievable evidence have no finite loss and cannot be trained on.
    pub fn reachable(&self) -> bool {
        self.readers
            .iter()
            .any(|reader| self.target.iter().all(|step| reader.candidate_index(step).is_some()))
    }
}

/// Loss decomposition: `total = reader + pdist`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub reader: f64,
    pub pdist: f64,
}

/// Gradients for both weight vectors. The temperature is not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub retriever_w: Vec<f64>,
    pub reader_w: Vec<f64>,
}

/// Batch loss and analytic gradients.
///
/// Reader loss: the marginal sequence NLL `-(1/|y|) * log p_rag(y|x)` with
/// the retriever distribution `Rbar` held constant, so it moves only the
/// reader; its gradient weights each passage by the posterior
/// `Rbar(z) * p(y|z)` (normalized), which keeps passages that cannot produce
/// the answer from dragging the reader. Distillation loss: `KL(qbar || R)`
/// where `qbar(z)` is the softmax of the per-token mean reader
/// log-likelihoods, held constant, so it moves only the retriever. Values
/// are means over the batch.
pub fn loss_and_grad(
    batch: &[PreparedExample],
    params: &ModelParams,
) -> Result<(LossParts, Gradients), ModelError> {
    params.validate()?;
    if batch.is_empty() {
        return Ok((
            LossParts { total: 0.0, reader: 0.0, pdist: 0.0 },
            Gradients {
                retriever_w: vec![0.0; RETRIEVER_DIM],
                reader_w: vec![0.0; READER_DIM],
            },
        ));
    }

    let mut loss_reader = 0.0;
    let mut loss_pdist = 0.0;
    let mut grad_retriever = vec![0.0; RETRIEVER_DIM];
    let mut grad_reader = vec![0.0; READER_DIM];

    for ex in batch {
        if ex.context.is_empty() {
            return Err(ModelError::EmptyContext { qa_id: ex.qa_id.clone() });
        }
        let n_steps = ex.target.len().max(1) as f64;
        let scores = ex.context.scores(params);
        let log_r = log_softmax(&scores, params.tau);
        let r: Vec<f64> = log_r.iter().map(|l| l.exp()).collect();

        // Per-passage reader log-likelihood and gradient. A passage whose
        // candidate vocabulary misses a target step scores NEG_INFINITY and
        // simply contributes no marginal mass.
        let k = ex.readers.len();
        let mut ell = vec![0.0; k];
        let mut reader_grads = vec![vec![0.0; READER_DIM]; k];
        for (z, reader) in ex.readers.iter().enumerate() {
            ell[z] =
                sequence_logprob(reader, &ex.target, &params.reader_w, Some(&mut reader_grads[z]));
            if ell[z].is_nan() {
                return Err(ModelError::NonFinite { qa_id: ex.qa_id.clone() });
            }
        }

        // log p_rag(y|x) = lse_z(log Rbar(z) + ell_z), posterior-weighted
        // reader gradient.
        let joint: Vec<f64> = log_r.iter().zip(&ell).map(|(lr, l)| lr + l).collect();
        let max_joint = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max_joint.is_finite() {
            // No retrieved passage can produce the target at all.
            return Err(ModelError::NonFinite { qa_id: ex.qa_id.clone() });
        }
        let lse = max_joint + joint.iter().map(|j| (j - max_joint).exp()).sum::<f64>().ln();
        loss_reader -= lse / n_steps;
        for z in 0..k {
            let posterior = (joint[z] - lse).exp();
            if posterior > 0.0 {
                for d in 0..READER_DIM {
                    grad_reader[d] -= posterior * reader_grads[z][d] / n_steps;
                }
            }
        }

        // Reader-likelihood posterior (per-token mean), frozen. Passages
        // with zero likelihood get zero posterior mass.
        let mean_ll: Vec<f64> = ell.iter().map(|l| l / n_steps).collect();
        let max_mean = mean_ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse_q =
            max_mean + mean_ll.iter().map(|m| (m - max_mean).exp()).sum::<f64>().ln();
        let log_q: Vec<f64> = mean_ll.iter().map(|m| m - lse_q).collect();
        let q: Vec<f64> = log_q.iter().map(|l| l.exp()).collect();

        let mut ex_pdist = 0.0;
        for z in 0..k {
            if q[z] > 0.0 {
                ex_pdist += q[z] * (log_q[z] - log_r[z]);
            }
            let coeff = (r[z] - q[z]) / params.tau;
            for d in 0..RETRIEVER_DIM {
                grad_retriever[d] += coeff * ex.context.passages[z].features[d];
            }
        }

        loss_pdist += ex_pdist;
    }

    let scale = 1.0 / batch.len() as f64;
    loss_reader *= scale;
    loss_pdist *= scale;
    for g in grad_retriever.iter_mut().chain(grad_reader.iter_mut()) {
        *g *= scale;
    }

    let total = loss_reader + loss_pdist;
    if !total.is_finite() {
        return Err(ModelError::NonFinite {
            qa_id: batch.first().map(|e| e.qa_id.clone()).unwrap_or_default(),
        });
    }
    Ok((
        LossParts { total, reader: loss_reader, pdist: loss_pdist },
        Gradients { retriever_w: grad_retriever, reader_w: grad_reader },
    ))
}

/// Norm-based relative error between two gradient vectors:
/// `||a - b|| / max(||a||, ||b||, 1e-8)`.
pub fn relative_vector_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// One full-batch gradient step. Returns the updated parameters and the loss
/// at the pre-update point.
pub fn sgd_step(
    params: &ModelParams,
    batch: &[PreparedExample],
    lr: f64,
) -> Result<(ModelParams, LossParts), ModelError> {
    let (loss, grad) = loss_and_grad(batch, params)?;
    let mut next = params.clone();
    for (w, g) in next.retriever_w.iter_mut().zip(&grad.retriever_w) {
        *w -= lr * g;
    }
    for (w, g) in next.reader_w.iter_mut().zip(&grad.reader_w) {
        *w -= lr * g;
    }
    Ok((next, loss))
}

/// `epochs` passes of full-batch gradient descent. The returned loss trace
/// has `epochs + 1` entries; the last is evaluated at the final parameters.
pub fn train_epochs(
    params: &ModelParams,
    batch: &[PreparedExample],
    lr: f64,
    epochs: usize,
) -> Result<(ModelParams, Vec<LossParts>), ModelError> {
    let mut current = params.clone();
    let mut trace = Vec::with_capacity(epochs + 1);
    for epoch in 0..epochs {
        let (next, loss) = sgd_step(&current, batch, lr)?;
        if !loss.total.is_finite()
            || next.retriever_w.iter().chain(&next.reader_w).any(|w| !w.is_finite())
        {
            return Err(ModelError::Divergence { epoch });
        }
        trace.push(loss);
        current = next;
    }
    let (final_loss, _) = loss_and_grad(batch, &current)?;
    trace.push(final_loss);
    Ok((current, trace))
}

/// A retrieved context with its reader tables prebuilt, for repeated
/// decoding under changing parameters.
#[derive(Debug, Clone)]
pub struct GenerationContext {
    pub context: RetrievedContext,
    readers: Vec<ReaderContext>,
}

impl GenerationContext {
    pub fn new(context: RetrievedContext) -> Self {
        let readers = context
            .passages
            .iter()
            .map(|p| ReaderContext::new(&p.passage, &context.query))
            .collect();
        GenerationContext { context, readers }
    }

    /// Identical to [`generate`] on the wrapped context.
    pub fn generate(&self, params: &ModelParams, max_len: usize) -> TokenSeq {
        generate_with_readers(&self.context, &self.readers, params, max_len)
    }
}

/// Greedy decoding over the marginal next-token distribution
/// `sum_z R(z|x) * G(.|z, x, y_<i)`. Ties break toward the lexicographically
/// smallest token; decoding stops at the end marker or `max_len`.
pub fn generate(ctx: &RetrievedContext, params: &ModelParams, max_len: usize) -> TokenSeq {
    if ctx.is_empty() || max_len == 0 {
        return TokenSeq::default();
    }
    let readers: Vec<ReaderContext> = ctx
        .passages
        .iter()
        .map(|p| ReaderContext::new(&p.passage, &ctx.query))
        .collect();
    generate_with_readers(ctx, &readers, params, max_len)
}

pub(crate) fn generate_with_readers(
    ctx: &RetrievedContext,
    readers: &[ReaderContext],
    params: &ModelParams,
    max_len: usize,
) -> TokenSeq {
    if ctx.is_empty() || max_len == 0 {
        return TokenSeq::default();
    }
    let r = retriever_dist(&ctx.scores(params), params.tau);
    let mut out: Vec<String> = Vec::new();
    let mut prev: Option<String> = None;
    for _ in 0..max_len {
        let mut marginal: BTreeMap<&str, f64> = BTreeMap::new();
        for (z, reader) in readers.iter().enumerate() {
            let probs = reader.step_probs(prev.as_deref(), &params.reader_w);
            for (i, p) in probs.iter().enumerate() {
                *marginal.entry(reader.token(i)).or_insert(0.0) += r[z] * p;
            }
        }
        // BTreeMap iterates in ascending token order, so keeping the first
        // strict maximum implements the lexicographic tie-break.
        let mut best: Option<(&str, f64)> = None;
        for (tok, mass) in &marginal {
            if best.map_or(true, |(_, m)| *mass > m) {
                best = Some((tok, *mass));
            }
        }
        let Some((tok, _)) = best else { break };
        if tok == END_MARKER {
            break;
        }
        out.push(tok.to_string());
        prev = Some(tok.to_string());
    }
    TokenSeq(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Bm25Params;

    fn passage(id: &str, text: &str) -> Passage {
        Passage { id: id.to_string(), title: None, text: text.to_string() }
    }

    fn toy_context(texts: &[(&str, &str)], question: &str, params: &ModelParams) -> RetrievedContext {
        let corpus = Corpus::from_passages(
            texts.iter().map(|(id, t)| passage(id, t)).collect(),
        )
        .unwrap();
        let arcs: Vec<Arc<Passage>> = corpus.iter().cloned().collect();
        let index = Bm25Index::build(&arcs, Bm25Params::default()).unwrap();
        RetrievedContext::retrieve(question, &index, &corpus, 10, params).unwrap()
    }

    fn random_params(rng: &mut rand_chacha::ChaCha12Rng) -> ModelParams {
        use rand::Rng;
        ModelParams {
            retriever_w: (0..RETRIEVER_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            reader_w: (0..READER_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            tau: rng.gen_range(0.5..2.0),
        }
    }

    #[test]
    fn retriever_score_is_projection_for_unit_weight() {
        let p = passage("p1", "alpha beta gamma");
        let feats = retriever_features(&normalize("alpha"), &p, 3.25);
        assert_eq!(retriever_score(&[1.0, 0.0, 0.0, 0.0], &feats), 3.25);
        assert_eq!(retriever_score(&[0.0; 4], &feats), 0.0);
    }

    #[test]
    fn retriever_score_matches_dot_product_oracle() {
        use rand::Rng;
        let mut rng = crate::seeding::substream(3, "model-dot");
        for _ in 0..50 {
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f = [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                1.0,
            ];
            let oracle = w[0] * f[0] + w[1] * f[1] + w[2] * f[2] + w[3] * f[3];
            assert!((retriever_score(&w, &f) - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn retriever_dist_uniform_on_equal_scores() {
        let d = retriever_dist(&[2.0, 2.0, 2.0, 2.0], 1.0);
        for p in &d {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn retriever_dist_concentrates_on_dominant_score() {
        let d = retriever_dist(&[100.0, 0.0, 0.0], 1.0);
        assert!(d[0] > 1.0 - 1e-12);
    }

    #[test]
    fn retriever_dist_shift_invariant() {
        let scores = [0.3, -1.2, 4.5, 2.2];
        let shifted: Vec<f64> = scores.iter().map(|s| s + 123.456).collect();
        let a = retriever_dist(&scores, 0.7);
        let b = retriever_dist(&shifted, 0.7);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn retriever_dist_matches_compensated_oracle() {
        use rand::Rng;
        let mut rng = crate::seeding::substream(8, "model-softmax");
        for _ in 0..100 {
            let n = rng.gen_range(1..12);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let tau = rng.gen_range(0.2..3.0);
            let got = retriever_dist(&scores, tau);
            // Kahan-compensated plain softmax as the oracle.
            let exps: Vec<f64> = scores.iter().map(|s| (s / tau).exp()).collect();
            let mut sum = 0.0;
            let mut c = 0.0;
            for e in &exps {
                let y = e - c;
                let t = sum + y;
                c = (t - sum) - y;
                sum = t;
            }
            let total: f64 = got.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (g, e) in got.iter().zip(&exps) {
                assert!((g - e / sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reader_zero_weights_uniform() {
        let p = passage("p1", "red blue green");
        let dist = reader_step(&p, &normalize("what color"), None, &[0.0; READER_DIM]);
        let n = dist.len() as f64;
        for (_, prob) in &dist {
            assert!((prob - 1.0 / n).abs() < 1e-12);
        }
    }

    #[test]
    fn reader_mass_concentrates_on_passage_tokens() {
        let p = passage("p1", "silver kestrel");
        let dist = reader_step(&p, &normalize("other words"), None, &[60.0, 0.0, 0.0, 0.0, 0.0]);
        let passage_mass: f64 = dist
            .iter()
            .filter(|(t, _)| t == "silver" || t == "kestrel")
            .map(|(_, p)| p)
            .sum();
        assert!(passage_mass > 1.0 - 1e-12);
    }

    #[test]
    fn reader_step_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = crate::seeding::substream(21, "model-fd-step");
        let p = passage("p1", "amber mill stands near the river mill");
        let question = normalize("where is the amber mill");
        let reader = ReaderContext::new(&p, &question);
        for _ in 0..20 {
            let w: Vec<f64> = (0..READER_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target = vec!["mill".to_string()];
            let mut grad = vec![0.0; READER_DIM];
            sequence_logprob(&reader, &target, &w, Some(&mut grad));
            let h = 1e-6;
            let fd: Vec<f64> = (0..READER_DIM)
                .map(|d| {
                    let mut wp = w.clone();
                    wp[d] += h;
                    let mut wm = w.clone();
                    wm[d] -= h;
                    (sequence_logprob(&reader, &target, &wp, None)
                        - sequence_logprob(&reader, &target, &wm, None))
                        / (2.0 * h)
                })
                .collect();
            assert!(
                relative_vector_error(&grad, &fd) <= 1e-6,
                "analytic {grad:?} vs fd {fd:?}"
            );
        }
    }

    #[test]
    fn p_rag_single_passage_is_reader_product() {
        let params = ModelParams::init();
        let ctx = toy_context(&[("p1", "amber kestrel rests here")], "amber kestrel", &params);
        assert_eq!(ctx.len(), 1);
        let answer = normalize("amber kestrel");
        // Oracle: chain the public per-step distributions.
        let p = &ctx.passages[0].passage;
        let step1: f64 = reader_step(p, &ctx.query, None, &params.reader_w)
            .into_iter()
            .find(|(t, _)| t == "amber")
            .unwrap()
            .1;
        let step2: f64 = reader_step(p, &ctx.query, Some("amber"), &params.reader_w)
            .into_iter()
            .find(|(t, _)| t == "kestrel")
            .unwrap()
            .1;
        let got = p_rag(&answer, &ctx, &params);
        assert!((got - step1 * step2).abs() < 1e-12);
    }

    #[test]
    fn p_rag_mixture_of_equal_values_ignores_retriever() {
        // Identical passage text under different ids: reader probs agree, so
        // the mixture equals the shared product for any retriever weights.
        let mut params = ModelParams::init();
        let ctx = toy_context(
            &[("p1", "pale otter sleeps"), ("p2", "pale otter sleeps")],
            "pale otter",
            &params,
        );
        let answer = normalize("pale otter");
        let base = p_rag(&answer, &ctx, &params);
        params.retriever_w = vec![3.0, -2.0, 1.0, 0.5];
        let skewed = p_rag(&answer, &ctx, &params);
        assert!((base - skewed).abs() < 1e-12);
    }

    #[test]
    fn p_rag_matches_direct_summation_oracle() {
        use rand::Rng;
        let mut rng = crate::seeding::substream(17, "model-prag");
        for trial in 0..20 {
            let params = random_params(&mut rng);
            let ctx = toy_context(
                &[
                    ("p1", "amber kestrel near the mill"),
                    ("p2", "copper wren by the vault"),
                    ("p3", "amber wren inside the mill"),
                ],
                "amber kestrel mill",
                &params,
            );
            let answer = normalize("amber kestrel");
            // Direct summation over passages via the public ops only.
            let probs = retriever_dist(&ctx.scores(&params), params.tau);
            let mut expected = 0.0;
            for (z, sp) in ctx.passages.iter().enumerate() {
                let mut product = 1.0;
                let mut prev: Option<String> = None;
                for tok in answer.iter() {
                    let dist = reader_step(&sp.passage, &ctx.query, prev.as_deref(), &params.reader_w);
                    let p = dist.iter().find(|(t, _)| t == tok).map(|(_, p)| *p).unwrap_or(0.0);
                    product *= p;
                    prev = Some(tok.clone());
                }
                expected += probs[z] * product;
            }
            let got = p_rag(&answer, &ctx, &params);
            assert!(
                (got - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                "trial {trial}: {got} vs {expected}"
            );
            let _ = rng.gen::<u64>();
        }
    }

    fn prepared_toy(params: &ModelParams) -> Vec<PreparedExample> {
        let qa = QAPair {
            id: "q1".into(),
            question: "which record mentions the amber kestrel".into(),
            answers: vec!["amber kestrel".into()],
            client: 0,
        };
        let ctx = toy_context(
            &[
                ("p1", "the amber kestrel appears in the record"),
                ("p2", "the copper wren appears in the record"),
                ("p3", "record of assorted amber things"),
            ],
            &qa.question,
            params,
        );
        vec![PreparedExample::new(&qa, ctx).unwrap()]
    }

    #[test]
    fn perfect_reader_drives_reader_loss_to_zero() {
        // Large in-passage/in-question weights plus a strongly negative
        // repeat weight force probability ~1 on each target step.
        let params = ModelParams {
            retriever_w: vec![1.0, 0.0, 0.0, 0.0],
            reader_w: vec![80.0, 80.0, -400.0, 40.0, 0.0],
            tau: 1.0,
        };
        let qa = QAPair {
            id: "q1".into(),
            question: "kestrel".into(),
            answers: vec!["kestrel".into()],
            client: 0,
        };
        let ctx = toy_context(&[("p1", "kestrel kestrel kestrel")], &qa.question, &params);
        let batch = vec![PreparedExample::new(&qa, ctx).unwrap()];
        let (loss, _) = loss_and_grad(&batch, &params).unwrap();
        assert!(loss.reader.abs() < 1e-9, "reader loss {}", loss.reader);
    }

    #[test]
    fn matched_retriever_has_zero_pdist() {
        // Two passages with identical text: the posterior is uniform and the
        // retriever distribution is uniform, so the KL vanishes.
        let params = ModelParams::init();
        let qa = QAPair {
            id: "q1".into(),
            question: "pale otter".into(),
            answers: vec!["pale otter".into()],
            client: 0,
        };
        let ctx = toy_context(
            &[("p1", "pale otter sleeps"), ("p2", "pale otter sleeps")],
            &qa.question,
            &params,
        );
        let batch = vec![PreparedExample::new(&qa, ctx).unwrap()];
        let (loss, _) = loss_and_grad(&batch, &params).unwrap();
        assert!(loss.pdist.abs() < 1e-12, "pdist {}", loss.pdist);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use rand::Rng;
        let mut rng = crate::seeding::substream(29, "model-fd-loss");
        for trial in 0..10 {
            let params = random_params(&mut rng);
            let batch = prepared_toy(&params);
            let (_, grad) = loss_and_grad(&batch, &params).unwrap();
            let h = 1e-6;

            let fd_reader: Vec<f64> = (0..READER_DIM)
                .map(|d| {
                    let mut up = params.clone();
                    up.reader_w[d] += h;
                    let mut down = params.clone();
                    down.reader_w[d] -= h;
                    let (lu, _) = loss_and_grad(&batch, &up).unwrap();
                    let (ld, _) = loss_and_grad(&batch, &down).unwrap();
                    (lu.reader - ld.reader) / (2.0 * h)
                })
                .collect();
            assert!(
                relative_vector_error(&grad.reader_w, &fd_reader) <= 1e-4,
                "trial {trial} reader: {:?} vs {fd_reader:?}",
                grad.reader_w
            );

            let fd_retriever: Vec<f64> = (0..RETRIEVER_DIM)
                .map(|d| {
                    let mut up = params.clone();
                    up.retriever_w[d] += h;
                    let mut down = params.clone();
                    down.retriever_w[d] -= h;
                    let (lu, _) = loss_and_grad(&batch, &up).unwrap();
                    let (ld, _) = loss_and_grad(&batch, &down).unwrap();
                    (lu.pdist - ld.pdist) / (2.0 * h)
                })
                .collect();
            assert!(
                relative_vector_error(&grad.retriever_w, &fd_retriever) <= 1e-4,
                "trial {trial} retriever: {:?} vs {fd_retriever:?}",
                grad.retriever_w
            );
        }
    }

    #[test]
    fn out_of_vocabulary_target_is_an_error() {
        let params = ModelParams::init();
        let qa = QAPair {
            id: "q1".into(),
            question: "pale otter".into(),
            answers: vec!["granite anvil".into()],
            client: 0,
        };
        let ctx = toy_context(&[("p1", "pale otter sleeps")], &qa.question, &params);
        let batch = vec![PreparedExample::new(&qa, ctx).unwrap()];
        assert!(matches!(
            loss_and_grad(&batch, &params),
            Err(ModelError::NonFinite { .. })
        ));
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let params = ModelParams::init();
        let batch = prepared_toy(&params);
        let (next, _) = sgd_step(&params, &batch, 0.0).unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn one_epoch_equals_explicit_update() {
        let params = ModelParams::init();
        let batch = prepared_toy(&params);
        let (_, grad) = loss_and_grad(&batch, &params).unwrap();
        let lr = 0.05;
        let (stepped, trace) = train_epochs(&params, &batch, lr, 1).unwrap();
        assert_eq!(trace.len(), 2);
        for d in 0..RETRIEVER_DIM {
            let want = params.retriever_w[d] - lr * grad.retriever_w[d];
            assert!((stepped.retriever_w[d] - want).abs() < 1e-15);
        }
        for d in 0..READER_DIM {
            let want = params.reader_w[d] - lr * grad.reader_w[d];
            assert!((stepped.reader_w[d] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn fifty_epochs_descend_on_synthetic_batch() {
        let (passages, qas) = crate::synth::generate(&crate::synth::SynthSpec {
            passages: 200,
            qa: 16,
            clients: 1,
            seed: 13,
            ..Default::default()
        })
        .unwrap();
        let corpus = Corpus::from_passages(passages).unwrap();
        let arcs: Vec<Arc<Passage>> = corpus.iter().cloned().collect();
        let index = Bm25Index::build(&arcs, Bm25Params::default()).unwrap();
        let params = ModelParams::init();
        let batch: Vec<PreparedExample> = qas
            .iter()
            .map(|qa| {
                let ctx =
                    RetrievedContext::retrieve(&qa.question, &index, &corpus, 40, &params).unwrap();
                PreparedExample::new(qa, ctx).unwrap()
            })
            .collect();
        let (_, trace) = train_epochs(&params, &batch, 0.1, 50).unwrap();
        assert!(
            trace.last().unwrap().total <= trace[0].total,
            "loss rose from {} to {}",
            trace[0].total,
            trace.last().unwrap().total
        );
    }

    #[test]
    fn train_epochs_is_deterministic() {
        let params = ModelParams::init();
        let batch = prepared_toy(&params);
        let (a, _) = train_epochs(&params, &batch, 0.1, 25).unwrap();
        let (b, _) = train_epochs(&params, &batch, 0.1, 25).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn generate_stops_immediately_when_end_dominates() {
        let params = ModelParams {
            retriever_w: vec![1.0, 0.0, 0.0, 0.0],
            reader_w: vec![-60.0, -60.0, 0.0, 0.0, 0.0],
            tau: 1.0,
        };
        let ctx = toy_context(&[("p1", "pale otter sleeps")], "pale otter", &params);
        let out = generate(&ctx, &params, 8);
        assert!(out.is_empty());
    }

    #[test]
    fn single_passage_greedy_matches_reader_argmax_path() {
        let params = ModelParams {
            retriever_w: vec![1.0, 0.0, 0.0, 0.0],
            reader_w: vec![2.0, 1.0, -3.0, 1.5, 0.0],
            tau: 1.0,
        };
        let ctx = toy_context(&[("p1", "amber kestrel in the mill")], "amber kestrel", &params);
        let got = generate(&ctx, &params, 6);
        // Oracle: walk the single reader's argmax with the same tie-break.
        let p = &ctx.passages[0].passage;
        let mut expected = Vec::new();
        let mut prev: Option<String> = None;
        for _ in 0..6 {
            let dist = reader_step(p, &ctx.query, prev.as_deref(), &params.reader_w);
            let mut best: Option<(&str, f64)> = None;
            for (tok, mass) in &dist {
                if best.map_or(true, |(_, m)| *mass > m) {
                    best = Some((tok, *mass));
                }
            }
            let (tok, _) = best.unwrap();
            if tok == END_MARKER {
                break;
            }
            expected.push(tok.to_string());
            prev = Some(tok.to_string());
        }
        assert_eq!(got.0, expected);
    }

    #[test]
    fn generate_matches_marginal_argmax_oracle() {
        use rand::Rng;
        let mut rng = crate::seeding::substream(31, "model-gen");
        for _ in 0..10 {
            let params = random_params(&mut rng);
            let ctx = toy_context(
                &[
                    ("p1", "amber kestrel near the mill"),
                    ("p2", "copper wren by the vault"),
                ],
                "amber kestrel vault",
                &params,
            );
            let got = generate(&ctx, &params, 5);
            // Oracle: exhaustive per-step marginal argmax via public ops.
            let probs = retriever_dist(&ctx.scores(&params), params.tau);
            let mut expected = Vec::new();
            let mut prev: Option<String> = None;
            'outer: for _ in 0..5 {
                let mut marginal: BTreeMap<String, f64> = BTreeMap::new();
                for (z, sp) in ctx.passages.iter().enumerate() {
                    for (tok, p) in
                        reader_step(&sp.passage, &ctx.query, prev.as_deref(), &params.reader_w)
                    {
                        *marginal.entry(tok).or_insert(0.0) += probs[z] * p;
                    }
                }
                let mut best: Option<(String, f64)> = None;
                for (tok, mass) in &marginal {
                    if best.as_ref().map_or(true, |(_, m)| *mass > *m) {
                        best = Some((tok.clone(), *mass));
                    }
                }
                match best {
                    Some((tok, _)) if tok != END_MARKER => {
                        expected.push(tok.clone());
                        prev = Some(tok);
                    }
                    _ => break 'outer,
                }
            }
            assert_eq!(got.0, expected);
        }
    }

    #[test]
    fn params_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let params = ModelParams {
            retriever_w: vec![0.5, -0.25, 0.125, 1.0],
            reader_w: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            tau: 0.75,
        };
        params.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path).unwrap(), params);
    }
}
