//! Exact Match and token-level F1 with client-averaged and micro-averaged
//! aggregation.
//!
//! Normalization is the metric path (lowercase, punctuation to spaces,
//! articles removed), applied identically to predictions and golds.

use crate::corpus::normalize_metric;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Per-QA score with its client assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaScore {
    pub qa_id: String,
    pub client: usize,
    pub em: f64,
    pub f1: f64,
}

/// Aggregation modes: mean of per-client means, or mean over all QA pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    ClientAvg,
    Micro,
}

/// Per-client means plus both aggregate views. All scores are fractions in
/// [0, 1]; multiply by 100 for percentage reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_qa: Vec<QaScore>,
    pub per_client: BTreeMap<usize, ClientMean>,
    pub client_avg_em: f64,
    pub client_avg_f1: f64,
    pub micro_em: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientMean {
    pub count: usize,
    pub em: f64,
    pub f1: f64,
}

/// 1 iff the normalized prediction equals any normalized gold.
pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_metric(pred);
    if golds.iter().any(|g| normalize_metric(g) == p) {
        1.0
    } else {
        0.0
    }
}

/// Max over golds of token-multiset F1. Both sides empty counts as a match
/// (1.0); exactly one side empty scores 0 for that gold.
pub fn f1(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_metric(pred);
    golds
        .iter()
        .map(|g| pair_f1(p.as_slice(), normalize_metric(g).as_slice()))
        .fold(0.0, f64::max)
}

fn pair_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0i64;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Scores one prediction against its golds.
pub fn score_pair(qa_id: &str, client: usize, pred: &str, golds: &[String]) -> QaScore {
    QaScore {
        qa_id: qa_id.to_string(),
        client,
        em: exact_match(pred, golds),
        f1: f1(pred, golds),
    }
}

/// Single aggregate in the requested mode. Clients with no QA simply do not
/// appear; an empty input aggregates to 0 with a warning.
pub fn aggregate(scores: &[QaScore], mode: Aggregation) -> f64 {
    if scores.is_empty() {
        log::warn!("aggregate called with no scores");
        return 0.0;
    }
    match mode {
        Aggregation::Micro => scores.iter().map(|s| s.em).sum::<f64>() / scores.len() as f64,
        Aggregation::ClientAvg => {
            let mut per_client: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for s in scores {
                let entry = per_client.entry(s.client).or_insert((0.0, 0));
                entry.0 += s.em;
                entry.1 += 1;
            }
            let means: Vec<f64> =
                per_client.values().map(|(sum, n)| sum / *n as f64).collect();
            means.iter().sum::<f64>() / means.len() as f64
        }
    }
}

/// Full evaluation summary over per-QA scores.
pub fn summarize(per_qa: Vec<QaScore>) -> EvalResult {
    let mut per_client: BTreeMap<usize, ClientMean> = BTreeMap::new();
    for s in &per_qa {
        let entry = per_client.entry(s.client).or_insert(ClientMean {
            count: 0,
            em: 0.0,
            f1: 0.0,
        });
        entry.count += 1;
        entry.em += s.em;
        entry.f1 += s.f1;
    }
    for mean in per_client.values_mut() {
        mean.em /= mean.count as f64;
        mean.f1 /= mean.count as f64;
    }
    let n_clients = per_client.len().max(1);
    let client_avg_em = per_client.values().map(|m| m.em).sum::<f64>() / n_clients as f64;
    let client_avg_f1 = per_client.values().map(|m| m.f1).sum::<f64>() / n_clients as f64;
    let n = per_qa.len().max(1);
    let micro_em = per_qa.iter().map(|s| s.em).sum::<f64>() / n as f64;
    let micro_f1 = per_qa.iter().map(|s| s.f1).sum::<f64>() / n as f64;
    EvalResult {
        per_qa,
        per_client,
        client_avg_em,
        client_avg_f1,
        micro_em,
        micro_f1,
    }
}
