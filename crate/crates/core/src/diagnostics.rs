//! Retrieval-diversity diagnostics: how varied the stored keys are versus how
//! varied the content that retrieval actually hands to the agent.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::ExperiencePool;
use crate::retrieval::{tokenize, RetrievalLog};

pub const DIVERSITY_FORMULA: &str = "1 - mean pairwise cosine of L2-normalised tf*ln(N/df) vectors";
pub const COVERAGE_DENOMINATOR: &str = "total returned slots (sum of result-list lengths)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("retrieval log has no returned units")]
    EmptyLog,
    #[error("retrieval log references unit {0} that is not in the pool")]
    DanglingUnitId(String),
}

/// Sparse vector as `(term, weight)` pairs sorted by term.
pub type SparseVec = Vec<(String, f64)>;

/// TF-IDF vectors with weight `tf * ln(N / df)`, L2-normalised. A text whose
/// terms all occur in every document gets the zero vector.
pub fn tfidf_vectors(texts: &[&str]) -> Vec<SparseVec> {
    let n = texts.len() as f64;
    let tfs: Vec<BTreeMap<String, u32>> = texts
        .iter()
        .map(|t| {
            let mut tf = BTreeMap::new();
            for tok in tokenize(t) {
                *tf.entry(tok).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for tf in &tfs {
        for term in tf.keys() {
            *df.entry(term.as_str()).or_insert(0) += 1;
        }
    }
    tfs.iter()
        .map(|tf| {
            let mut v: SparseVec = tf
                .iter()
                .map(|(term, &c)| (term.clone(), c as f64 * (n / df[term.as_str()] as f64).ln()))
                .filter(|(_, w)| *w != 0.0)
                .collect();
            let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (_, w) in &mut v {
                    *w /= norm;
                }
            }
            v
        })
        .collect()
}

/// Cosine of two normalised vectors. Two zero vectors count as identical,
/// a zero vector and a non-zero one as unrelated.
pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// `1 - mean cosine` over all unordered pairs.
pub fn mean_pairwise_diversity(vectors: &[SparseVec]) -> Result<f64, DiagnosticsError> {
    let n = vectors.len();
    if n < 2 {
        return Err(DiagnosticsError::TooFewItems(n));
    }
    // identical vectors share a cosine, so score each distinct vector once
    let mut distinct: Vec<(&SparseVec, usize)> = Vec::new();
    let mut slot: HashMap<Vec<(&str, u64)>, usize> = HashMap::new();
    for v in vectors {
        let key: Vec<(&str, u64)> = v.iter().map(|(t, w)| (t.as_str(), w.to_bits())).collect();
        match slot.get(&key) {
            Some(&i) => distinct[i].1 += 1,
            None => {
                slot.insert(key, distinct.len());
                distinct.push((v, 1));
            }
        }
    }
    let mut sum = 0.0;
    for (i, (a, ca)) in distinct.iter().enumerate() {
        let ca = *ca as f64;
        sum += ca * (ca - 1.0) / 2.0 * cosine(a, a);
        for (b, cb) in &distinct[i + 1..] {
            sum += ca * *cb as f64 * cosine(a, b);
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((1.0 - sum / pairs).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub unique: usize,
    pub total: usize,
    pub fraction: f64,
}

/// Distinct returned ids over all returned slots.
pub fn retrieval_coverage(log: &RetrievalLog) -> Result<Coverage, DiagnosticsError> {
    let total: usize = log.events.iter().map(|e| e.returned_ids.len()).sum();
    if total == 0 {
        return Err(DiagnosticsError::EmptyLog);
    }
    let unique = log
        .events
        .iter()
        .flat_map(|e| e.returned_ids.iter())
        .collect::<HashSet<_>>()
        .len();
    Ok(Coverage {
        unique,
        total,
        fraction: unique as f64 / total as f64,
    })
}

/// Share of non-empty events whose rank-1 unit is the most common rank-1 unit.
pub fn top1_concentration(log: &RetrievalLog) -> Result<f64, DiagnosticsError> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut events = 0usize;
    for e in &log.events {
        if let Some(first) = e.returned_ids.first() {
            *counts.entry(first.as_str()).or_insert(0) += 1;
            events += 1;
        }
    }
    let modal = counts
        .values()
        .copied()
        .max()
        .ok_or(DiagnosticsError::EmptyLog)?;
    Ok(modal as f64 / events as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Over all pool keys; `None` when the pool has fewer than two units.
    pub key_diversity: Option<f64>,
    /// Over the values of every returned slot, repeats included.
    pub context_diversity: Option<f64>,
    pub coverage: f64,
    pub top1_concentration: f64,
    pub unique_retrieved: usize,
    pub total_retrievals: usize,
    pub notes: Vec<String>,
}

pub fn diversity_report(
    pool: &ExperiencePool,
    log: &RetrievalLog,
) -> Result<DiversityReport, DiagnosticsError> {
    let mut contexts: Vec<&str> = Vec::new();
    for e in &log.events {
        for id in &e.returned_ids {
            let unit = pool
                .get(id)
                .ok_or_else(|| DiagnosticsError::DanglingUnitId(id.clone()))?;
            contexts.push(&unit.value_text);
        }
    }
    let cov = retrieval_coverage(log)?;
    let conc = top1_concentration(log)?;
    let mut notes = Vec::new();
    let keys: Vec<&str> = pool.units().iter().map(|u| u.key_text.as_str()).collect();
    let key_diversity = match mean_pairwise_diversity(&tfidf_vectors(&keys)) {
        Ok(d) => Some(d),
        Err(e) => {
            notes.push(format!("key_diversity: {e}"));
            None
        }
    };
    let context_diversity = match mean_pairwise_diversity(&tfidf_vectors(&contexts)) {
        Ok(d) => Some(d),
        Err(e) => {
            notes.push(format!("context_diversity: {e}"));
            None
        }
    };
    Ok(DiversityReport {
        key_diversity,
        context_diversity,
        coverage: cov.fraction,
        top1_concentration: conc,
        unique_retrieved: cov.unique,
        total_retrievals: cov.total,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{Condition, EpisodeSource, Insight, Outcome, Payload, Representation};
    use crate::retrieval::{retrieve, Bm25Params, Query, RetrievalEvent};

    fn event(ids: &[&str]) -> RetrievalEvent {
        RetrievalEvent {
            event_id: 0,
            query: Query {
                text: "q".into(),
                episode_id: "e".into(),
                step: 0,
            },
            returned_ids: ids.iter().map(|s| s.to_string()).collect(),
            scores: vec![1.0; ids.len()],
        }
    }

    fn log_of(events: Vec<RetrievalEvent>) -> RetrievalLog {
        let mut log = RetrievalLog::default();
        for e in events {
            log.record(e);
        }
        log
    }

    #[test]
    fn identical_and_disjoint_texts() {
        let v = tfidf_vectors(&["red ball", "red ball", "blue box"]);
        assert_eq!(v[0], v[1]);
        assert_eq!(cosine(&v[0], &v[2]), 0.0);
        assert_eq!(mean_pairwise_diversity(&v[..2]).unwrap(), 0.0);
        let w = tfidf_vectors(&["a", "b", "c"]);
        assert!((mean_pairwise_diversity(&w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_text_fixture_matches_hand_weights() {
        // N=3; df(a)=2, df(b)=2, df(c)=1
        let v = tfidf_vectors(&["a b", "a c c", "b"]);
        let l32 = (1.5f64).ln();
        let l3 = (3.0f64).ln();
        let n1 = (2.0 * l32 * l32).sqrt();
        assert!((v[0][0].1 - l32 / n1).abs() < 1e-12);
        let (wa, wc) = (l32, 2.0 * l3);
        let n2 = (wa * wa + wc * wc).sqrt();
        assert_eq!(v[1][0].0, "a");
        assert!((v[1][0].1 - wa / n2).abs() < 1e-12);
        assert!((v[1][1].1 - wc / n2).abs() < 1e-12);
        assert_eq!(v[2], vec![("b".to_string(), 1.0)]);
        // pairs: (0,1) = (l32/n1)(wa/n2); (0,2) = l32/n1; (1,2) = 0
        let c01 = (l32 / n1) * (wa / n2);
        let c02 = l32 / n1;
        let expected = 1.0 - (c01 + c02) / 3.0;
        assert!((mean_pairwise_diversity(&v).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_conventions() {
        let v = tfidf_vectors(&["same", "same"]);
        assert!(v[0].is_empty());
        assert_eq!(cosine(&v[0], &v[1]), 1.0);
        assert_eq!(cosine(&v[0], &vec![("x".into(), 1.0)]), 0.0);
        assert_eq!(
            mean_pairwise_diversity(&v[..1]),
            Err(DiagnosticsError::TooFewItems(1))
        );
    }

    #[test]
    fn coverage_examples() {
        let mut events: Vec<RetrievalEvent> = (0..80).map(|_| event(&["m0", "m1", "m2"])).collect();
        for (i, e) in events.iter_mut().take(10).enumerate() {
            *e = event(&["m0", "m1", &format!("x{i}")]);
        }
        let c = retrieval_coverage(&log_of(events)).unwrap();
        assert_eq!((c.unique, c.total), (13, 240));
        assert!((c.fraction - 0.054).abs() < 5e-4);
        let fresh = log_of((0..5).map(|i| event(&[&format!("u{i}")])).collect());
        assert_eq!(retrieval_coverage(&fresh).unwrap().fraction, 1.0);
        assert_eq!(
            retrieval_coverage(&RetrievalLog::default()),
            Err(DiagnosticsError::EmptyLog)
        );
    }

    #[test]
    fn concentration_examples() {
        let mut events: Vec<RetrievalEvent> = (0..82).map(|_| event(&["top"])).collect();
        events.extend((0..118).map(|i| event(&[&format!("o{}", i % 59)])));
        assert!((top1_concentration(&log_of(events)).unwrap() - 0.41).abs() < 1e-12);
        let all = log_of((0..9).map(|_| event(&["a", "b"])).collect());
        assert_eq!(top1_concentration(&all).unwrap(), 1.0);
        // uniform over m units, n = m * r events
        let (m, r) = (7, 5);
        let uni = log_of(
            (0..m * r)
                .map(|i| event(&[&format!("u{}", i % m)]))
                .collect(),
        );
        assert!((top1_concentration(&uni).unwrap() - r as f64 / (m * r) as f64).abs() < 1e-12);
    }

    fn insight_pool(condition: Condition, items: &[(&str, &str)]) -> ExperiencePool {
        let mut pool = ExperiencePool::new(condition, Representation::Insight);
        for (i, (key, body)) in items.iter().enumerate() {
            let ep = format!("e{i}");
            pool.insert_episode(
                &EpisodeSource {
                    instruction: key,
                    source_task: "A",
                    episode_id: &ep,
                    outcome: Outcome::Success,
                },
                &Payload::Insights(vec![Insight::new(*body, *key)]),
            )
            .unwrap();
        }
        pool
    }

    #[test]
    fn homogeneous_queries_collapse() {
        let items: Vec<(String, String)> = (0..30)
            .map(|i| {
                (
                    format!("search the grid near landmark{i} corner{}", i % 7),
                    format!("lesson variant {i} about place{i}"),
                )
            })
            .collect();
        let refs: Vec<(&str, &str)> = items
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        let pool = insight_pool(Condition::Ind, &refs);
        let mut log = RetrievalLog::default();
        for i in 0..50 {
            let q = Query {
                text: format!("search the grid for item{i}"),
                episode_id: format!("q{i}"),
                step: 0,
            };
            log.record(retrieve(&pool, &q, 3, &Bm25Params::default()).unwrap());
        }
        let r = diversity_report(&pool, &log).unwrap();
        assert!(r.top1_concentration >= 0.8);
        assert!(r.key_diversity.unwrap() > r.context_diversity.unwrap());
        assert!(r.coverage <= 0.1);
    }

    #[test]
    fn dangling_ids_are_reported() {
        let pool = insight_pool(Condition::Ind, &[("k", "v")]);
        let log = log_of(vec![event(&["m999999"])]);
        assert_eq!(
            diversity_report(&pool, &log),
            Err(DiagnosticsError::DanglingUnitId("m999999".into()))
        );
        let ok = log_of(vec![event(&["m000000"])]);
        let r = diversity_report(&pool, &ok).unwrap();
        assert!(r.key_diversity.is_none());
        assert!(r.notes.iter().any(|n| n.contains("at least 2")));
    }
}
