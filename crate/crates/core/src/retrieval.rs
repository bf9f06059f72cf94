//! Sparse retrieval over memory-unit keys.
//!
//! Keys are tokenized with [`tokenize`] and indexed into an inverted index as
//! units are appended to a pool. Queries are scored with Okapi BM25 and the
//! top-k positive-scoring units are returned, older units first on ties.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{Condition, ExperiencePool};

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct tokens in first-occurrence order.
pub fn distinct_terms(tokens: &[String]) -> Vec<&str> {
    let mut seen = std::collections::HashSet::new();
    tokens
        .iter()
        .map(String::as_str)
        .filter(|t| seen.insert(*t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("bm25 k1 must be positive, got {0}")]
    InvalidK1(f64),
    #[error("bm25 b must lie in [0, 1], got {0}")]
    InvalidB(f64),
    #[error("top-k must be at least 1")]
    ZeroK,
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k1.is_nan() || self.k1 <= 0.0 || !self.k1.is_finite() {
            return Err(RetrievalError::InvalidK1(self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::InvalidB(self.b));
        }
        Ok(())
    }
}

/// Term statistics of one indexed key.
#[derive(Debug, Clone, Default)]
pub struct DocTerms {
    pub len: usize,
    pub tf: HashMap<String, u32>,
}

impl DocTerms {
    pub fn from_text(text: &str) -> Self {
        let tokens = tokenize(text);
        let mut tf = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        Self {
            len: tokens.len(),
            tf,
        }
    }
}

/// Collection-level statistics needed by BM25.
#[derive(Debug, Clone, Copy)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avgdl: f64,
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn term_weight(tf: u32, doc_len: usize, stats: &CorpusStats, params: &Bm25Params) -> f64 {
    let tf = tf as f64;
    let norm = if stats.avgdl > 0.0 {
        doc_len as f64 / stats.avgdl
    } else {
        0.0
    };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

/// Okapi BM25 score of one document. Each distinct query term counts once.
pub fn bm25_score(
    query_tokens: &[String],
    doc: &DocTerms,
    stats: &CorpusStats,
    doc_freq: impl Fn(&str) -> usize,
    params: &Bm25Params,
) -> f64 {
    let mut score = 0.0;
    for term in distinct_terms(query_tokens) {
        if let Some(&tf) = doc.tf.get(term) {
            score += idf(stats.n_docs, doc_freq(term)) * term_weight(tf, doc.len, stats, params);
        }
    }
    score
}

/// Inverted index over unit keys, in pool insertion order.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    docs: Vec<DocTerms>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    total_len: u64,
}

impl Bm25Index {
    pub fn add_document(&mut self, text: &str) -> usize {
        let doc = DocTerms::from_text(text);
        let idx = self.docs.len();
        // sort so posting append order does not depend on hash iteration
        let mut terms: Vec<(&String, &u32)> = doc.tf.iter().collect();
        terms.sort();
        for (term, &tf) in terms {
            self.postings
                .entry(term.clone())
                .or_default()
                .push((idx, tf));
        }
        self.total_len += doc.len as u64;
        self.docs.push(doc);
        idx
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        let n = self.docs.len();
        CorpusStats {
            n_docs: n,
            avgdl: if n == 0 {
                0.0
            } else {
                self.total_len as f64 / n as f64
            },
        }
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc(&self, idx: usize) -> &DocTerms {
        &self.docs[idx]
    }

    /// Score of every document with at least one query term, by doc index.
    pub fn score_all(&self, query_tokens: &[String], params: &Bm25Params) -> Vec<(usize, f64)> {
        let stats = self.stats();
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in distinct_terms(query_tokens) {
            let Some(posting) = self.postings.get(term) else {
                continue;
            };
            let w = idf(stats.n_docs, posting.len());
            for &(doc, tf) in posting {
                *scores.entry(doc).or_insert(0.0) +=
                    w * term_weight(tf, self.docs[doc].len, &stats, params);
            }
        }
        let mut out: Vec<(usize, f64)> = scores.into_iter().collect();
        out.sort_by_key(|&(doc, _)| doc);
        out
    }
}

/// A retrieval request. Step 0 is the pre-episode query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub episode_id: String,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvent {
    pub event_id: u64,
    pub query: Query,
    pub returned_ids: Vec<String>,
    /// Rounded to 6 decimal places.
    pub scores: Vec<f64>,
}

pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Ranks pool units for `query` and returns the best `k` with positive score.
///
/// Ties are broken by insertion order, older first. The returned event has
/// `event_id` 0 until it is recorded in a [`RetrievalLog`].
pub fn retrieve(
    pool: &ExperiencePool,
    query: &Query,
    k: usize,
    params: &Bm25Params,
) -> Result<RetrievalEvent, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    params.validate()?;
    let tokens = tokenize(&query.text);
    let mut ranked: Vec<(usize, f64)> = pool
        .index()
        .score_all(&tokens, params)
        .into_iter()
        .filter(|&(_, s)| s > 0.0)
        .collect();
    let units = pool.units();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| units[a.0].insert_seq.cmp(&units[b.0].insert_seq))
    });
    ranked.truncate(k);
    Ok(RetrievalEvent {
        event_id: 0,
        query: query.clone(),
        returned_ids: ranked.iter().map(|&(i, _)| units[i].id.clone()).collect(),
        scores: ranked.iter().map(|&(_, s)| round6(s)).collect(),
    })
}

/// Append-only log of retrieval events for one run phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLog {
    pub events: Vec<RetrievalEvent>,
}

impl RetrievalLog {
    pub fn record(&mut self, mut event: RetrievalEvent) -> u64 {
        let id = self.events.len() as u64;
        event.event_id = id;
        self.events.push(event);
        id
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { events })
    }
}

/// Whether the step-level scheduler fires after `step` executed actions.
///
/// Only [`Condition::Step`] re-queries; the pre-episode query at step 0 is
/// issued by the episode loop for every condition.
pub fn should_requery(condition: Condition, interval: u32, step: u32) -> bool {
    condition == Condition::Step && interval > 0 && step > 0 && step.is_multiple_of(interval)
}

/// One executed action and the environment's response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: String,
    pub observation: String,
}

impl TraceStep {
    pub fn render(&self) -> String {
        format!("> {} => {}", self.action, self.observation)
    }
}

/// Query text for a (re-)query: the instruction followed by one line per
/// recent step.
pub fn build_step_query(
    instruction: &str,
    recent: &[TraceStep],
    episode_id: &str,
    step: u32,
) -> Query {
    let mut text = instruction.to_string();
    for s in recent {
        text.push('\n');
        text.push_str(&s.render());
    }
    Query {
        text,
        episode_id: episode_id.to_string(),
        step,
    }
}
