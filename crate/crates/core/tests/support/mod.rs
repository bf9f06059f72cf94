//! Shared helpers: an index-free BM25 oracle and pool builders.

use memtransfer_core::memory::{EpisodeSource, Outcome, Payload};
use memtransfer_core::retrieval::Bm25Params;
use memtransfer_core::{Condition, ExperiencePool, Insight, Representation};

/// One unit per key, in order, under the individual-insight condition.
pub fn pool_of(keys: &[String]) -> ExperiencePool {
    let mut pool = ExperiencePool::new(Condition::Ind, Representation::Insight);
    for (i, key) in keys.iter().enumerate() {
        let ep = format!("ep{i}");
        let source = EpisodeSource {
            instruction: "unused",
            source_task: "A",
            episode_id: &ep,
            outcome: Outcome::Success,
        };
        let payload = Payload::Insights(vec![Insight::new(format!("body {i}"), key.clone())]);
        pool.insert_episode(&source, &payload).unwrap();
    }
    pool
}

pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Scores every key from scratch and applies the ranking rule.
pub fn brute_force(keys: &[String], query: &str, k: usize, p: &Bm25Params) -> Vec<(usize, f64)> {
    let docs: Vec<Vec<String>> = keys.iter().map(|k| oracle_tokens(k)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms: Vec<String> = Vec::new();
    for t in oracle_tokens(query) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored: Vec<(usize, f64)> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let s: f64 = terms
                .iter()
                .map(|t| {
                    let tf = d.iter().filter(|w| *w == t).count() as f64;
                    if tf == 0.0 {
                        return 0.0;
                    }
                    let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    let norm = d.len() as f64 / avgdl;
                    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm))
                })
                .sum();
            (i, s)
        })
        .filter(|&(_, s)| s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
