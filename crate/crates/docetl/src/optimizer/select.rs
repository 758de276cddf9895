use serde::Serialize;

use crate::model::Dataset;

use super::agent::{AgentError, AgentInterface, CompareOutcome, ValidationPromptSpec};

/// The outcome of pairwise plan selection: which candidate won and the
/// evidence (per-candidate average ratings, the rated top slice, and the
/// pairwise comparison results).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSelection {
    pub winner: usize,
    /// Average rating per candidate; `None` marks an excluded (failed)
    /// candidate.
    pub ratings: Vec<Option<f64>>,
    /// Candidate indices advancing to pairwise comparison, best first.
    pub top: Vec<usize>,
    pub comparisons: Vec<(usize, usize, CompareOutcome)>,
}

/// Rates and pairwise-compares candidate plans (Algorithm 3 shape):
/// `execute(candidate, doc)` is invoked exactly once per pair — its outputs
/// are reused for both the rating and the comparison phase. Candidates
/// whose execution fails on any sample document are excluded. Returns
/// `None` only when every candidate failed.
pub fn select_plan<F>(
    n_candidates: usize,
    n_docs: usize,
    mut execute: F,
    vprompt: &ValidationPromptSpec,
    k: usize,
    agent: &dyn AgentInterface,
) -> Result<Option<PlanSelection>, AgentError>
where
    F: FnMut(usize, usize) -> Result<Dataset, String>,
{
    assert!(n_candidates > 0, "select_plan needs candidates");

    // Execution phase: each (candidate, document) pair exactly once.
    let mut outputs: Vec<Option<Vec<Dataset>>> = Vec::with_capacity(n_candidates);
    for cand in 0..n_candidates {
        let mut per_doc = Vec::with_capacity(n_docs);
        let mut failed = false;
        for doc in 0..n_docs {
            match execute(cand, doc) {
                Ok(ds) => per_doc.push(ds),
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        outputs.push((!failed).then_some(per_doc));
    }

    // Rating phase: average the per-document ratings.
    let mut ratings: Vec<Option<f64>> = Vec::with_capacity(n_candidates);
    for per_doc in &outputs {
        match per_doc {
            None => ratings.push(None),
            Some(docs) => {
                let mut sum = 0.0;
                for ds in docs {
                    sum += agent.rate(ds, vprompt)? as f64;
                }
                ratings.push(Some(if docs.is_empty() {
                    0.0
                } else {
                    sum / docs.len() as f64
                }));
            }
        }
    }

    let mut ranked: Vec<usize> = (0..n_candidates).filter(|i| ratings[*i].is_some()).collect();
    if ranked.is_empty() {
        return Ok(None);
    }
    // Ties broken by earlier candidate order (stable sort, descending avg).
    ranked.sort_by(|a, b| ratings[*b].partial_cmp(&ratings[*a]).unwrap());
    let top: Vec<usize> = ranked.into_iter().take(k.min(n_candidates)).collect();

    // Comparison phase: round-robin over the top slice, reusing outputs.
    let combined: Vec<Option<Dataset>> = outputs
        .iter()
        .map(|per_doc| {
            per_doc.as_ref().map(|docs| {
                Dataset::new(docs.iter().flat_map(|ds| ds.documents.clone()).collect())
            })
        })
        .collect();
    let mut wins = vec![0usize; n_candidates];
    let mut comparisons = Vec::new();
    for i in 0..top.len() {
        for j in (i + 1)..top.len() {
            let (a, b) = (top[i], top[j]);
            let outcome = agent.compare(
                combined[a].as_ref().expect("top candidates executed"),
                combined[b].as_ref().expect("top candidates executed"),
                vprompt,
            )?;
            match outcome {
                CompareOutcome::A => wins[a] += 1,
                CompareOutcome::B => wins[b] += 1,
                CompareOutcome::Tie => {}
            }
            comparisons.push((a, b, outcome));
        }
    }

    // Winner: most pairwise wins, then higher average, then earlier order.
    let winner = *top
        .iter()
        .max_by(|a, b| {
            wins[**a]
                .cmp(&wins[**b])
                .then(ratings[**a].partial_cmp(&ratings[**b]).unwrap())
                .then(b.cmp(a))
        })
        .expect("top is non-empty");

    Ok(Some(PlanSelection {
        winner,
        ratings,
        top,
        comparisons,
    }))
}
