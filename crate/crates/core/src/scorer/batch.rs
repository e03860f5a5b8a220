use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use super::{cache_key, ScoreCache, ScoreError, ScoreRequest, ScoreResult, Scorer};

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Maximum number of requests in flight at once.
    pub parallelism: usize,
    /// When set, requests not yet started resolve to [`ScoreError::Interrupted`].
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            parallelism: 16,
            cancel: None,
        }
    }
}

impl BatchOptions {
    pub fn with_parallelism(parallelism: usize) -> Self {
        Self {
            parallelism,
            ..Default::default()
        }
    }

    fn cancelled(&self) -> bool {
        self.cancel
            .as_ref()
            .is_some_and(|flag| flag.load(Ordering::SeqCst))
    }
}

/// Scores `requests`, returning one result per request in input order.
///
/// Cache hits and duplicate requests within the batch are not sent to the
/// scorer; each distinct miss is scored once. Failures are per item.
pub fn score_batch(
    scorer: &dyn Scorer,
    requests: &[ScoreRequest],
    cache: Option<&ScoreCache>,
    options: &BatchOptions,
) -> Vec<Result<ScoreResult, ScoreError>> {
    let mut results: Vec<Option<Result<ScoreResult, ScoreError>>> = vec![None; requests.len()];
    // distinct cache misses, and for each request the miss slot it maps to
    let mut pending: Vec<(usize, String)> = Vec::new();
    let mut slot_of: Vec<Option<usize>> = vec![None; requests.len()];
    let mut slot_by_key: HashMap<String, usize> = HashMap::new();

    for (i, request) in requests.iter().enumerate() {
        if let Err(err) = request.validate() {
            results[i] = Some(Err(err));
            continue;
        }
        let key = cache_key(scorer.model_name(), &request.context, &request.question);
        if let Some(hit) = cache.and_then(|c| c.get(&key)) {
            results[i] = Some(Ok(hit));
            continue;
        }
        let slot = *slot_by_key.entry(key.clone()).or_insert_with(|| {
            pending.push((i, key));
            pending.len() - 1
        });
        slot_of[i] = Some(slot);
    }

    let outcomes: Vec<OnceLock<Result<ScoreResult, ScoreError>>> =
        (0..pending.len()).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    let workers = options.parallelism.max(1).min(pending.len());

    let work = || loop {
        let slot = next.fetch_add(1, Ordering::SeqCst);
        let Some((index, key)) = pending.get(slot) else {
            break;
        };
        let outcome = if options.cancelled() {
            Err(ScoreError::Interrupted)
        } else {
            scorer.score(&requests[*index])
        };
        if let (Ok(result), Some(cache)) = (&outcome, cache) {
            if let Err(err) = cache.put(key, result) {
                log::warn!("failed to persist score: {err}");
            }
        }
        let _ = outcomes[slot].set(outcome);
    };

    if workers == 1 {
        work();
    } else if workers > 1 {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }

    results
        .into_iter()
        .zip(slot_of)
        .map(|(done, slot)| match (done, slot) {
            (Some(result), _) => result,
            (None, Some(slot)) => outcomes[slot]
                .get()
                .cloned()
                .unwrap_or(Err(ScoreError::Interrupted)),
            (None, None) => unreachable!("every request is resolved or pending"),
        })
        .collect()
}
