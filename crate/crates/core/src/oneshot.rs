//! Generative one-shot classification.
//!
//! Each class is represented by a chain sampled from the learned operator,
//! starting at its single support instance. A query is scored against a class
//! by its average log-transition probability from every state of that chain
//! (support included), and assigned to the best-scoring class.

use rand::seq::index::sample;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::Mode;
use crate::rng::{self, Rng};
use crate::transition::{sample_from, GatedTransitionNet, State, TransitionStats};

pub const DEFAULT_CHAIN_LENGTH: usize = 5;

/// One labelled support per class plus labelled queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub way: usize,
    pub supports: Vec<State>,
    pub queries: Vec<(State, usize)>,
    pub k: usize,
    /// Source class index (into the pool) of each episode class.
    pub classes: Vec<usize>,
}

impl Episode {
    pub fn new(supports: Vec<State>, queries: Vec<(State, usize)>, k: usize) -> Result<Self> {
        let way = supports.len();
        if way == 0 {
            return Err(Error::Episode("episode needs at least one class".into()));
        }
        if let Some((_, c)) = queries.iter().find(|(_, c)| *c >= way) {
            return Err(Error::Episode(format!("query class {c} outside 0..{way}")));
        }
        Ok(Self {
            way,
            supports,
            queries,
            k,
            classes: (0..way).collect(),
        })
    }
}

/// `k` states sampled forward from `support`.
pub fn class_chain(net: &GatedTransitionNet, support: &State, k: usize, rng: &mut Rng) -> Result<Vec<State>> {
    let mut chain = Vec::with_capacity(k);
    let mut current = support.clone();
    for _ in 0..k {
        current = net.sample_next(&current, rng)?;
        chain.push(current.clone());
    }
    Ok(chain)
}

/// `(log T(q | support) + Σ_i log T(q | chain_i)) / (k + 1)`.
pub fn class_log_likelihood(net: &GatedTransitionNet, support: &State, chain: &[State], query: &State) -> Result<f64> {
    let mut total = net.log_transition(support, query)?;
    for s in chain {
        total += net.log_transition(s, query)?;
    }
    Ok(total / (chain.len() + 1) as f64)
}

/// Transition statistics of a class's support and chain, evaluated once.
struct ClassModel {
    stats: Vec<TransitionStats>,
}

impl ClassModel {
    fn build(net: &GatedTransitionNet, support: &State, k: usize, rng: &mut Rng) -> Result<Self> {
        let mut stats = Vec::with_capacity(k + 1);
        stats.push(net.stats(support, Mode::Eval, None)?);
        for _ in 0..k {
            let next = sample_from(stats.last().expect("non-empty"), rng)?;
            stats.push(net.stats(&next, Mode::Eval, None)?);
        }
        Ok(Self { stats })
    }

    // Same sum order as `class_log_likelihood`.
    fn score(&self, query: &State) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.stats {
            total += s.log_prob(query.values())?;
        }
        Ok(total / self.stats.len() as f64)
    }
}

/// Per-episode classification outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub predictions: Vec<usize>,
    /// `scores[q][c]`: class log-likelihood of query `q` under class `c`.
    pub scores: Vec<Vec<f64>>,
    /// Fraction correct; `None` for an episode without queries.
    pub accuracy: Option<f64>,
}

/// Argmax with ties to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Classify every query of `episode`. One chain is drawn per class, in class
/// order, from `rng`.
pub fn classify(net: &GatedTransitionNet, episode: &Episode, rng: &mut Rng) -> Result<EpisodeResult> {
    let classes = episode
        .supports
        .iter()
        .map(|s| ClassModel::build(net, s, episode.k, rng))
        .collect::<Result<Vec<_>>>()?;
    let scores = episode
        .queries
        .iter()
        .map(|(q, _)| classes.iter().map(|c| c.score(q)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let accuracy = (!predictions.is_empty()).then(|| {
        let correct = predictions
            .iter()
            .zip(&episode.queries)
            .filter(|(p, (_, truth))| *p == truth)
            .count();
        correct as f64 / predictions.len() as f64
    });
    Ok(EpisodeResult {
        predictions,
        scores,
        accuracy,
    })
}

/// Sample `way` classes from `pool`, one support and `queries_per_class`
/// queries each, without replacement within a class.
pub fn build_episode(
    pool: &[Dataset],
    way: usize,
    queries_per_class: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    if way == 0 || way > pool.len() {
        return Err(Error::Episode(format!("way {way} with {} classes available", pool.len())));
    }
    let needed = 1 + queries_per_class;
    if let Some((i, d)) = pool.iter().enumerate().find(|(_, d)| d.len() < needed) {
        return Err(Error::Episode(format!(
            "class {i} has {} instances, need {needed}",
            d.len()
        )));
    }
    let classes = sample(rng, pool.len(), way).into_vec();
    let mut supports = Vec::with_capacity(way);
    let mut queries = Vec::with_capacity(way * queries_per_class);
    for (label, &c) in classes.iter().enumerate() {
        let data = &pool[c];
        let picks = sample(rng, data.len(), needed).into_vec();
        supports.push(data.states()[picks[0]].clone());
        for &p in &picks[1..] {
            queries.push((data.states()[p].clone(), label));
        }
    }
    let mut episode = Episode::new(supports, queries, k)?;
    episode.classes = classes;
    Ok(episode)
}

/// Episode run settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub way: usize,
    pub queries_per_class: usize,
    pub k: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub index: usize,
    pub episode: Episode,
    pub result: EpisodeResult,
}

/// Run `spec.episodes` independent episodes; episode `i` uses its own stream
/// derived from `(seed, i)`, so the outcome does not depend on `exec`.
pub fn run_episodes(
    net: &GatedTransitionNet,
    pool: &[Dataset],
    spec: EpisodeSpec,
    seed: u64,
    exec: Exec,
) -> Result<Vec<EpisodeOutcome>> {
    exec.try_map(spec.episodes, |index| {
        let mut rng = rng::substream(seed, "episode", index as u64);
        let episode = build_episode(pool, spec.way, spec.queries_per_class, spec.k, &mut rng)?;
        let result = classify(net, &episode, &mut rng)?;
        Ok(EpisodeOutcome { index, episode, result })
    })
}

/// Mean and population standard deviation of the defined episode accuracies.
pub fn accuracy_summary(outcomes: &[EpisodeOutcome]) -> Option<(f64, f64)> {
    let acc: Vec<f64> = outcomes.iter().filter_map(|o| o.result.accuracy).collect();
    if acc.is_empty() {
        return None;
    }
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
