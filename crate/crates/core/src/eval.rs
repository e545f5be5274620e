//! Order-recovery metrics and baselines.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ordering::{greedy_chain, greedy_order, Permutation, TabularScorer, TransitionScorer};
use crate::transition::State;

/// Kendall tau-b between two orders of the same items.
///
/// Permutations have no ties, so this reduces to `(C − D) / (n(n−1)/2)`. The
/// discordant count is the number of inversions of `b`'s ranks read in `a`'s
/// order, counted by merge sort in `O(n log n)`.
pub fn kendall_tau_b(a: &Permutation, b: &Permutation) -> Result<f64> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::Size(format!("orders of different length: {n} vs {}", b.len())));
    }
    if n < 2 {
        return Err(Error::Size(format!("kendall tau needs n >= 2, got {n}")));
    }
    let rank_b = b.inverse();
    let mut seq: Vec<usize> = a.as_slice().iter().map(|&i| rank_b.as_slice()[i]).collect();
    let mut scratch = vec![0; n];
    let discordant = count_inversions(&mut seq, &mut scratch);
    let total = (n as u64) * (n as u64 - 1) / 2;
    Ok(tau_from_counts(total - discordant, discordant, total))
}

/// `(C − D) / total`.
pub fn tau_from_counts(concordant: u64, discordant: u64, total: u64) -> f64 {
    (concordant as f64 - discordant as f64) / total as f64
}

fn count_inversions(v: &mut [usize], scratch: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (l, r) = v.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        count_inversions(l, sl) + count_inversions(r, sr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            scratch[k] = v[i];
            i += 1;
        } else {
            scratch[k] = v[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    scratch[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&scratch[..n]);
    inv
}

/// Fixed distance used by the nearest-neighbour baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    /// Number of differing coordinates.
    Hamming,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Hamming => a.iter().zip(b).filter(|(x, y)| x != y).count() as f64,
        }
    }
}

/// `score(i, j) = −distance(s_i, s_j)`.
pub fn distance_scorer(states: &[State], metric: Metric) -> TabularScorer {
    TabularScorer::from_fn(states.len(), |i, j| -metric.distance(states[i].values(), states[j].values()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    Fixed(usize),
    /// Try every start and keep the shortest path.
    Best,
}

/// Nearest-neighbour chain under a fixed metric.
pub fn nn_order(states: &[State], start: StartPolicy, metric: Metric) -> Result<Permutation> {
    let scorer = distance_scorer(states, metric);
    match start {
        StartPolicy::Best => Ok(greedy_order(&scorer)),
        StartPolicy::Fixed(s) if s < states.len() => Permutation::new(greedy_chain(&scorer, s).0),
        StartPolicy::Fixed(s) => Err(Error::Parameter(format!(
            "start {s} out of range for {} states",
            states.len()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Propagation {
    /// Visited indices, starting with the start index.
    pub path: Vec<usize>,
    /// Set when propagation stopped early because no candidate remained.
    pub truncated: bool,
}

/// Follow the most probable successor for `steps` steps. The current index is
/// never a candidate; with `revisit = false` neither is any visited index.
pub fn propagate<S: TransitionScorer + ?Sized>(
    scorer: &S,
    start: usize,
    steps: usize,
    revisit: bool,
) -> Result<Propagation> {
    let n = scorer.len();
    if steps == 0 {
        return Err(Error::Parameter("propagation needs at least one step".into()));
    }
    if start >= n {
        return Err(Error::Parameter(format!("start {start} out of range for {n} states")));
    }
    let mut visited = vec![false; n];
    visited[start] = true;
    let mut path = vec![start];
    let mut current = start;
    for _ in 0..steps {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..n {
            if k == current || (!revisit && visited[k]) {
                continue;
            }
            let s = scorer.score(current, k);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        match best {
            Some((k, _)) => {
                visited[k] = true;
                path.push(k);
                current = k;
            }
            None => return Ok(Propagation { path, truncated: true }),
        }
    }
    Ok(Propagation {
        path,
        truncated: false,
    })
}

/// Agreement of a recovered order with the ground truth, in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub method: String,
    pub tau_forward: f64,
    pub tau_reverse: f64,
    pub tau_best: f64,
    pub recovered: Permutation,
}

pub fn evaluate_against(truth: &Permutation, recovered: &Permutation, method: &str) -> Result<OrderReport> {
    let tau_forward = kendall_tau_b(truth, recovered)?;
    let tau_reverse = kendall_tau_b(&truth.reversed(), recovered)?;
    Ok(OrderReport {
        method: method.to_string(),
        tau_forward,
        tau_reverse,
        tau_best: tau_forward.max(tau_reverse),
        recovered: recovered.clone(),
    })
}

pub fn evaluate_order(dataset: &Dataset, recovered: &Permutation, method: &str) -> Result<OrderReport> {
    let truth = dataset.truth().ok_or(Error::MissingTruth)?;
    evaluate_against(truth, recovered, method)
}
