//! Permutation search against a pairwise transition scorer.
//!
//! `score(i, j)` is the log-probability of instance `j` following instance `i`.
//! The objective of an order `π` is `Σ_t score(π[t-1], π[t])`; the initial-state
//! term is uniform and therefore dropped.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::Mode;
use crate::rng::Rng;
use crate::transition::{GatedTransitionNet, State};

/// Largest `n` the exhaustive oracle accepts (10! ≈ 3.6M orders).
pub const BRUTE_FORCE_LIMIT: usize = 10;

/// A bijection on `0..n`; `order[t]` is the instance generated at step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n {
                return Err(Error::Permutation(format!("index {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Permutation(format!("index {i} appears twice")));
            }
        }
        Ok(Self(order))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.iter().rev().copied().collect())
    }

    /// `inverse[order[t]] = t`, i.e. the position of each item.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (t, &i) in self.0.iter().enumerate() {
            inv[i] = t;
        }
        Self(inv)
    }

    /// `items` rearranged into this order: `out[t] = items[order[t]]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.0.iter().map(|&i| items[i].clone()).collect()
    }
}

/// Pairwise log-transition scores over a bound set of `len()` instances.
pub trait TransitionScorer: Sync {
    fn len(&self) -> usize;

    fn score(&self, from: usize, to: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense `n × n` score table, row = predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularScorer {
    n: usize,
    scores: Vec<f64>,
}

impl TabularScorer {
    pub fn new(n: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != n * n {
            return Err(Error::InputShape {
                expected: n * n,
                got: scores.len(),
            });
        }
        Ok(Self { n, scores })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let scores = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self { n, scores }
    }

    /// Score table of a transition network over `states` (eval mode). Each
    /// state's statistics are computed once, then every pair is evaluated.
    pub fn from_model(net: &GatedTransitionNet, states: &[State], exec: Exec) -> Result<Self> {
        let n = states.len();
        let stats = exec.try_map(n, |i| net.stats(&states[i], Mode::Eval, None))?;
        let rows = exec.try_map(n, |i| {
            states
                .iter()
                .map(|next| stats[i].log_prob(next.values()))
                .collect::<Result<Vec<f64>>>()
        })?;
        Ok(Self {
            n,
            scores: rows.concat(),
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Add `c` to every entry.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            n: self.n,
            scores: self.scores.iter().map(|s| s + c).collect(),
        }
    }
}

impl TransitionScorer for TabularScorer {
    fn len(&self) -> usize {
        self.n
    }

    fn score(&self, from: usize, to: usize) -> f64 {
        self.scores[from * self.n + to]
    }
}

/// `Σ_{t≥1} score(π[t-1], π[t])`.
pub fn sequence_log_likelihood<S: TransitionScorer + ?Sized>(scorer: &S, perm: &Permutation) -> Result<f64> {
    if perm.len() < 2 {
        return Err(Error::Size(format!("need at least 2 instances, got {}", perm.len())));
    }
    if perm.len() != scorer.len() {
        return Err(Error::Permutation(format!(
            "permutation of {} items for a scorer over {}",
            perm.len(),
            scorer.len()
        )));
    }
    Ok(chain_score(scorer, perm.as_slice()))
}

fn chain_score<S: TransitionScorer + ?Sized>(scorer: &S, order: &[usize]) -> f64 {
    order.windows(2).fold(0.0, |acc, w| acc + scorer.score(w[0], w[1]))
}

/// Greedy chain from `start`: repeatedly append the best unused successor
/// (ties go to the smallest index). Returns the order and its log-likelihood.
pub fn greedy_chain<S: TransitionScorer + ?Sized>(scorer: &S, start: usize) -> (Vec<usize>, f64) {
    let n = scorer.len();
    let mut used = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut total = 0.0;
    used[start] = true;
    order.push(start);
    let mut last = start;
    for _ in 1..n {
        let mut best: Option<(usize, f64)> = None;
        for k in (0..n).filter(|&k| !used[k]) {
            let s = scorer.score(last, k);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        let (k, s) = best.expect("an unused index remains");
        used[k] = true;
        order.push(k);
        total += s;
        last = k;
    }
    (order, total)
}

fn best_of_starts<S: TransitionScorer + ?Sized>(scorer: &S, starts: &[usize], exec: Exec) -> Permutation {
    let chains = exec.map(starts.len(), |i| greedy_chain(scorer, starts[i]));
    // Ties keep the earliest start, which the callers pass in ascending order.
    let mut best = 0;
    for (i, (_, ll)) in chains.iter().enumerate().skip(1) {
        if *ll > chains[best].1 {
            best = i;
        }
    }
    Permutation(chains.into_iter().nth(best).expect("at least one start").0)
}

/// Greedy approximate order: the best greedy chain over every start.
pub fn greedy_order<S: TransitionScorer + ?Sized>(scorer: &S) -> Permutation {
    greedy_order_with(scorer, Exec::default())
}

pub fn greedy_order_with<S: TransitionScorer + ?Sized>(scorer: &S, exec: Exec) -> Permutation {
    let n = scorer.len();
    if n == 0 {
        return Permutation(Vec::new());
    }
    let starts: Vec<usize> = (0..n).collect();
    best_of_starts(scorer, &starts, exec)
}

/// Greedy order restricted to `num_starts` start indices drawn uniformly
/// without replacement.
pub fn greedy_order_sampled<S: TransitionScorer + ?Sized>(scorer: &S, num_starts: usize, rng: &mut Rng) -> Result<Permutation> {
    greedy_order_sampled_with(scorer, num_starts, rng, Exec::default())
}

pub fn greedy_order_sampled_with<S: TransitionScorer + ?Sized>(
    scorer: &S,
    num_starts: usize,
    rng: &mut Rng,
    exec: Exec,
) -> Result<Permutation> {
    let n = scorer.len();
    if num_starts == 0 || num_starts > n {
        return Err(Error::Parameter(format!("num_starts must lie in 1..={n}, got {num_starts}")));
    }
    let mut starts = sample(rng, n, num_starts).into_vec();
    starts.sort_unstable();
    Ok(best_of_starts(scorer, &starts, exec))
}

/// Exhaustive maximizer of the sequence log-likelihood; ties resolve to the
/// lexicographically smallest order.
pub fn brute_force_order<S: TransitionScorer + ?Sized>(scorer: &S) -> Result<Permutation> {
    brute_force_order_with(scorer, Exec::default())
}

pub fn brute_force_order_with<S: TransitionScorer + ?Sized>(scorer: &S, exec: Exec) -> Result<Permutation> {
    let n = scorer.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Size(format!(
            "exhaustive search limited to n <= {BRUTE_FORCE_LIMIT}, got {n}"
        )));
    }
    if n <= 1 {
        return Ok(Permutation::identity(n));
    }
    let per_first = exec.map(n, |first| {
        let mut search = Exhaustive {
            scorer,
            used: vec![false; n],
            prefix: Vec::with_capacity(n),
            best: None,
        };
        search.used[first] = true;
        search.prefix.push(first);
        search.descend(0.0);
        search.best.expect("n >= 2 leaves at least one order")
    });
    let mut best = 0;
    for (i, (_, ll)) in per_first.iter().enumerate().skip(1) {
        if *ll > per_first[best].1 {
            best = i;
        }
    }
    Ok(Permutation(per_first.into_iter().nth(best).expect("n >= 2").0))
}

struct Exhaustive<'a, S: ?Sized> {
    scorer: &'a S,
    used: Vec<bool>,
    prefix: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
}

impl<S: TransitionScorer + ?Sized> Exhaustive<'_, S> {
    // Children are visited in ascending index order, so leaves arrive in
    // lexicographic order and a strict comparison keeps the first maximum.
    fn descend(&mut self, acc: f64) {
        let n = self.used.len();
        if self.prefix.len() == n {
            if self.best.as_ref().is_none_or(|(_, b)| acc > *b) {
                self.best = Some((self.prefix.clone(), acc));
            }
            return;
        }
        let last = *self.prefix.last().expect("prefix starts non-empty");
        for k in 0..n {
            if self.used[k] {
                continue;
            }
            self.used[k] = true;
            self.prefix.push(k);
            self.descend(acc + self.scorer.score(last, k));
            self.prefix.pop();
            self.used[k] = false;
        }
    }
}
