//! Batch-wise permutation training.
//!
//! Each step orders the current batch greedily under the current model, then
//! takes one ADAM step up the log-likelihood of that ordered batch. Batches are
//! refreshed every `refresh_period` steps, carrying `overlap` instances over from
//! the previous batch so consecutive batches stay connected.

mod persist;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;

pub use persist::{load_model, model_from_json, model_to_json, save_model, FORMAT_VERSION};

use crate::dataset::{write_file, Dataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{AdamConfig, AdamState, Mode};
use crate::ordering::{
    greedy_order_sampled_with, greedy_order_with, sequence_log_likelihood, Permutation, TabularScorer,
    TransitionScorer,
};
use crate::rng::{self, Rng};
use crate::transition::{Architecture, GatedTransitionNet, State};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Batch size `b`; `None` uses the whole dataset.
    pub batch_size: Option<usize>,
    /// Instances `b₀` carried over between consecutive batches.
    pub overlap: usize,
    /// Steps between batch refreshes.
    pub refresh_period: usize,
    pub total_steps: usize,
    /// Greedy start count; `None` tries every start.
    pub num_starts: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    pub dropout_rate: f64,
    pub architecture: Architecture,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: None,
            overlap: 0,
            refresh_period: 1,
            total_steps: 1000,
            num_starts: None,
            adam: AdamConfig::default(),
            seed: 0,
            dropout_rate: 0.2,
            architecture: Architecture::default(),
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    /// Check the config against a dataset of `n` instances; returns the batch size.
    pub fn validate(&self, n: usize) -> Result<usize> {
        let b = self.batch_size.unwrap_or(n);
        if b < 2 || b > n {
            return Err(Error::config("train.batch_size", format!("must lie in 2..={n}, got {b}")));
        }
        if self.overlap >= b {
            return Err(Error::config("train.overlap", format!("must be < batch size {b}, got {}", self.overlap)));
        }
        if self.refresh_period == 0 {
            return Err(Error::config("train.refresh_period", "must be >= 1"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("train.steps", "must be >= 1"));
        }
        if let Some(k) = self.num_starts {
            if k == 0 || k > b {
                return Err(Error::config("train.num_starts", format!("must lie in 1..={b}, got {k}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("train.dropout", format!("must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if self.architecture.encoder_hidden.is_empty() || self.architecture.encoder_hidden.contains(&0) {
            return Err(Error::config("train.encoder_hidden", "needs at least one non-zero width"));
        }
        if self.architecture.head_hidden.contains(&0) {
            return Err(Error::config("train.head_hidden", "widths must be non-zero"));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Batch log-likelihood under the step's greedy order, before the update.
    pub log_likelihood: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,log_likelihood,grad_norm\n");
        for r in &self.records {
            writeln!(out, "{},{},{}", r.step, r.log_likelihood, r.grad_norm).expect("writing to a string");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_csv())
    }
}

/// A transition network plus the provenance stored alongside it.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    pub net: GatedTransitionNet,
    pub seed: u64,
    pub steps: u64,
}

/// Draw the next batch of `b` indices out of `n`.
///
/// The first `b₀` entries of `prev` are carried over; `b − b₀` fresh indices are
/// drawn uniformly without replacement from the rest. Fresh indices come first,
/// so the carried set of the following refresh is drawn from them. An empty
/// `prev` yields a fully fresh batch.
pub fn sample_batch(n: usize, prev: &[usize], b: usize, overlap: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if b > n {
        return Err(Error::config("train.batch_size", format!("batch size {b} exceeds dataset size {n}")));
    }
    if overlap >= b.max(1) {
        return Err(Error::config("train.overlap", format!("overlap {overlap} must be < batch size {b}")));
    }
    let carried: &[usize] = if prev.is_empty() {
        &[]
    } else if prev.len() < overlap {
        return Err(Error::config(
            "train.overlap",
            format!("previous batch has {} entries, need {overlap}", prev.len()),
        ));
    } else {
        &prev[..overlap]
    };
    let mut excluded = vec![false; n];
    for &i in carried {
        if i >= n {
            return Err(Error::Parameter(format!("batch index {i} out of range for {n}")));
        }
        excluded[i] = true;
    }
    let pool: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
    let fresh = b - carried.len();
    let mut batch: Vec<usize> = sample(rng, pool.len(), fresh).into_iter().map(|k| pool[k]).collect();
    batch.extend_from_slice(carried);
    Ok(batch)
}

fn dropout_stream(seed: u64, step: usize, t: usize) -> Rng {
    rng::substream(seed, "dropout", ((step as u64) << 32) | t as u64)
}

/// Sum of `log T(s_{order[t]} | s_{order[t-1]})` and its parameter gradient.
/// Per-transition gradients are computed independently and summed in order.
fn ordered_gradient(
    net: &GatedTransitionNet,
    states: &[State],
    order: &[usize],
    mode: Mode,
    seed: u64,
    step: usize,
    exec: Exec,
) -> std::result::Result<(f64, Vec<f64>), (usize, usize)> {
    let parts = exec.map(order.len() - 1, |t| {
        let (from, to) = (order[t], order[t + 1]);
        let mut r = dropout_stream(seed, step, t);
        net.log_transition_grad_with(&states[from], &states[to], mode, Some(&mut r))
            .map_err(|_| (from, to))
    });
    let mut total = 0.0;
    let mut grad = vec![0.0; net.num_params()];
    for part in parts {
        let (value, g) = part?;
        total += value;
        grad.iter_mut().zip(&g).for_each(|(acc, v)| *acc += v);
    }
    Ok((total, grad))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ascend(net: &mut GatedTransitionNet, adam: &mut AdamState, grad: &[f64]) -> Result<()> {
    // ADAM descends, so hand it the negated log-likelihood gradient.
    let negated: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut params = net.flat_params();
    adam.step(&mut params, &negated)?;
    net.set_flat_params(&params)
}

fn offending_pair(scorer: &TabularScorer, order: &Permutation) -> (usize, usize) {
    order
        .as_slice()
        .windows(2)
        .find(|w| !scorer.score(w[0], w[1]).is_finite())
        .map_or((order.as_slice()[0], order.as_slice()[0]), |w| (w[0], w[1]))
}

/// Train a fresh network on `dataset`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(TransitionModel, TrainHistory)> {
    let b = config.validate(dataset.len())?;
    let mut init_rng = rng::stream(config.seed, "init");
    let mut net = GatedTransitionNet::new(
        dataset.kind(),
        dataset.dim(),
        &config.architecture,
        config.dropout_rate,
        &mut init_rng,
    )?;
    let mut batch_rng = rng::stream(config.seed, "batch");
    let mut order_rng = rng::stream(config.seed, "order");
    let mut adam = AdamState::new(net.num_params(), config.adam);
    let mut history = TrainHistory::default();
    let mut batch: Vec<usize> = Vec::new();
    let mut states: Vec<State> = Vec::new();

    for step in 1..=config.total_steps {
        if (step - 1) % config.refresh_period == 0 {
            batch = sample_batch(dataset.len(), &batch, b, config.overlap, &mut batch_rng)?;
            states = batch.iter().map(|&i| dataset.states()[i].clone()).collect();
        }
        let scorer = TabularScorer::from_model(&net, &states, config.exec)?;
        let order = match config.num_starts {
            Some(k) if k < b => greedy_order_sampled_with(&scorer, k, &mut order_rng, config.exec)?,
            _ => greedy_order_with(&scorer, config.exec),
        };
        let log_likelihood = sequence_log_likelihood(&scorer, &order)?;
        if !log_likelihood.is_finite() {
            let (from, to) = offending_pair(&scorer, &order);
            return Err(Error::Training {
                step,
                from: batch[from],
                to: batch[to],
            });
        }
        let (_, grad) = ordered_gradient(&net, &states, order.as_slice(), Mode::Train, config.seed, step, config.exec)
            .map_err(|(from, to)| Error::Training {
                step,
                from: batch[from],
                to: batch[to],
            })?;
        let grad_norm = norm(&grad);
        ascend(&mut net, &mut adam, &grad)?;
        history.records.push(StepRecord {
            step,
            log_likelihood,
            grad_norm,
        });
    }
    Ok((
        TransitionModel {
            net,
            seed: config.seed,
            steps: config.total_steps as u64,
        },
        history,
    ))
}

/// Gradient ascent on a fixed ordered batch. Returns the eval-mode sequence
/// log-likelihood before each step and after the last (`steps + 1` values).
pub fn fit_fixed_order(
    net: &mut GatedTransitionNet,
    states: &[State],
    order: &Permutation,
    steps: usize,
    adam: AdamConfig,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    if order.len() != states.len() || states.len() < 2 {
        return Err(Error::Size(format!(
            "order of {} items for {} states",
            order.len(),
            states.len()
        )));
    }
    let mut state = AdamState::new(net.num_params(), adam);
    let mut trace = Vec::with_capacity(steps + 1);
    let eval_ll = |net: &GatedTransitionNet| -> Result<f64> {
        let scorer = TabularScorer::from_model(net, states, exec)?;
        sequence_log_likelihood(&scorer, order)
    };
    for step in 1..=steps {
        trace.push(eval_ll(net)?);
        let (_, grad) = ordered_gradient(net, states, order.as_slice(), Mode::Train, seed, step, exec)
            .map_err(|(from, to)| Error::Training { step, from, to })?;
        ascend(net, &mut state, &grad)?;
    }
    trace.push(eval_ll(net)?);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_rotation_chain, shuffle_with_truth};
    use rand::SeedableRng;

    #[test]
    fn fresh_batch_without_overlap() {
        let mut rng = Rng::seed_from_u64(1);
        let batch = sample_batch(20, &[], 8, 3, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        let mut s = batch.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn carried_entries_are_the_first_overlap() {
        for seed in 0..50 {
            let mut rng = Rng::seed_from_u64(seed);
            let prev = [4, 9, 1, 7, 3, 0];
            let batch = sample_batch(12, &prev, 6, 2, &mut rng).unwrap();
            assert_eq!(batch.len(), 6);
            assert!(batch.contains(&4) && batch.contains(&9));
            let mut s = batch.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 6);
        }
    }

    #[test]
    fn maximal_overlap_adds_one() {
        let mut rng = Rng::seed_from_u64(2);
        let prev: Vec<usize> = (0..5).collect();
        let batch = sample_batch(10, &prev, 5, 4, &mut rng).unwrap();
        let fresh: Vec<_> = batch.iter().filter(|i| !prev[..4].contains(i)).collect();
        assert_eq!(fresh.len(), 1);
    }

    #[test]
    fn batch_errors() {
        let mut rng = Rng::seed_from_u64(3);
        assert!(sample_batch(5, &[], 6, 0, &mut rng).is_err());
        assert!(sample_batch(10, &[1], 5, 2, &mut rng).is_err());
        assert!(sample_batch(10, &[], 5, 5, &mut rng).is_err());
    }

    #[test]
    fn config_validation() {
        let c = TrainConfig {
            total_steps: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(10), Err(Error::Config { .. })));
        let c = TrainConfig {
            batch_size: Some(4),
            overlap: 4,
            ..TrainConfig::default()
        };
        assert!(c.validate(10).is_err());
        assert_eq!(TrainConfig::default().validate(10).unwrap(), 10);
    }

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            total_steps: 30,
            seed,
            architecture: Architecture {
                encoder_hidden: vec![8],
                head_hidden: vec![],
            },
            ..TrainConfig::default()
        }
    }

    fn toy_dataset() -> Dataset {
        let mut rng = Rng::seed_from_u64(4);
        let t = gen_rotation_chain(12, 1.0, 0.3, 0.02, &mut rng).unwrap();
        shuffle_with_truth(&t, &mut rng).unwrap().0
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_dataset();
        let (a, ha) = train(&data, &small_config(5)).unwrap();
        let (b, hb) = train(&data, &small_config(5)).unwrap();
        let bits = |m: &TransitionModel| m.net.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ha, hb);
        assert_eq!(ha.records.len(), 30);
        assert!(ha.records.windows(2).all(|w| w[1].step == w[0].step + 1));
        let (c, _) = train(&data, &small_config(6)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn serial_and_parallel_training_agree() {
        let data = toy_dataset();
        let serial = TrainConfig {
            exec: Exec::Serial,
            ..small_config(7)
        };
        let parallel = TrainConfig {
            exec: Exec::Parallel,
            ..small_config(7)
        };
        let (a, ha) = train(&data, &serial).unwrap();
        let (b, hb) = train(&data, &parallel).unwrap();
        assert_eq!(a.net.flat_params(), b.net.flat_params());
        assert_eq!(ha, hb);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let data = toy_dataset();
        let (_, h) = train(&data, &small_config(1)).unwrap();
        let csv = h.to_csv();
        assert!(csv.starts_with("step,log_likelihood,grad_norm\n"));
        assert_eq!(csv.lines().count(), 31);
    }

    #[test]
    fn fixed_order_ascent_improves() {
        let data = toy_dataset();
        let truth = data.truth().unwrap().clone();
        let mut rng = Rng::seed_from_u64(8);
        let mut net = GatedTransitionNet::new(data.kind(), 2, &Architecture::default(), 0.0, &mut rng).unwrap();
        let trace = fit_fixed_order(&mut net, data.states(), &truth, 50, AdamConfig::default(), 1, Exec::Serial).unwrap();
        assert_eq!(trace.len(), 51);
        assert!(trace[50] > trace[0]);
    }
}
