//! Explicit transition operator `T(s' | s; θ)`.
//!
//! A shared encoder maps the current state to a hidden code `h`. Three heads read
//! `h`: a sigmoid gate `U`, a candidate update `X̃`, and (continuous states only)
//! a log-variance. The next-state prediction mixes the candidate with the input,
//! `U ⊙ X̃ + (1 − U) ⊙ s`. Continuous states get a diagonal Gaussian around that
//! prediction; binary states get independent Bernoulli bits whose probabilities
//! are the same mix of `σ(X̃)` and the (clamped) current bits.
//!
//! Both outputs are normalized densities/masses, so log-likelihoods of different
//! conditioning states are directly comparable.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpCache, Mode};
use crate::rng::Rng;

pub const LOG_VARIANCE_MIN: f64 = -10.0;
pub const LOG_VARIANCE_MAX: f64 = 10.0;
/// Bernoulli probabilities are kept in `[δ, 1 − δ]`.
pub const PROB_FLOOR: f64 = 1e-4;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateKind {
    Continuous,
    Binary,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Continuous => "continuous",
            StateKind::Binary => "binary",
        }
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(StateKind::Continuous),
            "binary" => Ok(StateKind::Binary),
            other => Err(Error::Parameter(format!("unknown state kind `{other}`"))),
        }
    }
}

/// One data instance.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    values: Vec<f64>,
    kind: StateKind,
}

impl State {
    pub fn continuous(values: Vec<f64>) -> Result<Self> {
        Self::new(values, StateKind::Continuous)
    }

    pub fn binary(values: Vec<f64>) -> Result<Self> {
        Self::new(values, StateKind::Binary)
    }

    pub fn new(values: Vec<f64>, kind: StateKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("state needs at least one component".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite state component {bad}")));
        }
        if kind == StateKind::Binary {
            if let Some(bad) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::Domain(format!("binary state component {bad} is not 0 or 1")));
            }
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Hidden layer widths of the gated network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Widths of the encoder layers after the input; the last entry is the
    /// width of the shared code `h`.
    pub encoder_hidden: Vec<usize>,
    /// Widths of the hidden layers inside each head (often empty).
    pub head_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![32, 32],
            head_hidden: Vec::new(),
        }
    }
}

/// Per-state output of the operator.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionStats {
    Gaussian { mean: Vec<f64>, variance: Vec<f64> },
    Bernoulli { prob: Vec<f64> },
}

impl TransitionStats {
    /// Log density (or mass) of `next` under these statistics.
    pub fn log_prob(&self, next: &[f64]) -> Result<f64> {
        match self {
            TransitionStats::Gaussian { mean, variance } => gaussian_log_density(mean, variance, next),
            TransitionStats::Bernoulli { prob } => bernoulli_log_mass(prob, next),
        }
    }

    /// The predicted next state: the mean, or the bit probabilities.
    pub fn prediction(&self) -> &[f64] {
        match self {
            TransitionStats::Gaussian { mean, .. } => mean,
            TransitionStats::Bernoulli { prob } => prob,
        }
    }
}

/// Fully normalized diagonal Gaussian log density.
pub fn gaussian_log_density(mean: &[f64], variance: &[f64], x: &[f64]) -> Result<f64> {
    if mean.len() != variance.len() || mean.len() != x.len() {
        return Err(Error::InputShape {
            expected: mean.len(),
            got: if variance.len() != mean.len() { variance.len() } else { x.len() },
        });
    }
    let mut total = 0.0;
    for ((&m, &v), &xi) in mean.iter().zip(variance).zip(x) {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("variance must be positive, got {v}")));
        }
        let d = xi - m;
        total += -0.5 * d * d / v - 0.5 * v.ln() - HALF_LN_2PI;
    }
    Ok(total)
}

/// Log mass of a binary vector under independent Bernoulli bits.
pub fn bernoulli_log_mass(prob: &[f64], x: &[f64]) -> Result<f64> {
    if prob.len() != x.len() {
        return Err(Error::InputShape {
            expected: prob.len(),
            got: x.len(),
        });
    }
    let mut total = 0.0;
    for (&f, &xi) in prob.iter().zip(x) {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Domain(format!("bernoulli probability {f} outside (0, 1)")));
        }
        total += if xi == 1.0 {
            f.ln()
        } else if xi == 0.0 {
            (1.0 - f).ln()
        } else {
            return Err(Error::Domain(format!("binary outcome {xi} is not 0 or 1")));
        };
    }
    Ok(total)
}

/// The learnable gated transition network.
#[derive(Debug, Clone)]
pub struct GatedTransitionNet {
    kind: StateKind,
    dim: usize,
    encoder: Mlp,
    gate: Mlp,
    candidate: Mlp,
    variance: Option<Mlp>,
    dropout_rate: f64,
}

struct Forward {
    encoder: MlpCache,
    code_mask: Option<Vec<f64>>,
    gate: Vec<f64>,
    gate_cache: MlpCache,
    candidate: Vec<f64>,
    candidate_cache: MlpCache,
    log_variance: Option<(Vec<f64>, MlpCache)>,
    stats: TransitionStats,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn head_sizes(code: usize, hidden: &[usize], dim: usize) -> Vec<usize> {
    std::iter::once(code).chain(hidden.iter().copied()).chain([dim]).collect()
}

impl GatedTransitionNet {
    pub fn new(kind: StateKind, dim: usize, arch: &Architecture, dropout_rate: f64, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("state dimension must be at least 1".into()));
        }
        if arch.encoder_hidden.is_empty() {
            return Err(Error::Parameter("encoder needs at least one hidden layer".into()));
        }
        let encoder_sizes: Vec<usize> = std::iter::once(dim).chain(arch.encoder_hidden.iter().copied()).collect();
        let code = *arch.encoder_hidden.last().expect("non-empty");
        let heads = head_sizes(code, &arch.head_hidden, dim);
        let encoder = Mlp::new(&encoder_sizes, Activation::Relu, Activation::Relu, dropout_rate, rng)?;
        let gate = Mlp::new(&heads, Activation::Relu, Activation::Sigmoid, dropout_rate, rng)?;
        let candidate = Mlp::new(&heads, Activation::Relu, Activation::Identity, dropout_rate, rng)?;
        let variance = match kind {
            StateKind::Continuous => Some(Mlp::new(&heads, Activation::Relu, Activation::Identity, dropout_rate, rng)?),
            StateKind::Binary => None,
        };
        Self::from_parts(kind, encoder, gate, candidate, variance, dropout_rate)
    }

    /// Assemble a net from explicit sub-networks, checking that they fit together.
    pub fn from_parts(
        kind: StateKind,
        encoder: Mlp,
        gate: Mlp,
        candidate: Mlp,
        variance: Option<Mlp>,
        dropout_rate: f64,
    ) -> Result<Self> {
        let dim = encoder.input_dim();
        let code = encoder.output_dim();
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Parameter(format!("dropout rate must lie in [0, 1), got {dropout_rate}")));
        }
        let check = |name: &str, head: &Mlp, act: Activation| -> Result<()> {
            if head.input_dim() != code || head.output_dim() != dim {
                return Err(Error::Dimension(format!(
                    "{name} head maps {} -> {}, expected {code} -> {dim}",
                    head.input_dim(),
                    head.output_dim()
                )));
            }
            if head.layers().last().map(|l| l.activation()) != Some(act) {
                return Err(Error::Dimension(format!("{name} head has the wrong output activation")));
            }
            Ok(())
        };
        check("gate", &gate, Activation::Sigmoid)?;
        check("candidate", &candidate, Activation::Identity)?;
        match (kind, &variance) {
            (StateKind::Continuous, Some(v)) => check("variance", v, Activation::Identity)?,
            (StateKind::Binary, None) => {}
            (StateKind::Continuous, None) => {
                return Err(Error::Dimension("continuous net needs a variance head".into()))
            }
            (StateKind::Binary, Some(_)) => {
                return Err(Error::Dimension("binary net must not have a variance head".into()))
            }
        }
        Ok(Self {
            kind,
            dim,
            encoder,
            gate,
            candidate,
            variance,
            dropout_rate,
        })
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn gate(&self) -> &Mlp {
        &self.gate
    }

    pub fn candidate(&self) -> &Mlp {
        &self.candidate
    }

    pub fn variance(&self) -> Option<&Mlp> {
        self.variance.as_ref()
    }

    pub fn gate_mut(&mut self) -> &mut Mlp {
        &mut self.gate
    }

    pub fn candidate_mut(&mut self) -> &mut Mlp {
        &mut self.candidate
    }

    pub fn variance_mut(&mut self) -> Option<&mut Mlp> {
        self.variance.as_mut()
    }

    fn parts(&self) -> impl Iterator<Item = &Mlp> {
        [&self.encoder, &self.gate, &self.candidate]
            .into_iter()
            .chain(self.variance.as_ref())
    }

    pub fn num_params(&self) -> usize {
        self.parts().map(Mlp::num_params).sum()
    }

    /// Flat parameter vector: encoder, gate, candidate, then variance head;
    /// each layer contributes its row-major weights followed by its bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for part in self.parts() {
            part.write_params(&mut out);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::InputShape {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for part in [&mut self.encoder, &mut self.gate, &mut self.candidate]
            .into_iter()
            .chain(self.variance.as_mut())
        {
            let n = part.num_params();
            part.set_flat_params(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    fn check_state(&self, s: &State) -> Result<()> {
        if s.kind() != self.kind {
            return Err(Error::KindMismatch {
                expected: self.kind.as_str(),
                got: s.kind().as_str(),
            });
        }
        if s.dim() != self.dim {
            return Err(Error::InputShape {
                expected: self.dim,
                got: s.dim(),
            });
        }
        Ok(())
    }

    fn forward(&self, s: &State, mode: Mode, mut rng: Option<&mut Rng>) -> Result<Forward> {
        self.check_state(s)?;
        let x = s.values();
        let (mut code, encoder) = self.encoder.forward(x, mode, rng.as_deref_mut())?;
        let code_mask = if mode == Mode::Train && self.dropout_rate > 0.0 {
            let r = rng
                .as_deref_mut()
                .ok_or_else(|| Error::Parameter("train-mode forward needs an rng".into()))?;
            let mask = crate::nn::mlp_dropout_mask(code.len(), self.dropout_rate, r);
            code.iter_mut().zip(&mask).for_each(|(c, m)| *c *= m);
            Some(mask)
        } else {
            None
        };
        let (gate, gate_cache) = self.gate.forward(&code, mode, rng.as_deref_mut())?;
        let (candidate, candidate_cache) = self.candidate.forward(&code, mode, rng.as_deref_mut())?;
        let (stats, log_variance) = match &self.variance {
            Some(head) => {
                let (raw, cache) = head.forward(&code, mode, rng.as_deref_mut())?;
                let mean = (0..self.dim)
                    .map(|j| gate[j] * candidate[j] + (1.0 - gate[j]) * x[j])
                    .collect();
                let variance = raw
                    .iter()
                    .map(|z| z.clamp(LOG_VARIANCE_MIN, LOG_VARIANCE_MAX).exp())
                    .collect();
                (TransitionStats::Gaussian { mean, variance }, Some((raw, cache)))
            }
            None => {
                let prob = (0..self.dim)
                    .map(|j| {
                        let cand = clamp_prob(crate::nn::sigmoid(candidate[j]));
                        gate[j] * cand + (1.0 - gate[j]) * clamp_prob(x[j])
                    })
                    .collect();
                (TransitionStats::Bernoulli { prob }, None)
            }
        };
        Ok(Forward {
            encoder,
            code_mask,
            gate,
            gate_cache,
            candidate,
            candidate_cache,
            log_variance,
            stats,
        })
    }

    /// Gate output `U` and candidate `X̃` for `s` (eval mode).
    pub fn gate_and_candidate(&self, s: &State) -> Result<(Vec<f64>, Vec<f64>)> {
        let fwd = self.forward(s, Mode::Eval, None)?;
        Ok((fwd.gate, fwd.candidate))
    }

    pub fn stats(&self, s: &State, mode: Mode, rng: Option<&mut Rng>) -> Result<TransitionStats> {
        Ok(self.forward(s, mode, rng)?.stats)
    }

    /// Smallest `|z|` over every relu pre-activation evaluated for `s`.
    pub fn relu_margin(&self, s: &State) -> Result<f64> {
        self.check_state(s)?;
        let mut margin = self.encoder.relu_margin(s.values())?;
        let (code, _) = self.encoder.forward(s.values(), Mode::Eval, None)?;
        for head in [Some(&self.gate), Some(&self.candidate), self.variance.as_ref()].into_iter().flatten() {
            margin = margin.min(head.relu_margin(&code)?);
        }
        Ok(margin)
    }

    /// `log T(next | s)` in eval mode.
    pub fn log_transition(&self, s: &State, next: &State) -> Result<f64> {
        self.check_state(next)?;
        self.stats(s, Mode::Eval, None)?.log_prob(next.values())
    }

    /// `log T(next | s)` and its gradient wrt the flat parameters (eval mode).
    pub fn log_transition_grad(&self, s: &State, next: &State) -> Result<(f64, Vec<f64>)> {
        self.log_transition_grad_with(s, next, Mode::Eval, None)
    }

    pub fn log_transition_grad_with(
        &self,
        s: &State,
        next: &State,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_state(next)?;
        let fwd = self.forward(s, mode, rng)?;
        let value = fwd.stats.log_prob(next.values())?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite log transition {value}")));
        }
        let x = s.values();
        let y = next.values();
        let p = self.dim;
        let mut d_gate = vec![0.0; p];
        let mut d_candidate = vec![0.0; p];
        let mut d_log_variance = None;
        match (&fwd.stats, &fwd.log_variance) {
            (TransitionStats::Gaussian { mean, variance }, Some((raw, _))) => {
                let mut d_raw = vec![0.0; p];
                for j in 0..p {
                    let resid = y[j] - mean[j];
                    let d_mean = resid / variance[j];
                    d_gate[j] = d_mean * (fwd.candidate[j] - x[j]);
                    d_candidate[j] = d_mean * fwd.gate[j];
                    if raw[j] > LOG_VARIANCE_MIN && raw[j] < LOG_VARIANCE_MAX {
                        d_raw[j] = 0.5 * resid * resid / variance[j] - 0.5;
                    }
                }
                d_log_variance = Some(d_raw);
            }
            (TransitionStats::Bernoulli { prob }, None) => {
                for j in 0..p {
                    let f = prob[j];
                    let d_prob = if y[j] == 1.0 { 1.0 / f } else { -1.0 / (1.0 - f) };
                    let sig = crate::nn::sigmoid(fwd.candidate[j]);
                    let cand = clamp_prob(sig);
                    d_gate[j] = d_prob * (cand - clamp_prob(x[j]));
                    if sig > PROB_FLOOR && sig < 1.0 - PROB_FLOOR {
                        d_candidate[j] = d_prob * fwd.gate[j] * sig * (1.0 - sig);
                    }
                }
            }
            _ => unreachable!("stats and heads always agree on kind"),
        }

        let gate_grads = self.gate.backward(&fwd.gate_cache, &d_gate)?;
        let candidate_grads = self.candidate.backward(&fwd.candidate_cache, &d_candidate)?;
        let variance_grads = match (&self.variance, &fwd.log_variance, &d_log_variance) {
            (Some(head), Some((_, cache)), Some(d)) => Some(head.backward(cache, d)?),
            _ => None,
        };
        let mut d_code = gate_grads.input.clone();
        for (acc, g) in d_code.iter_mut().zip(&candidate_grads.input) {
            *acc += g;
        }
        if let Some(v) = &variance_grads {
            for (acc, g) in d_code.iter_mut().zip(&v.input) {
                *acc += g;
            }
        }
        if let Some(mask) = &fwd.code_mask {
            d_code.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let encoder_grads = self.encoder.backward(&fwd.encoder, &d_code)?;

        let mut grad = Vec::with_capacity(self.num_params());
        grad.extend_from_slice(&encoder_grads.params);
        grad.extend_from_slice(&gate_grads.params);
        grad.extend_from_slice(&candidate_grads.params);
        if let Some(v) = variance_grads {
            grad.extend_from_slice(&v.params);
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at parameter {bad}")));
        }
        Ok((value, grad))
    }

    /// Draw `s' ~ T(· | s)` (eval-mode statistics).
    pub fn sample_next(&self, s: &State, rng: &mut Rng) -> Result<State> {
        let stats = self.stats(s, Mode::Eval, None)?;
        sample_from(&stats, rng)
    }
}

pub fn sample_from(stats: &TransitionStats, rng: &mut Rng) -> Result<State> {
    match stats {
        TransitionStats::Gaussian { mean, variance } => {
            let values = mean
                .iter()
                .zip(variance)
                .map(|(m, v)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + v.sqrt() * z
                })
                .collect();
            State::continuous(values)
        }
        TransitionStats::Bernoulli { prob } => {
            let values = prob
                .iter()
                .map(|&f| if rng.random::<f64>() < f { 1.0 } else { 0.0 })
                .collect();
            State::binary(values)
        }
    }
}

/// `−½ log(2π v)` summed over coordinates: the log density at the mean.
pub fn gaussian_peak_log_density(variance: &[f64]) -> f64 {
    variance.iter().map(|v| -0.5 * (2.0 * PI * v).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn net(kind: StateKind, dim: usize, seed: u64) -> GatedTransitionNet {
        let mut rng = Rng::seed_from_u64(seed);
        let arch = Architecture {
            encoder_hidden: vec![8, 6],
            head_hidden: vec![],
        };
        GatedTransitionNet::new(kind, dim, &arch, 0.0, &mut rng).unwrap()
    }

    fn force_gate(net: &mut GatedTransitionNet, bias: f64) {
        let layers = net.gate_mut().layers_mut();
        let last = layers.len() - 1;
        layers[last].weights_mut().fill(0.0);
        layers[last].bias_mut().fill(bias);
    }

    #[test]
    fn gaussian_density_values() {
        assert!(close(gaussian_log_density(&[0.0], &[1.0], &[0.0]).unwrap(), -0.918_938_533_2, 1e-9));
        assert!(close(gaussian_log_density(&[0.0], &[1.0], &[1.0]).unwrap(), -1.418_938_533_2, 1e-9));
        // -1/2 - ln 2 - ln(2π)/2 and -ln(2π)/2
        let expected = -0.5 - 2f64.ln() - 2.0 * HALF_LN_2PI;
        let got = gaussian_log_density(&[0.0, 0.0], &[4.0, 1.0], &[2.0, 0.0]).unwrap();
        assert!(close(got, expected, 1e-12));
        assert!(close(got, -3.031_024, 1e-6));
    }

    #[test]
    fn gaussian_rejects_bad_variance() {
        assert!(matches!(gaussian_log_density(&[0.0], &[0.0], &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(gaussian_log_density(&[0.0], &[-1.0], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn bernoulli_mass_values() {
        assert!(close(bernoulli_log_mass(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), -1.386_294_361, 1e-9));
        assert!(close(bernoulli_log_mass(&[0.9], &[1.0]).unwrap(), -0.105_360_516, 1e-9));
        let expected = 0.9f64.ln() + 0.9f64.ln() + 0.5f64.ln();
        let got = bernoulli_log_mass(&[0.9, 0.1, 0.5], &[1.0, 0.0, 1.0]).unwrap();
        assert!(close(got, expected, 1e-12));
        assert!(close(got, -0.90387, 1e-5));
    }

    #[test]
    fn bernoulli_rejects_boundary() {
        assert!(bernoulli_log_mass(&[1.0], &[1.0]).is_err());
        assert!(bernoulli_log_mass(&[0.0], &[0.0]).is_err());
        assert!(bernoulli_log_mass(&[0.5], &[0.5]).is_err());
    }

    #[test]
    fn state_validation() {
        assert!(State::binary(vec![0.0, 1.0]).is_ok());
        assert!(State::binary(vec![0.0, 0.5]).is_err());
        assert!(State::continuous(vec![]).is_err());
        assert!(State::continuous(vec![f64::NAN]).is_err());
    }

    #[test]
    fn open_gate_returns_candidate() {
        let mut n = net(StateKind::Continuous, 2, 1);
        force_gate(&mut n, 60.0);
        let s = State::continuous(vec![0.3, -1.2]).unwrap();
        let (_, cand) = n.gate_and_candidate(&s).unwrap();
        let stats = n.stats(&s, Mode::Eval, None).unwrap();
        for (m, c) in stats.prediction().iter().zip(&cand) {
            assert!(close(*m, *c, 1e-12));
        }
    }

    #[test]
    fn closed_gate_returns_input() {
        let mut n = net(StateKind::Continuous, 2, 2);
        force_gate(&mut n, -800.0);
        let s = State::continuous(vec![0.3, -1.2]).unwrap();
        let stats = n.stats(&s, Mode::Eval, None).unwrap();
        assert_eq!(stats.prediction(), s.values());
        // s' = m: log density collapses to the normalizer
        if let TransitionStats::Gaussian { variance, .. } = &stats {
            let lt = n.log_transition(&s, &s).unwrap();
            assert!(close(lt, gaussian_peak_log_density(variance), 1e-12));
        } else {
            panic!("expected gaussian stats");
        }
    }

    #[test]
    fn mean_lies_between_candidate_and_input() {
        for seed in 0..20 {
            let n = net(StateKind::Continuous, 2, seed);
            let s = State::continuous(vec![0.3, -1.2]).unwrap();
            let (_, cand) = n.gate_and_candidate(&s).unwrap();
            let stats = n.stats(&s, Mode::Eval, None).unwrap();
            for j in 0..2 {
                let lo = cand[j].min(s.values()[j]);
                let hi = cand[j].max(s.values()[j]);
                let m = stats.prediction()[j];
                assert!(lo <= m && m <= hi, "seed {seed}: {lo} <= {m} <= {hi}");
            }
        }
    }

    #[test]
    fn kind_mismatch() {
        let n = net(StateKind::Continuous, 2, 3);
        let b = State::binary(vec![0.0, 1.0]).unwrap();
        assert!(matches!(n.stats(&b, Mode::Eval, None), Err(Error::KindMismatch { .. })));
        let c = State::continuous(vec![0.0, 1.0]).unwrap();
        assert!(n.log_transition(&c, &b).is_err());
    }

    #[test]
    fn log_transition_is_finite_for_extreme_inputs() {
        let n = net(StateKind::Continuous, 3, 4);
        let s = State::continuous(vec![1e3, -1e3, 50.0]).unwrap();
        let t = State::continuous(vec![-1e3, 1e3, 0.0]).unwrap();
        assert!(n.log_transition(&s, &t).unwrap().is_finite());
        let b = net(StateKind::Binary, 3, 4);
        let s = State::binary(vec![1.0, 0.0, 1.0]).unwrap();
        let t = State::binary(vec![0.0, 1.0, 0.0]).unwrap();
        assert!(b.log_transition(&s, &t).unwrap().is_finite());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut n = net(StateKind::Continuous, 3, 5);
        let p = n.flat_params();
        assert_eq!(p.len(), n.num_params());
        let shifted: Vec<f64> = p.iter().map(|v| v + 0.25).collect();
        n.set_flat_params(&shifted).unwrap();
        assert_eq!(n.flat_params(), shifted);
        assert!(n.set_flat_params(&p[1..]).is_err());
    }

    #[test]
    fn zero_residual_kills_mean_gradient() {
        // At s' = m the quadratic term is stationary, so only the -½ log v term
        // drives the gradient: the candidate head sees no signal.
        let n = net(StateKind::Continuous, 2, 6);
        let s = State::continuous(vec![0.4, 0.1]).unwrap();
        let m = n.stats(&s, Mode::Eval, None).unwrap().prediction().to_vec();
        let next = State::continuous(m).unwrap();
        let (_, grad) = n.log_transition_grad(&s, &next).unwrap();
        let start = n.encoder().num_params() + n.gate().num_params();
        let cand = &grad[start..start + n.candidate().num_params()];
        assert!(cand.iter().all(|g| g.abs() < 1e-12), "{cand:?}");
    }

    #[test]
    fn clamped_log_variance_has_zero_gradient() {
        let mut n = net(StateKind::Continuous, 2, 7);
        {
            let head = n.variance_mut().unwrap();
            let layers = head.layers_mut();
            let last = layers.len() - 1;
            layers[last].bias_mut()[0] = 50.0;
        }
        let s = State::continuous(vec![0.4, 0.1]).unwrap();
        let t = State::continuous(vec![1.4, -0.1]).unwrap();
        let (_, grad) = n.log_transition_grad(&s, &t).unwrap();
        let last = n.variance().unwrap().layers().last().unwrap();
        let w_start = grad.len() - last.num_params();
        // row 0 of the last variance layer and bias 0
        let inputs = last.inputs();
        assert!(grad[w_start..w_start + inputs].iter().all(|&g| g == 0.0));
        assert_eq!(grad[grad.len() - last.outputs()], 0.0);
        assert!(grad[grad.len() - 1] != 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(11);
        for trial in 0..10 {
            let kind = if trial % 2 == 0 { StateKind::Continuous } else { StateKind::Binary };
            let dim = 1 + trial % 4;
            let n = net(kind, dim, 100 + trial as u64);
            let draw = |rng: &mut Rng| -> State {
                match kind {
                    StateKind::Continuous => State::continuous((0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap(),
                    StateKind::Binary => State::binary((0..dim).map(|_| f64::from(rng.random::<bool>() as u8)).collect()).unwrap(),
                }
            };
            let mut s = draw(&mut rng);
            // an all-zero binary input puts every encoder unit on its relu kink
            while n.relu_margin(&s).unwrap() < 1e-3 {
                s = draw(&mut rng);
            }
            let t = draw(&mut rng);
            let (_, grad) = n.log_transition_grad(&s, &t).unwrap();
            let p0 = n.flat_params();
            let mut probe = n.clone();
            let err = crate::nn::grad_check(
                |p| {
                    probe.set_flat_params(p).unwrap();
                    probe.log_transition(&s, &t).unwrap()
                },
                &grad,
                &p0,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn continuous_normalizes_by_quadrature() {
        for seed in 0..10 {
            let n = net(StateKind::Continuous, 1, 200 + seed);
            let s = State::continuous(vec![0.7 - seed as f64 * 0.2]).unwrap();
            let TransitionStats::Gaussian { mean, variance } = n.stats(&s, Mode::Eval, None).unwrap() else {
                panic!()
            };
            let sd = variance[0].sqrt();
            let (lo, hi) = (mean[0] - 8.0 * sd, mean[0] + 8.0 * sd);
            let steps = 4000;
            let h = (hi - lo) / steps as f64;
            let f = |x: f64| n.log_transition(&s, &State::continuous(vec![x]).unwrap()).unwrap().exp();
            let mut area = 0.5 * (f(lo) + f(hi));
            for i in 1..steps {
                area += f(lo + i as f64 * h);
            }
            area *= h;
            assert!((area - 1.0).abs() < 1e-3, "seed {seed}: {area}");
        }
    }

    #[test]
    fn binary_normalizes_exhaustively() {
        for dim in [1usize, 3, 6] {
            let n = net(StateKind::Binary, dim, dim as u64);
            let s = State::binary((0..dim).map(|j| (j % 2) as f64).collect()).unwrap();
            let total: f64 = (0..1u32 << dim)
                .map(|bits| {
                    let t = State::binary((0..dim).map(|j| f64::from((bits >> j) & 1)).collect()).unwrap();
                    n.log_transition(&s, &t).unwrap().exp()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "dim {dim}: {total}");
        }
    }

    #[test]
    fn floor_variance_samples_concentrate() {
        let mut n = net(StateKind::Continuous, 2, 8);
        {
            let head = n.variance_mut().unwrap();
            let layers = head.layers_mut();
            let last = layers.len() - 1;
            layers[last].weights_mut().fill(0.0);
            layers[last].bias_mut().fill(-40.0);
        }
        let s = State::continuous(vec![0.2, 0.9]).unwrap();
        let m = n.stats(&s, Mode::Eval, None).unwrap().prediction().to_vec();
        let mut rng = Rng::seed_from_u64(1);
        let sd = (-5.0f64).exp();
        let mut inside = 0;
        for _ in 0..1000 {
            let x = n.sample_next(&s, &mut rng).unwrap();
            for (a, b) in x.values().iter().zip(&m) {
                assert!((a - b).abs() < 6.0 * sd);
                inside += usize::from((a - b).abs() < 3.0 * sd);
            }
        }
        assert!(inside >= 1990, "{inside} of 2000 within 3 sd");
    }

    #[test]
    fn sampling_is_seeded() {
        let n = net(StateKind::Continuous, 3, 9);
        let s = State::continuous(vec![0.2, 0.9, -0.3]).unwrap();
        let draw = |seed| {
            let mut rng = Rng::seed_from_u64(seed);
            (0..5).map(|_| n.sample_next(&s, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert_ne!(draw(4), draw(5));
    }
}
