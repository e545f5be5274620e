//! Seeded synthetic trajectories with known generation order.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ordering::Permutation;
use crate::rng::{self, Rng};
use crate::transition::State;

/// Generator family and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// Noisy points along a circle, `radius·(cos tθ, sin tθ)`.
    Rotation {
        n: usize,
        radius: f64,
        angular_step: f64,
        noise_sd: f64,
    },
    /// `x_{t+1} = A x_t + noise`, optionally rescaled per feature afterwards.
    Linear {
        n: usize,
        matrix: Vec<f64>,
        x0: Vec<f64>,
        noise_sd: f64,
        scale: Option<Vec<f64>>,
    },
    /// Binary chain where every bit flips independently each step.
    Bitflip { n: usize, dim: usize, flip_prob: f64 },
    /// Separated per-class chains, pooled; `n` states per class.
    Clusters {
        n: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        noise_sd: f64,
        persistence: f64,
    },
}

impl Generator {
    pub fn n(&self) -> usize {
        match self {
            Generator::Rotation { n, .. } | Generator::Linear { n, .. } | Generator::Bitflip { n, .. } => *n,
            Generator::Clusters { n, classes, .. } => n * classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Generator::Rotation { .. } => "rotation",
            Generator::Linear { .. } => "linear",
            Generator::Bitflip { .. } => "bitflip",
            Generator::Clusters { .. } => "clusters",
        }
    }

    /// Generate with the `gen` stream derived from `seed`.
    pub fn generate(&self, seed: u64) -> Result<LabeledTrajectory> {
        let mut rng = rng::stream(seed, "gen");
        let mut traj = match self {
            &Generator::Rotation {
                n,
                radius,
                angular_step,
                noise_sd,
            } => gen_rotation_chain(n, radius, angular_step, noise_sd, &mut rng)?,
            Generator::Linear {
                n,
                matrix,
                x0,
                noise_sd,
                scale,
            } => {
                let traj = gen_linear_dynamics(*n, matrix, x0, *noise_sd, &mut rng)?;
                match scale {
                    Some(s) => traj.scaled(s)?,
                    None => traj,
                }
            }
            &Generator::Bitflip { n, dim, flip_prob } => gen_bitflip_chain(n, dim, flip_prob, &mut rng)?,
            Generator::Clusters { .. } => self.cluster_chains(seed).expect("clusters")?.pooled(),
        };
        traj.generator = Some(self.clone());
        traj.seed = Some(seed);
        Ok(traj)
    }
}

impl Generator {
    /// The per-class chains behind a `Clusters` generator, from the same
    /// stream as [`Generator::generate`]; `None` for other families.
    pub fn cluster_chains(&self, seed: u64) -> Option<Result<ClusterChains>> {
        match *self {
            Generator::Clusters {
                n,
                classes,
                dim,
                separation,
                noise_sd,
                persistence,
            } => {
                let mut rng = rng::stream(seed, "gen");
                Some(gen_cluster_chains(classes, n, dim, separation, noise_sd, persistence, &mut rng))
            }
            _ => None,
        }
    }
}

/// States in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    pub states: Vec<State>,
    pub true_order: Permutation,
    pub generator: Option<Generator>,
    pub seed: Option<u64>,
}

impl LabeledTrajectory {
    fn from_states(states: Vec<State>, generator: Generator) -> Self {
        let n = states.len();
        Self {
            states,
            true_order: Permutation::identity(n),
            generator: Some(generator),
            seed: None,
        }
    }

    /// Multiply feature `j` of every state by `scale[j]`.
    pub fn scaled(mut self, scale: &[f64]) -> Result<Self> {
        let dim = self.states.first().map_or(0, State::dim);
        if scale.len() != dim {
            return Err(Error::Parameter(format!("scale has {} entries, states have {dim}", scale.len())));
        }
        self.states = self
            .states
            .iter()
            .map(|s| State::new(s.values().iter().zip(scale).map(|(v, c)| v * c).collect(), s.kind()))
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Parameter(format!("noise sd {sd}: {e}")))
}

pub fn gen_rotation_chain(n: usize, radius: f64, angular_step: f64, noise_sd: f64, rng: &mut Rng) -> Result<LabeledTrajectory> {
    if n < 2 {
        return Err(Error::Parameter(format!("need n >= 2, got {n}")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Parameter(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let noise = normal(noise_sd)?;
    let states = (0..n)
        .map(|t| {
            let angle = t as f64 * angular_step;
            State::continuous(vec![
                radius * angle.cos() + noise.sample(rng),
                radius * angle.sin() + noise.sample(rng),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledTrajectory::from_states(
        states,
        Generator::Rotation {
            n,
            radius,
            angular_step,
            noise_sd,
        },
    ))
}

/// Row-major `dim × dim` matrix of a scaled planar rotation, for spirals.
pub fn scaled_rotation(gain: f64, angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    vec![gain * c, -gain * s, gain * s, gain * c]
}

pub fn gen_linear_dynamics(n: usize, matrix: &[f64], x0: &[f64], noise_sd: f64, rng: &mut Rng) -> Result<LabeledTrajectory> {
    let p = x0.len();
    if n < 2 {
        return Err(Error::Parameter(format!("need n >= 2, got {n}")));
    }
    if p == 0 || matrix.len() != p * p {
        return Err(Error::Parameter(format!("matrix has {} entries, expected {}", matrix.len(), p * p)));
    }
    if matrix.iter().chain(x0).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("matrix and x0 entries must be finite".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Parameter(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let noise = normal(noise_sd)?;
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(n);
    states.push(State::continuous(x.clone())?);
    for _ in 1..n {
        x = matrix
            .chunks_exact(p)
            .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + noise.sample(rng))
            .collect();
        states.push(State::continuous(x.clone())?);
    }
    Ok(LabeledTrajectory::from_states(
        states,
        Generator::Linear {
            n,
            matrix: matrix.to_vec(),
            x0: x0.to_vec(),
            noise_sd,
            scale: None,
        },
    ))
}

/// One chain per class, each wandering around its own centre.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterChains {
    pub centers: Vec<Vec<f64>>,
    /// `chains[c]` in generation order.
    pub chains: Vec<Vec<State>>,
}

impl ClusterChains {
    /// Each class chain as an unordered dataset.
    pub fn datasets(&self) -> Result<Vec<Dataset>> {
        self.chains.iter().map(|c| Dataset::new(c.clone())).collect()
    }

    /// All chains concatenated in class order, for pooled training.
    pub fn pooled(&self) -> LabeledTrajectory {
        let states: Vec<State> = self.chains.iter().flatten().cloned().collect();
        let n = states.len();
        LabeledTrajectory {
            states,
            true_order: Permutation::identity(n),
            generator: None,
            seed: None,
        }
    }
}

/// `classes` chains of `per_class` states in `dim` dimensions.
///
/// Centres are drawn from `Normal(0, separation²·I)` and redrawn until every
/// pair is at least `separation` apart. Each chain is a stationary AR(1)
/// process `x' = μ + ρ(x − μ) + noise` with per-coordinate stationary standard
/// deviation `noise_sd` and persistence `ρ`.
pub fn gen_cluster_chains(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    noise_sd: f64,
    persistence: f64,
    rng: &mut Rng,
) -> Result<ClusterChains> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Parameter("classes, per_class and dim must be positive".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) || !(noise_sd >= 0.0) {
        return Err(Error::Parameter(format!(
            "need separation > 0 and noise_sd >= 0, got {separation} and {noise_sd}"
        )));
    }
    if !(0.0..1.0).contains(&persistence) {
        return Err(Error::Parameter(format!("persistence must lie in [0, 1), got {persistence}")));
    }
    let spread = normal(separation)?;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while centers.len() < classes {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Parameter(format!(
                "could not place {classes} centres {separation} apart in {dim} dimensions"
            )));
        }
        let c: Vec<f64> = (0..dim).map(|_| spread.sample(rng)).collect();
        let far = centers.iter().all(|o| {
            o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
        });
        if far {
            centers.push(c);
        }
    }
    let stationary = normal(noise_sd)?;
    let innovation = normal(noise_sd * (1.0 - persistence * persistence).sqrt())?;
    let chains = centers
        .iter()
        .map(|mu| {
            let mut x: Vec<f64> = mu.iter().map(|m| m + stationary.sample(rng)).collect();
            let mut chain = Vec::with_capacity(per_class);
            chain.push(State::continuous(x.clone())?);
            for _ in 1..per_class {
                x = x
                    .iter()
                    .zip(mu)
                    .map(|(v, m)| m + persistence * (v - m) + innovation.sample(rng))
                    .collect();
                chain.push(State::continuous(x.clone())?);
            }
            Ok(chain)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterChains { centers, chains })
}

pub fn gen_bitflip_chain(n: usize, dim: usize, flip_prob: f64, rng: &mut Rng) -> Result<LabeledTrajectory> {
    if !(flip_prob > 0.0 && flip_prob < 0.5) {
        return Err(Error::Parameter(format!("flip_prob must lie in (0, 0.5), got {flip_prob}")));
    }
    if dim == 0 || n < 2 {
        return Err(Error::Parameter(format!("need dim >= 1 and n >= 2, got dim {dim}, n {n}")));
    }
    let mut bits: Vec<f64> = (0..dim).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
    let mut states = Vec::with_capacity(n);
    states.push(State::binary(bits.clone())?);
    for _ in 1..n {
        for b in &mut bits {
            if rng.random::<f64>() < flip_prob {
                *b = 1.0 - *b;
            }
        }
        states.push(State::binary(bits.clone())?);
    }
    Ok(LabeledTrajectory::from_states(states, Generator::Bitflip { n, dim, flip_prob }))
}

/// Exact log-mass of one bit-flip transition with Hamming distance `h`.
pub fn bitflip_log_mass(h: usize, dim: usize, flip_prob: f64) -> f64 {
    h as f64 * flip_prob.ln() + (dim - h) as f64 * (1.0 - flip_prob).ln()
}

/// Expected per-transition log-mass of the true bit-flip chain.
pub fn bitflip_entropy_rate(dim: usize, flip_prob: f64) -> f64 {
    let q = flip_prob;
    dim as f64 * (q * q.ln() + (1.0 - q) * (1.0 - q).ln())
}

/// Shuffle uniformly. The returned truth restores generation order:
/// `shuffled[truth[t]]` is the state generated at step `t`.
pub fn shuffle_with_truth(traj: &LabeledTrajectory, rng: &mut Rng) -> Result<(Dataset, Permutation)> {
    let n = traj.states.len();
    let mut sigma: Vec<usize> = (0..n).collect();
    sigma.shuffle(rng);
    shuffle_by(traj, Permutation::new(sigma)?)
}

/// Shuffle by an explicit `sigma`: `shuffled[i] = generated[sigma[i]]`.
pub fn shuffle_by(traj: &LabeledTrajectory, sigma: Permutation) -> Result<(Dataset, Permutation)> {
    if sigma.len() != traj.states.len() {
        return Err(Error::Permutation("shuffle size differs from trajectory".into()));
    }
    let generated = traj.true_order.apply(&traj.states);
    let shuffled = sigma.apply(&generated);
    let truth = sigma.inverse();
    let dataset = Dataset::new(shuffled)?.with_truth(truth.clone())?;
    Ok((dataset, truth))
}

/// An angular step that sweeps `fraction` of a full turn over `n` points.
pub fn arc_step(n: usize, fraction: f64) -> f64 {
    2.0 * PI * fraction / (n.max(2) - 1) as f64
}
