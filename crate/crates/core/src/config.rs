//! Experiment configuration.
//!
//! A config file is a flat list of `section.key = value` lines. `#` starts a
//! comment, blank lines are ignored, lists are comma-separated. Every key is
//! optional; unknown keys are rejected.
//!
//! ```text
//! gen.kind = rotation          # rotation | linear | bitflip | clusters
//! gen.n = 64
//! gen.noise_sd = 0.02
//! train.steps = 2000
//! train.encoder_hidden = 32,32
//! oneshot.way = 5
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::{arc_step, scaled_rotation, Generator};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::oneshot::{EpisodeSpec, DEFAULT_CHAIN_LENGTH};
use crate::training::TrainConfig;
use crate::transition::Architecture;

/// How the `order` subcommand searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderMethod {
    Full,
    Sampled(usize),
    Brute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub generator: Generator,
    /// Training settings; the seed is supplied on the command line.
    pub train: TrainConfig,
    pub order: OrderMethod,
    pub eval: EvalSpec,
    pub oneshot: EpisodeSpec,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_pairs(BTreeMap::new()).expect("defaults are valid")
    }
}

/// Parsed `key = value` pairs, with line numbers for diagnostics.
struct Pairs {
    values: BTreeMap<String, (usize, String)>,
}

impl Pairs {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::config(key, format!("line {line}: `{raw}`: {e}"))),
        }
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<T>())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|e| Error::config(key, format!("line {line}: `{raw}`: {e}"))),
        }
    }
}

pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().to_string();
        if values.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
            return Err(Error::config(key, format!("line {}: duplicate key", i + 1)));
        }
    }
    Ok(values)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Load `path` if given, else defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    fn from_pairs(values: BTreeMap<String, (usize, String)>) -> Result<Self> {
        let mut p = Pairs { values };

        let kind: String = p.take("gen.kind")?.unwrap_or_else(|| "rotation".into());
        let n: usize = p.take("gen.n")?.unwrap_or(64);
        let noise_sd: Option<f64> = p.take("gen.noise_sd")?;
        let generator = match kind.as_str() {
            "rotation" => Generator::Rotation {
                n,
                radius: p.take("gen.radius")?.unwrap_or(1.0),
                angular_step: p.take("gen.angular_step")?.unwrap_or_else(|| arc_step(n, 0.75)),
                noise_sd: noise_sd.unwrap_or(0.02),
            },
            "linear" => {
                let gain: Option<f64> = p.take("gen.gain")?;
                let angle: Option<f64> = p.take("gen.angle")?;
                let matrix = match (p.take_list("gen.matrix")?, gain, angle) {
                    (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                        return Err(Error::config("gen.matrix", "give either gen.matrix or gen.gain/gen.angle"))
                    }
                    (Some(m), None, None) => m,
                    (None, g, a) => scaled_rotation(g.unwrap_or(0.95), a.unwrap_or(0.15)),
                };
                let x0: Vec<f64> = p.take_list("gen.x0")?.unwrap_or_else(|| vec![1.0, 0.0]);
                if matrix.len() != x0.len() * x0.len() {
                    return Err(Error::config(
                        "gen.matrix",
                        format!("{} entries for a {}-dimensional x0", matrix.len(), x0.len()),
                    ));
                }
                let scale: Option<Vec<f64>> = p.take_list("gen.scale")?;
                if let Some(s) = &scale {
                    if s.len() != x0.len() {
                        return Err(Error::config("gen.scale", format!("needs {} entries", x0.len())));
                    }
                }
                Generator::Linear {
                    n,
                    matrix,
                    x0,
                    noise_sd: noise_sd.unwrap_or(0.0),
                    scale,
                }
            }
            "bitflip" => Generator::Bitflip {
                n,
                dim: p.take("gen.dim")?.unwrap_or(16),
                flip_prob: p.take("gen.flip_prob")?.unwrap_or(0.05),
            },
            "clusters" => {
                let noise_sd = noise_sd.unwrap_or(0.01);
                Generator::Clusters {
                    n,
                    classes: p.take("gen.classes")?.unwrap_or(5),
                    dim: p.take("gen.dim")?.unwrap_or(4),
                    separation: p.take("gen.separation")?.unwrap_or(10.0 * noise_sd),
                    noise_sd,
                    persistence: p.take("gen.persistence")?.unwrap_or(0.5),
                }
            }
            other => return Err(Error::config("gen.kind", format!("unknown generator `{other}`"))),
        };
        if n < 2 {
            return Err(Error::config("gen.n", "must be >= 2"));
        }
        if noise_sd.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::config("gen.noise_sd", "must be >= 0"));
        }

        let defaults = TrainConfig::default();
        let adam_defaults = AdamConfig::default();
        let arch_defaults = Architecture::default();
        let train = TrainConfig {
            batch_size: p.take("train.batch_size")?,
            overlap: p.take("train.overlap")?.unwrap_or(defaults.overlap),
            refresh_period: p.take("train.refresh_period")?.unwrap_or(defaults.refresh_period),
            total_steps: p.take("train.steps")?.unwrap_or(defaults.total_steps),
            num_starts: p.take("train.num_starts")?,
            adam: AdamConfig {
                lr: p.take("train.lr")?.unwrap_or(adam_defaults.lr),
                beta1: p.take("train.beta1")?.unwrap_or(adam_defaults.beta1),
                beta2: p.take("train.beta2")?.unwrap_or(adam_defaults.beta2),
                epsilon: p.take("train.epsilon")?.unwrap_or(adam_defaults.epsilon),
            },
            seed: 0,
            dropout_rate: p.take("train.dropout")?.unwrap_or(defaults.dropout_rate),
            architecture: Architecture {
                encoder_hidden: p.take_list("train.encoder_hidden")?.unwrap_or(arch_defaults.encoder_hidden),
                head_hidden: p.take_list("train.head_hidden")?.unwrap_or(arch_defaults.head_hidden),
            },
            exec: defaults.exec,
        };
        if train.total_steps == 0 {
            return Err(Error::config("train.steps", "must be >= 1"));
        }
        if train.refresh_period == 0 {
            return Err(Error::config("train.refresh_period", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&train.dropout_rate) {
            return Err(Error::config("train.dropout", "must lie in [0, 1)"));
        }
        if !(train.adam.lr > 0.0) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if train.architecture.encoder_hidden.is_empty() {
            return Err(Error::config("train.encoder_hidden", "needs at least one width"));
        }

        let method: String = p.take("order.method")?.unwrap_or_else(|| "full".into());
        let order = match method.as_str() {
            "full" => OrderMethod::Full,
            "brute" => OrderMethod::Brute,
            "sampled" => OrderMethod::Sampled(p.take("order.num_starts")?.unwrap_or(1)),
            other => return Err(Error::config("order.method", format!("unknown method `{other}`"))),
        };

        let eval = EvalSpec {
            methods: p
                .take_list("eval.methods")?
                .unwrap_or_else(|| vec!["ordernet".to_string(), "nn".to_string()]),
            seeds: p.take_list("eval.seeds")?.unwrap_or_else(|| vec![0]),
        };
        if eval.seeds.is_empty() {
            return Err(Error::config("eval.seeds", "seed list must not be empty"));
        }
        if let Some(m) = eval.methods.iter().find(|m| !matches!(m.as_str(), "ordernet" | "nn")) {
            return Err(Error::config("eval.methods", format!("unknown method `{m}`")));
        }

        let oneshot = EpisodeSpec {
            way: p.take("oneshot.way")?.unwrap_or(5),
            queries_per_class: p.take("oneshot.queries_per_class")?.unwrap_or(5),
            k: p.take("oneshot.k")?.unwrap_or(DEFAULT_CHAIN_LENGTH),
            episodes: p.take("oneshot.episodes")?.unwrap_or(500),
        };
        if oneshot.way == 0 {
            return Err(Error::config("oneshot.way", "must be >= 1"));
        }

        let output_dir: Option<PathBuf> = p.take("output.dir")?;
        if let Some(dir) = &output_dir {
            if !dir.is_dir() {
                return Err(Error::config("output.dir", format!("`{}` is not a directory", dir.display())));
            }
        }

        if let Some((key, (line, _))) = p.values.into_iter().next() {
            return Err(Error::config(key, format!("line {line}: unknown key")));
        }
        Ok(Self {
            generator,
            train,
            order,
            eval,
            oneshot,
            output_dir,
        })
    }

    /// `name` resolved against `output.dir` when it is relative.
    pub fn output_path(&self, name: &Path) -> PathBuf {
        match &self.output_dir {
            Some(dir) if name.is_relative() => dir.join(name),
            _ => name.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert!(matches!(c.generator, Generator::Rotation { n: 64, .. }));
        assert_eq!(c.train.total_steps, 1000);
        assert_eq!(c.train.dropout_rate, 0.2);
        assert_eq!(c.oneshot.k, 5);
    }

    #[test]
    fn parses_sections() {
        let c = ExperimentConfig::parse(
            "# spiral\n\
             gen.kind = linear\n\
             gen.n = 32\n\
             gen.matrix = 0.9, 0, 0, 0.9\n\
             gen.x0 = 1, 2\n\
             gen.scale = 1, 0.1\n\
             train.steps = 10   # short\n\
             train.encoder_hidden = 16\n\
             order.method = sampled\n\
             order.num_starts = 4\n\
             eval.seeds = 1,2,3\n",
        )
        .unwrap();
        match c.generator {
            Generator::Linear { n, ref scale, .. } => {
                assert_eq!(n, 32);
                assert_eq!(scale.as_deref(), Some(&[1.0, 0.1][..]));
            }
            _ => panic!("expected linear"),
        }
        assert_eq!(c.train.total_steps, 10);
        assert_eq!(c.train.architecture.encoder_hidden, vec![16]);
        assert_eq!(c.order, OrderMethod::Sampled(4));
        assert_eq!(c.eval.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match ExperimentConfig::parse(text).unwrap_err() {
            Error::Config { field, .. } => field,
            other => panic!("unexpected {other}"),
        };
        assert_eq!(field("gen.n = many\n"), "gen.n");
        assert_eq!(field("train.stepz = 3\n"), "train.stepz");
        assert_eq!(field("gen.kind = spiral\n"), "gen.kind");
        assert_eq!(field("eval.seeds = \n"), "eval.seeds");
        assert_eq!(field("train.steps = 0\n"), "train.steps");
        assert_eq!(field("gen.n = 3\ngen.n = 4\n"), "gen.n");
        assert_eq!(field("output.dir = /definitely/not/here\n"), "output.dir");
    }
}
