//! Versioned JSON model files.
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "kind": "continuous" | "binary",
//!   "state_dim": p,
//!   "layer_sizes": { "encoder": [...], "gate": [...], "candidate": [...], "variance": [...] | null },
//!   "dropout_rate": r,
//!   "parameter_order": "...",
//!   "seed": s,
//!   "training_steps": k,
//!   "parameters": [ ... ]
//! }
//! ```
//!
//! Parameters are stored encoder first, then the gate, candidate and variance
//! heads; each layer contributes its row-major weights followed by its bias.
//! Every parameter is written with 17 significant digits.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::TransitionModel;
use crate::dataset::write_file;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Mlp};
use crate::transition::{GatedTransitionNet, StateKind};

pub const FORMAT_VERSION: u64 = 1;

const PARAMETER_ORDER: &str =
    "encoder, gate, candidate, variance; per layer: weights row-major (outputs x inputs), then bias";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerSizes {
    encoder: Vec<usize>,
    gate: Vec<usize>,
    candidate: Vec<usize>,
    variance: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u64,
    kind: String,
    state_dim: usize,
    layer_sizes: LayerSizes,
    dropout_rate: f64,
    parameter_order: String,
    seed: u64,
    training_steps: u64,
    #[serde(serialize_with = "seventeen_digits")]
    parameters: Vec<f64>,
}

fn seventeen_digits<S: Serializer>(values: &[f64], ser: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::{Error as _, SerializeSeq};
    let mut seq = ser.serialize_seq(Some(values.len()))?;
    for v in values {
        let raw = RawValue::from_string(format!("{v:.16e}")).map_err(S::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

pub fn model_to_json(model: &TransitionModel) -> Result<String> {
    let net = &model.net;
    let parameters = net.flat_params();
    if let Some(bad) = parameters.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("parameter {bad} is not finite")));
    }
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        kind: net.kind().as_str().to_string(),
        state_dim: net.dim(),
        layer_sizes: LayerSizes {
            encoder: net.encoder().sizes(),
            gate: net.gate().sizes(),
            candidate: net.candidate().sizes(),
            variance: net.variance().map(Mlp::sizes),
        },
        dropout_rate: net.dropout_rate(),
        parameter_order: PARAMETER_ORDER.to_string(),
        seed: model.seed,
        training_steps: model.steps,
        parameters,
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::MalformedModel(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn zero_mlp(sizes: &[usize], output: Activation, dropout: f64, head: &str) -> Result<Mlp> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Dimension(format!("{head} layer sizes {sizes:?} are invalid")));
    }
    let last = sizes.len() - 2;
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last { output } else { Activation::Relu };
            DenseLayer::from_parts(w[0], w[1], vec![0.0; w[0] * w[1]], vec![0.0; w[1]], act)
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_layers(layers, dropout).map_err(|e| Error::Dimension(format!("{head}: {e}")))
}

pub fn model_from_json(text: &str) -> Result<TransitionModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
    let version = value
        .get("format_version")
        .ok_or_else(|| Error::MalformedModel("missing format_version".into()))?
        .as_u64()
        .ok_or_else(|| Error::MalformedModel("format_version is not an unsigned integer".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::MalformedModel(e.to_string()))?;
    let kind: StateKind = file
        .kind
        .parse()
        .map_err(|_| Error::MalformedModel(format!("unknown kind `{}`", file.kind)))?;
    if !(0.0..1.0).contains(&file.dropout_rate) {
        return Err(Error::MalformedModel(format!("dropout_rate {} outside [0, 1)", file.dropout_rate)));
    }
    let sizes = &file.layer_sizes;
    if sizes.encoder.first() != Some(&file.state_dim) {
        return Err(Error::Dimension(format!(
            "encoder input {:?} does not match state_dim {}",
            sizes.encoder.first(),
            file.state_dim
        )));
    }
    let d = file.dropout_rate;
    let encoder = zero_mlp(&sizes.encoder, Activation::Relu, d, "encoder")?;
    let gate = zero_mlp(&sizes.gate, Activation::Sigmoid, d, "gate")?;
    let candidate = zero_mlp(&sizes.candidate, Activation::Identity, d, "candidate")?;
    let variance = sizes
        .variance
        .as_deref()
        .map(|s| zero_mlp(s, Activation::Identity, d, "variance"))
        .transpose()?;
    let mut net = GatedTransitionNet::from_parts(kind, encoder, gate, candidate, variance, d).map_err(|e| match e {
        Error::Dimension(m) => Error::Dimension(m),
        other => Error::Dimension(other.to_string()),
    })?;
    if file.parameters.len() != net.num_params() {
        return Err(Error::Dimension(format!(
            "{} parameters stored, layer sizes require {}",
            file.parameters.len(),
            net.num_params()
        )));
    }
    net.set_flat_params(&file.parameters)?;
    Ok(TransitionModel {
        net,
        seed: file.seed,
        steps: file.training_steps,
    })
}

pub fn save_model(model: &TransitionModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &model_to_json(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TransitionModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::transition::Architecture;
    use rand::SeedableRng;

    fn model(kind: StateKind) -> TransitionModel {
        let mut rng = Rng::seed_from_u64(31);
        let arch = Architecture {
            encoder_hidden: vec![7, 5],
            head_hidden: vec![4],
        };
        TransitionModel {
            net: GatedTransitionNet::new(kind, 3, &arch, 0.2, &mut rng).unwrap(),
            seed: 31,
            steps: 12,
        }
    }

    fn bits(m: &TransitionModel) -> Vec<u64> {
        m.net.flat_params().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for kind in [StateKind::Continuous, StateKind::Binary] {
            let m = model(kind);
            let text = model_to_json(&m).unwrap();
            let back = model_from_json(&text).unwrap();
            assert_eq!(bits(&m), bits(&back));
            assert_eq!(back.net.kind(), kind);
            assert_eq!((back.seed, back.steps), (31, 12));
            assert_eq!(back.net.dropout_rate(), 0.2);
            assert_eq!(model_to_json(&back).unwrap(), text);
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let text = model_to_json(&model(StateKind::Continuous)).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(model_from_json(cut), Err(Error::MalformedModel(_))));
    }

    #[test]
    fn version_gate() {
        let text = model_to_json(&model(StateKind::Continuous)).unwrap();
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(model_from_json(&bumped), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn dimension_inconsistency() {
        let text = model_to_json(&model(StateKind::Continuous)).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["parameters"].as_array_mut().unwrap().pop();
        let err = model_from_json(&value.to_string()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["state_dim"] = 4.into();
        assert!(matches!(model_from_json(&value.to_string()), Err(Error::Dimension(_))));
    }
}
