//! Datasets and their text formats.
//!
//! Dataset CSV: a header `dim=<p>,kind=<continuous|binary>,n=<count>` followed by
//! one instance per row as comma-separated decimals. Order and truth files hold
//! one zero-based index per line; lines starting with `#` are comments (order
//! files carry `# log_likelihood=<value>`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ordering::Permutation;
use crate::transition::{State, StateKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: StateKind,
    dim: usize,
    states: Vec<State>,
    truth: Option<Permutation>,
}

impl Dataset {
    pub fn new(states: Vec<State>) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::Size("dataset needs at least one instance".into()))?;
        let (kind, dim) = (first.kind(), first.dim());
        for (i, s) in states.iter().enumerate() {
            if s.kind() != kind {
                return Err(Error::KindMismatch {
                    expected: kind.as_str(),
                    got: s.kind().as_str(),
                });
            }
            if s.dim() != dim {
                return Err(Error::Size(format!("instance {i} has dimension {}, expected {dim}", s.dim())));
            }
        }
        Ok(Self {
            kind,
            dim,
            states,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: Permutation) -> Result<Self> {
        if truth.len() != self.states.len() {
            return Err(Error::Permutation(format!(
                "truth covers {} items, dataset has {}",
                truth.len(),
                self.states.len()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn truth(&self) -> Option<&Permutation> {
        self.truth.as_ref()
    }

    /// Concatenate datasets of the same kind and dimension (truth is dropped).
    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        Self::new(parts.iter().flat_map(|d| d.states.iter().cloned()).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("dim={},kind={},n={}\n", self.dim, self.kind, self.states.len());
        for s in &self.states {
            for (j, v) in s.values().iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file, expected header".into()))?;
        let mut dim = None;
        let mut kind = None;
        let mut n = None;
        for field in header.split(',') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| err(1, format!("missing header `dim=<p>,kind=<kind>,n=<count>`, found `{header}`")))?;
            match key.trim() {
                "dim" => dim = Some(value.trim().parse::<usize>().map_err(|e| err(1, format!("dim: {e}")))?),
                "kind" => kind = Some(value.trim().parse::<StateKind>().map_err(|e| err(1, e.to_string()))?),
                "n" => n = Some(value.trim().parse::<usize>().map_err(|e| err(1, format!("n: {e}")))?),
                other => return Err(err(1, format!("unknown header field `{other}`"))),
            }
        }
        let (dim, kind, n) = match (dim, kind, n) {
            (Some(d), Some(k), Some(n)) => (d, k, n),
            _ => return Err(err(1, "header must define dim, kind and n".into())),
        };
        let mut states = Vec::with_capacity(n);
        for (line, row) in lines {
            if row.is_empty() {
                continue;
            }
            let values = row
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| err(line, format!("`{v}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim {
                return Err(err(line, format!("expected {dim} values, found {}", values.len())));
            }
            states.push(State::new(values, kind).map_err(|e| err(line, e.to_string()))?);
        }
        if states.len() != n {
            return Err(err(text.lines().count(), format!("header declares n={n}, found {} rows", states.len())));
        }
        Self::new(states).map_err(|e| err(1, e.to_string()))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_csv())
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// One index per line.
pub fn order_to_string(perm: &Permutation, log_likelihood: Option<f64>) -> String {
    let mut out = String::new();
    if let Some(ll) = log_likelihood {
        writeln!(out, "# log_likelihood={ll}").expect("writing to a string");
    }
    for i in perm.as_slice() {
        writeln!(out, "{i}").expect("writing to a string");
    }
    out
}

pub fn write_order(path: impl AsRef<Path>, perm: &Permutation, log_likelihood: Option<f64>) -> Result<()> {
    write_file(path.as_ref(), &order_to_string(perm, log_likelihood))
}

/// Parse an order or truth file; returns the permutation and the
/// `log_likelihood` header value when present.
pub fn parse_order(text: &str, path: &Path) -> Result<(Permutation, Option<f64>)> {
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut ll = None;
    let mut order = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("log_likelihood=") {
                ll = Some(v.trim().parse::<f64>().map_err(|e| err(i + 1, format!("log_likelihood: {e}")))?);
            }
            continue;
        }
        order.push(line.parse::<usize>().map_err(|e| err(i + 1, format!("`{line}`: {e}")))?);
    }
    let perm = Permutation::new(order).map_err(|e| err(0, e.to_string()))?;
    Ok((perm, ll))
}

pub fn read_order(path: impl AsRef<Path>) -> Result<(Permutation, Option<f64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_order(&text, path)
}
