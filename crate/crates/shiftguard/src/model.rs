//! Versioned JSON model files.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use shiftguard_core::relu::{Activation, ReluNetwork};
use shiftguard_core::surrogate::SurrogatePair;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub hidden_activation: String,
    /// Row-major, one flat array per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Row-major linear input-to-output term, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Format(format!("{what}: expected {} entries, found {}", rows * cols, data.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl NetworkFile {
    pub fn from_network(net: &ReluNetwork) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            layer_dims: net.layer_dims().to_vec(),
            hidden_activation: net.hidden_activation().name().to_string(),
            weights: net.weights().iter().map(row_major).collect(),
            biases: net.biases().iter().map(|b| b.as_slice().to_vec()).collect(),
            skip: net.skip().map(row_major),
        }
    }

    pub fn to_network(&self) -> Result<ReluNetwork> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version { found: self.format_version, expected: FORMAT_VERSION });
        }
        let act = Activation::from_name(&self.hidden_activation)
            .ok_or_else(|| Error::Format(format!("unknown activation {:?}", self.hidden_activation)))?;
        let d = &self.layer_dims;
        if d.len() < 2 || self.weights.len() != d.len() - 1 || self.biases.len() != d.len() - 1 {
            return Err(Error::Format("layer count does not match layer_dims".into()));
        }
        let mut weights = Vec::new();
        for (i, w) in self.weights.iter().enumerate() {
            weights.push(from_row_major(d[i + 1], d[i], w, &format!("weights[{i}]"))?);
        }
        let biases = self.biases.iter().map(|b| DVector::from_column_slice(b)).collect();
        let skip = match &self.skip {
            Some(s) => Some(from_row_major(d[d.len() - 1], d[0], s, "skip")?),
            None => None,
        };
        Ok(ReluNetwork::new(d.clone(), weights, biases, act, skip)?)
    }
}

pub fn to_json(net: &ReluNetwork) -> String {
    serde_json::to_string_pretty(&NetworkFile::from_network(net)).expect("plain data serializes")
}

pub fn from_json(text: &str) -> Result<ReluNetwork> {
    let file: NetworkFile = serde_json::from_str(text)?;
    file.to_network()
}

pub fn save(net: &ReluNetwork, path: &Path) -> Result<()> {
    write_atomic(path, to_json(net).as_bytes())
}

pub fn load(path: &Path) -> Result<ReluNetwork> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

const MEAN: &str = "mean.json";
const COV: &str = "cov.json";
const EMBEDDER: &str = "embedder.json";
const DEEP: &str = "deep.json";

pub fn save_surrogate(sur: &SurrogatePair, dir: &Path) -> Result<()> {
    save(&sur.mean_net, &dir.join(MEAN))?;
    save(&sur.cov_net, &dir.join(COV))?;
    if let Some(e) = &sur.embedder {
        save(e, &dir.join(EMBEDDER))?;
    }
    if let Some(d) = &sur.deep_net {
        save(d, &dir.join(DEEP))?;
    }
    Ok(())
}

pub fn load_surrogate(dir: &Path) -> Result<SurrogatePair> {
    let mut sur = SurrogatePair::new(load(&dir.join(MEAN))?, load(&dir.join(COV))?);
    let optional = |name: &str| -> Result<Option<ReluNetwork>> {
        let p = dir.join(name);
        if p.exists() {
            load(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    sur.embedder = optional(EMBEDDER)?;
    sur.deep_net = optional(DEEP)?;
    Ok(sur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for skip in [false, true] {
            let net = ReluNetwork::random(&[5, 8, 4], Activation::Relu, skip, &mut rng).unwrap();
            let back = from_json(&to_json(&net)).unwrap();
            assert_eq!(back, net);
        }
    }

    #[test]
    fn rejects_other_versions_and_truncation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let net = ReluNetwork::random(&[2, 3, 1], Activation::Tanh, false, &mut rng).unwrap();
        let text = to_json(&net);
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(matches!(from_json(&bumped), Err(Error::Version { found: 7, .. })));
        assert!(matches!(from_json(&text[..text.len() / 2]), Err(Error::Json(_))));
    }
}
