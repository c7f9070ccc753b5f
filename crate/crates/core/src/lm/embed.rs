use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{Embedder, LmError};

/// Scales `v` to unit length; zero vectors are returned unchanged.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Cosine similarity; 0.0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Deserialize)]
struct FixtureFile {
    dim: usize,
    texts: HashMap<String, Vec<f64>>,
}

/// Offline text embedder backed by a `{"dim": d, "texts": {text: [...]}}`
/// fixture. Lookup is by exact text.
#[derive(Debug, Clone, Default)]
pub struct FixtureEmbedder {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FixtureEmbedder {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self, LmError> {
        if let Some((t, _)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(LmError::Config(format!(
                "fixture vector for {t:?} does not have dimension {dim}"
            )));
        }
        Ok(FixtureEmbedder { dim, vectors })
    }

    pub fn from_json(text: &str) -> Result<Self, LmError> {
        let f: FixtureFile =
            serde_json::from_str(text).map_err(|e| LmError::Payload(e.to_string()))?;
        Self::new(f.dim, f.texts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Embedder for FixtureEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LmError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .map(|v| normalize(v.clone()))
                    .ok_or_else(|| LmError::MissingFixture(t.clone()))
            })
            .collect()
    }
}
