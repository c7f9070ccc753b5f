//! Embedding-similarity baselines and their thresholds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AlignError, AlignMethod, AlignmentMap};
use crate::lm::{cosine, normalize};
use crate::world::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSpace {
    Vision,
    Language,
}

impl std::fmt::Display for EmbeddingSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingSpace::Vision => "vision",
            EmbeddingSpace::Language => "language",
        })
    }
}

/// Per-label embedding vectors for one space; several vectors per label
/// (e.g. several images of one object) are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    pub space: EmbeddingSpace,
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<Vec<f64>>>,
}

impl EmbeddingStore {
    pub fn from_json(text: &str) -> Result<Self, AlignError> {
        let store: EmbeddingStore = serde_json::from_str(text)?;
        store.validate()?;
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>, expected: EmbeddingSpace) -> Result<Self, AlignError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AlignError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let store = Self::from_json(&text)?;
        if store.space != expected {
            return Err(AlignError::WrongSpace {
                expected,
                found: store.space,
            });
        }
        Ok(store)
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        for (label, vs) in &self.vectors {
            if vs
                .iter()
                .any(|v| v.len() != self.dim || v.iter().any(|x| !x.is_finite()))
            {
                return Err(AlignError::InvalidInput(format!(
                    "{} vector for `{label}` is not a finite {}-vector",
                    self.space, self.dim
                )));
            }
        }
        Ok(())
    }

    /// Renormalized arithmetic mean of the stored vectors.
    pub fn mean_embedding(&self, label: &str) -> Result<Vec<f64>, AlignError> {
        let vs = self
            .vectors
            .get(label)
            .filter(|vs| !vs.is_empty())
            .ok_or_else(|| AlignError::MissingEmbedding {
                space: self.space,
                label: label.to_owned(),
            })?;
        let mut mean = vec![0.0; self.dim];
        for v in vs {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let n = vs.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        if mean.iter().all(|&x| x == 0.0) {
            return Err(AlignError::ZeroNorm(label.to_owned()));
        }
        Ok(normalize(mean))
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, AlignError> {
        Ok(cosine(&self.mean_embedding(a)?, &self.mean_embedding(b)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    Oracle,
    NonOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub kind: ThresholdKind,
    pub tau: f64,
}

/// Best seen label (ties → lexicographically first) and its cosine, for
/// every unseen label.
pub fn embedding_targets(
    store: &EmbeddingStore,
    seen: &[String],
    unseen: &[String],
) -> Result<Vec<(String, String, f64)>, AlignError> {
    if seen.is_empty() {
        return Err(AlignError::EmptyLabels("seen"));
    }
    let mut sorted: Vec<&String> = seen.iter().collect();
    sorted.sort();
    sorted.dedup();
    let seen_vecs = sorted
        .iter()
        .map(|l| store.mean_embedding(l).map(|v| (l.as_str(), v)))
        .collect::<Result<Vec<_>, _>>()?;
    unseen
        .iter()
        .map(|u| {
            let uv = store.mean_embedding(u)?;
            let mut best: Option<(&str, f64)> = None;
            for (l, v) in &seen_vecs {
                let c = cosine(&uv, v);
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some((l, c));
                }
            }
            let (l, c) = best.expect("seen is non-empty");
            Ok((u.clone(), l.to_owned(), c))
        })
        .collect()
}

/// Maps each unseen label to its most similar seen label when the cosine
/// strictly exceeds `policy.tau`, else to the distractor.
pub fn embedding_align(
    store: &EmbeddingStore,
    seen: &[String],
    unseen: &[String],
    policy: ThresholdPolicy,
) -> Result<AlignmentMap, AlignError> {
    if policy.tau.is_nan() {
        return Err(AlignError::InvalidInput("threshold is NaN".into()));
    }
    let entries = embedding_targets(store, seen, unseen)?
        .into_iter()
        .map(|(u, l, c)| {
            let t = if c > policy.tau {
                Target::Seen(l)
            } else {
                Target::Distractor
            };
            (u, t)
        })
        .collect();
    let method = match store.space {
        EmbeddingSpace::Vision => AlignMethod::VisionEmbedding,
        EmbeddingSpace::Language => AlignMethod::LanguageEmbedding,
    };
    Ok(AlignmentMap::new(method, entries))
}

/// Mean cosine over all unordered pairs of distinct seen labels.
pub fn non_oracle_threshold(store: &EmbeddingStore, seen: &[String]) -> Result<f64, AlignError> {
    let labels: Vec<&String> = seen.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if labels.len() < 2 {
        return Err(AlignError::TooFewLabels(labels.len()));
    }
    let vecs = labels
        .iter()
        .map(|l| store.mean_embedding(l))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            sum += cosine(&vecs[i], &vecs[j]);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

fn f1_at(samples: &[(f64, bool)], tau: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &(c, correct) in samples {
        match (c > tau, correct) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Threshold maximizing F1 of the rule "accept when cosine > tau".
///
/// Candidates are midpoints between consecutive distinct cosines plus the
/// ±∞ sentinels; ties go to the larger threshold. Returns `(tau, f1)`.
pub fn oracle_threshold(samples: &[(f64, bool)]) -> Result<(f64, f64), AlignError> {
    if samples.is_empty() {
        return Err(AlignError::InvalidInput("no threshold samples".into()));
    }
    let mut cs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    if cs.iter().any(|c| !c.is_finite()) {
        return Err(AlignError::InvalidInput("non-finite cosine".into()));
    }
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(cs.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(f64::INFINITY);
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for tau in candidates {
        let f = f1_at(samples, tau);
        if f >= best.1 {
            best = (tau, f);
        }
    }
    Ok(best)
}

/// `(best cosine, is the argmax the ground-truth equivalent)` per relevant
/// or irrelevant test label; irrelevant labels are never correct.
pub fn threshold_samples(
    store: &EmbeddingStore,
    seen: &[String],
    unseen: &[String],
    relevance: &BTreeMap<String, Target>,
) -> Result<Vec<(f64, bool)>, AlignError> {
    embedding_targets(store, seen, unseen)?
        .into_iter()
        .map(|(u, l, c)| {
            let truth = relevance
                .get(&u)
                .ok_or_else(|| AlignError::Unmapped(u.clone()))?;
            Ok((c, truth == &Target::Seen(l)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vectors: &[(&str, Vec<Vec<f64>>)]) -> EmbeddingStore {
        EmbeddingStore {
            space: EmbeddingSpace::Language,
            dim: 2,
            vectors: vectors
                .iter()
                .map(|(l, v)| (l.to_string(), v.clone()))
                .collect(),
        }
    }

    #[test]
    fn mean_of_orthogonal_is_diagonal() {
        let s = store(&[("a", vec![vec![1.0, 0.0], vec![0.0, 1.0]])]);
        let m = s.mean_embedding("a").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0] - h).abs() < 1e-12 && (m[1] - h).abs() < 1e-12);
    }

    #[test]
    fn opposite_vectors_have_zero_mean() {
        let s = store(&[("a", vec![vec![1.0, 0.0], vec![-1.0, 0.0]])]);
        assert!(matches!(
            s.mean_embedding("a"),
            Err(AlignError::ZeroNorm(_))
        ));
        assert!(matches!(
            s.mean_embedding("b"),
            Err(AlignError::MissingEmbedding { .. })
        ));
    }

    #[test]
    fn threshold_examples() {
        let (tau, f1) = oracle_threshold(&[(0.9, true), (0.8, false), (0.3, false)]).unwrap();
        assert!((tau - 0.85).abs() < 1e-12);
        assert_eq!(f1, 1.0);
        assert_eq!(
            oracle_threshold(&[(0.2, true), (0.5, true)]).unwrap().0,
            f64::NEG_INFINITY
        );
        assert_eq!(
            oracle_threshold(&[(0.2, false), (0.5, false)]).unwrap().0,
            f64::INFINITY
        );
    }

    #[test]
    fn non_oracle_threshold_closed_forms() {
        let same = store(&[("a", vec![vec![1.0, 1.0]]), ("b", vec![vec![2.0, 2.0]])]);
        assert!(
            (non_oracle_threshold(&same, &["a".into(), "b".into()]).unwrap() - 1.0).abs() < 1e-12
        );
        let orth = store(&[("a", vec![vec![1.0, 0.0]]), ("b", vec![vec![0.0, 3.0]])]);
        assert_eq!(
            non_oracle_threshold(&orth, &["a".into(), "b".into()]).unwrap(),
            0.0
        );
        assert!(matches!(
            non_oracle_threshold(&orth, &["a".into()]),
            Err(AlignError::TooFewLabels(1))
        ));
    }

    #[test]
    fn align_uses_strict_threshold() {
        let s = store(&[
            ("a", vec![vec![1.0, 0.0]]),
            ("b", vec![vec![0.0, 1.0]]),
            ("u", vec![vec![1.0, 0.0]]),
        ]);
        let seen = vec!["a".to_string(), "b".to_string()];
        let map = |tau| {
            embedding_align(
                &s,
                &seen,
                &["u".into()],
                ThresholdPolicy {
                    kind: ThresholdKind::Oracle,
                    tau,
                },
            )
            .unwrap()
            .entries["u"]
                .clone()
        };
        assert_eq!(map(0.5), Target::seen("a"));
        assert_eq!(map(1.0), Target::Distractor);
    }
}
