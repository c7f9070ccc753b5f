//! Intent estimation from contrasting demonstrations (Calls 1 and 2) and the
//! embedding-based sanity check of the inferred intent.

pub mod literal;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::features::{textualize, FeatureError, FeatureSpec};
use crate::lm::{cosine, ChatBackend, ChatRequest, Embedder, LmError};
use crate::world::Trajectory;

use literal::{
    brace_blocks, named_block, parse_literal, py_dict_of_lists, strip_code_fences, PyValue,
};
pub use prompts::{Call3Branch, PromptSet};

/// Number of ranked motivations requested by the Call 1 prompt.
pub const N_HYPOTHESES: usize = 3;

/// Appended to the user prompt when a response could not be parsed.
pub const CORRECTIVE_SUFFIX: &str = "\n\nYour previous response could not be parsed. Reply with only the requested Python dictionary object(s), using the exact variable names and literal syntax shown above, and no other text.";

#[derive(Debug, Error)]
pub enum IntentError {
    #[error("template error: {0}")]
    Template(String),
    #[error("unresolved placeholder {0} after substitution")]
    UnresolvedPlaceholder(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("expected {expected} motivations, got {got}")]
    TooFewMotivations { expected: usize, got: usize },
    #[error("unparseable response after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

impl IntentError {
    /// True for failures that a corrective re-prompt may fix.
    fn is_format_error(&self) -> bool {
        matches!(
            self,
            IntentError::Parse(_) | IntentError::TooFewMotivations { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentHypothesis {
    pub text: String,
    pub relevant_features: Vec<String>,
    pub rank: usize,
}

/// Axis question → object labels; each label appears under at most one axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityAxes {
    pub axes: Vec<(String, Vec<String>)>,
}

impl SimilarityAxes {
    pub fn labels(&self) -> BTreeSet<&str> {
        self.axes
            .iter()
            .flat_map(|(_, ls)| ls.iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentEstimate {
    pub hypotheses: Vec<IntentHypothesis>,
    /// Semantic-similarity groups returned alongside the motivations.
    pub semantic_similarities: Vec<(String, Vec<String>)>,
    pub axes: SimilarityAxes,
    pub chosen: String,
}

impl IntentEstimate {
    pub fn validate(&self) -> Result<(), IntentError> {
        if self.hypotheses.len() != N_HYPOTHESES {
            return Err(IntentError::TooFewMotivations {
                expected: N_HYPOTHESES,
                got: self.hypotheses.len(),
            });
        }
        for (i, h) in self.hypotheses.iter().enumerate() {
            if h.rank != i || h.text.trim().is_empty() {
                return Err(IntentError::InvalidInput(format!(
                    "hypothesis {i} has rank {} or empty text",
                    h.rank
                )));
            }
        }
        if self.chosen != self.hypotheses[0].text {
            return Err(IntentError::InvalidInput(
                "chosen is not the rank-0 text".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for l in self.axes.axes.iter().flat_map(|(_, ls)| ls) {
            if !seen.insert(l) {
                return Err(IntentError::InvalidInput(format!(
                    "label {l} under two axes"
                )));
            }
        }
        Ok(())
    }

    /// The `<BACKGROUND_CALL>` substitution for alignment prompts.
    pub fn background_call(&self) -> String {
        let motivations: Vec<(String, Vec<String>)> = self
            .hypotheses
            .iter()
            .map(|h| (h.text.clone(), h.relevant_features.clone()))
            .collect();
        format!(
            "motivations = {}\n\nsemantic_similarities = {}",
            py_dict_of_lists(&motivations),
            py_dict_of_lists(&self.semantic_similarities)
        )
    }

    pub fn motivation_dict_json(&self) -> String {
        let entries: Vec<(String, Vec<String>)> = self
            .hypotheses
            .iter()
            .map(|h| (h.text.clone(), h.relevant_features.clone()))
            .collect();
        motivation_dict_json(&entries)
    }
}

/// Ordered JSON rendering of `{motivation: [features]}`.
pub fn motivation_dict_json(entries: &[(String, Vec<String>)]) -> String {
    let q = |s: &str| serde_json::to_string(s).expect("string serialization is infallible");
    if entries.is_empty() {
        return "{}".into();
    }
    let mut out = String::from("{\n");
    for (i, (k, vs)) in entries.iter().enumerate() {
        let list: Vec<String> = vs.iter().map(|v| q(v)).collect();
        let _ = write!(out, "  {}: [{}]", q(k), list.join(", "));
        out.push_str(if i + 1 < entries.len() { ",\n" } else { "\n" });
    }
    out.push('}');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentConfig {
    pub temperature: f64,
    pub seed: Option<u64>,
    /// Timestep stride used when textualizing demonstrations.
    pub stride: usize,
    /// Corrective re-prompts allowed per call after the first attempt.
    pub max_retries: usize,
    pub max_tokens: u32,
}

impl Default for IntentConfig {
    fn default() -> Self {
        IntentConfig {
            temperature: 0.0,
            seed: None,
            stride: 10,
            max_retries: 3,
            max_tokens: 2048,
        }
    }
}

/// Blank-line separated textualizations, one per trajectory.
fn trajectory_block(
    trajs: &[Trajectory],
    specs: &[FeatureSpec],
    stride: usize,
) -> Result<String, IntentError> {
    let parts = trajs
        .iter()
        .map(|t| textualize(t, specs, stride))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.join("\n\n"))
}

/// Renders the Call 1 `(system, user)` texts.
pub fn build_intent_prompt(
    prompts: &PromptSet,
    d_h: &[Trajectory],
    d_neg: &[Trajectory],
    task_string: &str,
    specs: &[FeatureSpec],
    stride: usize,
) -> Result<(String, String), IntentError> {
    if d_h.is_empty() || d_h.len() != d_neg.len() {
        return Err(IntentError::InvalidInput(format!(
            "need paired non-empty demonstrations, got {} preferred and {} default",
            d_h.len(),
            d_neg.len()
        )));
    }
    let default_block = trajectory_block(d_neg, specs, stride)?;
    let preferred_block = trajectory_block(d_h, specs, stride)?;
    let user = prompts.render_call1_user(task_string, &default_block, &preferred_block)?;
    Ok((prompts.call1_system.clone(), user))
}

fn parse_block(text: &str) -> Result<PyValue, IntentError> {
    parse_literal(text)
}

/// Parses a Call 1 response into ranked hypotheses and semantic groups.
///
/// Named `motivations = {...}` / `semantic_similarities = {...}` blocks win;
/// otherwise the last two dictionary blocks are used in that order, or the
/// last one alone as the motivations.
pub fn parse_call1_response(
    response: &str,
    specs: &[FeatureSpec],
) -> Result<(Vec<IntentHypothesis>, Vec<(String, Vec<String>)>), IntentError> {
    let text = strip_code_fences(response);
    let blocks: Vec<&str> = brace_blocks(&text)
        .iter()
        .map(|&(s, e)| &text[s..e])
        .collect();
    let (mot_src, sim_src) = match named_block(&text, "motivations") {
        Some(m) => (m, named_block(&text, "semantic_similarities")),
        None => match blocks.as_slice() {
            [] => return Err(IntentError::Parse("no dictionary found in response".into())),
            [only] => (*only, None),
            [.., a, b] => (*a, Some(*b)),
        },
    };
    let motivations = parse_block(mot_src)?.as_string_list_dict()?;
    let similarities = match sim_src {
        Some(s) => parse_block(s)?.as_string_list_dict()?,
        None => Vec::new(),
    };
    let known: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    let mut hypotheses = Vec::new();
    for (text, features) in motivations {
        if text.trim().is_empty() {
            return Err(IntentError::Parse("empty motivation text".into()));
        }
        let kept: Vec<String> = features
            .into_iter()
            .filter(|f| {
                let ok = known.contains(f.as_str());
                if !ok {
                    warn!(feature = %f, "dropping unknown feature from motivation");
                }
                ok
            })
            .collect();
        hypotheses.push(IntentHypothesis {
            text,
            relevant_features: kept,
            rank: hypotheses.len(),
        });
    }
    if hypotheses.len() < N_HYPOTHESES {
        return Err(IntentError::TooFewMotivations {
            expected: N_HYPOTHESES,
            got: hypotheses.len(),
        });
    }
    if hypotheses.len() > N_HYPOTHESES {
        warn!(
            got = hypotheses.len(),
            "keeping only the top-ranked motivations"
        );
        hypotheses.truncate(N_HYPOTHESES);
    }
    Ok((hypotheses, similarities))
}

/// Parses a Call 2 response. Labels not among `known_objects` are dropped,
/// and a label listed under several axes is kept under the first.
pub fn parse_call2_response(
    response: &str,
    known_objects: &BTreeSet<String>,
) -> Result<SimilarityAxes, IntentError> {
    let text = strip_code_fences(response);
    let blocks = brace_blocks(&text);
    let &(s, e) = blocks
        .last()
        .ok_or_else(|| IntentError::Parse("no dictionary found in response".into()))?;
    let raw = parse_block(&text[s..e])?.as_string_list_dict()?;
    let mut seen = BTreeSet::new();
    let axes = raw
        .into_iter()
        .map(|(axis, labels)| {
            let kept = labels
                .into_iter()
                .filter(|l| {
                    if !known_objects.contains(l) {
                        warn!(label = %l, "dropping unknown object from similarity axis");
                        return false;
                    }
                    if !seen.insert(l.clone()) {
                        warn!(label = %l, "object listed under several axes; keeping first");
                        return false;
                    }
                    true
                })
                .collect();
            (axis, kept)
        })
        .collect();
    Ok(SimilarityAxes { axes })
}

/// Object labels that feature names refer to.
pub fn feature_objects(specs: &[FeatureSpec]) -> BTreeSet<String> {
    specs
        .iter()
        .flat_map(|s| s.object_labels())
        .map(str::to_owned)
        .collect()
}

/// Sends `req`, re-prompting with [`CORRECTIVE_SUFFIX`] while `parse` reports
/// a format error.
fn complete_with_retries<T>(
    lm: &dyn ChatBackend,
    req: ChatRequest,
    max_retries: usize,
    mut parse: impl FnMut(&str) -> Result<T, IntentError>,
) -> Result<T, IntentError> {
    let mut req = req;
    let mut last = String::new();
    for attempt in 0..=max_retries {
        let response = lm.complete(&req)?;
        match parse(&response) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_format_error() => {
                warn!(attempt, error = %e, "response failed to parse; re-prompting");
                last = e.to_string();
                req.user.push_str(CORRECTIVE_SUFFIX);
            }
            Err(e) => return Err(e),
        }
    }
    Err(IntentError::RetriesExhausted {
        attempts: max_retries + 1,
        last,
    })
}

fn request(system: &str, user: String, cfg: &IntentConfig) -> ChatRequest {
    ChatRequest {
        system: system.to_owned(),
        user,
        temperature: cfg.temperature,
        seed: cfg.seed,
        max_tokens: cfg.max_tokens,
    }
}

/// Issues Call 1 and Call 2 and assembles the estimate.
pub fn infer_intent(
    lm: &dyn ChatBackend,
    prompts: &PromptSet,
    d_h: &[Trajectory],
    d_neg: &[Trajectory],
    task_string: &str,
    specs: &[FeatureSpec],
    cfg: &IntentConfig,
) -> Result<IntentEstimate, IntentError> {
    let (system, user) = build_intent_prompt(prompts, d_h, d_neg, task_string, specs, cfg.stride)?;
    let (hypotheses, semantic_similarities) =
        complete_with_retries(lm, request(&system, user, cfg), cfg.max_retries, |r| {
            parse_call1_response(r, specs)
        })?;
    let entries: Vec<(String, Vec<String>)> = hypotheses
        .iter()
        .map(|h| (h.text.clone(), h.relevant_features.clone()))
        .collect();
    let user2 = prompts.render_call2_user(&motivation_dict_json(&entries))?;
    let objects = feature_objects(specs);
    let axes = complete_with_retries(
        lm,
        request(&prompts.call2_system, user2, cfg),
        cfg.max_retries,
        |r| parse_call2_response(r, &objects),
    )?;
    let estimate = IntentEstimate {
        chosen: hypotheses[0].text.clone(),
        hypotheses,
        semantic_similarities,
        axes,
    };
    estimate.validate()?;
    Ok(estimate)
}

/// Mean and standard error of a sample (stderr 0 for a single value).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityCheck {
    pub n_runs: usize,
    pub mean_cos_inferred: f64,
    pub stderr_inferred: f64,
    pub mean_cos_generic: f64,
    pub stderr_generic: f64,
}

/// Cosine of each inferred intent (one per run) and of the generic baseline
/// against the ground-truth intent.
pub fn intent_similarity_check(
    embedder: &dyn Embedder,
    inferred: &[String],
    ground_truth: &str,
    generic: &str,
) -> Result<SimilarityCheck, IntentError> {
    if inferred.is_empty() {
        return Err(IntentError::InvalidInput(
            "need at least one inferred intent".into(),
        ));
    }
    let mut texts: Vec<String> = vec![ground_truth.to_owned(), generic.to_owned()];
    texts.extend(inferred.iter().cloned());
    let vecs = embedder.embed(&texts)?;
    let gt = &vecs[0];
    let generic_cos = cosine(&vecs[1], gt);
    let inferred_cos: Vec<f64> = vecs[2..].iter().map(|v| cosine(v, gt)).collect();
    let generic_cos = vec![generic_cos; inferred.len()];
    let (mi, si) = mean_and_stderr(&inferred_cos);
    let (mg, sg) = mean_and_stderr(&generic_cos);
    Ok(SimilarityCheck {
        n_runs: inferred.len(),
        mean_cos_inferred: mi,
        stderr_inferred: si,
        mean_cos_generic: mg,
        stderr_generic: sg,
    })
}

/// Runs [`infer_intent`] `n_runs` times with seeds `0..n_runs` and returns
/// the chosen intents alongside the full estimates.
pub fn repeated_inference(
    lm: &dyn ChatBackend,
    prompts: &PromptSet,
    d_h: &[Trajectory],
    d_neg: &[Trajectory],
    task_string: &str,
    specs: &[FeatureSpec],
    cfg: &IntentConfig,
    n_runs: usize,
) -> Result<Vec<IntentEstimate>, IntentError> {
    (0..n_runs as u64)
        .map(|i| {
            let cfg = IntentConfig {
                seed: Some(cfg.seed.unwrap_or(0).wrapping_add(i)),
                ..cfg.clone()
            };
            infer_intent(lm, prompts, d_h, d_neg, task_string, specs, &cfg)
        })
        .collect()
}

/// Distinct chosen texts with their frequency, for reports.
pub fn chosen_histogram(estimates: &[IntentEstimate]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for e in estimates {
        *h.entry(e.chosen.clone()).or_insert(0) += 1;
    }
    h
}
