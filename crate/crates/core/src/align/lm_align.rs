use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{mode_vote, AlignError, AlignMethod, AlignmentMap};
use crate::intent::literal::{brace_blocks, parse_literal, py_list, strip_code_fences};
use crate::intent::{Call3Branch, IntentError, IntentEstimate, PromptSet};
use crate::lm::{ChatBackend, ChatRequest};
use crate::world::{derive_seed, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub n_runs: usize,
    /// Sampling temperature for the repeated alignment calls. Repetition is
    /// only informative when the backend samples, so this is above zero.
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            n_runs: 10,
            temperature: 0.7,
            seed: 0,
            max_tokens: 2048,
        }
    }
}

/// Renders the alignment `(system, user)` prompt texts.
pub fn render_call3(
    prompts: &PromptSet,
    seen: &[String],
    unseen: &[String],
    intent: Option<&IntentEstimate>,
) -> Result<(String, String), IntentError> {
    let (branch, background) = match intent {
        Some(e) => (Call3Branch::Gift, Some(e.background_call())),
        None => (Call3Branch::Blind, None),
    };
    let user = prompts.render_call3_user(
        branch,
        background.as_deref(),
        &py_list(seen),
        &py_list(unseen),
    )?;
    Ok((prompts.call3_system.clone(), user))
}

/// Parses one alignment response into a partial map over `unseen`.
///
/// Targets outside `seen` become distractors and keys outside `unseen` are
/// ignored, both with a warning.
pub fn parse_call3_response(
    response: &str,
    seen: &BTreeSet<String>,
    unseen: &[String],
) -> Result<BTreeMap<String, Target>, IntentError> {
    let text = strip_code_fences(response);
    let &(s, e) = brace_blocks(&text)
        .last()
        .ok_or_else(|| IntentError::Parse("no dictionary found in response".into()))?;
    let pairs = parse_literal(&text[s..e])?.as_string_dict()?;
    let wanted: BTreeSet<&str> = unseen.iter().map(String::as_str).collect();
    let mut out = BTreeMap::new();
    for (k, v) in pairs {
        if !wanted.contains(k.as_str()) {
            warn!(label = %k, "ignoring mapping for a label that was not asked about");
            continue;
        }
        let target = match Target::parse(&v) {
            Target::Seen(l) if !seen.contains(&l) => {
                warn!(label = %k, target = %l, "target is not a seen label; using distractor");
                Target::Distractor
            }
            t => t,
        };
        out.entry(k).or_insert(target);
    }
    Ok(out)
}

/// Issues `n_runs` alignment calls and takes the per-label mode.
pub fn lm_align(
    lm: &dyn ChatBackend,
    prompts: &PromptSet,
    seen: &[String],
    unseen: &[String],
    intent: Option<&IntentEstimate>,
    cfg: &AlignConfig,
) -> Result<AlignmentMap, AlignError> {
    if seen.is_empty() {
        return Err(AlignError::EmptyLabels("seen"));
    }
    if unseen.is_empty() {
        return Err(AlignError::EmptyLabels("unseen"));
    }
    if cfg.n_runs == 0 {
        return Err(AlignError::InvalidInput("n_runs must be at least 1".into()));
    }
    let (system, user) = render_call3(prompts, seen, unseen, intent)?;
    let seen_set: BTreeSet<String> = seen.iter().cloned().collect();
    let mut runs = Vec::with_capacity(cfg.n_runs);
    for run in 0..cfg.n_runs {
        let req = ChatRequest {
            system: system.clone(),
            user: user.clone(),
            temperature: cfg.temperature,
            seed: Some(derive_seed(cfg.seed, &[run as u64])),
            max_tokens: cfg.max_tokens,
        };
        let response = lm.complete(&req)?;
        match parse_call3_response(&response, &seen_set, unseen) {
            Ok(m) => {
                for u in unseen.iter().filter(|u| !m.contains_key(*u)) {
                    warn!(run, label = %u, "label omitted from response; counted as distractor");
                }
                runs.push(m);
            }
            Err(e) => warn!(run, error = %e, "skipping unparseable alignment response"),
        }
    }
    if runs.is_empty() {
        return Err(AlignError::AllRunsUnparseable(cfg.n_runs));
    }
    let (entries, votes) = mode_vote(&runs, unseen);
    let method = if intent.is_some() {
        AlignMethod::Gift
    } else {
        AlignMethod::LmNoIntent
    };
    let mut map = AlignmentMap::new(method, entries);
    map.votes = votes;
    map.conditioning = intent.cloned();
    map.validate(&seen_set, unseen)?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn call3_parse_handles_unknowns() {
        let seen: BTreeSet<String> = ["paintbrush".to_string()].into();
        let unseen = vec!["clay".to_string(), "scrubber".to_string()];
        let m = parse_call3_response(
            "Reasoning...\n{\"clay\": \"paintbrush\", \"scrubber\": \"sponge\", \"ghost\": \"distractor\"}",
            &seen,
            &unseen,
        )
        .unwrap();
        assert_eq!(m["clay"], Target::seen("paintbrush"));
        assert_eq!(m["scrubber"], Target::Distractor);
        assert!(!m.contains_key("ghost"));
    }

    #[test]
    fn blind_prompt_has_no_background() {
        let p = PromptSet::builtin();
        let (_, user) = render_call3(p, &["a".into()], &["b".into()], None).unwrap();
        assert!(user.contains("Ignore future references"));
        assert!(!user.contains("motivations ="));
        assert!(user.contains("['a']") && user.contains("['b']"));
    }
}
