//! Scripted stand-in for the LM, driven by task fixtures.
//!
//! The oracle recognizes which call it is serving by comparing the system
//! prompt with the known templates, answers Calls 1 and 2 with the canned
//! fixture text, and answers Call 3 with the fixture's ground-truth mapping,
//! optionally corrupted entry by entry.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sha256_hex, ChatBackend, ChatRequest, LmError};
use crate::intent::literal::parse_literal;
use crate::intent::prompts::{PromptSet, GIFT_BRANCH_MARKER, SEEN_LIST_INTRO, UNSEEN_LIST_INTRO};
use crate::world::{derive_seed, Target, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleScript {
    pub intent_response: String,
    pub axes_response: String,
    /// Ground-truth target for every test label.
    pub relevance: BTreeMap<String, Target>,
    /// Targets that replace `relevance` when no intent is supplied.
    #[serde(default)]
    pub blind_overrides: BTreeMap<String, Target>,
    pub noise_rate: f64,
    pub seed: u64,
}

impl OracleScript {
    pub fn for_task(task: &TaskSpec, noise_rate: f64, seed: u64) -> Result<Self, LmError> {
        let fixture = task
            .oracle
            .as_ref()
            .ok_or_else(|| LmError::Config(format!("task {} has no oracle fixture", task.name)))?;
        let script = OracleScript {
            intent_response: fixture.intent_response.clone(),
            axes_response: fixture.axes_response.clone(),
            relevance: task.relevance_labels.clone(),
            blind_overrides: fixture.blind_overrides.clone(),
            noise_rate,
            seed,
        };
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(LmError::Config(format!(
                "noise_rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        Ok(())
    }

    /// Noise-free answer for one unseen label.
    pub fn true_target(&self, label: &str, seen: &BTreeSet<String>, gift: bool) -> Target {
        if seen.contains(label) {
            return Target::seen(label);
        }
        let scripted = if gift {
            self.relevance.get(label)
        } else {
            self.blind_overrides
                .get(label)
                .or_else(|| self.relevance.get(label))
        };
        match scripted {
            Some(Target::Seen(l)) if seen.contains(l) => Target::seen(l.clone()),
            _ => Target::Distractor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Call {
    Intent,
    Axes,
    Align,
}

pub struct OracleBackend {
    script: OracleScript,
    prompts: PromptSet,
}

impl OracleBackend {
    pub fn new(script: OracleScript) -> Result<Self, LmError> {
        script.validate()?;
        Ok(OracleBackend {
            script,
            prompts: PromptSet::builtin().clone(),
        })
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn script(&self) -> &OracleScript {
        &self.script
    }

    fn classify(&self, req: &ChatRequest) -> Result<Call, LmError> {
        if req.system == self.prompts.call1_system {
            Ok(Call::Intent)
        } else if req.system == self.prompts.call2_system {
            Ok(Call::Axes)
        } else if req.system == self.prompts.call3_system {
            Ok(Call::Align)
        } else {
            Err(LmError::Payload(
                "oracle does not recognize the system prompt".into(),
            ))
        }
    }

    fn align_response(&self, req: &ChatRequest) -> Result<String, LmError> {
        let seen = list_after(&req.user, SEEN_LIST_INTRO)?;
        let unseen = list_after(&req.user, UNSEEN_LIST_INTRO)?;
        let seen_set: BTreeSet<String> = seen.iter().cloned().collect();
        // The GIFT branch begins with the instruction that follows its marker.
        let gift_lead = self
            .prompts
            .call3_branches()
            .ok()
            .and_then(|(g, _, _)| {
                g.lines()
                    .find(|l| !l.trim().is_empty() && l.trim() != GIFT_BRANCH_MARKER)
                    .map(str::to_owned)
            })
            .ok_or_else(|| LmError::Config("call 3 template lacks a GIFT branch".into()))?;
        let gift = req.user.contains(&gift_lead);

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.script.seed,
            &[
                req.seed.unwrap_or(0),
                u64::from_str_radix(&sha256_hex(req.user.as_bytes())[..16], 16)
                    .expect("hex digest prefix"),
            ],
        ));
        let mut alternatives: Vec<Target> = seen.iter().map(Target::seen).collect();
        alternatives.push(Target::Distractor);

        let mut entries = Vec::with_capacity(unseen.len());
        for label in &unseen {
            let truth = self.script.true_target(label, &seen_set, gift);
            let target = if self.script.noise_rate > 0.0
                && rng.gen::<f64>() < self.script.noise_rate
            {
                let wrong: Vec<&Target> = alternatives.iter().filter(|t| **t != truth).collect();
                wrong
                    .choose(&mut rng)
                    .map(|t| (*t).clone())
                    .unwrap_or(truth)
            } else {
                truth
            };
            let token = match &target {
                Target::Seen(l) => l.as_str(),
                Target::Distractor => "distractor",
            };
            entries.push(format!("  \"{label}\": \"{token}\""));
        }
        Ok(format!("{{\n{}\n}}", entries.join(",\n")))
    }
}

/// Parses the list literal on the first non-empty line after `intro`.
fn list_after(user: &str, intro: &str) -> Result<Vec<String>, LmError> {
    let at = user
        .find(intro)
        .ok_or_else(|| LmError::Payload(format!("prompt lacks {intro:?}")))?;
    let line = user[at + intro.len()..]
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| LmError::Payload("object list missing".into()))?;
    parse_literal(line)
        .and_then(|v| v.as_string_list())
        .map_err(|e| LmError::Payload(e.to_string()))
}

impl ChatBackend for OracleBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
        req.validate()?;
        match self.classify(req)? {
            Call::Intent => Ok(self.script.intent_response.clone()),
            Call::Axes => Ok(self.script.axes_response.clone()),
            Call::Align => self.align_response(req),
        }
    }
}
