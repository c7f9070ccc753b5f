//! One function per subcommand. Commands hand results to each other only
//! through files in the output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use gift_core::align::{
    non_oracle_threshold, oracle_threshold, threshold_samples, AlignMethod,
    AlignmentMap, EmbeddingSpace, EmbeddingStore, ThresholdKind, ThresholdPolicy,
};
use gift_core::eval::{
    bound_experiment, run_experiment, subset_metrics, BoundExperiment, EvalReport, MethodSource,
    MethodSpec, SubsetRow,
};
use gift_core::intent::{
    chosen_histogram, intent_similarity_check, repeated_inference, IntentEstimate, PromptSet,
    SimilarityCheck,
};
use gift_core::lm::{Embedder, FixtureEmbedder};
use gift_core::reward::{irl_candidate_set, train_irl, TrainedReward};
use gift_core::world::{
    generate_dataset, load_task, read_trajectories, write_trajectories, Dataset, GeneratorConfig,
    TaskSpec,
};

use crate::backend::Backend;
use crate::config::{config_err, parse_method, read_text, PipelineConfig};

pub const PREFERRED_FILE: &str = "dataset/preferred.jsonl";
pub const NOMINAL_FILE: &str = "dataset/nominal.jsonl";
pub const MANIFEST_FILE: &str = "dataset/manifest.json";
pub const MODEL_FILE: &str = "reward_model.json";
pub const INTENT_FILE: &str = "intent.json";
pub const ALIGNMENT_FILE: &str = "alignment.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const PAIRS_CSV: &str = "pairs.csv";
pub const BOUND_FILE: &str = "bound.json";

/// An artifact check failed (exit code 2).
#[derive(Debug)]
pub struct InvariantViolation(pub String);

impl std::fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvariantViolation {}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    info!(path = %path.display(), "wrote");
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, produced_by: &str) -> Result<T> {
    if !path.exists() {
        return Err(config_err(format!(
            "{} is missing; run `gift {produced_by}` first",
            path.display()
        )));
    }
    let text = read_text(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn task_of(cfg: &PipelineConfig) -> Result<TaskSpec> {
    load_task(&cfg.task).map_err(|e| config_err(format!("task {}: {e}", cfg.task.display())))
}

fn generator(cfg: &PipelineConfig, task: &TaskSpec) -> GeneratorConfig {
    cfg.dataset
        .generator
        .clone()
        .unwrap_or_else(|| GeneratorConfig::for_task(task))
}

fn prompts(cfg: &PipelineConfig) -> Result<PromptSet> {
    match &cfg.prompts_dir {
        Some(dir) => PromptSet::load(dir).map_err(|e| config_err(e.to_string())),
        None => Ok(PromptSet::builtin().clone()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub task: String,
    pub seed: u64,
    pub n_scenes: usize,
    pub generator: GeneratorConfig,
    /// SHA-256 of each dataset file, keyed by path relative to the output
    /// directory.
    pub files: BTreeMap<String, String>,
}

pub fn gen(cfg: &PipelineConfig) -> Result<()> {
    let task = task_of(cfg)?;
    let gen = generator(cfg, &task);
    let ds = generate_dataset(&task, cfg.dataset.n_scenes, cfg.seed, &gen)?;
    let mut files = BTreeMap::new();
    for (name, trajs) in [(PREFERRED_FILE, &ds.preferred), (NOMINAL_FILE, &ds.nominal)] {
        let path = cfg.artifact(name);
        std::fs::create_dir_all(path.parent().expect("dataset dir"))?;
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        write_trajectories(&mut w, trajs)?;
        drop(w);
        files.insert(name.to_owned(), sha256_file(&path)?);
    }
    write_json(
        &cfg.artifact(MANIFEST_FILE),
        &Manifest {
            task: task.name.clone(),
            seed: cfg.seed,
            n_scenes: cfg.dataset.n_scenes,
            generator: gen,
            files,
        },
    )?;
    println!(
        "generated {} demonstration pairs for {}",
        ds.len(),
        task.name
    );
    Ok(())
}

/// Reads the dataset back, refusing files whose hash disagrees with the
/// manifest.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<(Dataset, Manifest)> {
    let manifest: Manifest = read_json(&cfg.artifact(MANIFEST_FILE), "gen")?;
    let mut parts = Vec::new();
    for name in [PREFERRED_FILE, NOMINAL_FILE] {
        let path = cfg.artifact(name);
        let expected = manifest
            .files
            .get(name)
            .ok_or_else(|| InvariantViolation(format!("manifest lists no hash for {name}")))?;
        let actual = sha256_file(&path)?;
        if &actual != expected {
            return Err(InvariantViolation(format!(
                "{} does not match its manifest hash",
                path.display()
            ))
            .into());
        }
        let f = File::open(&path)?;
        parts.push(read_trajectories(BufReader::new(f))?);
    }
    let nominal = parts.pop().expect("two parts");
    let preferred = parts.pop().expect("two parts");
    Ok((Dataset { preferred, nominal }, manifest))
}

pub fn learn(cfg: &PipelineConfig) -> Result<()> {
    let task = task_of(cfg)?;
    let (ds, manifest) = load_dataset(cfg)?;
    let candidates = irl_candidate_set(&ds, &manifest.generator, &cfg.irl)?;
    let trained = train_irl(&ds.preferred, &candidates, task.feature_specs(), &cfg.irl)?;
    write_json(&cfg.artifact(MODEL_FILE), &trained)?;
    let last = trained.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained reward on {} demonstrations ({} candidates); final loss {last:.6}",
        ds.preferred.len(),
        candidates.len()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IntentArtifact {
    /// The estimate used downstream: the first run whose chosen intent is
    /// the most frequent one.
    pub estimate: IntentEstimate,
    pub n_runs: usize,
    pub chosen_histogram: BTreeMap<String, usize>,
    #[serde(default)]
    pub similarity: Option<SimilarityCheck>,
}

fn text_embedder<'a>(cfg: &PipelineConfig, backend: &'a Backend) -> Result<Option<Box<dyn Embedder + 'a>>> {
    if let Some(p) = &cfg.embeddings.text {
        let e = FixtureEmbedder::load(p).map_err(|e| config_err(e.to_string()))?;
        return Ok(Some(Box::new(e)));
    }
    Ok(backend.embedder())
}

pub fn intent(cfg: &PipelineConfig, backend: &Backend) -> Result<()> {
    let task = task_of(cfg)?;
    let (ds, _) = load_dataset(cfg)?;
    let prompts = prompts(cfg)?;
    let mut icfg = cfg.intent.config.clone();
    icfg.seed = Some(icfg.seed.unwrap_or(cfg.seed));
    let estimates = repeated_inference(
        backend.chat(),
        &prompts,
        &ds.preferred,
        &ds.nominal,
        &task.task_string,
        &task.feature_specs(),
        &icfg,
        cfg.intent.n_runs,
    )?;
    let histogram = chosen_histogram(&estimates);
    // Most frequent chosen text; ties go to the earliest run.
    let top = histogram.values().copied().max().unwrap_or(0);
    let estimate = estimates
        .iter()
        .find(|e| histogram.get(&e.chosen) == Some(&top))
        .cloned()
        .expect("at least one run");
    let similarity = match text_embedder(cfg, backend)? {
        Some(embedder) => {
            let chosen: Vec<String> = estimates.iter().map(|e| e.chosen.clone()).collect();
            Some(intent_similarity_check(
                embedder.as_ref(),
                &chosen,
                &task.ground_truth_intent,
                &task.generic_baseline_intent,
            )?)
        }
        None => {
            warn!("no text embedder configured; skipping the intent similarity check");
            None
        }
    };
    write_json(
        &cfg.artifact(INTENT_FILE),
        &IntentArtifact {
            estimate: estimate.clone(),
            n_runs: cfg.intent.n_runs,
            chosen_histogram: histogram,
            similarity: similarity.clone(),
        },
    )?;
    println!("intent: {}", estimate.chosen);
    if let Some(s) = similarity {
        println!(
            "cosine to ground truth: inferred {:.4} ± {:.4}, generic {:.4}",
            s.mean_cos_inferred, s.stderr_inferred, s.mean_cos_generic
        );
    }
    Ok(())
}

/// Inputs every method spec borrows from.
struct MethodInputs {
    prompts: PromptSet,
    intent: Option<IntentEstimate>,
    vision: Option<EmbeddingStore>,
    language: Option<EmbeddingStore>,
}

impl MethodInputs {
    fn load(cfg: &PipelineConfig, names: &[&str]) -> Result<Self> {
        let needs = |m: AlignMethod| {
            names
                .iter()
                .any(|n| parse_method(n).map(|p| p.0 == m).unwrap_or(false))
        };
        let intent = if needs(AlignMethod::Gift) {
            let a: IntentArtifact = read_json(&cfg.artifact(INTENT_FILE), "intent")?;
            Some(a.estimate)
        } else {
            None
        };
        let store = |path: &Option<std::path::PathBuf>, space: EmbeddingSpace| -> Result<Option<EmbeddingStore>> {
            match path {
                Some(p) => Ok(Some(
                    EmbeddingStore::load(p, space).map_err(|e| config_err(e.to_string()))?,
                )),
                None => Ok(None),
            }
        };
        Ok(MethodInputs {
            prompts: prompts(cfg)?,
            intent,
            vision: store(&cfg.embeddings.vision, EmbeddingSpace::Vision)?,
            language: store(&cfg.embeddings.language, EmbeddingSpace::Language)?,
        })
    }

    fn spec<'a>(
        &'a self,
        cfg: &PipelineConfig,
        task: &TaskSpec,
        backend: &'a Backend,
        name: &str,
    ) -> Result<MethodSpec<'a>> {
        let (method, oracle) = parse_method(name)?;
        let source = match method {
            AlignMethod::Gift => MethodSource::Lm {
                lm: backend.chat(),
                prompts: &self.prompts,
                intent: Some(self.intent.as_ref().expect("intent loaded for gift")),
                config: cfg.align.clone(),
            },
            AlignMethod::LmNoIntent => MethodSource::Lm {
                lm: backend.chat(),
                prompts: &self.prompts,
                intent: None,
                config: cfg.align.clone(),
            },
            AlignMethod::VisionEmbedding | AlignMethod::LanguageEmbedding => {
                let (store, key) = if method == AlignMethod::VisionEmbedding {
                    (&self.vision, "embeddings.vision")
                } else {
                    (&self.language, "embeddings.language")
                };
                let store = store
                    .as_ref()
                    .ok_or_else(|| config_err(format!("method `{name}` needs `{key}`")))?;
                let policy = threshold_policy(store, task, oracle.unwrap_or(false))?;
                info!(method = name, tau = policy.tau, "embedding threshold");
                MethodSource::Embedding { store, policy }
            }
            AlignMethod::GroundTruth => MethodSource::GroundTruth,
            AlignMethod::AllDistractor => MethodSource::AllDistractor,
            AlignMethod::Identity => {
                return Err(config_err("`identity` is not a test-time method"));
            }
        };
        Ok(MethodSpec {
            name: name.to_owned(),
            source,
        })
    }
}

/// Oracle thresholds maximize F1 against the task's relevance labels over
/// the whole test catalog; non-oracle ones use mean train-pair similarity.
fn threshold_policy(store: &EmbeddingStore, task: &TaskSpec, oracle: bool) -> Result<ThresholdPolicy> {
    let seen = task.train_labels();
    if oracle {
        let samples = threshold_samples(store, &seen, &task.test_labels(), &task.relevance_labels)?;
        let (tau, _) = oracle_threshold(&samples)?;
        Ok(ThresholdPolicy {
            kind: ThresholdKind::Oracle,
            tau,
        })
    } else {
        Ok(ThresholdPolicy {
            kind: ThresholdKind::NonOracle,
            tau: non_oracle_threshold(store, &seen)?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub name: String,
    pub map: AlignmentMap,
    pub subsets: Vec<SubsetRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlignmentArtifact {
    pub task: String,
    pub methods: Vec<AlignmentEntry>,
}

pub fn align(cfg: &PipelineConfig, backend: &Backend) -> Result<()> {
    let task = task_of(cfg)?;
    let names: Vec<&str> = cfg.methods.iter().map(String::as_str).collect();
    let inputs = MethodInputs::load(cfg, &names)?;
    let unseen = task.test_labels();
    let seen = task.train_labels().into_iter().collect();
    let mut methods = Vec::new();
    for name in &names {
        let spec = inputs.spec(cfg, &task, backend, name)?;
        let map = spec.build_map(&task, &unseen)?;
        map.validate(&seen, &unseen)?;
        let subsets = subset_metrics(&map, &task)?;
        for row in &subsets {
            println!(
                "{name:<22} {:<7} TP={} FP={} FN={} TN={} F1={:.4}",
                row.subset, row.confusion.tp, row.confusion.fp, row.confusion.fn_, row.confusion.tn, row.confusion.f1
            );
        }
        methods.push(AlignmentEntry {
            name: name.to_string(),
            map,
            subsets,
        });
    }
    write_json(
        &cfg.artifact(ALIGNMENT_FILE),
        &AlignmentArtifact {
            task: task.name.clone(),
            methods,
        },
    )
}

pub fn eval(cfg: &PipelineConfig, backend: &Backend) -> Result<()> {
    let task = task_of(cfg)?;
    let trained: TrainedReward = read_json(&cfg.artifact(MODEL_FILE), "learn")?;
    let names: Vec<&str> = cfg.methods.iter().map(String::as_str).collect();
    let inputs = MethodInputs::load(cfg, &names)?;
    let methods = names
        .iter()
        .map(|n| inputs.spec(cfg, &task, backend, n))
        .collect::<Result<Vec<_>>>()?;
    let mut exp = cfg.eval.clone();
    if exp.generator.is_none() {
        exp.generator = cfg.dataset.generator.clone();
    }
    let out = run_experiment(&task, &trained.model, &methods, &exp)?;
    write_json(&cfg.artifact(REPORT_JSON), &out.report)?;
    let md = out.report.to_markdown();
    std::fs::write(cfg.artifact(REPORT_MD), &md)?;
    std::fs::write(cfg.artifact(PAIRS_CSV), out.pairs_csv())?;
    print!("{md}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BoundArtifact {
    pub task: String,
    pub method: String,
    pub result: BoundExperiment,
    pub held_out_violation_rate: f64,
    pub max_violation_rate: f64,
}

pub fn bound_check(cfg: &PipelineConfig, backend: &Backend) -> Result<()> {
    let task = task_of(cfg)?;
    let trained: TrainedReward = read_json(&cfg.artifact(MODEL_FILE), "learn")?;
    let name = cfg.bound.method.as_str();
    let inputs = MethodInputs::load(cfg, &[name])?;
    let language = inputs
        .language
        .as_ref()
        .ok_or_else(|| config_err("bound-check needs `embeddings.language` for the kernel"))?;
    let spec = inputs.spec(cfg, &task, backend, name)?;
    let map = spec.build_map(&task, &task.test_labels())?;
    let gen = generator(cfg, &task);
    let result = bound_experiment(
        &task,
        &trained.model,
        &map,
        language,
        cfg.bound.n_calibration,
        cfg.bound.n_evaluation,
        cfg.seed,
        &gen,
    )?;
    let rate = result.held_out.violations as f64 / result.held_out.n_evaluation.max(1) as f64;
    write_json(
        &cfg.artifact(BOUND_FILE),
        &BoundArtifact {
            task: task.name.clone(),
            method: name.to_owned(),
            result: result.clone(),
            held_out_violation_rate: rate,
            max_violation_rate: cfg.bound.max_violation_rate,
        },
    )?;
    println!(
        "L = {:.6}; self-check violations {}/{}; held-out violations {}/{}",
        result.self_check.l_hat,
        result.self_check.violations,
        result.self_check.n_evaluation,
        result.held_out.violations,
        result.held_out.n_evaluation
    );
    if result.self_check.violations > 0 || rate > cfg.bound.max_violation_rate {
        bail!(InvariantViolation(format!(
            "bound violated: self-check {}, held-out rate {rate:.3} > {}",
            result.self_check.violations, cfg.bound.max_violation_rate
        )));
    }
    Ok(())
}

pub fn report(cfg: &PipelineConfig) -> Result<()> {
    let report: EvalReport = read_json(&cfg.artifact(REPORT_JSON), "eval")?;
    let md = report.to_markdown();
    std::fs::write(cfg.artifact(REPORT_MD), &md)?;
    print!("{md}");
    let mut failures = Vec::new();
    let e = &cfg.expect;
    if let Some(min) = e.min_in_distribution {
        if report.in_distribution.rate < min {
            failures.push(format!(
                "in-distribution win rate {:.4} < {min}",
                report.in_distribution.rate
            ));
        }
    }
    for (name, &min) in &e.min_win_rate {
        match report.method(name) {
            Some(m) if m.win_rate.rate >= min => {}
            Some(m) => failures.push(format!("{name} win rate {:.4} < {min}", m.win_rate.rate)),
            None => failures.push(format!("{name} is not in the report")),
        }
    }
    for (name, &min) in &e.min_f1 {
        let Some(m) = report.method(name) else {
            failures.push(format!("{name} is not in the report"));
            continue;
        };
        for row in &m.subsets {
            if (row.subset == "S_R" || row.subset == "S_conf") && row.confusion.f1 < min {
                failures.push(format!(
                    "{name} F1 on {} is {:.4} < {min}",
                    row.subset, row.confusion.f1
                ));
            }
        }
    }
    if !failures.is_empty() {
        bail!(InvariantViolation(failures.join("; ")));
    }
    Ok(())
}
