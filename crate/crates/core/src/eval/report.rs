use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::BoltzmannTable;
use super::Confusion;
use crate::align::{AlignMethod, AlignmentMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateSummary {
    pub rate: f64,
    pub stderr: f64,
    pub per_seed: Vec<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub subset: String,
    pub size: usize,
    #[serde(flatten)]
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub name: String,
    pub method: AlignMethod,
    pub win_rate: WinRateSummary,
    pub subsets: Vec<SubsetRow>,
    /// The method's map over the full test catalog.
    pub map: AlignmentMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub n_pairs: usize,
    pub seeds: Vec<u64>,
    pub tie_eps: f64,
    pub in_distribution: WinRateSummary,
    pub methods: Vec<MethodResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boltzmann: Vec<BoltzmannTable>,
    /// Echo of the experiment configuration.
    pub config: serde_json::Value,
}

/// Raw score of one method on one pair, for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub seed: u64,
    pub index: usize,
    pub split: String,
    pub method: String,
    pub score_a: f64,
    pub score_b: f64,
    pub truth: String,
    pub predicted: String,
    pub pair_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub pairs: Vec<PairRecord>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Evaluation: {}\n", self.task);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "{} pairs per seed; seeds {}; tie tolerance {:e}.\n",
            self.n_pairs,
            seeds.join(", "),
            self.tie_eps
        );
        let _ = writeln!(out, "## Win rate\n");
        let _ = writeln!(out, "| method | win rate | stderr | per seed |");
        let _ = writeln!(out, "|---|---|---|---|");
        let row = |out: &mut String, name: &str, w: &WinRateSummary| {
            let per: Vec<String> = w.per_seed.iter().map(|r| format!("{r:.4}")).collect();
            let _ = writeln!(
                out,
                "| {name} | {:.4} | {:.4} | {} |",
                w.rate,
                w.stderr,
                per.join(" / ")
            );
        };
        row(&mut out, "in_distribution", &self.in_distribution);
        for m in &self.methods {
            row(&mut out, &m.name, &m.win_rate);
        }
        let _ = writeln!(out, "\n## Alignment\n");
        let _ = writeln!(out, "| method | subset | size | TP | FP | FN | TN | F1 |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
        for m in &self.methods {
            for s in &m.subsets {
                let c = &s.confusion;
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} | {:.4} |",
                    m.name, s.subset, s.size, c.tp, c.fp, c.fn_, c.tn, c.f1
                );
            }
        }
        if !self.boltzmann.is_empty() {
            let _ = writeln!(out, "\n## Candidate selection\n");
            let items = &self.boltzmann[0].items;
            let _ = writeln!(out, "| method | {} |", items.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(items.len()));
            for t in &self.boltzmann {
                let cells: Vec<String> = t
                    .mean
                    .iter()
                    .zip(&t.stderr)
                    .map(|(m, s)| format!("{m:.4} ± {s:.4}"))
                    .collect();
                let _ = writeln!(out, "| {} | {} |", t.method, cells.join(" | "));
            }
        }
        out
    }
}

impl EvalOutput {
    pub fn pairs_csv(&self) -> String {
        let mut out =
            String::from("seed,index,split,method,score_a,score_b,truth,predicted,pair_score\n");
        for r in &self.pairs {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.17e},{:.17e},{},{},{}",
                r.seed,
                r.index,
                r.split,
                csv_field(&r.method),
                r.score_a,
                r.score_b,
                r.truth,
                r.predicted,
                r.pair_score
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
