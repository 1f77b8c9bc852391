//! Per-step records, their aggregates and the CSV/JSON emitters.
//!
//! CSV columns, frozen at [`SCHEMA_VERSION`]:
//!
//! | column | meaning |
//! |---|---|
//! | `top_k` | candidate set size |
//! | `mode` | `disable`, `simulate` or `execute` |
//! | `scope` | `single` or `all` encrypted heads |
//! | `accuracy_pct` | steps whose reference token is among the candidates |
//! | `avg_infer_s` | mean wall time of one generation (prompt included) |
//! | `compile_s` | plan compile time of the configuration |
//! | `tokens_per_s` | generated tokens over total generation time |
//! | `throughput` | `tokens_per_s / avg_infer_s` (tokens/s²) |
//! | `pbs_count` | bootstraps over all runs of the cell |
//! | `pbs_per_token` | `pbs_count` per generated token |
//! | `mem_per_token_bytes` | accounted ciphertext, plan and key bytes per generated token |
//! | `epr_short` | mean per-step signal over noise |
//! | `epr_long` | mean per-run whole-generation signal over RMS noise |
//! | `new_tokens` | tokens generated per run |
//!
//! Timing columns are zero when timing is switched off, which makes the
//! file reproducible byte for byte. Infinite EPR is written as `inf`.

use serde::{Serialize, Serializer};

use super::metrics::{self, percent};
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 14] = [
    "top_k",
    "mode",
    "scope",
    "accuracy_pct",
    "avg_infer_s",
    "compile_s",
    "tokens_per_s",
    "throughput",
    "pbs_count",
    "pbs_per_token",
    "mem_per_token_bytes",
    "epr_short",
    "epr_long",
    "new_tokens",
];

fn finite_or_string<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&fmt_f64(*v))
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.6}")
    }
}

/// One generated token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenStep {
    /// Position whose logits chose the token.
    pub position: usize,
    /// Plain model's argmax on the same context.
    pub reference: usize,
    /// Encrypted model's top-k candidates.
    pub candidates: Vec<usize>,
    pub chosen: usize,
    /// Forward pass time of the encrypted model for this position.
    pub wall_s: f64,
    /// Norm of the encrypted heads' attention output over all target layers.
    pub signal_norm: f64,
    /// Norm of its ledger noise in the same units.
    pub noise_norm: f64,
}

/// One prompt, one repetition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub prompt: usize,
    pub repetition: usize,
    pub prompt_tokens: usize,
    pub steps: Vec<TokenStep>,
    /// Total encrypted-model time, prompt included.
    pub wall_s: f64,
    /// Bootstraps counted at runtime.
    pub pbs: u64,
    /// Bootstraps the plans predict for the same positions.
    pub static_pbs: u64,
    /// Ciphertexts sent, returned and left in the server cache.
    pub ciphertexts: u64,
    pub ciphertext_bytes: u64,
}

impl RunRecord {
    pub fn epr_long(&self) -> Result<f64> {
        let s: Vec<f64> = self.steps.iter().map(|t| t.signal_norm).collect();
        let e: Vec<f64> = self.steps.iter().map(|t| t.noise_norm).collect();
        metrics::epr_long(&s, &e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub accuracy_pct: f64,
    pub avg_infer_s: f64,
    pub compile_s: f64,
    pub tokens_per_s: f64,
    pub throughput: f64,
    pub pbs_count: u64,
    pub total_ciphertext_bytes: u64,
    pub pbs_per_token: f64,
    pub mem_per_token_bytes: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub epr_short: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub epr_long: f64,
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub top_k: usize,
    pub new_tokens: usize,
    pub mode: String,
    pub scope: String,
    pub compile_s: f64,
    pub plan_bytes: u64,
    pub eval_key_bytes: u64,
    pub runs: Vec<RunRecord>,
    pub aggregates: Aggregates,
}

impl CellReport {
    /// Aggregate `runs`; this is the only place aggregates are computed.
    pub fn aggregate(&self) -> Result<Aggregates> {
        let steps: Vec<&TokenStep> = self.runs.iter().flat_map(|r| &r.steps).collect();
        let tokens = steps.len();
        let hits = steps.iter().filter(|s| s.candidates.contains(&s.reference)).count();
        let total_wall: f64 = self.runs.iter().map(|r| r.wall_s).sum();
        let avg_infer_s = if self.runs.is_empty() { 0.0 } else { total_wall / self.runs.len() as f64 };
        let tokens_per_s = if total_wall > 0.0 { tokens as f64 / total_wall } else { 0.0 };
        let throughput = if avg_infer_s > 0.0 { metrics::throughput(tokens_per_s, avg_infer_s)? } else { 0.0 };
        let pbs_count: u64 = self.runs.iter().map(|r| r.pbs).sum();
        let total_ciphertext_bytes: u64 = self.runs.iter().map(|r| r.ciphertext_bytes).sum();
        let fixed = self.runs.len() as u64 * (self.plan_bytes + self.eval_key_bytes);
        let epr_short = steps.iter().map(|s| metrics::epr_short(s.signal_norm, s.noise_norm)).sum::<f64>() / tokens as f64;
        let epr_long =
            self.runs.iter().map(RunRecord::epr_long).sum::<Result<f64>>()? / self.runs.len() as f64;
        Ok(Aggregates {
            accuracy_pct: if tokens == 0 { 0.0 } else { percent(hits, tokens) },
            avg_infer_s,
            compile_s: self.compile_s,
            tokens_per_s,
            throughput,
            pbs_count,
            total_ciphertext_bytes,
            pbs_per_token: metrics::pbs_per_token(pbs_count, tokens)?,
            mem_per_token_bytes: metrics::mem_per_token(total_ciphertext_bytes + fixed, tokens)?,
            epr_short,
            epr_long,
        })
    }

    fn csv_row(&self) -> Vec<String> {
        let a = &self.aggregates;
        vec![
            self.top_k.to_string(),
            self.mode.clone(),
            self.scope.clone(),
            fmt_f64(a.accuracy_pct),
            fmt_f64(a.avg_infer_s),
            fmt_f64(a.compile_s),
            fmt_f64(a.tokens_per_s),
            fmt_f64(a.throughput),
            a.pbs_count.to_string(),
            fmt_f64(a.pbs_per_token),
            fmt_f64(a.mem_per_token_bytes),
            fmt_f64(a.epr_short),
            fmt_f64(a.epr_long),
            self.new_tokens.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationReport {
    pub schema_version: u32,
    pub timings: bool,
    /// Plan compilations performed while producing this report.
    pub compiles: usize,
    pub cells: Vec<CellReport>,
}

impl GenerationReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| crate::error::Error::Io(e.into());
        w.write_record(CSV_COLUMNS).map_err(io)?;
        for c in &self.cells {
            w.write_record(c.csv_row()).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::error::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| crate::error::Error::Io(e.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(reference: usize, candidates: Vec<usize>, noise: f64) -> TokenStep {
        TokenStep { position: 0, reference, chosen: candidates[0], candidates, wall_s: 0.5, signal_norm: 2.0, noise_norm: noise }
    }

    fn cell() -> CellReport {
        let run = |steps| RunRecord {
            prompt: 0,
            repetition: 0,
            prompt_tokens: 3,
            steps,
            wall_s: 2.0,
            pbs: 30,
            static_pbs: 30,
            ciphertexts: 10,
            ciphertext_bytes: 1000,
        };
        let mut c = CellReport {
            top_k: 1,
            new_tokens: 2,
            mode: "simulate".into(),
            scope: "single".into(),
            compile_s: 0.25,
            plan_bytes: 100,
            eval_key_bytes: 900,
            runs: vec![run(vec![step(1, vec![1], 0.5), step(2, vec![3], 1.0)]), run(vec![step(4, vec![4], 0.5), step(5, vec![5], 0.5)])],
            aggregates: Aggregates {
                accuracy_pct: 0.0,
                avg_infer_s: 0.0,
                compile_s: 0.0,
                tokens_per_s: 0.0,
                throughput: 0.0,
                pbs_count: 0,
                total_ciphertext_bytes: 0,
                pbs_per_token: 0.0,
                mem_per_token_bytes: 0.0,
                epr_short: 0.0,
                epr_long: 0.0,
            },
        };
        c.aggregates = c.aggregate().unwrap();
        c
    }

    #[test]
    fn aggregates_follow_the_records() {
        let a = cell().aggregates;
        assert_eq!(a.accuracy_pct, 75.0);
        assert_eq!(a.avg_infer_s, 2.0);
        assert_eq!(a.tokens_per_s, 1.0);
        assert_eq!(a.throughput, 0.5);
        assert_eq!(a.pbs_count, 60);
        assert_eq!(a.pbs_per_token, 15.0);
        assert_eq!(a.mem_per_token_bytes, 1000.0);
        assert_eq!(a.epr_short, (4.0 + 2.0 + 4.0 + 4.0) / 4.0);
    }

    #[test]
    fn csv_and_json_layout() {
        let mut c = cell();
        c.runs[0].steps[0].noise_norm = 0.0;
        c.aggregates = c.aggregate().unwrap();
        let r = GenerationReport { schema_version: SCHEMA_VERSION, timings: true, compiles: 1, cells: vec![c] };
        let csv = r.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), CSV_COLUMNS.len());
        assert_eq!(row[0], "1");
        assert_eq!(row[3], "75.000000");
        assert_eq!(row[11], "inf");
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["cells"][0]["aggregates"]["epr_short"], "inf");
    }
}
