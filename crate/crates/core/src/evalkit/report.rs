use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::evalkit::metrics::{aggregate_pass_k, success_rate_tables, PassKReport, SuccessTables, TrialRecord};

pub const SUCCESS_RATES_FILE: &str = "success_rates.csv";
pub const PASS_K_FILE: &str = "passk.json";
pub const PASS_K_CURVE_FILE: &str = "passk_curve.csv";
pub const TRIALS_FILE: &str = "trials.csv";

/// Everything the evaluation writes out for one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub tables: SuccessTables,
    /// One report per k in `1..=trials`.
    pub pass_k: Vec<PassKReport>,
}

impl EvalReport {
    pub fn from_records(records: &[TrialRecord]) -> Result<Self> {
        let tables = success_rate_tables(records)?;
        let pass_k = (1..=tables.trials())
            .map(|k| aggregate_pass_k(records, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport { tables, pass_k })
    }

    pub fn pass_k_curve_csv(&self) -> String {
        let mut out = String::from("k,pass_k\n");
        for report in &self.pass_k {
            out.push_str(&format!("{},{:.6}\n", report.k, report.expectation));
        }
        out
    }

    /// Writes the report files into `dir` and returns their paths.
    pub fn write(&self, dir: &Path, records: &[TrialRecord]) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = [
            (SUCCESS_RATES_FILE, self.tables.to_csv()),
            (
                PASS_K_FILE,
                serde_json::to_string_pretty(&self.pass_k).expect("reports serialize") + "\n",
            ),
            (PASS_K_CURVE_FILE, self.pass_k_curve_csv()),
            (TRIALS_FILE, trials_csv(records)),
        ];
        let mut written = Vec::with_capacity(files.len());
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("task_id,trial,success,reward,action,search,output\n");
    for r in records {
        let d = &r.reward_detail;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.task_id, r.trial_index, r.success, d.reward, d.action, d.search, d.output
        ));
    }
    out
}
