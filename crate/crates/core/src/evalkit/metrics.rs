//! Pass^k and success-rate tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orb::RewardDetail;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task_id: String,
    /// 1-based.
    pub trial_index: usize,
    pub success: bool,
    pub reward_detail: RewardDetail,
}

/// Probability that `k` trials drawn without replacement from `n`, of which
/// `c` succeeded, all succeeded: C(c,k) / C(n,k).
///
/// Evaluated as the product of `(c-i)/(n-i)` for `i < k`, which stays exact
/// to a few ulps where factorials would overflow.
pub fn pass_k(c: usize, n: usize, k: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Domain(format!("k = {k} outside 1..={n}")));
    }
    if c > n {
        return Err(Error::Domain(format!("c = {c} exceeds n = {n}")));
    }
    if k > c {
        return Ok(0.0);
    }
    Ok((0..k).map(|i| (c - i) as f64 / (n - i) as f64).product())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassKReport {
    pub k: usize,
    pub n: usize,
    pub per_task: BTreeMap<String, f64>,
    pub expectation: f64,
}

type Tally<'a> = BTreeMap<&'a str, (usize, Vec<bool>)>;

/// Success count and trial count per task, checking every task ran the same
/// trials `1..=n` exactly once.
fn tally(records: &[TrialRecord]) -> Result<(usize, Tally<'_>)> {
    if records.is_empty() {
        return Err(Error::Domain("no trial records".into()));
    }
    let mut by_task: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for record in records {
        by_task.entry(record.task_id.as_str()).or_default().push(record);
    }
    let n = by_task.values().next().map(Vec::len).unwrap_or(0);
    let mut out = BTreeMap::new();
    for (task_id, trials) in by_task {
        if trials.len() != n {
            return Err(Error::RaggedTrials {
                task_id: task_id.to_owned(),
                expected: n,
                found: trials.len(),
            });
        }
        let mut outcome = vec![None; n];
        for t in trials {
            let slot = t
                .trial_index
                .checked_sub(1)
                .and_then(|i| outcome.get_mut(i))
                .ok_or_else(|| Error::Domain(format!("task {task_id}: trial index {} outside 1..={n}", t.trial_index)))?;
            if slot.replace(t.success).is_some() {
                return Err(Error::Domain(format!("task {task_id}: trial {} recorded twice", t.trial_index)));
            }
        }
        let outcome: Vec<bool> = outcome.into_iter().map(|o| o.expect("all slots filled")).collect();
        let c = outcome.iter().filter(|&&s| s).count();
        out.insert(task_id, (c, outcome));
    }
    Ok((n, out))
}

/// Pass^k per task and its unweighted mean over tasks. Every trial counts;
/// tasks solved early are never skipped.
pub fn aggregate_pass_k(records: &[TrialRecord], k: usize) -> Result<PassKReport> {
    let (n, tasks) = tally(records)?;
    let mut per_task = BTreeMap::new();
    for (task_id, (c, _)) in &tasks {
        per_task.insert((*task_id).to_owned(), pass_k(*c, n, k)?);
    }
    let expectation = per_task.values().sum::<f64>() / per_task.len() as f64;
    Ok(PassKReport {
        k,
        n,
        per_task,
        expectation,
    })
}

/// Success rate of each trial on its own, and the share of tasks solved at
/// least once in trials `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTables {
    pub tasks: usize,
    pub per_trial: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl SuccessTables {
    pub fn trials(&self) -> usize {
        self.per_trial.len()
    }

    /// Two rows (`per_trial`, `cumulative`) of percentages under columns
    /// `T1..Tn`.
    pub fn to_csv(&self) -> String {
        let header: Vec<String> = (1..=self.trials()).map(|t| format!("T{t}")).collect();
        let row = |name: &str, values: &[f64]| {
            let cells: Vec<String> = values.iter().map(|v| format!("{:.2}", v * 100.0)).collect();
            format!("{name},{}\n", cells.join(","))
        };
        format!(
            "table,{}\n{}{}",
            header.join(","),
            row("per_trial", &self.per_trial),
            row("cumulative", &self.cumulative)
        )
    }
}

pub fn success_rate_tables(records: &[TrialRecord]) -> Result<SuccessTables> {
    let (n, tasks) = tally(records)?;
    let count = tasks.len() as f64;
    let mut per_trial = vec![0usize; n];
    let mut cumulative = vec![0usize; n];
    for (_, outcomes) in tasks.values() {
        let mut solved = false;
        for (t, &success) in outcomes.iter().enumerate() {
            solved |= success;
            per_trial[t] += usize::from(success);
            cumulative[t] += usize::from(solved);
        }
    }
    Ok(SuccessTables {
        tasks: tasks.len(),
        per_trial: per_trial.into_iter().map(|s| s as f64 / count).collect(),
        cumulative: cumulative.into_iter().map(|s| s as f64 / count).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(task: &str, trial: usize, success: bool) -> TrialRecord {
        let r = if success { 1.0 } else { 0.0 };
        TrialRecord {
            task_id: task.into(),
            trial_index: trial,
            success,
            reward_detail: RewardDetail::new(r, r, 1.0, 1.0).unwrap(),
        }
    }

    fn run(task: &str, outcomes: &[bool]) -> Vec<TrialRecord> {
        outcomes.iter().enumerate().map(|(i, &s)| rec(task, i + 1, s)).collect()
    }

    #[test]
    fn pass_k_examples() {
        assert_eq!(pass_k(10, 10, 5).unwrap(), 1.0);
        assert_eq!(pass_k(3, 5, 4).unwrap(), 0.0);
        // 3 of the 10 pairs drawn from {S,S,S,F,F} are all-success.
        assert!((pass_k(3, 5, 2).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pass_k_domain() {
        assert!(pass_k(1, 0, 1).is_err());
        assert!(pass_k(1, 5, 0).is_err());
        assert!(pass_k(1, 5, 6).is_err());
        assert!(pass_k(6, 5, 1).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let mut records = run("a", &[true; 10]);
        records.extend(run("b", &[false; 10]));
        assert_eq!(aggregate_pass_k(&records, 1).unwrap().expectation, 0.5);

        let mut seven = vec![true; 7];
        seven.extend([false; 3]);
        let report = aggregate_pass_k(&run("t", &seven), 3).unwrap();
        assert!((report.per_task["t"] - 35.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn ragged_records_rejected() {
        let mut records = run("a", &[true; 3]);
        records.extend(run("b", &[true; 2]));
        assert!(matches!(aggregate_pass_k(&records, 1), Err(Error::RaggedTrials { .. })));
        let dup = vec![rec("a", 1, true), rec("a", 1, false)];
        assert!(aggregate_pass_k(&dup, 1).is_err());
        assert!(aggregate_pass_k(&[], 1).is_err());
    }

    #[test]
    fn tables_all_fail() {
        let mut records = run("a", &[false; 4]);
        records.extend(run("b", &[false; 4]));
        let t = success_rate_tables(&records).unwrap();
        assert_eq!(t.per_trial, vec![0.0; 4]);
        assert_eq!(t.cumulative, vec![0.0; 4]);
    }

    #[test]
    fn tables_late_success() {
        let t = success_rate_tables(&run("a", &[false, false, true, false, false])).unwrap();
        assert_eq!(t.per_trial, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.cumulative, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            t.to_csv(),
            "table,T1,T2,T3,T4,T5\nper_trial,0.00,0.00,100.00,0.00,0.00\ncumulative,0.00,0.00,100.00,100.00,100.00\n"
        );
    }

    proptest! {
        #[test]
        fn pass_k_monotone(n in 1usize..40, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
            let c = ((n as f64) * c_frac).round() as usize;
            let k = 1 + (((n - 1) as f64) * k_frac).round() as usize;
            let v = pass_k(c, n, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            if k < n {
                prop_assert!(pass_k(c, n, k + 1).unwrap() <= v);
            }
            if c < n {
                prop_assert!(pass_k(c + 1, n, k).unwrap() >= v);
            }
        }

        #[test]
        fn pass_1_is_success_fraction(n in 1usize..64, c_frac in 0.0f64..=1.0) {
            let c = ((n as f64) * c_frac).round() as usize;
            prop_assert_eq!(pass_k(c, n, 1).unwrap(), c as f64 / n as f64);
        }

        #[test]
        fn cumulative_is_monotone(outcomes in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 6), 1..8)) {
            let records: Vec<TrialRecord> = outcomes
                .iter()
                .enumerate()
                .flat_map(|(i, o)| run(&format!("t{i}"), o))
                .collect();
            let t = success_rate_tables(&records).unwrap();
            prop_assert!(t.cumulative.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(t.per_trial.iter().zip(&t.cumulative).all(|(p, c)| p <= c));
        }
    }
}
