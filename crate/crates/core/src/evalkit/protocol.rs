//! Multi-trial protocol over a synthetic environment.
//!
//! Each task hides a `required_cue`: the scripted agent solves the task when
//! a retrieved reflection contains the cue, or by luck with probability
//! `0.2 * (1 - difficulty)`. After every trial each episode is distilled and
//! stored; the scripted reflector writes the task's cue into the
//! `New Plan:` section, so a failure in one trial can be turned into a
//! success in the next. The memory bank is never reset between trials.

use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{IngestOutcome, MemoryEngine, RetrievedMemory, Stats};
use crate::error::{Error, Result};
use crate::evalkit::metrics::TrialRecord;
use crate::llm::{section, LlmAdapter};
use crate::orb::{RewardDetail, Trajectory, Turn};
use crate::prompts::headings;
use crate::retriever::RetrievalRequest;

pub const DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub scenario: String,
    pub required_cue: String,
    pub difficulty: f64,
    pub user_id: String,
}

impl TaskSpec {
    pub fn base_success_probability(&self) -> f64 {
        0.2 * (1.0 - self.difficulty)
    }
}

pub fn validate_suite(tasks: &[TaskSpec]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for task in tasks {
        if task.required_cue.is_empty() {
            return Err(Error::InvalidRequest(format!("task {}: empty required_cue", task.task_id)));
        }
        if task.scenario.is_empty() {
            return Err(Error::InvalidRequest(format!("task {}: empty scenario", task.task_id)));
        }
        if !(0.0..=1.0).contains(&task.difficulty) {
            return Err(Error::InvalidRequest(format!(
                "task {}: difficulty {} outside [0, 1]",
                task.task_id, task.difficulty
            )));
        }
        if !ids.insert(task.task_id.as_str()) {
            return Err(Error::InvalidRequest(format!("duplicate task id {}", task.task_id)));
        }
    }
    Ok(())
}

/// What the protocol needs from a memory layer. Implemented by
/// [`MemoryEngine`]; an HTTP client can implement it the same way.
pub trait MemoryBackend {
    fn retrieve(&self, request: &RetrievalRequest) -> Result<RetrievedMemory>;

    fn ingest(
        &self,
        trajectory: &Trajectory,
        memory_context: &str,
        now: Option<DateTime<Utc>>,
    ) -> Result<IngestOutcome>;

    fn stats(&self) -> Stats;
}

impl MemoryBackend for MemoryEngine {
    fn retrieve(&self, request: &RetrievalRequest) -> Result<RetrievedMemory> {
        MemoryEngine::retrieve(self, request)
    }

    fn ingest(
        &self,
        trajectory: &Trajectory,
        memory_context: &str,
        now: Option<DateTime<Utc>>,
    ) -> Result<IngestOutcome> {
        MemoryEngine::ingest(self, trajectory, memory_context, now)
    }

    fn stats(&self) -> Stats {
        MemoryEngine::stats(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub trials: usize,
    pub memory_enabled: bool,
    pub seed: u64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            trials: DEFAULT_TRIALS,
            memory_enabled: true,
            seed: 42,
        }
    }
}

/// Where a retrieved cue came from, for one task attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueSource {
    pub task_id: String,
    pub trial_index: usize,
    /// `user_id` metadata of every hit whose reflection held the cue.
    pub users: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub cue_sources: Vec<CueSource>,
}

impl ProtocolTrace {
    pub fn sources_for(&self, task_id: &str, trial_index: usize) -> Option<&CueSource> {
        self.cue_sources
            .iter()
            .find(|s| s.task_id == task_id && s.trial_index == trial_index)
    }
}

pub fn run_protocol(
    tasks: &[TaskSpec],
    options: ProtocolOptions,
    backend: &dyn MemoryBackend,
) -> Result<Vec<TrialRecord>> {
    run_protocol_traced(tasks, options, backend).map(|(records, _)| records)
}

/// [`run_protocol`] that also reports which users' reflections supplied each
/// retrieved cue.
pub fn run_protocol_traced(
    tasks: &[TaskSpec],
    options: ProtocolOptions,
    backend: &dyn MemoryBackend,
) -> Result<(Vec<TrialRecord>, ProtocolTrace)> {
    if options.trials == 0 {
        return Err(Error::InvalidRequest("trials must be at least 1".into()));
    }
    validate_suite(tasks)?;
    if options.memory_enabled && backend.stats().orb_count != 0 {
        return Err(Error::Protocol("memory bank must be empty when the first trial starts".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut records = Vec::with_capacity(tasks.len() * options.trials);
    let mut trace = ProtocolTrace::default();

    for trial in 1..=options.trials {
        let mut episodes = Vec::with_capacity(tasks.len());
        for task in tasks {
            let cue_users = if options.memory_enabled {
                let request = RetrievalRequest::new(task.scenario.clone()).with_user(task.user_id.clone());
                let memory = backend.retrieve(&request)?;
                memory
                    .result
                    .hits
                    .iter()
                    .zip(&memory.outcomes)
                    .filter(|(_, outcome)| outcome.contains(&task.required_cue))
                    .map(|(hit, _)| match hit.metadata.get("user_id") {
                        Some(crate::orb::ContextValue::Text(u)) => u.clone(),
                        _ => String::new(),
                    })
                    .collect::<Vec<_>>()
            } else {
                Vec::new()
            };
            // One draw per attempt keeps the random stream aligned across
            // memory-on and memory-off runs.
            let draw: f64 = rng.random();
            let cue_found = !cue_users.is_empty();
            let success = cue_found || draw < task.base_success_probability();

            let trajectory = scripted_episode(task, success, cue_found);
            let reward_detail = trajectory.final_reward()?;
            records.push(TrialRecord {
                task_id: task.task_id.clone(),
                trial_index: trial,
                success,
                reward_detail,
            });
            if cue_found {
                trace.cue_sources.push(CueSource {
                    task_id: task.task_id.clone(),
                    trial_index: trial,
                    users: cue_users,
                });
            }
            episodes.push(trajectory);
        }

        if options.memory_enabled {
            for (i, trajectory) in episodes.iter().enumerate() {
                backend.ingest(trajectory, "", Some(episode_time(trial, i)))?;
            }
        }
    }
    Ok((records, trace))
}

fn episode_time(trial: usize, index: usize) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
        + Duration::days(trial as i64)
        + Duration::seconds(index as i64)
}

pub const PLATFORM: &str = "synthetic";
pub const SHOP_ID: &str = "shop-1";

/// The two-turn dialogue the scripted agent produces for one attempt.
pub fn scripted_episode(task: &TaskSpec, success: bool, cue_found: bool) -> Trajectory {
    let first_action = if cue_found {
        format!("Following a stored plan: {}", task.required_cue)
    } else {
        "Let me look into that for you.".to_owned()
    };
    let (closing, final_action, reward) = if success {
        (
            "Great, thank you, that solved it.",
            "Glad I could help.",
            RewardDetail::new(1.0, 1.0, 1.0, 1.0).expect("valid"),
        )
    } else {
        (
            "This is terrible, my problem is still not solved.",
            "Sorry, I could not complete the request.",
            RewardDetail::new(0.0, 0.0, 1.0, 1.0).expect("valid"),
        )
    };
    Trajectory {
        turns: vec![
            Turn::new(task.scenario.clone(), first_action),
            Turn::new(closing, final_action).with_reward(reward),
        ],
        scenario: task.scenario.clone(),
        user_id: task.user_id.clone(),
        shop_id: SHOP_ID.to_owned(),
        platform: PLATFORM.to_owned(),
    }
}

/// Reflection backend for the protocol. It reads the user and scenario out
/// of the reflection prompt, looks up the task, and writes that task's cue
/// into the `New Plan:` section.
pub struct ProtocolReflector {
    cues: HashMap<(String, String), String>,
}

impl ProtocolReflector {
    pub fn for_tasks(tasks: &[TaskSpec]) -> Self {
        let cues = tasks
            .iter()
            .map(|t| ((t.user_id.clone(), t.scenario.clone()), t.required_cue.clone()))
            .collect();
        ProtocolReflector { cues }
    }
}

const USER_MARKER: &str = "the user_id of the customer you serve is ";

impl LlmAdapter for ProtocolReflector {
    fn complete(&self, prompt: &str) -> Result<String> {
        let user = prompt
            .find(USER_MARKER)
            .map(|at| &prompt[at + USER_MARKER.len()..])
            .and_then(|rest| rest.split_once(". ").map(|(u, _)| u))
            .unwrap_or("");
        let scenario = section(prompt, headings::TASK_SCENARIO).unwrap_or("");
        let cue = self
            .cues
            .get(&(user.to_owned(), scenario.to_owned()))
            .ok_or_else(|| Error::Adapter(format!("no scripted task for user {user:?}")))?;
        let success = section(prompt, headings::EVALUATION)
            .is_some_and(|e| e.contains("Overall result: Success"));
        Ok(if success {
            format!("I succeeded in this mission. The stored strategy resolved the request.\nNew Plan: {cue}")
        } else {
            format!(
                "I failed in this mission. The request stayed unresolved because a required step was skipped.\nNew Plan: {cue}"
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Adapters, EngineConfig};
    use crate::evalkit::metrics::success_rate_tables;
    use std::sync::Arc;

    fn task(id: &str, user: &str, scenario: &str, cue: &str, difficulty: f64) -> TaskSpec {
        TaskSpec {
            task_id: id.into(),
            scenario: scenario.into(),
            required_cue: cue.into(),
            difficulty,
            user_id: user.into(),
        }
    }

    fn engine_for(tasks: &[TaskSpec]) -> MemoryEngine {
        MemoryEngine::in_memory(
            EngineConfig { dim: 256, ..EngineConfig::default() },
            Adapters::offline(256).with_reflector(Arc::new(ProtocolReflector::for_tasks(tasks))),
        )
        .unwrap()
    }

    fn opts(trials: usize, memory_enabled: bool) -> ProtocolOptions {
        ProtocolOptions { trials, memory_enabled, seed: 7 }
    }

    #[test]
    fn no_memory_hard_tasks_never_succeed() {
        let tasks = vec![
            task("a", "u1", "cancel order 1", "call cancel tool", 1.0),
            task("b", "u2", "track parcel 2", "call logistics tool", 1.0),
        ];
        let records = run_protocol(&tasks, opts(5, false), &engine_for(&tasks)).unwrap();
        assert_eq!(records.len(), 10);
        assert!(records.iter().all(|r| !r.success));
    }

    #[test]
    fn fail_then_succeed() {
        let tasks = vec![task("a", "u1", "cancel order 313271663680 paid by wechat", "manage_order_tool(action=cancel)", 1.0)];
        let engine = engine_for(&tasks);
        let records = run_protocol(&tasks, opts(2, true), &engine).unwrap();
        assert!(!records[0].success);
        assert!(records[1].success);
    }

    #[test]
    fn cross_user_transfer() {
        let cue = "call get_image_info_tool on the review screenshot";
        let tasks = vec![
            task("a", "u1", "Customer wants the cashback for order 314231443863 verified", cue, 1.0),
            task("b", "u2", "Customer wants the cashback for order 314231449999 verified", cue, 1.0),
        ];
        let engine = engine_for(&tasks);
        let (records, trace) = run_protocol_traced(&tasks, opts(2, true), &engine).unwrap();
        let b2 = records.iter().find(|r| r.task_id == "b" && r.trial_index == 2).unwrap();
        assert!(b2.success);
        assert!(trace.sources_for("b", 2).unwrap().users.contains(&"u1".to_owned()));
    }

    #[test]
    fn reproducible() {
        let tasks: Vec<TaskSpec> = (0..6)
            .map(|i| task(&format!("t{i}"), "u", &format!("request number {i}"), &format!("cue {i}"), 0.3))
            .collect();
        let a = run_protocol(&tasks, opts(4, true), &engine_for(&tasks)).unwrap();
        let b = run_protocol(&tasks, opts(4, true), &engine_for(&tasks)).unwrap();
        assert_eq!(a, b);
        let t = success_rate_tables(&a).unwrap();
        assert!(t.cumulative.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn requires_empty_bank() {
        let tasks = vec![task("a", "u1", "s", "c", 1.0)];
        let engine = engine_for(&tasks);
        run_protocol(&tasks, opts(1, true), &engine).unwrap();
        assert!(matches!(run_protocol(&tasks, opts(1, true), &engine), Err(Error::Protocol(_))));
    }

    #[test]
    fn suite_validation() {
        let good = task("a", "u", "s", "c", 0.5);
        assert!(validate_suite(&[good.clone(), good.clone()]).is_err());
        assert!(validate_suite(&[TaskSpec { required_cue: String::new(), ..good.clone() }]).is_err());
        assert!(validate_suite(&[TaskSpec { difficulty: 1.5, ..good }]).is_err());
    }
}
