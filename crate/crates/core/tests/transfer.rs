use std::sync::Arc;

use memorb_core::evalkit::{
    run_protocol, run_protocol_traced, success_rate_tables, transfer_suite, ProtocolOptions,
    ProtocolReflector, TaskSpec,
};
use memorb_core::{Adapters, EngineConfig, MemoryEngine, RetrievalConfig};

fn engine(tasks: &[TaskSpec], cross_user: bool) -> MemoryEngine {
    let config = EngineConfig {
        retrieval: RetrievalConfig { cross_user, ..RetrievalConfig::default() },
        ..EngineConfig::default()
    };
    let adapters = Adapters::offline(config.dim).with_reflector(Arc::new(ProtocolReflector::for_tasks(tasks)));
    MemoryEngine::in_memory(config, adapters).unwrap()
}

fn run(tasks: &[TaskSpec], memory_enabled: bool, cross_user: bool) -> Vec<f64> {
    let options = ProtocolOptions { memory_enabled, ..ProtocolOptions::default() };
    let records = run_protocol(tasks, options, &engine(tasks, cross_user)).unwrap();
    success_rate_tables(&records).unwrap().cumulative
}

#[test]
fn memory_lifts_cumulative_success() {
    let tasks = transfer_suite(42);
    let with = run(&tasks, true, true);
    let without = run(&tasks, false, true);
    eprintln!("memory on:  {with:?}\nmemory off: {without:?}");
    assert!(with[9] >= 0.95);
    assert!(without[9] <= 0.30);
    assert!(with.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn single_hit_retrieval_loses_twins() {
    let tasks = transfer_suite(42);
    let full = run(&tasks, true, true);
    let single = run(&tasks, true, false);
    eprintln!("k=5: {full:?}\nk=1: {single:?}");
    assert!(single[9] < full[9]);
}

#[test]
fn pairs_transfer_across_users() {
    let tasks = transfer_suite(42);
    let (records, trace) =
        run_protocol_traced(&tasks, ProtocolOptions::default(), &engine(&tasks, true)).unwrap();
    let b = tasks.iter().find(|t| t.task_id == "pair-00b").unwrap();
    let a = tasks.iter().find(|t| t.task_id == "pair-00a").unwrap();
    let solved = records
        .iter()
        .find(|r| r.task_id == b.task_id && r.trial_index == 2)
        .unwrap();
    assert!(solved.success);
    assert!(trace.sources_for(&b.task_id, 2).unwrap().users.contains(&a.user_id));
}
