//! Pass^k, success-rate tables and the multi-trial protocol.

mod metrics;
mod protocol;
mod report;
mod suite;

pub use metrics::{aggregate_pass_k, pass_k, success_rate_tables, PassKReport, SuccessTables, TrialRecord};
pub use protocol::{
    run_protocol, run_protocol_traced, scripted_episode, validate_suite, CueSource, MemoryBackend,
    ProtocolOptions, ProtocolReflector, ProtocolTrace, TaskSpec, DEFAULT_TRIALS,
};
pub use report::{trials_csv, EvalReport, PASS_K_CURVE_FILE, PASS_K_FILE, SUCCESS_RATES_FILE, TRIALS_FILE};
pub use suite::{generate_suite, load_suite, save_suite, transfer_suite, SuiteShape};
