//! Risk calculations for stratified risk-limiting audits that combine a
//! comparison stratum (ballots with cast vote records) and a ballot-polling
//! stratum (ballots without).
//!
//! The crate is `no_std` with `alloc`. File formats, the command line and
//! parallel simulation live in the `hybrid-rla` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod combination;
pub mod comparison;
pub mod error;
pub mod math;
pub mod model;
pub mod polling;
pub mod sampling;
pub mod simulation;

pub use combination::{
    adjust_lambda_after_handcount, audit_state_step, chi2_4_sf, combined_pvalue_over_lambda,
    feasible_lambda_interval, fisher_combine, validate_allocation, AuditDecision, AuditEvent,
    AuditState, EscalationRule, LambdaInterval, RiskAllocation, StratumStatus,
};
pub use comparison::{
    batch_upper_bound, clean_sample_size, km_pvalue, kw_pvalue, observed_taint, BoundMode,
    BoundOptions, ComparisonTest, Exact, SequentialPValue,
};
pub use error::{AuditError, Result};
pub use model::{
    derive_margins, AuditKind, Batch, BatchRun, ContestSpec, MarginTable, StratumId,
    StratumManifest, StratumTotals,
};
pub use polling::{
    cond_hyper_tail, polling_pvalue, tri_hyper_tail, NullSearch, PollingMethod, PollingSample,
};
pub use sampling::{draw_ppeb, draw_srs, PpebSampler, SamplePlan, SrsSampler};
