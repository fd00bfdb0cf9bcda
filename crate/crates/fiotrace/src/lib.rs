//! Scenario files, the check/amplitude/oracle pipeline and its report
//! formats on top of `fiotrace-core`.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod scenarios;
