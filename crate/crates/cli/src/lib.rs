//! Experiment harness for the `bnwdro` library: run configuration, the
//! newsvendor and unit-commitment studies, and report emission.

pub mod config;
pub mod newsvendor;
pub mod report;
pub mod study;
pub mod uc;
