//! Mithril: an RFM-compatible Row Hammer protection scheme built on a
//! Counter-based Summary tracker, modelled at the memory-controller command
//! level.
//!
//! The crate is organised bottom-up:
//!
//! * [`timing`] and [`bounds`] hold the DRAM timing model and every closed-form
//!   quantity (RFM intervals per refresh window, the estimated-count growth
//!   bounds with and without adaptive refresh, minimal-table search).
//! * [`tracker`] is the per-bank counter table and its RFM selection policy.
//! * [`controller`] drives a tracker with an ACT stream, issuing RFM and
//!   auto-refresh commands on a simulated clock.
//! * [`parfm`] is the probabilistic baseline and its analytic failure model.
//! * [`workload`] generates adversarial and benign ACT streams and reads traces.
//! * [`oracle`] is the ground-truth disturbance checker and the inequality and
//!   bound auditors.
//! * [`experiment`] ties everything together into reportable runs.

pub mod bounds;
pub mod controller;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod par;
pub mod parfm;
pub mod timing;
pub mod tracker;
pub mod workload;

pub use bounds::{BlastRadius, BoundReport, MithrilConfig, SearchOutcome};
pub use controller::{BankController, CommandKind, IssuedCommand};
pub use error::{Error, Result};
pub use timing::{Picos, TimingParams};
pub use tracker::{MithrilTable, RefreshDecision, Row, RowTracker};
pub use workload::{ActEvent, WorkloadSpec};
