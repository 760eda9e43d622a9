//! Discrete-event simulation of deceased-donor heart allocation.
//!
//! Policies rank waitlisted candidates for each arriving donor using Cox
//! survival estimates (graft survival after transplant versus survival on the
//! waitlist), and the simulator replays cohorts of arrivals, deaths and
//! covariate updates through a stochastic offer-acceptance cascade.

pub mod acceptance;
pub mod cohort;
pub mod domain;
pub mod matching;
pub mod policies;
pub mod simulator;
pub mod stats;
pub mod survival;
pub mod tuning;
