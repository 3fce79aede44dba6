//! Lineup-based evaluation of face recognition under image degradation.

pub mod calibrate;
pub mod cli;
pub mod degrade;
pub mod embed;
pub mod error;
pub mod fixture;
pub mod lineup;
pub mod manifest;
pub mod report;
pub mod rng;
pub mod stats;
