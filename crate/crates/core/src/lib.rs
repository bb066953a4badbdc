//! Discovery of unknown unknowns: confident mistakes of a black-box classifier.
//!
//! The pipeline has two stages. First the high-confidence predictions for a
//! critical class are split into groups described by short conjunctive
//! patterns ([`dsp`]), chosen by a greedy weighted set cover over candidate
//! patterns mined with Apriori ([`patterns`]). Then a bandit ([`bandit`])
//! treats every group as an arm with a shrinking population and decides which
//! group to ask the oracle ([`oracle`]) about next, maximizing the number of
//! confirmed mistakes found under a query budget.
//!
//! [`corpus`] handles ingestion and search-space construction, [`eval`] holds
//! the evaluation harness: entropy of the discovered groups, regret against an
//! oracle-optimal policy, end-to-end baselines and synthetic data generators.

pub mod bandit;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod patterns;

pub use error::{Error, Result};
