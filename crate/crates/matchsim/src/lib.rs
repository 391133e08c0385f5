//! Exact-arithmetic simulator for one-sided matching under random serial
//! dictatorship (RSD) and the probabilistic serial rule (PS).
//!
//! The library computes both mechanisms' random assignments as exact
//! rationals, compares them under stochastic and lexicographic dominance,
//! audits manipulability and envy both ordinally and under
//! risk-parameterized cardinal utilities, and drives exhaustive or sampled
//! experiments over the space of preference profiles.
//!
//! Start with the runnable examples (`cargo run --example assignments`,
//! `dominance`, `manipulation`, `envy`, `risk_attitudes`, `sampling`,
//! `sweep`) or the `matchsim` binary, which exposes the same capabilities
//! as subcommands.

pub mod assignment;
pub mod dominance;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod prefs;
pub mod strategy;
pub mod utility;

pub use assignment::{assignments_equal, surplus, Assignment, Rational};
pub use error::{Error, Result};
pub use mechanisms::{ps, rsd, serial_dictatorship, Mechanism, PriorityOrdering};
pub use prefs::{enumerate_profiles, AgentId, ObjectId, PrefOrder, Profile};
