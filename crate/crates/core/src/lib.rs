//! Bandwidth pricing and user association for competing service providers.
//!
//! Two solution paths share one market model:
//!
//! * [`distributed`]: providers play a Stackelberg pricing game against
//!   followers and reach its unique equilibrium by best-response dynamics.
//! * [`centralized`]: a planner with full information solves the joint
//!   association and pricing problem to global optimality with piecewise
//!   McCormick relaxations and bound tightening, using the in-crate
//!   [`milp`] solver.
//!
//! [`oracle`] holds brute-force checks for both.

pub mod centralized;
pub mod distributed;
pub mod milp;
pub mod model;
pub mod oracle;
