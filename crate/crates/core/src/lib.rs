//! Real-time synthetic trajectory release from location streams collected
//! under w-event local differential privacy.
//!
//! Users report their per-tick transition state (move, enter or quit) through
//! an optimized unary encoding frequency oracle. The curator keeps a global
//! first-order mobility model, refreshes only the transitions whose fresh
//! estimates deviate by more than the perturbation noise, and grows a
//! synthetic trajectory database from it while tracking the real active
//! population size.

pub mod allocation;
pub mod client;
pub mod error;
pub mod eval;
pub mod grid;
pub mod harness;
pub mod mobility;
pub mod oracle;
pub mod synth;

pub use error::{Error, Result};
