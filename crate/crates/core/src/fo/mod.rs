//! Frequency oracles.

pub mod hash;
pub mod olh;
pub mod oue;

pub use hash::{HashFamily, HashPair};
pub use olh::{olh_aggregate, olh_estimate, olh_perturb, olh_support, support_counts, OlhParams};
pub use oue::{oue_aggregate, oue_estimate, oue_perturb, OueParams, OueReport, OueTally};
