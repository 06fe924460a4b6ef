pub mod ahead;
pub mod attacks;
pub mod defense;
pub mod error;
pub mod fo;
pub mod grid;
pub mod harness;
pub mod hdg;
pub mod postprocess;
pub mod query;
pub mod rng;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
pub use query::{Interval, RangeQuery};
