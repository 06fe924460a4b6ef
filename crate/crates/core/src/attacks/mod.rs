//! Data poisoning attacks on the tree and grid protocols.

pub mod adaptive;
pub mod grid;
pub mod tree;

pub use adaptive::{aaog_load_limit, blocking_pairs, stable_match, Aaog, AaogPlan, LoadLimit};
pub use grid::{
    aog_find_hash_pair, aog_size_constraints, haog_preference, mga_grid, Aog, ColumnBook, Haog,
    KeyTable, MgaGrid, SizeConstraints,
};
pub use tree::{
    aaot_transform, aot_assignment_bruteforce, aot_assignment_exhaustive, aot_assignment_fast,
    aot_zero_coeff_strategy, mga_tree, tree_coefficients, Aot, AotProblem, Assignment, MgaTree,
    Search, ZeroStrategy,
};
