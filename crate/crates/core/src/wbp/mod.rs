//! Weighted branching trees, the iterated sums `Y_l` built on them, and the
//! population algorithm for the fixed-point law.

mod eval;
mod pool;
mod tree;

pub use eval::{
    decompose_check, evaluate_yl, evaluate_yl_recursive, evaluate_z, subtree_y, Leaves,
};
pub use pool::{
    between_replicate_mean, mean_matched_start, population_iterate, read_pool_bin, read_pool_csv,
    replicate_pools, sample_fixed_point, write_pool_bin, write_pool_csv, FixedPointPool,
    GenerationStats, PoolConfig, Start,
};
pub use tree::{
    expected_population, grow_shape, grow_tree, path_weight, NodeId, ShapeNode, TreeShape,
    WeightedTree, NODE_CAP,
};
