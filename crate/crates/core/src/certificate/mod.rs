//! Monte Carlo evaluation of the lower bound for `P(<u, X> > t)` built from
//! one-path large-deviation events on a sparse subtree.

mod bound;
mod cones;
mod events;
mod subtree;

pub use bound::{
    direct_union_probability, lower_bound, write_v_csv, write_w_csv, Budgets, CertVerdict,
    CertificateReport, Kappa, VRow, WRow,
};
pub use cones::{cone_family, Cap, ConeFamily, TEST_DIRECTIONS};
pub use events::{
    choose_c0_delta, estimate_pv, estimate_pw, estimate_v_table, estimate_walk_exceedance,
    indicator_v, sample_z, ConstantsChoice, ConstantsRow, EventParams, PairGeometry, PathMarks,
    VEstimate, WEstimate, DEFAULT_C0_GRID, DEFAULT_DELTA_GRID, MIN_ESS, MIN_LEVEL,
};
pub use subtree::{
    build_sparse_subtree, expected_count_check, expected_w_count, pair_count, pair_geometries,
    pair_geometry_counts, CountCheck, SubtreeParams,
};
