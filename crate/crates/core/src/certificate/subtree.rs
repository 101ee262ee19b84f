//! The sparse subtree: nodes on every `C1`-th level of the window whose
//! addresses end in `C1` ones, and expected counts of its nodes and pairs.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::events::{EventParams, PairGeometry};
use crate::error::{Error, Result};
use crate::model::Branching;
use crate::rng::{chunked, merge_all, MeanAcc, StreamKey};
use crate::wbp::{grow_shape, NodeId, TreeShape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtreeParams {
    pub c1: usize,
    /// `L_t`, ascending.
    pub levels: Vec<usize>,
}

impl SubtreeParams {
    /// Multiples `l >= C1` of `C1` with `n_t - sqrt(n_t) <= l < n_t - sqrt(n_t)/2`.
    pub fn new(c1: usize, ep: &EventParams) -> Result<Self> {
        if c1 == 0 {
            return Err(Error::Domain("C1 must be a positive integer".into()));
        }
        let (lo, hi) = ep.window();
        let levels = (1..)
            .map(|j| j * c1)
            .take_while(|&l| (l as f64) < hi)
            .filter(|&l| l as f64 >= lo)
            .collect();
        Ok(SubtreeParams { c1, levels })
    }

    pub fn with_levels(c1: usize, mut levels: Vec<usize>) -> Result<Self> {
        if c1 == 0 {
            return Err(Error::Domain("C1 must be a positive integer".into()));
        }
        if let Some(l) = levels.iter().find(|&&l| l == 0 || l % c1 != 0) {
            return Err(Error::Domain(format!(
                "level {l} is not a positive multiple of C1 = {c1}"
            )));
        }
        levels.sort_unstable();
        levels.dedup();
        Ok(SubtreeParams { c1, levels })
    }

    pub fn max_level(&self) -> usize {
        self.levels.last().copied().unwrap_or(0)
    }

    /// `sqrt(n_t) / (2 C1)`, the nominal size of `L_t`.
    pub fn nominal_count(&self, ep: &EventParams) -> f64 {
        (ep.n_t as f64).sqrt() / (2.0 * self.c1 as f64)
    }

    /// Every level is a multiple of `C1` inside the half-open window.
    pub fn check_window(&self, ep: &EventParams) -> Result<()> {
        let (lo, hi) = ep.window();
        match self
            .levels
            .iter()
            .find(|&&l| (l as f64) < lo || (l as f64) >= hi)
        {
            Some(l) => Err(Error::Domain(format!(
                "level {l} lies outside the window [{lo}, {hi})"
            ))),
            None => Ok(()),
        }
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.levels.binary_search(&id.len()).is_ok() && id.ends_with_ones(self.c1)
    }
}

/// The nodes of `shape` that belong to the sparse subtree.
pub fn build_sparse_subtree(shape: &TreeShape, sp: &SubtreeParams) -> Result<Vec<NodeId>> {
    if shape.depth() < sp.max_level() {
        return Err(Error::Domain(format!(
            "tree depth {} is below the deepest level {}",
            shape.depth(),
            sp.max_level()
        )));
    }
    Ok(sp
        .levels
        .iter()
        .flat_map(|&l| shape.nodes_at(l))
        .filter(|n| n.id.ends_with_ones(sp.c1))
        .map(|n| n.id.clone())
        .collect())
}

/// Expected subtree count at level `k`: `(E N)^{k - C1}` as for a tree without
/// extinction, and the same times `P(N >= 1)^{C1}`, which is exact in general.
pub fn expected_w_count(branching: &Branching, c1: usize, k: usize) -> (f64, f64) {
    if k < c1 {
        return (0.0, 0.0);
    }
    let base = branching.mean().powi((k - c1) as i32);
    (base, base * branching.prob_nonempty().powi(c1 as i32))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CountCheck {
    pub level: usize,
    pub c1: usize,
    pub mean: f64,
    pub se: f64,
    pub predicted: f64,
    pub predicted_exact: f64,
    pub reps: usize,
}

/// Grows `reps` trees to depth `k` and counts subtree nodes at level `k`.
pub fn expected_count_check<R: Rng + ?Sized>(
    branching: &Branching,
    c1: usize,
    k: usize,
    reps: usize,
    rng: &mut R,
) -> Result<CountCheck> {
    if c1 == 0 || k < c1 {
        return Err(Error::Domain(format!(
            "need 1 <= C1 <= k, got C1 = {c1}, k = {k}"
        )));
    }
    let key = StreamKey::from_rng(rng);
    let parts = chunked(key, reps, |stream, count| -> Result<MeanAcc> {
        let mut acc = MeanAcc::default();
        for _ in 0..count {
            let shape = grow_shape(branching, k, stream)?;
            let c = shape
                .nodes_at(k)
                .iter()
                .filter(|n| n.id.ends_with_ones(c1))
                .count();
            acc.push(c as f64);
        }
        Ok(acc)
    });
    let parts: Vec<MeanAcc> = parts.into_iter().collect::<Result<_>>()?;
    let acc = merge_all(&parts);
    let (predicted, predicted_exact) = expected_w_count(branching, c1, k);
    Ok(CountCheck {
        level: k,
        c1,
        mean: acc.mean(),
        se: acc.se(),
        predicted,
        predicted_exact,
        reps,
    })
}

/// Expected number of ordered pairs `(i, i')` of subtree nodes with
/// `|i| = p`, `|i'| = q` and `|i ^ i'| = m`, `i != i'`. Levels are assumed to
/// be subtree levels; only the all-ones suffixes constrain the addresses.
pub fn pair_count(branching: &Branching, c1: usize, g: PairGeometry) -> f64 {
    let PairGeometry { p, q, m } = g;
    if p < c1 || q < c1 || m >= p || q > p || m > q {
        return 0.0;
    }
    let en = branching.mean();
    let a = branching.prob_nonempty();
    let pw = |x: f64, k: usize| x.powi(k as i32);
    if q == m {
        let r = p - m;
        return pw(en, m - c1) * pw(a, c1) * pw(en, r.saturating_sub(c1)) * pw(a, r.min(c1));
    }
    // First positions of the all-ones suffixes (1-based).
    let sp = p - c1 + 1;
    let sq = q - c1 + 1;
    if sp < m + 2 {
        return 0.0;
    }
    let long = pw(en, sp - m - 2) * pw(a, c1);
    if sq <= m + 1 {
        let free = sq - 1;
        pw(en, free) * pw(a, m - free) * branching.mean_excess() * pw(a, q - m - 1) * long
    } else {
        pw(en, m) * branching.factorial_moment2() * long * pw(en, sq - m - 2) * pw(a, c1)
    }
}

/// Pair geometries with positive expected count, `p` and `q` in `L_t`.
pub fn pair_geometries(branching: &Branching, sp: &SubtreeParams) -> Vec<PairGeometry> {
    let mut out = Vec::new();
    for &p in &sp.levels {
        for &q in sp.levels.iter().filter(|&&q| q <= p) {
            for m in 0..=q.min(p - 1) {
                let g = PairGeometry { p, q, m };
                if pair_count(branching, sp.c1, g) > 0.0 {
                    out.push(g);
                }
            }
        }
    }
    out
}

/// Observed ordered-pair counts by geometry on one tree.
pub fn pair_geometry_counts(
    shape: &TreeShape,
    sp: &SubtreeParams,
) -> Result<BTreeMap<(usize, usize, usize), usize>> {
    let nodes = build_sparse_subtree(shape, sp)?;
    let mut out = BTreeMap::new();
    for i in &nodes {
        for j in &nodes {
            if i == j || j.len() > i.len() {
                continue;
            }
            let m = i.meet(j).len();
            *out.entry((i.len(), j.len(), m)).or_insert(0) += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn binary_tree_level_four() {
        let shape = grow_shape(&Branching::Fixed(2), 4, &mut seeded(1)).unwrap();
        let sp = SubtreeParams::with_levels(2, vec![4]).unwrap();
        let w = build_sparse_subtree(&shape, &sp).unwrap();
        assert_eq!(w.len(), 4);
        assert!(w.iter().all(|n| n.ends_with_ones(2) && n.len() == 4));
        assert_eq!(expected_w_count(&Branching::Fixed(2), 4, 12).0, 256.0);
        assert_eq!(expected_w_count(&Branching::Fixed(2), 5, 5).0, 1.0);
    }

    #[test]
    fn levels_are_multiples_inside_the_window() {
        let ep = EventParams::new((40.0f64 * 0.55).exp(), 1.0, 0.1, 0.55).unwrap();
        assert_eq!(ep.n_t, 40);
        for (c1, want) in [(2, vec![34, 36]), (4, vec![36]), (6, vec![36])] {
            let sp = SubtreeParams::new(c1, &ep).unwrap();
            assert_eq!(sp.levels, want);
            sp.check_window(&ep).unwrap();
        }
        assert!(SubtreeParams::with_levels(3, vec![4]).is_err());
    }

    #[test]
    fn dead_first_children_empty_the_subtree() {
        let shape = TreeShape {
            levels: vec![
                vec![crate::wbp::ShapeNode {
                    id: NodeId::root(),
                    n: 0,
                    first_child: 0,
                }],
                vec![],
                vec![],
            ],
        };
        let sp = SubtreeParams::with_levels(2, vec![2]).unwrap();
        assert!(build_sparse_subtree(&shape, &sp).unwrap().is_empty());
    }

    fn exact_pairs_match(n: usize, c1: usize, levels: Vec<usize>) {
        let br = Branching::Fixed(n);
        let sp = SubtreeParams::with_levels(c1, levels).unwrap();
        let shape = grow_shape(&br, sp.max_level(), &mut seeded(0)).unwrap();
        let counts = pair_geometry_counts(&shape, &sp).unwrap();
        let geoms = pair_geometries(&br, &sp);
        for (&(p, q, m), &c) in &counts {
            let g = PairGeometry { p, q, m };
            assert!(geoms.contains(&g), "{g:?} missing");
            assert_eq!(pair_count(&br, c1, g), c as f64, "{g:?}");
        }
        for g in geoms {
            assert!(counts.contains_key(&(g.p, g.q, g.m)), "{g:?} spurious");
        }
    }

    #[test]
    fn pair_counts_are_exact_on_deterministic_trees() {
        exact_pairs_match(2, 2, vec![2, 4, 6]);
        exact_pairs_match(3, 2, vec![4, 6]);
        exact_pairs_match(2, 3, vec![3, 6, 9]);
        exact_pairs_match(2, 1, vec![1, 2, 3, 4]);
    }
}
