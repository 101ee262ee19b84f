use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{sample_family, sample_n, Branching, Innovation, ModelSpec};
use crate::scalar::Real;

/// Largest number of nodes a materialised tree may hold.
pub const NODE_CAP: usize = 10_000_000;

/// Finite word over `{1, 2, ...}`; the empty word is the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub Vec<u32>);

impl NodeId {
    pub fn root() -> Self {
        NodeId(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, j: u32) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.extend_from_slice(&self.0);
        v.push(j);
        NodeId(v)
    }

    pub fn parent(&self) -> Option<Self> {
        (!self.is_root()).then(|| self.prefix(self.len() - 1))
    }

    /// Curtailment `i|_k`.
    pub fn prefix(&self, k: usize) -> Self {
        NodeId(self.0[..k.min(self.len())].to_vec())
    }

    pub fn last(&self) -> Option<u32> {
        self.0.last().copied()
    }

    pub fn concat(&self, other: &NodeId) -> Self {
        NodeId([self.0.as_slice(), other.0.as_slice()].concat())
    }

    /// `self <= other` in the tree order.
    pub fn is_prefix_of(&self, other: &NodeId) -> bool {
        other.0.starts_with(&self.0)
    }

    /// Longest common prefix.
    pub fn meet(&self, other: &NodeId) -> Self {
        let k = self
            .0
            .iter()
            .zip(&other.0)
            .take_while(|(a, b)| a == b)
            .count();
        self.prefix(k)
    }

    pub fn ends_with_ones(&self, c: usize) -> bool {
        self.len() >= c && self.0[self.len() - c..].iter().all(|&x| x == 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            return write!(f, "root");
        }
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "root" || s.is_empty() {
            return Ok(NodeId::root());
        }
        s.split('.')
            .map(|p| match p.parse::<u32>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(Error::Domain(format!("bad node label '{p}' in '{s}'"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(NodeId)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeNode {
    pub id: NodeId,
    /// Number of children `N`.
    pub n: usize,
    /// Index of the first child in the next level (meaningless at the last level).
    pub first_child: usize,
}

/// Genealogy of a Galton-Watson tree up to a fixed depth, stored level by level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeShape {
    pub levels: Vec<Vec<ShapeNode>>,
}

impl TreeShape {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn nodes_at(&self, level: usize) -> &[ShapeNode] {
        self.levels.get(level).map_or(&[], |v| v.as_slice())
    }

    pub fn total_nodes(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn children(&self, level: usize, pos: usize) -> std::ops::Range<usize> {
        let node = &self.levels[level][pos];
        if level >= self.depth() {
            0..0
        } else {
            node.first_child..node.first_child + node.n
        }
    }
}

/// Expected number of nodes in levels `0..=depth`.
pub fn expected_population(mean_n: f64, depth: usize) -> f64 {
    (0..=depth).map(|k| mean_n.powi(k as i32)).sum()
}

fn grow<I>(
    depth: usize,
    mean_n: f64,
    mut draw: impl FnMut(&NodeId) -> Result<(usize, I)>,
) -> Result<(TreeShape, Vec<Vec<I>>)> {
    let expected = expected_population(mean_n, depth);
    if expected > NODE_CAP as f64 {
        return Err(Error::MemoryCap {
            expected,
            cap: NODE_CAP,
        });
    }
    let mut levels: Vec<Vec<ShapeNode>> = Vec::with_capacity(depth + 1);
    let mut data: Vec<Vec<I>> = Vec::with_capacity(depth + 1);
    let mut total = 0usize;
    let mut current = vec![NodeId::root()];
    for level in 0..=depth {
        let mut nodes = Vec::with_capacity(current.len());
        let mut payload = Vec::with_capacity(current.len());
        let mut next = Vec::new();
        for id in current {
            let (n, inn) = draw(&id)?;
            let first_child = next.len();
            if level < depth {
                next.extend((1..=n as u32).map(|j| id.child(j)));
            }
            nodes.push(ShapeNode { id, n, first_child });
            payload.push(inn);
        }
        total += nodes.len();
        if total > NODE_CAP {
            return Err(Error::MemoryCap {
                expected,
                cap: NODE_CAP,
            });
        }
        levels.push(nodes);
        data.push(payload);
        current = next;
    }
    Ok((TreeShape { levels }, data))
}

/// Genealogy only: the number of children of every node up to `depth`.
pub fn grow_shape<R: Rng + ?Sized>(
    branching: &Branching,
    depth: usize,
    rng: &mut R,
) -> Result<TreeShape> {
    grow(depth, branching.mean(), |_| {
        Ok((sample_n(branching, rng), ()))
    })
    .map(|r| r.0)
}

/// Tree with an independent family `(N, Q, A_1..A_N)` at every node of levels
/// `0..=depth`.
#[derive(Debug, Clone)]
pub struct WeightedTree<T> {
    pub shape: TreeShape,
    pub families: Vec<Vec<Innovation<T>>>,
    index: HashMap<NodeId, (usize, usize)>,
}

pub fn grow_tree<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    depth: usize,
    rng: &mut R,
) -> Result<WeightedTree<T>> {
    let (shape, families) = grow(depth, spec.mean_n(), |_| {
        let inn: Innovation<T> = sample_family(spec, rng)?;
        Ok((inn.n, inn))
    })?;
    Ok(WeightedTree::index(shape, families))
}

impl<T: Real> WeightedTree<T> {
    /// Tree whose family at each node is given by `f`.
    pub fn build(depth: usize, mut f: impl FnMut(&NodeId) -> Innovation<T>) -> Result<Self> {
        let (shape, families) = grow(depth, 1.0, |id| {
            let inn = f(id);
            if inn.a.len() != inn.n {
                return Err(Error::Domain(format!(
                    "node {id}: N = {} but {} weights",
                    inn.n,
                    inn.a.len()
                )));
            }
            Ok((inn.n, inn))
        })?;
        Ok(WeightedTree::index(shape, families))
    }

    fn index(shape: TreeShape, families: Vec<Vec<Innovation<T>>>) -> Self {
        let mut index = HashMap::with_capacity(shape.total_nodes());
        for (l, nodes) in shape.levels.iter().enumerate() {
            for (p, node) in nodes.iter().enumerate() {
                index.insert(node.id.clone(), (l, p));
            }
        }
        WeightedTree {
            shape,
            families,
            index,
        }
    }

    pub fn depth(&self) -> usize {
        self.shape.depth()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn family(&self, id: &NodeId) -> Option<&Innovation<T>> {
        self.index.get(id).map(|&(l, p)| &self.families[l][p])
    }

    pub fn require(&self, id: &NodeId) -> Result<&Innovation<T>> {
        self.family(id)
            .ok_or_else(|| Error::Domain(format!("node {id} is not in the tree")))
    }

    /// Weight `A_{i, j}` on the edge from `i` to its child `ij`.
    pub fn edge(&self, i: &NodeId, j: u32) -> Result<&Mat<T>> {
        let fam = self.require(i)?;
        fam.a
            .get(j as usize - 1)
            .ok_or_else(|| Error::Domain(format!("node {i} has no child {j}")))
    }
}

/// `Pi_{j, ji} = A_{j, i_1} A_{j i_1, i_2} ... ` for `j <= ji`.
pub fn path_weight<T: Real>(tree: &WeightedTree<T>, j: &NodeId, ji: &NodeId) -> Result<Mat<T>> {
    if !j.is_prefix_of(ji) {
        return Err(Error::Domain(format!("{j} is not an ancestor of {ji}")));
    }
    if !tree.contains(ji) {
        return Err(Error::Domain(format!("node {ji} is not in the tree")));
    }
    let d = tree.families[0][0].q.len();
    let mut acc = Mat::identity(d);
    for r in j.len()..ji.len() {
        acc = acc.mul(tree.edge(&ji.prefix(r), ji.0[r])?);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Norm;
    use crate::model::{Ensemble, GeometricClass, QLaw};
    use crate::rng::seeded;

    fn scalar_spec(branching: Branching) -> ModelSpec {
        ModelSpec {
            dimension: 1,
            branching,
            ensemble: Ensemble::ScalarLognormal {
                mu: -1.0,
                sigma2: 0.5,
            },
            q_law: QLaw::Deterministic(vec![1.0]),
            class: GeometricClass::NonnegativeC,
            norm: Norm::L1,
        }
    }

    #[test]
    fn node_id_operations() {
        let a: NodeId = "1.2.1".parse().unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.prefix(2).to_string(), "1.2");
        assert_eq!(a.parent().unwrap().to_string(), "1.2");
        assert!(a.prefix(1).is_prefix_of(&a));
        assert_eq!(a.meet(&"1.3".parse().unwrap()).to_string(), "1");
        assert_eq!(NodeId::root().to_string(), "root");
        assert!(a.ends_with_ones(1) && !a.ends_with_ones(2));
        assert!("1.0".parse::<NodeId>().is_err());
    }

    #[test]
    fn binary_tree_sizes_and_labels() {
        let t: WeightedTree<f64> =
            grow_tree(&scalar_spec(Branching::Fixed(2)), 3, &mut seeded(1)).unwrap();
        let sizes: Vec<usize> = t.shape.levels.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 2, 4, 8]);
        assert!(t.contains(&"2.1.2".parse().unwrap()));
        assert!(!t.contains(&"1.1.1.1".parse().unwrap()));
    }

    #[test]
    fn path_weight_is_product_of_edges() {
        let t: WeightedTree<f64> =
            grow_tree(&scalar_spec(Branching::Fixed(2)), 3, &mut seeded(2)).unwrap();
        let ji: NodeId = "1.2.1".parse().unwrap();
        let w = path_weight(&t, &NodeId::root(), &ji).unwrap();
        let direct = t.edge(&NodeId::root(), 1).unwrap()[(0, 0)]
            * t.edge(&"1".parse().unwrap(), 2).unwrap()[(0, 0)]
            * t.edge(&"1.2".parse().unwrap(), 1).unwrap()[(0, 0)];
        assert!((w[(0, 0)] - direct).abs() < 1e-15);
        assert!(path_weight(&t, &"2".parse().unwrap(), &ji).is_err());
    }

    #[test]
    fn extinction_possible_without_supercriticality_check() {
        let spec = scalar_spec(Branching::Random {
            support: vec![0, 2],
            probs: vec![0.5, 0.5],
        });
        let mut empty = 0;
        let mut rng = seeded(3);
        for _ in 0..400 {
            let t: WeightedTree<f64> = grow_tree(&spec, 6, &mut rng).unwrap();
            if t.shape.nodes_at(6).is_empty() {
                empty += 1;
            }
        }
        assert!(empty > 200);
    }

    #[test]
    fn memory_cap_is_enforced() {
        let spec = scalar_spec(Branching::Fixed(4));
        assert!(matches!(
            grow_tree::<f64, _>(&spec, 14, &mut seeded(1)),
            Err(Error::MemoryCap { .. })
        ));
    }
}
