use std::collections::HashMap;

use super::tree::{path_weight, NodeId, WeightedTree};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Norm, Vector};
use crate::scalar::Real;

/// Leaf values `X_v` for the nodes of the bottom level.
pub type Leaves<T> = HashMap<NodeId, Vector<T>>;

fn add<T: Real>(acc: &mut [T], v: &[T]) {
    acc.iter_mut().zip(v).for_each(|(a, &b)| *a = *a + b);
}

fn leaf<'a, T>(leaves: &'a Leaves<T>, id: &NodeId) -> Result<&'a Vector<T>> {
    leaves
        .get(id)
        .ok_or_else(|| Error::Domain(format!("missing leaf value for node {id}")))
}

fn check_depth<T: Real>(tree: &WeightedTree<T>, root: &NodeId, levels: usize) -> Result<()> {
    if !tree.contains(root) {
        return Err(Error::Domain(format!("node {root} is not in the tree")));
    }
    if root.len() + levels > tree.depth() {
        return Err(Error::Domain(format!(
            "need depth {} below the root but the tree has depth {}",
            root.len() + levels,
            tree.depth()
        )));
    }
    Ok(())
}

/// `[Y_levels]_root = sum_{|v| < levels} Pi_{root, v} Q_v + sum_{|v| = levels} Pi_{root, v} X_v`,
/// with `v` ranging over the subtree of `root` and depths measured from it.
pub fn subtree_y<T: Real>(
    tree: &WeightedTree<T>,
    root: &NodeId,
    levels: usize,
    leaves: &Leaves<T>,
) -> Result<Vector<T>> {
    check_depth(tree, root, levels)?;
    let d = tree.require(root)?.q.len();
    let mut acc: Vector<T> = smallvec::smallvec![T::zero(); d];
    let mut stack: Vec<(NodeId, Mat<T>)> = vec![(root.clone(), Mat::identity(d))];
    while let Some((v, pi)) = stack.pop() {
        if v.len() - root.len() == levels {
            add(&mut acc, &pi.mul_vec(leaf(leaves, &v)?));
            continue;
        }
        let fam = tree.require(&v)?;
        add(&mut acc, &pi.mul_vec(&fam.q));
        for (j, a) in fam.a.iter().enumerate() {
            stack.push((v.child(j as u32 + 1), pi.mul(a)));
        }
    }
    Ok(acc)
}

/// `Y_l` at the root.
pub fn evaluate_yl<T: Real>(
    tree: &WeightedTree<T>,
    l: usize,
    leaves: &Leaves<T>,
) -> Result<Vector<T>> {
    subtree_y(tree, &NodeId::root(), l, leaves)
}

fn recurse<T: Real>(
    tree: &WeightedTree<T>,
    v: &NodeId,
    levels: usize,
    leaves: &Leaves<T>,
) -> Result<Vector<T>> {
    if levels == 0 {
        return leaf(leaves, v).cloned();
    }
    let fam = tree.require(v)?;
    let mut acc = fam.q.clone();
    for (j, a) in fam.a.iter().enumerate() {
        let y = recurse(tree, &v.child(j as u32 + 1), levels - 1, leaves)?;
        add(&mut acc, &a.mul_vec(&y));
    }
    Ok(acc)
}

/// `Y_l` through the recursion `Y_l = sum_i A_i [Y_{l-1}]_i + Q`.
pub fn evaluate_yl_recursive<T: Real>(
    tree: &WeightedTree<T>,
    l: usize,
    leaves: &Leaves<T>,
) -> Result<Vector<T>> {
    check_depth(tree, &NodeId::root(), l)?;
    recurse(tree, &NodeId::root(), l, leaves)
}

/// `Z_{l, ik} = sum_{j != k} A_{i, j} [Y_{l-|i|-1}]_{ij} + Q_i`.
pub fn evaluate_z<T: Real>(
    tree: &WeightedTree<T>,
    l: usize,
    i: &NodeId,
    k: u32,
    leaves: &Leaves<T>,
) -> Result<Vector<T>> {
    if l <= i.len() {
        return Err(Error::Domain(format!(
            "need l > |i|, got l = {l} and |i| = {}",
            i.len()
        )));
    }
    let fam = tree.require(i)?;
    if k == 0 || k as usize > fam.n {
        return Err(Error::Domain(format!("node {i} has no child {k}")));
    }
    let mut acc = fam.q.clone();
    for (j, a) in fam.a.iter().enumerate() {
        if j as u32 + 1 == k {
            continue;
        }
        let y = subtree_y(tree, &i.child(j as u32 + 1), l - i.len() - 1, leaves)?;
        add(&mut acc, &a.mul_vec(&y));
    }
    Ok(acc)
}

/// Relative residual of `Y_l = Pi_i [Y_{l-|i|}]_i + sum_k Pi_{i|k-1} Z_{l, i|k}`.
pub fn decompose_check<T: Real>(
    tree: &WeightedTree<T>,
    i: &NodeId,
    l: usize,
    leaves: &Leaves<T>,
) -> Result<f64> {
    if l < i.len() {
        return Err(Error::Domain(format!(
            "need l >= |i|, got l = {l} and |i| = {}",
            i.len()
        )));
    }
    let lhs = evaluate_yl(tree, l, leaves)?;
    let pi = path_weight(tree, &NodeId::root(), i)?;
    let mut rhs = pi.mul_vec(&subtree_y(tree, i, l - i.len(), leaves)?);
    for k in 1..=i.len() {
        let anc = i.prefix(k - 1);
        let z = evaluate_z(tree, l, &anc, i.0[k - 1], leaves)?;
        add(
            &mut rhs,
            &path_weight(tree, &NodeId::root(), &anc)?.mul_vec(&z),
        );
    }
    let diff: Vector<T> = lhs.iter().zip(&rhs).map(|(&a, &b)| a - b).collect();
    Ok(Norm::L2.of(&diff).f64() / (1.0 + Norm::L2.of(&lhs).f64()))
}
