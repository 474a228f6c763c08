//! Subset and partition construction: uniform random subsets, farthest point
//! clustering, and recursive projection clustering.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Random,
    Fpc,
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selector::Random => f.write_str("random"),
            Selector::Fpc => f.write_str("fpc"),
        }
    }
}

/// `m` distinct training-row indices and how they were chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetChoice {
    pub indices: Vec<usize>,
    pub method: Selector,
    pub seed: u64,
}

impl SubsetChoice {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// FPC centres plus the nearest-centre assignment of every point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FpcClustering {
    pub centres: SubsetChoice,
    /// Position in `centres.indices` of the nearest centre, per training row.
    pub assignment: Vec<usize>,
}

pub(crate) fn check_m(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(GprError::SubsetSize { m, n });
    }
    Ok(())
}

/// Uniform sample without replacement, returned in ascending index order.
pub fn select_random(n: usize, m: usize, seed: u64) -> Result<SubsetChoice> {
    check_m(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = index::sample(&mut rng, n, m).into_vec();
    indices.sort_unstable();
    Ok(SubsetChoice {
        indices,
        method: Selector::Random,
        seed,
    })
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gonzalez farthest point clustering in `O(mnD)`.
///
/// The first centre is a seeded random row; every later centre is the row
/// farthest from its nearest existing centre (lowest index on ties).
pub fn select_fpc(x: ArrayView2<f64>, m: usize, seed: u64) -> Result<FpcClustering> {
    let n = x.nrows();
    check_m(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);

    let mut centres = Vec::with_capacity(m);
    let mut nearest = vec![f64::INFINITY; n];
    let mut assignment = vec![0usize; n];
    let mut chosen = vec![false; n];
    let mut next = first;
    for c in 0..m {
        centres.push(next);
        chosen[next] = true;
        let centre = x.row(next);
        for i in 0..n {
            let d = sq_dist(x.row(i), centre);
            if d < nearest[i] {
                nearest[i] = d;
                assignment[i] = c;
            }
        }
        if c + 1 == m {
            break;
        }
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if !chosen[i] && nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        next = best;
    }
    Ok(FpcClustering {
        centres: SubsetChoice {
            indices: centres,
            method: Selector::Fpc,
            seed,
        },
        assignment,
    })
}

/// Runs either selector, discarding the FPC assignment.
pub fn select_subset(x: ArrayView2<f64>, m: usize, selector: Selector, seed: u64) -> Result<SubsetChoice> {
    match selector {
        Selector::Random => select_random(x.nrows(), m, seed),
        Selector::Fpc => Ok(select_fpc(x, m, seed)?.centres),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RpcNode {
    /// Points whose projection onto `b − a` (relative to `a`) is `<= threshold` go left.
    Split {
        a: Vec<f64>,
        b: Vec<f64>,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: usize,
    },
}

/// Binary tree of median splits along random point-pair directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcTree {
    nodes: Vec<RpcNode>,
    leaves: Vec<Vec<usize>>,
    dim: usize,
    max_leaf: usize,
    seed: u64,
}

const PIVOT_RETRIES: usize = 10;

pub(crate) fn projection(x: ArrayView1<f64>, a: &[f64], b: &[f64]) -> f64 {
    let mut t = 0.0;
    for d in 0..a.len() {
        t += (x[d] - a[d]) * (b[d] - a[d]);
    }
    t
}

struct RpcBuilder<'a> {
    x: ArrayView2<'a, f64>,
    m: usize,
    rng: ChaCha8Rng,
    nodes: Vec<RpcNode>,
    leaves: Vec<Vec<usize>>,
}

impl RpcBuilder<'_> {
    fn build(&mut self, members: Vec<usize>) -> usize {
        let id = self.nodes.len();
        if members.len() <= self.m {
            self.nodes.push(RpcNode::Leaf {
                leaf: self.leaves.len(),
            });
            self.leaves.push(members);
            return id;
        }
        // placeholder, patched once the children exist
        self.nodes.push(RpcNode::Leaf { leaf: usize::MAX });
        let c = members.len();
        let left_size = c.div_ceil(2);

        let mut pivots = None;
        for _ in 0..PIVOT_RETRIES {
            let i = self.rng.random_range(0..c);
            let mut j = self.rng.random_range(0..c - 1);
            if j >= i {
                j += 1;
            }
            let (pa, pb) = (self.x.row(members[i]), self.x.row(members[j]));
            if pa != pb {
                pivots = Some((pa.to_vec(), pb.to_vec()));
                break;
            }
        }

        let (a, b, threshold, left, right) = match pivots {
            Some((a, b)) => {
                let mut keyed: Vec<(f64, usize)> = members
                    .iter()
                    .map(|&i| (projection(self.x.row(i), &a, &b), i))
                    .collect();
                keyed.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
                let threshold = if c % 2 == 1 {
                    keyed[c / 2].0
                } else {
                    let (lo, hi) = (keyed[c / 2 - 1].0, keyed[c / 2].0);
                    // the midpoint of adjacent floats may round up to `hi`
                    let mid = 0.5 * (lo + hi);
                    if mid < hi {
                        mid
                    } else {
                        lo
                    }
                };
                let left: Vec<usize> = keyed[..left_size].iter().map(|p| p.1).collect();
                let right: Vec<usize> = keyed[left_size..].iter().map(|p| p.1).collect();
                (a, b, threshold, left, right)
            }
            None => {
                // coincident pivots: split by index order, descent always goes left
                log::debug!("rpc: degenerate pivots in cluster of {c}, splitting by index");
                let mut sorted = members;
                sorted.sort_unstable();
                let right = sorted.split_off(left_size);
                let origin = vec![0.0; self.x.ncols()];
                (origin.clone(), origin, 0.0, sorted, right)
            }
        };
        let left_id = self.build(left);
        let right_id = self.build(right);
        self.nodes[id] = RpcNode::Split {
            a,
            b,
            threshold,
            left: left_id,
            right: right_id,
        };
        id
    }
}

/// Recursive projection clustering down to leaves of at most `m` points.
pub fn build_rpc(x: ArrayView2<f64>, m: usize, seed: u64) -> Result<RpcTree> {
    if m == 0 {
        return Err(GprError::SubsetSize { m, n: x.nrows() });
    }
    let mut builder = RpcBuilder {
        x,
        m,
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    builder.build((0..x.nrows()).collect());
    Ok(RpcTree {
        nodes: builder.nodes,
        leaves: builder.leaves,
        dim: x.ncols(),
        max_leaf: m,
        seed,
    })
}

impl RpcTree {
    pub fn leaves(&self) -> &[Vec<usize>] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn nodes(&self) -> &[RpcNode] {
        &self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_leaf_size(&self) -> usize {
        self.max_leaf
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[RpcNode], id: usize) -> usize {
            match &nodes[id] {
                RpcNode::Leaf { .. } => 0,
                RpcNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Descends the split tree; projections equal to a threshold go left.
    pub fn assign(&self, x: ArrayView1<f64>) -> Result<usize> {
        if x.len() != self.dim {
            return Err(GprError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                RpcNode::Leaf { leaf } => return Ok(*leaf),
                RpcNode::Split {
                    a,
                    b,
                    threshold,
                    left,
                    right,
                } => {
                    id = if projection(x, a, b) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

pub fn rpc_assign(tree: &RpcTree, x: ArrayView1<f64>) -> Result<usize> {
    tree.assign(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn random_full_subset_is_everything() {
        let s = select_random(7, 7, 3).unwrap();
        assert_eq!(s.indices, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn random_is_deterministic_and_distinct() {
        let a = select_random(100, 30, 11).unwrap();
        let b = select_random(100, 30, 11).unwrap();
        assert_eq!(a, b);
        let mut d = a.indices.clone();
        d.dedup();
        assert_eq!(d.len(), 30);
        assert!(a.indices.iter().all(|&i| i < 100));
    }

    #[test]
    fn oversized_subset_errors() {
        assert!(select_random(3, 4, 0).is_err());
        assert!(select_random(3, 0, 0).is_err());
        let x = Array2::<f64>::zeros((3, 1));
        assert!(select_fpc(x.view(), 4, 0).is_err());
    }

    #[test]
    fn fpc_single_centre() {
        let x = array![[0.0], [1.0], [2.0], [10.0]];
        let c = select_fpc(x.view(), 1, 5).unwrap();
        let first = ChaCha8Rng::seed_from_u64(5).random_range(0..4);
        assert_eq!(c.centres.indices, vec![first]);
        assert!(c.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn fpc_picks_far_point_on_a_line() {
        let x = array![[0.0], [1.0], [2.0], [10.0]];
        // find a seed whose first draw is row 0
        let seed = (0..1000u64)
            .find(|&s| ChaCha8Rng::seed_from_u64(s).random_range(0..4) == 0)
            .unwrap();
        let c = select_fpc(x.view(), 2, seed).unwrap();
        assert_eq!(c.centres.indices, vec![0, 3]);
        assert_eq!(c.assignment, vec![0, 0, 0, 1]);
    }

    #[test]
    fn fpc_with_duplicates_stays_distinct() {
        let x = array![[0.0], [0.0], [0.0], [1.0]];
        let c = select_fpc(x.view(), 4, 1).unwrap();
        let mut idx = c.centres.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rpc_single_leaf_when_small() {
        let x = array![[0.0], [1.0], [2.0]];
        let t = build_rpc(x.view(), 3, 0).unwrap();
        assert_eq!(t.num_leaves(), 1);
        assert_eq!(t.leaves()[0], vec![0, 1, 2]);
        assert_eq!(t.assign(array![100.0].view()).unwrap(), 0);
    }

    #[test]
    fn rpc_power_of_two_balance() {
        let x = Array2::from_shape_fn((8, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 * 0.37 + i as f64 * 0.01);
        let t = build_rpc(x.view(), 2, 4).unwrap();
        assert_eq!(t.num_leaves(), 4);
        assert!(t.leaves().iter().all(|l| l.len() == 2));
        assert_eq!(t.depth(), 2);
        for (leaf, members) in t.leaves().iter().enumerate() {
            for &i in members {
                assert_eq!(t.assign(x.row(i)).unwrap(), leaf);
            }
        }
    }

    #[test]
    fn rpc_identical_points_split_by_index() {
        let x = Array2::<f64>::ones((5, 2));
        let t = build_rpc(x.view(), 2, 9).unwrap();
        let mut all: Vec<usize> = t.leaves().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(t.leaves().iter().all(|l| l.len() <= 2));
        assert_eq!(t.leaves()[0], vec![0, 1]);
    }

    #[test]
    fn rpc_assign_dimension_mismatch() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]];
        let t = build_rpc(x.view(), 1, 0).unwrap();
        assert!(t.assign(array![0.0].view()).is_err());
    }
}
