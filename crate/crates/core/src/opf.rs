//! Optimum-path forests on the complete Euclidean graph.
//!
//! Path cost is the largest edge weight along the path (fmax). Propagation
//! roots a forest at the labeled seeds; every other node is conquered by the
//! seed offering the cheapest path and inherits its label.
//!
//! Ties are resolved by index everywhere: the node extracted next is the
//! unfinalized node of minimum cost with the lowest index, and a node only
//! changes owner on a strictly cheaper offer. A node whose minimax cost is
//! shared by several seeds therefore keeps the first owner that reached it
//! at that cost.

use std::io::{self, Write};

use crate::dataset::{Label, LabelVector};
use crate::matrix::{euclidean, Matrix};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimumPathForest {
    pub cost: Vec<f64>,
    pub predecessor: Vec<Option<usize>>,
    pub root: Vec<usize>,
    pub label: Vec<usize>,
}

impl OptimumPathForest {
    pub fn len(&self) -> usize {
        self.cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cost.is_empty()
    }

    pub fn is_seed(&self, i: usize) -> bool {
        self.predecessor[i].is_none() && self.root[i] == i
    }

    /// Seeds keep true provenance, conquered nodes are pseudo-labeled.
    pub fn label_vector(&self) -> LabelVector {
        LabelVector::from_entries(
            (0..self.len())
                .map(|i| {
                    if self.is_seed(i) {
                        Label::True(self.label[i])
                    } else {
                        Label::Pseudo(self.label[i])
                    }
                })
                .collect(),
        )
    }

    /// Checks the structural forest invariants against the features it was built on.
    pub fn validate(&self, features: &Matrix) -> std::result::Result<(), String> {
        let n = self.len();
        if features.rows() != n {
            return Err(format!("forest has {n} nodes, features {}", features.rows()));
        }
        for i in 0..n {
            match self.predecessor[i] {
                None => {
                    if self.cost[i] != 0.0 || self.root[i] != i {
                        return Err(format!("seed {i} must have cost 0 and be its own root"));
                    }
                }
                Some(p) => {
                    let expect = self.cost[p].max(euclidean(features.row(p), features.row(i)));
                    if self.cost[i] != expect {
                        return Err(format!(
                            "node {i}: cost {} != max(cost(pred {p}), edge) = {expect}",
                            self.cost[i]
                        ));
                    }
                    if self.root[i] != self.root[p] {
                        return Err(format!("node {i}: root differs from predecessor's"));
                    }
                }
            }
            if self.label[i] != self.label[self.root[i]] {
                return Err(format!("node {i}: label differs from its root's"));
            }
            let mut cur = i;
            let mut steps = 0;
            while let Some(p) = self.predecessor[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(format!("node {i}: predecessor chain does not terminate"));
                }
            }
            if cur != self.root[i] {
                return Err(format!("node {i}: chain ends at {cur}, root is {}", self.root[i]));
            }
        }
        Ok(())
    }

    /// Diagnostic dump, `node,cost,pred,root,label`; a missing predecessor is `-1`.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "node,cost,pred,root,label")?;
        for i in 0..self.len() {
            let pred = self.predecessor[i].map_or(-1, |p| p as i64);
            writeln!(
                w,
                "{i},{},{pred},{},{}",
                self.cost[i], self.root[i], self.label[i]
            )?;
        }
        Ok(())
    }
}

/// Propagates the labels of `seeds` (every labeled entry is a seed) over the
/// complete Euclidean graph of `features`.
pub fn opfsemi_propagate(features: &Matrix, seeds: &LabelVector) -> Result<OptimumPathForest> {
    let n = features.rows();
    if seeds.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: seeds.len(),
        });
    }
    if let Some((row, column)) = features.first_non_finite() {
        return Err(Error::NonFinite { row, column });
    }
    let mut cost = vec![f64::INFINITY; n];
    let mut predecessor = vec![None; n];
    let mut root: Vec<usize> = (0..n).collect();
    let mut label = vec![usize::MAX; n];
    let mut any_seed = false;
    for i in 0..n {
        if let Some(c) = seeds.class(i) {
            cost[i] = 0.0;
            label[i] = c;
            any_seed = true;
        }
    }
    if !any_seed {
        return Err(Error::NoSeeds);
    }

    let mut done = vec![false; n];
    for _ in 0..n {
        let mut s = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if !done[i] && (s == usize::MAX || cost[i] < best) {
                s = i;
                best = cost[i];
            }
        }
        done[s] = true;
        let xs = features.row(s);
        for t in 0..n {
            if done[t] {
                continue;
            }
            let candidate = cost[s].max(euclidean(xs, features.row(t)));
            if candidate < cost[t] {
                cost[t] = candidate;
                predecessor[t] = Some(s);
                root[t] = root[s];
                label[t] = label[s];
            }
        }
    }
    Ok(OptimumPathForest {
        cost,
        predecessor,
        root,
        label,
    })
}

/// Output of the brute-force minimax oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimaxSolution {
    /// Minimax distance from each node to its nearest seed.
    pub cost: Vec<f64>,
    /// Label of the lowest-index seed attaining `cost`.
    pub label: Vec<usize>,
    /// Every seed attaining `cost`, ascending. A seed node lists only itself.
    pub optimal_seeds: Vec<Vec<usize>>,
    /// All-pairs minimax distances, row-major n×n.
    pub pairwise: Vec<f64>,
}

impl MinimaxSolution {
    /// Labels of all optimal seeds of node `i`, deduplicated.
    pub fn admissible_labels(&self, i: usize, seeds: &LabelVector) -> Vec<usize> {
        let mut out: Vec<usize> = self.optimal_seeds[i]
            .iter()
            .filter_map(|&s| seeds.class(s))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub const ORACLE_MAX_NODES: usize = 64;

/// All-pairs minimax distances by max/min Floyd–Warshall, then nearest-seed
/// labeling with ties to the lowest seed index. O(n³); `n <= 64`.
pub fn minimax_oracle(features: &Matrix, seeds: &LabelVector) -> Result<MinimaxSolution> {
    let n = features.rows();
    if n > ORACLE_MAX_NODES {
        return Err(Error::invalid(format!(
            "minimax oracle is limited to {ORACLE_MAX_NODES} nodes, got {n}"
        )));
    }
    if seeds.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: seeds.len(),
        });
    }
    let seed_idx = seeds.labeled_indices();
    if seed_idx.is_empty() {
        return Err(Error::NoSeeds);
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m[i * n + j] = euclidean(features.row(i), features.row(j));
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            let ik = m[i * n + k];
            for j in 0..n {
                let via = ik.max(m[k * n + j]);
                if via < m[i * n + j] {
                    m[i * n + j] = via;
                }
            }
        }
    }
    let mut cost = vec![0.0; n];
    let mut label = vec![0; n];
    let mut optimal_seeds = vec![Vec::new(); n];
    for x in 0..n {
        if let Some(c) = seeds.class(x) {
            label[x] = c;
            optimal_seeds[x] = vec![x];
            continue;
        }
        let best = seed_idx
            .iter()
            .map(|&s| m[s * n + x])
            .fold(f64::INFINITY, f64::min);
        let attaining: Vec<usize> = seed_idx
            .iter()
            .copied()
            .filter(|&s| m[s * n + x] == best)
            .collect();
        cost[x] = best;
        label[x] = seeds.class(attaining[0]).expect("seed is labeled");
        optimal_seeds[x] = attaining;
    }
    Ok(MinimaxSolution {
        cost,
        label,
        optimal_seeds,
        pairwise: m,
    })
}

/// Edge `(a, b, weight)` with `a < b`.
pub type Edge = (usize, usize, f64);

fn edge_less(a: &Edge, b: &Edge) -> bool {
    (a.2, a.0, a.1) < (b.2, b.0, b.1)
}

/// Minimum spanning tree of the complete Euclidean graph (Prim, O(n²)).
///
/// Edges are totally ordered by `(weight, a, b)`, so the tree is unique even
/// under distance ties. Edges are returned in the order Prim adds them.
pub fn mst(features: &Matrix) -> Result<Vec<Edge>> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::invalid("a spanning tree needs at least 2 nodes"));
    }
    let mut in_tree = vec![false; n];
    let mut best: Vec<Option<Edge>> = vec![None; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut newest = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let xv = features.row(newest);
        for u in 0..n {
            if in_tree[u] {
                continue;
            }
            let cand = (newest.min(u), newest.max(u), euclidean(xv, features.row(u)));
            if best[u].as_ref().is_none_or(|b| edge_less(&cand, b)) {
                best[u] = Some(cand);
            }
        }
        let mut pick: Option<(usize, Edge)> = None;
        for u in 0..n {
            if in_tree[u] {
                continue;
            }
            let e = best[u].expect("complete graph");
            if pick.as_ref().is_none_or(|(_, p)| edge_less(&e, p)) {
                pick = Some((u, e));
            }
        }
        let (u, e) = pick.expect("unvisited node remains");
        in_tree[u] = true;
        edges.push(e);
        newest = u;
    }
    Ok(edges)
}

/// For every node, the minimum over seeds of the largest edge on the tree
/// path to that seed.
pub fn tree_bottleneck_to_seeds(n: usize, tree: &[Edge], seeds: &[usize]) -> Vec<f64> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in tree {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let mut out = vec![f64::INFINITY; n];
    let mut bottleneck = vec![f64::NAN; n];
    let mut stack = Vec::new();
    for &s in seeds {
        bottleneck.fill(f64::NAN);
        bottleneck[s] = 0.0;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &(u, w) in &adj[v] {
                if bottleneck[u].is_nan() {
                    bottleneck[u] = bottleneck[v].max(w);
                    stack.push(u);
                }
            }
        }
        for (o, b) in out.iter_mut().zip(&bottleneck) {
            *o = o.min(*b);
        }
    }
    out
}

/// Supervised OPF classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct OpfSupModel {
    features: Matrix,
    labels: Vec<usize>,
    prototype: Vec<bool>,
    cost: Vec<f64>,
    assigned: Vec<usize>,
}

impl OpfSupModel {
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn prototypes(&self) -> Vec<usize> {
        (0..self.prototype.len())
            .filter(|&i| self.prototype[i])
            .collect()
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    /// Label each training node received from its prototype.
    pub fn assigned(&self) -> &[usize] {
        &self.assigned
    }

    /// Label of `argmin_s max(cost(s), |x_s - x|)`, ties to the lowest training index.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.features.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.features.cols(),
                got: x.len(),
            });
        }
        let mut best = f64::INFINITY;
        let mut winner = 0;
        for s in 0..self.features.rows() {
            let c = self.cost[s].max(euclidean(self.features.row(s), x));
            if c < best {
                best = c;
                winner = s;
            }
        }
        Ok(self.assigned[winner])
    }

    pub fn predict(&self, features: &Matrix) -> Result<LabelVector> {
        let mut out = LabelVector::unlabeled(features.rows());
        for i in 0..features.rows() {
            out.set(i, Label::Pseudo(self.classify(features.row(i))?));
        }
        Ok(out)
    }
}

/// Trains the supervised OPF: prototypes are the endpoints of MST edges that
/// join different classes, and the forest is grown from them with fmax.
pub fn opfsup_train(features: &Matrix, labels: &[usize]) -> Result<OpfSupModel> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if n == 0 || labels.iter().all(|&c| c == labels[0]) {
        return Err(Error::invalid("OPFSup needs at least two classes"));
    }
    let tree = mst(features)?;
    let mut prototype = vec![false; n];
    for &(a, b, _) in &tree {
        if labels[a] != labels[b] {
            prototype[a] = true;
            prototype[b] = true;
        }
    }
    let mut seeds = LabelVector::unlabeled(n);
    for i in (0..n).filter(|&i| prototype[i]) {
        seeds.set(i, Label::True(labels[i]));
    }
    let forest = opfsemi_propagate(features, &seeds)?;
    Ok(OpfSupModel {
        features: features.clone(),
        labels: labels.to_vec(),
        prototype,
        cost: forest.cost,
        assigned: forest.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Matrix {
        Matrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn four_points_on_a_line() {
        let f = line(&[0.0, 3.0, 7.0, 10.0]);
        let mut seeds = LabelVector::unlabeled(4);
        seeds.set(0, Label::True(0));
        seeds.set(3, Label::True(1));
        let forest = opfsemi_propagate(&f, &seeds).unwrap();
        assert_eq!(forest.label, vec![0, 0, 1, 1]);
        assert_eq!(forest.cost, vec![0.0, 3.0, 3.0, 0.0]);
        forest.validate(&f).unwrap();
    }

    #[test]
    fn single_seed_labels_everything() {
        let f = line(&[5.0, 0.0, 1.0, 9.0, 2.0]);
        let mut seeds = LabelVector::unlabeled(5);
        seeds.set(1, Label::True(4));
        let forest = opfsemi_propagate(&f, &seeds).unwrap();
        assert!(forest.label.iter().all(|&l| l == 4));
        // Consecutive gaps along 0, 1, 2, 5, 9 are 1, 1, 3, 4.
        assert_eq!(forest.cost, vec![3.0, 0.0, 1.0, 4.0, 1.0]);
    }

    #[test]
    fn exact_tie_keeps_first_owner() {
        // Node 1 sits halfway between the seeds; seed 0 is extracted first
        // and the later, equal offer from seed 2 is not strictly better.
        let f = line(&[0.0, 1.0, 2.0]);
        let mut seeds = LabelVector::unlabeled(3);
        seeds.set(0, Label::True(0));
        seeds.set(2, Label::True(1));
        let forest = opfsemi_propagate(&f, &seeds).unwrap();
        assert_eq!(forest.label[1], 0);
        assert_eq!(forest.root[1], 0);
    }

    #[test]
    fn no_seed_is_an_error() {
        let f = line(&[0.0, 1.0]);
        assert!(matches!(
            opfsemi_propagate(&f, &LabelVector::unlabeled(2)),
            Err(Error::NoSeeds)
        ));
        assert!(matches!(
            opfsemi_propagate(&f, &LabelVector::unlabeled(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_points_propagate_at_parent_cost() {
        let f = line(&[0.0, 0.0, 4.0]);
        let mut seeds = LabelVector::unlabeled(3);
        seeds.set(2, Label::True(1));
        let forest = opfsemi_propagate(&f, &seeds).unwrap();
        assert_eq!(forest.cost, vec![4.0, 4.0, 0.0]);
        forest.validate(&f).unwrap();
    }

    #[test]
    fn oracle_single_edge_and_triangle() {
        let f = line(&[0.0, 2.5]);
        let mut seeds = LabelVector::unlabeled(2);
        seeds.set(0, Label::True(0));
        assert_eq!(minimax_oracle(&f, &seeds).unwrap().cost[1], 2.5);

        // |ab| = 1, |bc| = 2, |ac| = 3 on a line: a=0, b=1, c=3.
        let tri = line(&[0.0, 1.0, 3.0]);
        let mut seeds = LabelVector::unlabeled(3);
        seeds.set(0, Label::True(0));
        let sol = minimax_oracle(&tri, &seeds).unwrap();
        assert_eq!(sol.pairwise[2], 2.0);
        assert_eq!(sol.cost[2], 2.0);
    }

    #[test]
    fn oracle_rejects_large_inputs() {
        let f = Matrix::zeros(65, 1);
        let mut seeds = LabelVector::unlabeled(65);
        seeds.set(0, Label::True(0));
        assert!(minimax_oracle(&f, &seeds).is_err());
    }

    #[test]
    fn colinear_mst() {
        let mut e = mst(&line(&[0.0, 1.0, 2.0])).unwrap();
        e.sort_by_key(|x| (x.0, x.1));
        assert_eq!(e, vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn mst_tie_prefers_lexicographically_smaller_edge() {
        // Equilateral-ish: all three edges have length 1 exactly.
        let f = line(&[0.0, 1.0, 1.0]);
        // d(0,1)=1, d(0,2)=1, d(1,2)=0 -> (1,2,0) then (0,1,1) beats (0,2,1).
        let mut e = mst(&f).unwrap();
        e.sort_by_key(|x| (x.0, x.1));
        assert_eq!(e, vec![(0, 1, 1.0), (1, 2, 0.0)]);
    }

    #[test]
    fn opfsup_two_blobs_have_two_prototypes() {
        let f = Matrix::from_rows(&[
            [0.0, 0.0],
            [0.5, 0.1],
            [0.2, 0.4],
            [10.0, 10.0],
            [10.3, 9.8],
            [9.9, 10.4],
        ])
        .unwrap();
        let labels = [0, 0, 0, 1, 1, 1];
        let model = opfsup_train(&f, &labels).unwrap();
        // The only cross-class MST edge joins the closest pair (0.2,0.4)-(9.9,10.4)
        // or its neighbours; either way exactly one node per class.
        let protos = model.prototypes();
        assert_eq!(protos.len(), 2);
        assert_ne!(labels[protos[0]], labels[protos[1]]);
        assert_eq!(model.classify(&[0.1, 0.1]).unwrap(), 0);
        assert_eq!(model.classify(&[10.0, 10.1]).unwrap(), 1);
        assert!(matches!(
            model.classify(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn opfsup_rejects_single_class() {
        let f = line(&[0.0, 1.0, 2.0]);
        assert!(opfsup_train(&f, &[3, 3, 3]).is_err());
    }

    #[test]
    fn opfsup_equal_offers_go_to_lower_training_index() {
        // Prototypes 1 (class 0) and 2 (class 1); a query at 1.5 is equidistant.
        let f = line(&[0.0, 1.0, 2.0, 3.0]);
        let model = opfsup_train(&f, &[0, 0, 1, 1]).unwrap();
        assert_eq!(model.prototypes(), vec![1, 2]);
        assert_eq!(model.classify(&[1.5]).unwrap(), 0);
    }

    #[test]
    fn forest_csv_dump() {
        let f = line(&[0.0, 2.0]);
        let mut seeds = LabelVector::unlabeled(2);
        seeds.set(0, Label::True(1));
        let forest = opfsemi_propagate(&f, &seeds).unwrap();
        let mut buf = Vec::new();
        forest.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "node,cost,pred,root,label\n0,0,-1,0,1\n1,2,0,0,1\n"
        );
    }
}
