//! Directed communication topology among the follower inverters and the
//! pinned leader, plus the derived graph matrices used by every control
//! law and monitor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SimError};

/// Communication graph over `n` followers with nonnegative edge weights
/// `a_ij` (information flows j -> i when `a_ij > 0`) and per-follower
/// pinning gains to the leader reference.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n: usize,
    /// row-major weights; row i = incoming edges of follower i
    adjacency: Vec<f64>,
    pinning: Vec<f64>,
}

impl CommGraph {
    /// Validates and builds a graph from row-major adjacency weights and
    /// pinning gains.
    ///
    /// Rejects self-loops, negative weights, and an all-zero pinning
    /// vector (with no pinned node the leader cannot reach anyone).
    pub fn new(adjacency: Vec<Vec<f64>>, pinning: Vec<f64>) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(SimError::InvalidGraph("empty adjacency".into()));
        }
        if pinning.len() != n {
            return Err(SimError::InvalidGraph(format!(
                "pinning length {} != follower count {}",
                pinning.len(),
                n
            )));
        }
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(SimError::InvalidGraph(format!(
                    "adjacency row {i} has length {} (expected {n})",
                    row.len()
                )));
            }
            for (j, &w) in row.iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(SimError::InvalidGraph(format!(
                        "a[{i}][{j}] = {w} must be finite and >= 0"
                    )));
                }
                if i == j && w != 0.0 {
                    return Err(SimError::InvalidGraph(format!(
                        "self-loop a[{i}][{i}] = {w} (diagonal must be zero)"
                    )));
                }
            }
        }
        for (i, &g) in pinning.iter().enumerate() {
            if !g.is_finite() || g < 0.0 {
                return Err(SimError::InvalidGraph(format!(
                    "pinning g[{i}] = {g} must be finite and >= 0"
                )));
            }
        }
        if pinning.iter().all(|&g| g == 0.0) {
            return Err(SimError::InvalidGraph(
                "at least one pinning gain must be positive".into(),
            ));
        }
        let adjacency = adjacency.into_iter().flatten().collect();
        Ok(Self { n, adjacency, pinning })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    /// Incoming-edge weights of follower i.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.adjacency[i * self.n..(i + 1) * self.n]
    }

    pub fn pinning(&self, i: usize) -> f64 {
        self.pinning[i]
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.adjacency)
    }
}

/// In-degree, Laplacian, and pinned Laplacian matrices of a [`CommGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMatrices {
    pub in_degree: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    /// Laplacian plus pinning-gain diagonal; nonsingular whenever the
    /// leader reaches every follower.
    pub lg: DMatrix<f64>,
}

/// Assembles the in-degree, Laplacian, and pinned-Laplacian matrices.
/// Deterministic and pure.
pub fn build_matrices(g: &CommGraph) -> GraphMatrices {
    let n = g.n;
    let mut in_degree = DMatrix::zeros(n, n);
    for i in 0..n {
        in_degree[(i, i)] = g.row(i).iter().sum::<f64>();
    }
    let laplacian = &in_degree - g.adjacency();
    let mut lg = laplacian.clone();
    for i in 0..n {
        lg[(i, i)] += g.pinning[i];
    }
    GraphMatrices { in_degree, laplacian, lg }
}

/// True iff every follower is reachable from the virtual leader: BFS
/// starting at the pinned nodes, expanding along edges j -> i (a_ij > 0).
pub fn has_path_from_leader(g: &CommGraph) -> bool {
    let n = g.n;
    let mut reached = vec![false; n];
    let mut queue: Vec<usize> = (0..n).filter(|&i| g.pinning[i] > 0.0).collect();
    for &i in &queue {
        reached[i] = true;
    }
    while let Some(j) = queue.pop() {
        for i in 0..n {
            if !reached[i] && g.weight(i, j) != 0.0 {
                reached[i] = true;
                queue.push(i);
            }
        }
    }
    reached.iter().all(|&r| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// The four-inverter ring used throughout: 1-2-3-4-1, leader pinned
    /// at inverter 1.
    pub(crate) fn ring4() -> CommGraph {
        CommGraph::new(
            vec![
                vec![0., 1., 0., 1.],
                vec![1., 0., 1., 0.],
                vec![0., 1., 0., 1.],
                vec![1., 0., 1., 0.],
            ],
            vec![1., 0., 0., 0.],
        )
        .unwrap()
    }

    /// Independent determinant oracle: cofactor expansion along row 0.
    fn det_cofactor(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        if n == 1 {
            return m[(0, 0)];
        }
        let mut acc = 0.0;
        for j in 0..n {
            let minor = m.clone().remove_row(0).remove_column(j);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * m[(0, j)] * det_cofactor(&minor);
        }
        acc
    }

    #[test]
    fn ring_matrices_match_hand_arithmetic() {
        let m = build_matrices(&ring4());
        // L row 1 = (2, -1, 0, -1), L_G row 1 = (3, -1, 0, -1)
        assert_eq!(m.laplacian.row(0).iter().copied().collect::<Vec<_>>(), vec![2., -1., 0., -1.]);
        assert_eq!(m.lg.row(0).iter().copied().collect::<Vec<_>>(), vec![3., -1., 0., -1.]);
        // L row sums are zero exactly for integer weights
        for i in 0..4 {
            assert_eq!(m.laplacian.row(i).sum(), 0.0);
        }
    }

    #[test]
    fn empty_graph_two_pinned() {
        let g = CommGraph::new(vec![vec![0., 0.], vec![0., 0.]], vec![1., 1.]).unwrap();
        let m = build_matrices(&g);
        assert_eq!(m.laplacian, DMatrix::zeros(2, 2));
        assert_eq!(m.lg, DMatrix::from_diagonal(&DVector::from_vec(vec![1., 1.])));
    }

    #[test]
    fn strongly_connected_digraph_has_nonsingular_lg() {
        // random-looking 4-node strongly connected digraph, g1 = 1
        let g = CommGraph::new(
            vec![
                vec![0.0, 0.7, 0.0, 1.3],
                vec![0.4, 0.0, 0.0, 0.0],
                vec![0.0, 2.1, 0.0, 0.6],
                vec![0.9, 0.0, 1.1, 0.0],
            ],
            vec![1., 0., 0., 0.],
        )
        .unwrap();
        assert!(has_path_from_leader(&g));
        let m = build_matrices(&g);
        let det = det_cofactor(&m.lg);
        assert!(det.abs() > 1e-12 * m.lg.norm().powi(4), "det = {det}");
        // cross-check the oracle against nalgebra
        assert_relative_eq!(det, m.lg.determinant(), max_relative = 1e-12);
    }

    #[test]
    fn reachability_cases() {
        assert!(has_path_from_leader(&ring4()));

        let isolated =
            CommGraph::new(vec![vec![0.; 4], vec![0.; 4], vec![0.; 4], vec![0.; 4]], vec![1., 0., 0., 0.])
                .unwrap();
        assert!(!has_path_from_leader(&isolated));

        // chain 1 -> 2 -> 3 -> 4: a_21 = a_32 = a_43 = 1 (BFS by hand: 1, 2, 3, 4)
        let chain = CommGraph::new(
            vec![
                vec![0., 0., 0., 0.],
                vec![1., 0., 0., 0.],
                vec![0., 1., 0., 0.],
                vec![0., 0., 1., 0.],
            ],
            vec![1., 0., 0., 0.],
        )
        .unwrap();
        assert!(has_path_from_leader(&chain));
    }

    #[test]
    fn rejects_invalid_graphs() {
        assert!(CommGraph::new(vec![vec![0., -1.], vec![1., 0.]], vec![1., 0.]).is_err());
        assert!(CommGraph::new(vec![vec![0.5, 1.], vec![1., 0.]], vec![1., 0.]).is_err());
        assert!(CommGraph::new(vec![vec![0., 1.], vec![1., 0.]], vec![0., 0.]).is_err());
        assert!(CommGraph::new(vec![vec![0., 1.], vec![1., 0.]], vec![1.]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_graph() -> impl Strategy<Value = CommGraph> {
            // 4-node graphs with weights in {0, 0.5, 1, 2} and one pinned node
            let w = prop_oneof![Just(0.0), Just(0.5), Just(1.0), Just(2.0)];
            (proptest::collection::vec(w, 12), 0usize..4).prop_map(|(ws, pin)| {
                let mut adj = vec![vec![0.0; 4]; 4];
                let mut k = 0;
                for i in 0..4 {
                    for j in 0..4 {
                        if i != j {
                            adj[i][j] = ws[k];
                            k += 1;
                        }
                    }
                }
                let mut pinning = vec![0.0; 4];
                pinning[pin] = 1.0;
                CommGraph::new(adj, pinning).unwrap()
            })
        }

        proptest! {
            #[test]
            fn laplacian_annihilates_ones(g in arb_graph()) {
                let m = build_matrices(&g);
                let ones = DVector::from_element(4, 1.0);
                let res = &m.laplacian * ones;
                for v in res.iter() {
                    prop_assert!(v.abs() < 1e-12);
                }
            }

            #[test]
            fn reachable_implies_nonsingular(g in arb_graph()) {
                if has_path_from_leader(&g) {
                    let m = build_matrices(&g);
                    let guard = 1e-12 * m.lg.norm().powi(4);
                    prop_assert!(m.lg.determinant().abs() > guard);
                }
            }

            #[test]
            fn build_is_deterministic(g in arb_graph()) {
                prop_assert_eq!(build_matrices(&g), build_matrices(&g));
            }
        }
    }
}
