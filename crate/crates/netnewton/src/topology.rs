//! Undirected graphs and the consensus weight matrix `W = I - L/(d_max + 1)`.
//!
//! `L = D - A` is the combinatorial Laplacian and `d_max` the largest degree.
//! This rule makes `W` symmetric and doubly stochastic with
//! `null(I - W) = span{1}` exactly when the graph is connected, which is what
//! the penalized objective's consensus term relies on.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::report::{CheckResult, ValidationReport};
use crate::{Error, Result};

/// Node-count cap for parsed edge lists, so hostile input cannot force a
/// gigantic allocation before any edge is read.
const MAX_PARSED_NODES: usize = 1_000_000;

/// Retry budget for resampling Erdős–Rényi graphs until one is connected.
const ER_RETRY_BUDGET: usize = 1000;

/// Eigenvalue tolerance for deciding the nullspace dimension of `I - W`.
const CONNECTIVITY_EIG_TOL: f64 = 1e-9;

/// Supported graph families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    Complete,
    Ring,
    Path,
    /// Circulant graph: each node links to the `k/2` nearest nodes on each
    /// side of the cycle (`k` even), giving a `k`-regular graph.
    CyclicKRegular(usize),
    /// G(n, p) resampled until connected.
    ErdosRenyi(f64),
    /// Loaded from an edge list rather than generated.
    Custom,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::Complete => write!(f, "complete"),
            GraphKind::Ring => write!(f, "ring"),
            GraphKind::Path => write!(f, "path"),
            GraphKind::CyclicKRegular(k) => write!(f, "cyclic_{k}_regular"),
            GraphKind::ErdosRenyi(p) => write!(f, "erdos_renyi_{p}"),
            GraphKind::Custom => write!(f, "custom"),
        }
    }
}

/// Simple undirected graph with canonical `(small, large)` edge storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    kind: GraphKind,
}

impl Graph {
    fn from_edges(n: usize, edges: BTreeSet<(usize, usize)>, kind: GraphKind) -> Graph {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Graph {
            n,
            edges,
            neighbors,
            kind,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    /// Serializes to the edge-list text format: a header line `n <count>`
    /// followed by one 0-indexed `i j` pair per line, each edge once with
    /// `i < j`.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for (i, j) in &self.edges {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }

    /// Parses the edge-list text format produced by [`Graph::to_edge_list`].
    ///
    /// Blank lines are ignored. Self-loops, duplicate edges, out-of-range
    /// endpoints, and a missing or malformed header are rejected with the
    /// offending line number. Connectivity is not required here; validate it
    /// separately if the graph feeds a consensus matrix.
    pub fn parse_edge_list(text: &str) -> Result<Graph> {
        let mut n: Option<usize> = None;
        let mut edges = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            match n {
                None => {
                    if tokens.next() != Some("n") {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "expected header line `n <count>`".into(),
                        });
                    }
                    let count: usize = parse_token(tokens.next(), line_no, "node count")?;
                    if tokens.next().is_some() {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "trailing tokens after header".into(),
                        });
                    }
                    if count == 0 || count > MAX_PARSED_NODES {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!(
                                "node count must be in 1..={MAX_PARSED_NODES}, got {count}"
                            ),
                        });
                    }
                    n = Some(count);
                }
                Some(count) => {
                    let i: usize = parse_token(tokens.next(), line_no, "edge endpoint")?;
                    let j: usize = parse_token(tokens.next(), line_no, "edge endpoint")?;
                    if tokens.next().is_some() {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "expected exactly two endpoints per line".into(),
                        });
                    }
                    if i == j {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("self-loop at node {i}"),
                        });
                    }
                    if i >= count || j >= count {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("endpoint out of range for n={count}"),
                        });
                    }
                    if !edges.insert((i.min(j), i.max(j))) {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("duplicate edge {} {}", i.min(j), i.max(j)),
                        });
                    }
                }
            }
        }
        match n {
            Some(count) => Ok(Graph::from_edges(count, edges, GraphKind::Custom)),
            None => Err(Error::Parse {
                line: 1,
                message: "empty input: missing `n <count>` header".into(),
            }),
        }
    }
}

fn parse_token(token: Option<&str>, line: usize, what: &str) -> Result<usize> {
    let token = token.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {what}"),
    })?;
    token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{token}`"),
    })
}

/// Builds a connected graph of the requested kind.
///
/// The seed only matters for `ErdosRenyi`; the other kinds are
/// deterministic in `n`. `n = 1` is allowed for `Complete` and `Path` to
/// support single-agent runs; the other kinds need at least a cycle.
pub fn build_graph(kind: GraphKind, n: usize, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Topology("graph needs at least one node".into()));
    }
    let mut edges = BTreeSet::new();
    match kind {
        GraphKind::Complete => {
            for i in 0..n {
                for j in (i + 1)..n {
                    edges.insert((i, j));
                }
            }
        }
        GraphKind::Path => {
            for i in 1..n {
                edges.insert((i - 1, i));
            }
        }
        GraphKind::Ring => {
            if n < 2 {
                return Err(Error::Topology("ring needs n >= 2".into()));
            }
            for i in 0..n {
                let j = (i + 1) % n;
                edges.insert((i.min(j), i.max(j)));
            }
        }
        GraphKind::CyclicKRegular(k) => {
            if k == 0 || k % 2 != 0 {
                return Err(Error::Topology(format!(
                    "cyclic regular graph needs even k >= 2, got {k}"
                )));
            }
            if n < k + 1 {
                return Err(Error::Topology(format!(
                    "cyclic {k}-regular graph needs n >= {}, got {n}",
                    k + 1
                )));
            }
            for i in 0..n {
                for d in 1..=(k / 2) {
                    let j = (i + d) % n;
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
        GraphKind::ErdosRenyi(p) => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Topology(format!(
                    "edge probability must be in (0, 1], got {p}"
                )));
            }
            if n < 2 {
                return Err(Error::Topology("erdos_renyi needs n >= 2".into()));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for _ in 0..ER_RETRY_BUDGET {
                edges.clear();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.gen::<f64>() < p {
                            edges.insert((i, j));
                        }
                    }
                }
                let candidate = Graph::from_edges(n, edges.clone(), kind);
                if candidate.is_connected() {
                    return Ok(candidate);
                }
            }
            return Err(Error::Topology(format!(
                "no connected G({n}, {p}) sample within {ER_RETRY_BUDGET} attempts"
            )));
        }
        GraphKind::Custom => {
            return Err(Error::Topology(
                "custom graphs come from parse_edge_list, not build_graph".into(),
            ));
        }
    }
    Ok(Graph::from_edges(n, edges, kind))
}

/// The consensus weight matrix of a graph together with its realized
/// diagonal bounds `delta = min_i W_ii` and `big_delta = max_i W_ii`.
#[derive(Debug, Clone)]
pub struct ConsensusMatrix {
    w: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
    delta: f64,
    big_delta: f64,
    d_max: usize,
}

impl ConsensusMatrix {
    /// Wraps an explicit matrix and adjacency, recomputing the diagonal
    /// bounds from the realized entries. Only shape consistency is enforced,
    /// so deliberately broken matrices can be constructed and then fed to
    /// [`validate_consensus`].
    pub fn from_matrix(w: DMatrix<f64>, neighbors: Vec<Vec<usize>>) -> Result<ConsensusMatrix> {
        let n = neighbors.len();
        if w.nrows() != n || w.ncols() != n {
            return Err(Error::Topology(format!(
                "matrix is {}x{} but adjacency lists {} nodes",
                w.nrows(),
                w.ncols(),
                n
            )));
        }
        if n == 0 {
            return Err(Error::Topology("consensus matrix needs n >= 1".into()));
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if j >= n || j == i {
                    return Err(Error::Topology(format!(
                        "bad neighbor {j} listed for node {i}"
                    )));
                }
            }
        }
        let delta = (0..n).map(|i| w[(i, i)]).fold(f64::INFINITY, f64::min);
        let big_delta = (0..n).map(|i| w[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
        let d_max = neighbors.iter().map(Vec::len).max().unwrap_or(0);
        Ok(ConsensusMatrix {
            w,
            neighbors,
            delta,
            big_delta,
            d_max,
        })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.w[(i, i)]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Minimum diagonal entry (the paper's δ).
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Maximum diagonal entry (the paper's Δ).
    pub fn big_delta(&self) -> f64 {
        self.big_delta
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }
}

/// Builds `W = I - L/(d_max + 1)` for a graph.
///
/// Connectivity is the caller's responsibility (generated graphs always
/// qualify); [`validate_consensus`] reports a nullspace-dimension failure
/// for disconnected inputs.
pub fn build_consensus(g: &Graph) -> ConsensusMatrix {
    let n = g.n();
    let scale = 1.0 / (g.max_degree() as f64 + 1.0);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = 1.0 - g.degree(i) as f64 * scale;
    }
    for (i, j) in g.edges() {
        // Both orientations get the identical expression, so symmetry is exact.
        w[(i, j)] = scale;
        w[(j, i)] = scale;
    }
    let neighbors = (0..n).map(|i| g.neighbors(i).to_vec()).collect();
    ConsensusMatrix::from_matrix(w, neighbors).expect("shapes consistent by construction")
}

/// Checks every consensus-matrix invariant and reports measured residuals.
///
/// Checks: exact symmetry, row sums within 1e-12 of 1, entries in `[0, 1)`
/// (for `n = 1` the single diagonal entry is exactly 1 and allowed), the
/// sparsity pattern matching the adjacency plus diagonal, positive diagonal
/// bounds, and for the nullspace of `I - W` dimension exactly 1 at
/// eigenvalue tolerance 1e-9.
pub fn validate_consensus(cm: &ConsensusMatrix) -> ValidationReport {
    let n = cm.n();
    let w = cm.matrix();
    let mut report = ValidationReport::new();

    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((w[(i, j)] - w[(j, i)]).abs());
        }
    }
    report.push(CheckResult::from_residual("symmetry", asym, 0.0));

    let mut row_residual: f64 = 0.0;
    for i in 0..n {
        let sum: f64 = (0..n).map(|j| w[(i, j)]).sum();
        row_residual = row_residual.max((sum - 1.0).abs());
    }
    report.push(CheckResult::from_residual("row_sums", row_residual, 1e-12));

    let mut range_violation: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = w[(i, j)];
            if v < 0.0 {
                range_violation = range_violation.max(-v);
            }
            // n = 1 is the degenerate single-agent case where W = [1].
            let upper_ok = v < 1.0 || (n == 1 && v <= 1.0);
            if !upper_ok {
                range_violation = range_violation.max(v - 1.0).max(f64::EPSILON);
            }
        }
    }
    report.push(CheckResult::new(
        "entry_range",
        range_violation == 0.0,
        range_violation,
        0.0,
        "all W_ij in [0,1)",
    ));

    let mut pattern_ok = true;
    for i in 0..n {
        let adjacent: BTreeSet<usize> = cm.neighbors(i).iter().copied().collect();
        for j in 0..n {
            let expected_nonzero = i == j || adjacent.contains(&j);
            if (w[(i, j)] > 0.0) != expected_nonzero {
                pattern_ok = false;
            }
        }
    }
    report.push(CheckResult::new(
        "sparsity_pattern",
        pattern_ok,
        if pattern_ok { 0.0 } else { 1.0 },
        0.0,
        "W_ij > 0 iff adjacent or diagonal",
    ));

    let diag_ok = cm.delta() > 0.0 && (cm.big_delta() < 1.0 || n == 1);
    report.push(CheckResult::new(
        "diagonal_bounds",
        diag_ok,
        0.0,
        0.0,
        format!("delta={}, big_delta={}", cm.delta(), cm.big_delta()),
    ));

    // Nullspace of I - W must be exactly span{1}: one eigenvalue at 0, the
    // next strictly positive.
    let laplacian_like = DMatrix::identity(n, n) - w;
    let mut eigs: Vec<f64> = SymmetricEigen::new(laplacian_like)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("symmetric eigenvalues are finite"));
    let zero_residual = eigs.first().map(|e| e.abs()).unwrap_or(0.0);
    let second = eigs.get(1).copied();
    let nullspace_ok =
        zero_residual <= CONNECTIVITY_EIG_TOL && second.map_or(true, |e| e > CONNECTIVITY_EIG_TOL);
    report.push(CheckResult::new(
        "nullspace_dimension",
        nullspace_ok,
        zero_residual,
        CONNECTIVITY_EIG_TOL,
        match second {
            Some(e) => format!("second smallest eigenvalue of I-W = {e:.3e}"),
            None => "single node".into(),
        },
    ));

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn complete_k5_shape() {
        let g = build_graph(GraphKind::Complete, 5, 0).unwrap();
        assert_eq!(g.edge_count(), 10);
        assert!((0..5).all(|i| g.degree(i) == 4));
        assert!(g.is_connected());
    }

    #[test]
    fn ring_5_shape() {
        let g = build_graph(GraphKind::Ring, 5, 0).unwrap();
        assert_eq!(g.edge_count(), 5);
        assert!((0..5).all(|i| g.degree(i) == 2));
    }

    #[test]
    fn erdos_renyi_connected_with_positive_algebraic_connectivity() {
        let g = build_graph(GraphKind::ErdosRenyi(0.5), 10, 7).unwrap();
        assert!(g.is_connected());
        // Algebraic connectivity: second-smallest Laplacian eigenvalue.
        let n = g.n();
        let mut lap = DMatrix::zeros(n, n);
        for i in 0..n {
            lap[(i, i)] = g.degree(i) as f64;
        }
        for (i, j) in g.edges() {
            lap[(i, j)] = -1.0;
            lap[(j, i)] = -1.0;
        }
        let mut eigs: Vec<f64> = SymmetricEigen::new(lap).eigenvalues.iter().copied().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(eigs[1] > 1e-9, "algebraic connectivity {} not positive", eigs[1]);
    }

    #[test]
    fn erdos_renyi_deterministic_in_seed() {
        let a = build_graph(GraphKind::ErdosRenyi(0.4), 12, 3).unwrap();
        let b = build_graph(GraphKind::ErdosRenyi(0.4), 12, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cyclic_4_regular_degrees() {
        let g = build_graph(GraphKind::CyclicKRegular(4), 9, 0).unwrap();
        assert!((0..9).all(|i| g.degree(i) == 4));
        assert!(g.is_connected());
        // n = 5 collapses to the complete graph.
        let k5 = build_graph(GraphKind::CyclicKRegular(4), 5, 0).unwrap();
        assert_eq!(k5.edge_count(), 10);
    }

    #[test]
    fn consensus_complete_k5_is_all_fifths() {
        let g = build_graph(GraphKind::Complete, 5, 0).unwrap();
        let cm = build_consensus(&g);
        for i in 0..5 {
            for j in 0..5 {
                assert!((cm.entry(i, j) - 0.2).abs() < 1e-15);
            }
        }
        assert!((cm.delta() - 0.2).abs() < 1e-15);
        assert!((cm.big_delta() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn consensus_ring_5_thirds() {
        let g = build_graph(GraphKind::Ring, 5, 0).unwrap();
        let cm = build_consensus(&g);
        for i in 0..5 {
            assert!((cm.diag(i) - 1.0 / 3.0).abs() < 1e-15);
            for &j in cm.neighbors(i) {
                assert!((cm.entry(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(cm.entry(0, 2), 0.0);
    }

    #[test]
    fn validate_passes_on_generated_matrix() {
        let g = build_graph(GraphKind::Path, 7, 0).unwrap();
        let report = validate_consensus(&build_consensus(&g));
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn validate_catches_broken_row_sum() {
        let g = build_graph(GraphKind::Ring, 6, 0).unwrap();
        let cm = build_consensus(&g);
        let mut w = cm.matrix().clone();
        w[(2, 2)] += 1e-6;
        let tampered =
            ConsensusMatrix::from_matrix(w, cm.neighbor_lists().to_vec()).unwrap();
        let report = validate_consensus(&tampered);
        assert!(!report.all_passed());
        assert!(report
            .failures()
            .any(|c| c.name == "row_sums" && c.residual > 5e-7));
    }

    #[test]
    fn validate_catches_disconnected_nullspace() {
        // Two disjoint edges: nullspace of I - W has dimension 2.
        let g = Graph::parse_edge_list("n 4\n0 1\n2 3\n").unwrap();
        assert!(!g.is_connected());
        let report = validate_consensus(&build_consensus(&g));
        assert!(report
            .failures()
            .any(|c| c.name == "nullspace_dimension"));
    }

    #[test]
    fn single_node_consensus_is_identity() {
        let g = build_graph(GraphKind::Complete, 1, 0).unwrap();
        let cm = build_consensus(&g);
        assert_eq!(cm.entry(0, 0), 1.0);
        assert!(validate_consensus(&cm).all_passed());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = build_graph(GraphKind::CyclicKRegular(4), 11, 0).unwrap();
        let text = g.to_edge_list();
        let parsed = Graph::parse_edge_list(&text).unwrap();
        assert_eq!(parsed.n(), g.n());
        assert_eq!(
            parsed.edges().collect::<Vec<_>>(),
            g.edges().collect::<Vec<_>>()
        );
    }

    #[test]
    fn edge_list_parse_errors_name_lines() {
        let cases = [
            ("", 1, "empty"),
            ("m 4\n0 1\n", 1, "header"),
            ("n 4\n0 1 2\n", 2, "two endpoints"),
            ("n 4\n0 0\n", 2, "self-loop"),
            ("n 4\n0 9\n", 2, "out of range"),
            ("n 4\n0 1\n1 0\n", 3, "duplicate"),
            ("n 4\nx 1\n", 2, "invalid"),
            ("n 99999999999999\n", 1, "count"),
        ];
        for (text, line, _why) in cases {
            match Graph::parse_edge_list(text) {
                Err(Error::Parse { line: got, .. }) => {
                    assert_eq!(got, line, "wrong line for input {text:?}")
                }
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    fn arbitrary_kind() -> impl Strategy<Value = (GraphKind, usize)> {
        prop_oneof![
            (2usize..40).prop_map(|n| (GraphKind::Complete, n)),
            (3usize..40).prop_map(|n| (GraphKind::Ring, n)),
            (2usize..40).prop_map(|n| (GraphKind::Path, n)),
            (6usize..40).prop_map(|n| (GraphKind::CyclicKRegular(4), n)),
            ((5usize..25), (0.3f64..0.9)).prop_map(|(n, p)| (GraphKind::ErdosRenyi(p), n)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn generated_consensus_matrices_validate((kind, n) in arbitrary_kind(), seed in 0u64..1000) {
            let g = build_graph(kind, n, seed).unwrap();
            prop_assert!(g.is_connected());
            let cm = build_consensus(&g);
            let report = validate_consensus(&cm);
            prop_assert!(report.all_passed(), "{report}");
            // Diagonal formula: W_ii = 1 - deg(i)/(d_max + 1).
            let scale = 1.0 / (g.max_degree() as f64 + 1.0);
            for i in 0..n {
                prop_assert!((cm.diag(i) - (1.0 - g.degree(i) as f64 * scale)).abs() < 1e-15);
            }
        }

        #[test]
        fn round_trip_arbitrary_graphs((kind, n) in arbitrary_kind(), seed in 0u64..1000) {
            let g = build_graph(kind, n, seed).unwrap();
            let back = Graph::parse_edge_list(&g.to_edge_list()).unwrap();
            prop_assert_eq!(back.n(), g.n());
            prop_assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
        }
    }
}
