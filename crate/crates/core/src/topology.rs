//! Time-varying undirected communication graphs and their spectral data.
//!
//! Agents are indexed from zero internally. Scenario and trace files use
//! one-based ids; conversion happens at the file boundary.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, ZERO_EIGENVALUE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("self-loop on agent {}", .0 + 1)]
    SelfLoop(usize),
    #[error("edge {edge} has an endpoint outside 1..={n}")]
    EndpointOutOfRange { edge: Edge, n: usize },
    #[error("change at t={time}s removes edge {edge}, which is absent")]
    RemoveAbsent { time: f64, edge: Edge },
    #[error("change at t={time}s adds edge {edge}, which is already present")]
    AddPresent { time: f64, edge: Edge },
    #[error("change time {0} is negative or not finite")]
    BadChangeTime(f64),
    #[error("graph queried at negative time {0}")]
    NegativeTime(f64),
}

/// Unordered agent pair, stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    lo: usize,
    hi: usize,
}

impl Edge {
    pub fn new(a: usize, b: usize) -> Result<Self, TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        Ok(Self {
            lo: a.min(b),
            hi: a.max(b),
        })
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn contains(&self, agent: usize) -> bool {
        self.lo == agent || self.hi == agent
    }

    /// The endpoint that is not `agent`.
    pub fn other(&self, agent: usize) -> usize {
        if self.lo == agent {
            self.hi
        } else {
            self.lo
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.lo + 1, self.hi + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeAction {
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyChange {
    pub time: f64,
    pub edge: Edge,
    pub action: ChangeAction,
}

/// Symmetric 0/1 adjacency with zero diagonal.
#[derive(Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<u8>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![0; n * n],
        }
    }

    pub fn from_edges<'a>(n: usize, edges: impl IntoIterator<Item = &'a Edge>) -> Self {
        let mut adj = Self::empty(n);
        for e in edges {
            adj.set(*e, true);
        }
        adj
    }

    fn set(&mut self, e: Edge, present: bool) {
        let v = u8::from(present);
        self.bits[e.lo * self.n + e.hi] = v;
        self.bits[e.hi * self.n + e.lo] = v;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.n + j]
    }

    pub fn has_edge(&self, e: Edge) -> bool {
        self.get(e.lo, e.hi) == 1
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j) == 1)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) == 1 {
                    out.push(Edge { lo: i, hi: j });
                }
            }
        }
        out
    }

    /// Adjacency restricted to `members`, reindexed in the given order.
    pub fn induced(&self, members: &[usize]) -> Adjacency {
        let m = members.len();
        let mut sub = Adjacency::empty(m);
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate() {
                sub.bits[a * m + b] = self.get(i, j);
            }
        }
        sub
    }
}

impl fmt::Debug for Adjacency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Adjacency")
            .field("n", &self.n)
            .field("edges", &self.edges())
            .finish()
    }
}

/// Undirected graph on `n` agents plus a time-ordered schedule of link changes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedTopology {
    n: usize,
    base_edges: BTreeSet<Edge>,
    changes: Vec<TopologyChange>,
}

impl TimedTopology {
    /// Validates endpoints and replays the schedule once so that every later
    /// query is well-defined. Changes are sorted by time, ties by edge.
    pub fn new(
        n: usize,
        base_edges: impl IntoIterator<Item = Edge>,
        mut changes: Vec<TopologyChange>,
    ) -> Result<Self, TopologyError> {
        let base_edges: BTreeSet<Edge> = base_edges.into_iter().collect();
        for e in base_edges.iter().chain(changes.iter().map(|c| &c.edge)) {
            if e.hi >= n {
                return Err(TopologyError::EndpointOutOfRange { edge: *e, n });
            }
        }
        for c in &changes {
            if !c.time.is_finite() || c.time < 0.0 {
                return Err(TopologyError::BadChangeTime(c.time));
            }
        }
        changes.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.edge.cmp(&b.edge)));

        let mut live = base_edges.clone();
        for c in &changes {
            apply_change(&mut live, c)?;
        }
        Ok(Self {
            n,
            base_edges,
            changes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn base_edges(&self) -> &BTreeSet<Edge> {
        &self.base_edges
    }

    pub fn changes(&self) -> &[TopologyChange] {
        &self.changes
    }

    /// Every edge that exists at some point of the schedule.
    pub fn all_edges(&self) -> BTreeSet<Edge> {
        let mut all = self.base_edges.clone();
        all.extend(self.changes.iter().map(|c| c.edge));
        all
    }

    /// Distinct change instants, ascending.
    pub fn change_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.changes.iter().map(|c| c.time).collect();
        times.dedup();
        times
    }

    pub fn edges_at(&self, t: f64) -> Result<BTreeSet<Edge>, TopologyError> {
        if t < 0.0 {
            return Err(TopologyError::NegativeTime(t));
        }
        let mut live = self.base_edges.clone();
        for c in self.changes.iter().take_while(|c| c.time <= t) {
            apply_change(&mut live, c)?;
        }
        Ok(live)
    }

    /// Adjacency with every change scheduled at or before `t` applied.
    pub fn graph_at(&self, t: f64) -> Result<Adjacency, TopologyError> {
        let live = self.edges_at(t)?;
        Ok(Adjacency::from_edges(self.n, &live))
    }
}

fn apply_change(live: &mut BTreeSet<Edge>, c: &TopologyChange) -> Result<(), TopologyError> {
    match c.action {
        ChangeAction::Add => {
            if !live.insert(c.edge) {
                return Err(TopologyError::AddPresent {
                    time: c.time,
                    edge: c.edge,
                });
            }
        }
        ChangeAction::Remove => {
            if !live.remove(&c.edge) {
                return Err(TopologyError::RemoveAbsent {
                    time: c.time,
                    edge: c.edge,
                });
            }
        }
    }
    Ok(())
}

/// Graph Laplacian `D - A`. Degrees are summed as integers before casting, so
/// rows sum to exactly zero.
pub fn laplacian(adj: &Adjacency) -> Matrix {
    let n = adj.n();
    let mut l = Matrix::zeros(n);
    for i in 0..n {
        let mut deg: i64 = 0;
        for j in 0..n {
            if i != j && adj.get(i, j) == 1 {
                l[(i, j)] = -1.0;
                deg += 1;
            }
        }
        l[(i, i)] = deg as f64;
    }
    l
}

/// Second-smallest Laplacian eigenvalue, clamped to zero below the
/// zero-eigenvalue threshold. Graphs with fewer than two nodes yield 0.
pub fn lambda2(laplacian: &Matrix) -> Result<f64, LinalgError> {
    let eig = linalg::symmetric_eigen(laplacian)?;
    let l2 = eig.values.get(1).copied().unwrap_or(0.0);
    Ok(if l2.abs() < ZERO_EIGENVALUE { 0.0 } else { l2 })
}

pub fn laplacian_pseudoinverse(laplacian: &Matrix) -> Result<Matrix, LinalgError> {
    linalg::symmetric_pseudoinverse(laplacian)
}

/// Connected components as sorted member lists, ordered by smallest member.
pub fn components(adj: &Adjacency) -> Vec<Vec<usize>> {
    let n = adj.n();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for j in adj.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Spectral quantities of one graph (or one component of it).
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    pub laplacian: Matrix,
    pub lambda2: f64,
    pub pseudoinverse: Matrix,
    pub components: Vec<Vec<usize>>,
}

impl SpectralSummary {
    pub fn of(adj: &Adjacency) -> Result<Self, LinalgError> {
        let laplacian = laplacian(adj);
        Ok(Self {
            lambda2: lambda2(&laplacian)?,
            pseudoinverse: laplacian_pseudoinverse(&laplacian)?,
            components: components(adj),
            laplacian,
        })
    }

    pub fn is_connected(&self) -> bool {
        self.components.len() <= 1
    }

    /// `max |L L^+ - M|` with `M = I - (1/n) 1 1^T`.
    pub fn projector_residual(&self) -> f64 {
        let n = self.laplacian.dim();
        let product = &self.laplacian * &self.pseudoinverse;
        (&product - &Matrix::averaging_projector(n)).max_abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(a: usize, b: usize) -> Edge {
        Edge::new(a - 1, b - 1).unwrap()
    }

    fn path3() -> Adjacency {
        Adjacency::from_edges(3, &[e(1, 2), e(2, 3)])
    }

    fn complete(n: usize) -> Adjacency {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push(Edge::new(i, j).unwrap());
            }
        }
        Adjacency::from_edges(n, &edges)
    }

    #[test]
    fn laplacian_of_path() {
        let l = laplacian(&path3());
        let expected = Matrix::from_rows(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 1.0],
        ]);
        assert_eq!(l, expected);
    }

    #[test]
    fn laplacian_of_single_node() {
        assert_eq!(laplacian(&Adjacency::empty(1)), Matrix::zeros(1));
    }

    #[test]
    fn laplacian_of_k4() {
        let l = laplacian(&complete(4));
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 3.0 } else { -1.0 };
                assert_eq!(l[(i, j)], want);
            }
        }
    }

    #[test]
    fn lambda2_examples() {
        let k4 = lambda2(&laplacian(&complete(4))).unwrap();
        assert!((k4 - 4.0).abs() < 4.0 * 1e-9);
        let p3 = lambda2(&laplacian(&path3())).unwrap();
        assert!((p3 - 1.0).abs() < 1e-9);
        assert_eq!(lambda2(&laplacian(&Adjacency::empty(2))).unwrap(), 0.0);
    }

    #[test]
    fn lambda2_rejects_asymmetric_input() {
        let m = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]);
        assert!(lambda2(&m).is_err());
    }

    #[test]
    fn pseudoinverse_of_k2() {
        let l = laplacian(&complete(2));
        let p = laplacian_pseudoinverse(&l).unwrap();
        let want = Matrix::from_rows(&[vec![0.25, -0.25], vec![-0.25, 0.25]]);
        assert!((&p - &want).max_abs() < 1e-12);
    }

    #[test]
    fn connected_laplacian_times_pseudoinverse_is_projector() {
        for adj in [path3(), complete(4), complete(2)] {
            let s = SpectralSummary::of(&adj).unwrap();
            assert!(s.projector_residual() < 1e-8);
            assert!(s.lambda2 > 0.0);
        }
    }

    #[test]
    fn components_examples() {
        assert_eq!(components(&complete(4)), vec![vec![0, 1, 2, 3]]);
        assert_eq!(
            components(&Adjacency::empty(3)),
            vec![vec![0], vec![1], vec![2]]
        );
    }

    #[test]
    fn schedule_applies_at_exact_time() {
        let topo = TimedTopology::new(
            3,
            [e(1, 2), e(2, 3)],
            vec![TopologyChange {
                time: 2.0,
                edge: e(2, 3),
                action: ChangeAction::Remove,
            }],
        )
        .unwrap();
        assert!(topo.graph_at(1.999).unwrap().has_edge(e(2, 3)));
        assert!(!topo.graph_at(2.0).unwrap().has_edge(e(2, 3)));
    }

    #[test]
    fn empty_schedule_is_identity() {
        let topo = TimedTopology::new(3, [e(1, 2)], vec![]).unwrap();
        for t in [0.0, 1.0, 1e6] {
            assert_eq!(topo.edges_at(t).unwrap(), topo.base_edges().clone());
        }
    }

    #[test]
    fn inconsistent_schedules_are_rejected() {
        let remove_twice = vec![
            TopologyChange {
                time: 1.0,
                edge: e(1, 2),
                action: ChangeAction::Remove,
            },
            TopologyChange {
                time: 2.0,
                edge: e(1, 2),
                action: ChangeAction::Remove,
            },
        ];
        assert!(matches!(
            TimedTopology::new(2, [e(1, 2)], remove_twice),
            Err(TopologyError::RemoveAbsent { .. })
        ));
        let add_present = vec![TopologyChange {
            time: 1.0,
            edge: e(1, 2),
            action: ChangeAction::Add,
        }];
        assert!(matches!(
            TimedTopology::new(2, [e(1, 2)], add_present),
            Err(TopologyError::AddPresent { .. })
        ));
        assert!(matches!(
            TimedTopology::new(2, [e(1, 3)], vec![]),
            Err(TopologyError::EndpointOutOfRange { .. })
        ));
        assert_eq!(Edge::new(1, 1), Err(TopologyError::SelfLoop(1)));
    }

    #[test]
    fn changes_are_sorted_on_construction() {
        let topo = TimedTopology::new(
            3,
            [e(1, 2), e(2, 3), e(1, 3)],
            vec![
                TopologyChange {
                    time: 5.0,
                    edge: e(2, 3),
                    action: ChangeAction::Remove,
                },
                TopologyChange {
                    time: 1.0,
                    edge: e(1, 3),
                    action: ChangeAction::Remove,
                },
                TopologyChange {
                    time: 1.0,
                    edge: e(1, 2),
                    action: ChangeAction::Remove,
                },
            ],
        )
        .unwrap();
        let order: Vec<(f64, Edge)> = topo.changes().iter().map(|c| (c.time, c.edge)).collect();
        assert_eq!(order, vec![(1.0, e(1, 2)), (1.0, e(1, 3)), (5.0, e(2, 3))]);
    }
}
