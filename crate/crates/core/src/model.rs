//! Static network description: nodes, wireless adjacency and the two
//! pre-assigned paths of every source.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// An intermediate (harvesting, battery-limited) node. Numbered `1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Zero-based slot in per-node vectors.
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_idx(idx: usize) -> Self {
        NodeId(idx as u32 + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Any vertex of the network graph. Sources and the destination are
/// energy-unlimited and never appear inside a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    /// Zero-based source index.
    Source(usize),
    Node(NodeId),
    Destination,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Source(s) => write!(f, "s{}", s + 1),
            Endpoint::Node(n) => write!(f, "{n}"),
            Endpoint::Destination => write!(f, "d"),
        }
    }
}

/// Which of a source's two paths is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathSel {
    One,
    Two,
}

impl PathSel {
    pub fn number(self) -> u8 {
        match self {
            PathSel::One => 1,
            PathSel::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(PathSel::One),
            2 => Some(PathSel::Two),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            PathSel::One => PathSel::Two,
            PathSel::Two => PathSel::One,
        }
    }

    #[inline]
    pub fn idx(self) -> usize {
        self.number() as usize - 1
    }
}

impl fmt::Display for PathSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Active path per source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RoutingState(pub Vec<PathSel>);

impl RoutingState {
    pub fn numbers(&self) -> Vec<u8> {
        self.0.iter().map(|p| p.number()).collect()
    }
}

impl fmt::Display for RoutingState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "]")
    }
}

/// One topology invariant violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyPath { source: usize, path: PathSel },
    UnknownNode { source: usize, path: PathSel, node: NodeId },
    DuplicateNode { source: usize, path: PathSel, node: NodeId },
    AdjacencyGap { source: usize, path: PathSel, hop: usize, from: Endpoint, to: Endpoint },
    NeighborLoop { source: usize, path: PathSel, node: NodeId, neighbor: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyPath { source, path } => {
                write!(f, "source {} path {path}: empty path", source + 1)
            }
            Violation::UnknownNode { source, path, node } => {
                write!(f, "source {} path {path}: unknown node {node}", source + 1)
            }
            Violation::DuplicateNode { source, path, node } => {
                write!(f, "source {} path {path}: duplicate node {node}", source + 1)
            }
            Violation::AdjacencyGap { source, path, hop, from, to } => write!(
                f,
                "source {} path {path}: adjacency gap at hop {hop} ({from}\u{2192}{to})",
                source + 1
            ),
            Violation::NeighborLoop { source, path, node, neighbor } => write!(
                f,
                "source {} path {path}: neighbor-loop at node {node} (adjacent to {neighbor})",
                source + 1
            ),
        }
    }
}

/// The static network. Immutable once built.
#[derive(Debug, Clone)]
pub struct Topology {
    num_sources: usize,
    num_intermediates: usize,
    links: BTreeSet<(Endpoint, Endpoint)>,
    paths: Vec<[Vec<NodeId>; 2]>,
    source_neighbors: Vec<Vec<NodeId>>,
    node_neighbors: Vec<Vec<NodeId>>,
}

fn ordered(a: Endpoint, b: Endpoint) -> (Endpoint, Endpoint) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Topology {
    /// Builds the topology. Links naming vertices outside the declared
    /// ranges are ignored by the neighbor tables but still reported by
    /// [`Topology::validate`] when a path depends on them.
    pub fn new(
        num_sources: usize,
        num_intermediates: usize,
        links: impl IntoIterator<Item = (Endpoint, Endpoint)>,
        paths: Vec<[Vec<NodeId>; 2]>,
    ) -> Self {
        let links: BTreeSet<_> = links
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| ordered(a, b))
            .collect();
        let mut source_neighbors = vec![Vec::new(); num_sources];
        let mut node_neighbors = vec![Vec::new(); num_intermediates];
        let in_range = |n: NodeId| n.0 >= 1 && (n.0 as usize) <= num_intermediates;
        for &(a, b) in &links {
            for (x, y) in [(a, b), (b, a)] {
                if let Endpoint::Node(v) = y {
                    if !in_range(v) {
                        continue;
                    }
                    match x {
                        Endpoint::Source(s) if s < num_sources => source_neighbors[s].push(v),
                        Endpoint::Node(u) if in_range(u) => node_neighbors[u.idx()].push(v),
                        _ => {}
                    }
                }
            }
        }
        for v in source_neighbors.iter_mut().chain(node_neighbors.iter_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        Topology { num_sources, num_intermediates, links, paths, source_neighbors, node_neighbors }
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn num_intermediates(&self) -> usize {
        self.num_intermediates
    }

    pub fn links(&self) -> impl Iterator<Item = (Endpoint, Endpoint)> + '_ {
        self.links.iter().copied()
    }

    pub fn path(&self, source: usize, sel: PathSel) -> &[NodeId] {
        &self.paths[source][sel.idx()]
    }

    pub fn paths(&self) -> &[[Vec<NodeId>; 2]] {
        &self.paths
    }

    pub fn is_adjacent(&self, a: Endpoint, b: Endpoint) -> bool {
        self.links.contains(&ordered(a, b))
    }

    /// Intermediate neighbors of a source.
    pub fn source_neighbors(&self, source: usize) -> &[NodeId] {
        &self.source_neighbors[source]
    }

    /// Intermediate neighbors of an intermediate node.
    pub fn node_neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.node_neighbors[node.idx()]
    }

    /// Every violated invariant, empty when the topology is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (source, pair) in self.paths.iter().enumerate() {
            for sel in [PathSel::One, PathSel::Two] {
                let path = &pair[sel.idx()];
                if path.is_empty() {
                    out.push(Violation::EmptyPath { source, path: sel });
                    continue;
                }
                let mut seen = BTreeSet::new();
                let mut known = true;
                for &n in path {
                    if n.0 == 0 || n.0 as usize > self.num_intermediates {
                        out.push(Violation::UnknownNode { source, path: sel, node: n });
                        known = false;
                    } else if !seen.insert(n) {
                        out.push(Violation::DuplicateNode { source, path: sel, node: n });
                    }
                }
                if !known {
                    continue;
                }
                let hops = std::iter::once(Endpoint::Source(source))
                    .chain(path.iter().map(|&n| Endpoint::Node(n)))
                    .chain(std::iter::once(Endpoint::Destination))
                    .collect::<Vec<_>>();
                for (hop, w) in hops.windows(2).enumerate() {
                    if !self.is_adjacent(w[0], w[1]) {
                        out.push(Violation::AdjacencyGap {
                            source,
                            path: sel,
                            hop: hop + 1,
                            from: w[0],
                            to: w[1],
                        });
                    }
                }
                for (i, &u) in path.iter().enumerate() {
                    let prev = i.checked_sub(1).map(|j| path[j]);
                    let next = path.get(i + 1).copied();
                    for &v in &path[i + 1..] {
                        if Some(v) == next || Some(v) == prev {
                            continue;
                        }
                        if self.is_adjacent(Endpoint::Node(u), Endpoint::Node(v)) {
                            out.push(Violation::NeighborLoop { source, path: sel, node: u, neighbor: v });
                        }
                    }
                }
            }
        }
        out
    }

    /// Intermediates present on both paths of `source`.
    pub fn omit_set(&self, source: usize) -> BTreeSet<NodeId> {
        let [a, b] = &self.paths[source];
        let a: BTreeSet<_> = a.iter().copied().collect();
        b.iter().copied().filter(|n| a.contains(n)).collect()
    }

    /// Nodes on the active path of any source.
    pub fn listening_set(&self, routing: &RoutingState) -> BTreeSet<NodeId> {
        routing
            .0
            .iter()
            .enumerate()
            .flat_map(|(s, &sel)| self.path(s, sel).iter().copied())
            .collect()
    }

    /// Listening flags indexed by [`NodeId::idx`].
    pub fn listening_mask(&self, routing: &RoutingState) -> Vec<bool> {
        let mut mask = vec![false; self.num_intermediates];
        for (s, &sel) in routing.0.iter().enumerate() {
            for n in self.path(s, sel) {
                mask[n.idx()] = true;
            }
        }
        mask
    }

    /// True for the two-node, one-source diamond with disjoint single-node paths.
    pub fn is_diamond(&self) -> bool {
        self.num_sources == 1
            && self.num_intermediates == 2
            && self.paths[0][0].len() == 1
            && self.paths[0][1].len() == 1
            && self.paths[0][0][0] != self.paths[0][1][0]
    }
}

/// Critical node of `path`: lowest level among non-omitted nodes, the
/// earliest path position winning ties.
pub fn min_on_path(levels: &[f64], path: &[NodeId], omit: &BTreeSet<NodeId>) -> Option<(NodeId, f64)> {
    let mut best: Option<(NodeId, f64)> = None;
    for &n in path {
        if omit.contains(&n) {
            continue;
        }
        let l = levels[n.idx()];
        match best {
            Some((_, b)) if l >= b => {}
            _ => best = Some((n, l)),
        }
    }
    best
}
