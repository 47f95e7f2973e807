//! Immutable street network: directed graph, sector partition, sector adjacency and
//! precomputed all-pairs hop counts.
//!
//! Every street takes one time step to traverse, so shortest paths are breadth-first
//! hop counts. Among equally short paths the next hop is the lowest-numbered neighbour.
//!
//! # Graph file
//!
//! Plain text, one record per line, `#` starts a comment:
//!
//! ```text
//! sectors <count>
//! node <id> <sector-id> <eligible: 0|1>
//! edge <src> <dst>
//! ```
//!
//! Node ids must be dense `0..n` and listed in ascending order; sector ids are `0..count`.
//! Edges are written back in the order they were read.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SectorId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl SectorId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for SectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Result of a shortest-path query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Reachable { hops: u32, next_hop: NodeId },
    Unreachable,
}

const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct CityGraph {
    sector_of: Vec<SectorId>,
    eligible: Vec<bool>,
    edges: Vec<(NodeId, NodeId)>,
    adjacency: Vec<Vec<NodeId>>,
    sectors: Vec<Vec<NodeId>>,
    sector_eligible: Vec<Vec<NodeId>>,
    sector_adjacency: Vec<Vec<SectorId>>,
    dist: Vec<u32>,
    next: Vec<u32>,
}

impl CityGraph {
    /// Builds a graph from per-node `(sector, eligible)` records and directed edges.
    pub fn new(
        sector_count: usize,
        nodes: Vec<(SectorId, bool)>,
        edges: Vec<(NodeId, NodeId)>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let mut sectors = vec![Vec::new(); sector_count];
        let mut sector_eligible = vec![Vec::new(); sector_count];
        for (i, &(s, el)) in nodes.iter().enumerate() {
            if s.index() >= sector_count {
                return Err(Error::InvalidGraph(format!(
                    "node {i} references missing sector {s}"
                )));
            }
            sectors[s.index()].push(NodeId(i as u32));
            if el {
                sector_eligible[s.index()].push(NodeId(i as u32));
            }
        }
        if let Some(k) = sectors.iter().position(Vec::is_empty) {
            return Err(Error::InvalidGraph(format!("sector {k} has no nodes")));
        }

        let mut adjacency = vec![Vec::new(); n];
        let mut seen = HashSet::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a.index() >= n || b.index() >= n {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self loop at node {a}")));
            }
            if !seen.insert((a, b)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
            adjacency[a.index()].push(b);
        }
        for (i, adj) in adjacency.iter_mut().enumerate() {
            if adj.is_empty() {
                return Err(Error::InvalidGraph(format!("node {i} has no outgoing edge")));
            }
            adj.sort_unstable();
        }

        let sector_of: Vec<SectorId> = nodes.iter().map(|&(s, _)| s).collect();
        let mut sector_adjacency = vec![Vec::new(); sector_count];
        for &(a, b) in &edges {
            let (sa, sb) = (sector_of[a.index()], sector_of[b.index()]);
            if sa != sb {
                sector_adjacency[sa.index()].push(sb);
                sector_adjacency[sb.index()].push(sa);
            }
        }
        for adj in &mut sector_adjacency {
            adj.sort_unstable();
            adj.dedup();
        }

        let (dist, next) = all_pairs(&adjacency);
        Ok(Self {
            eligible: nodes.iter().map(|&(_, e)| e).collect(),
            sector_of,
            edges,
            adjacency,
            sectors,
            sector_eligible,
            sector_adjacency,
            dist,
            next,
        })
    }

    pub fn node_count(&self) -> usize {
        self.sector_of.len()
    }

    pub fn sector_count(&self) -> usize {
        self.sectors.len()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count() as u32).map(NodeId)
    }

    pub fn sectors(&self) -> impl Iterator<Item = SectorId> {
        (0..self.sector_count() as u32).map(SectorId)
    }

    fn check_node(&self, i: NodeId) -> Result<()> {
        if i.index() < self.node_count() {
            Ok(())
        } else {
            Err(Error::UnknownNode(i))
        }
    }

    fn check_sector(&self, s: SectorId) -> Result<()> {
        if s.index() < self.sector_count() {
            Ok(())
        } else {
            Err(Error::UnknownSector(s))
        }
    }

    /// Outgoing neighbours of `i`, ascending by id.
    pub fn neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        self.check_node(i)?;
        Ok(&self.adjacency[i.index()])
    }

    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Result<Route> {
        self.check_node(src)?;
        self.check_node(dst)?;
        let k = src.index() * self.node_count() + dst.index();
        if self.dist[k] == UNREACHABLE {
            Ok(Route::Unreachable)
        } else {
            Ok(Route::Reachable {
                hops: self.dist[k],
                next_hop: NodeId(self.next[k]),
            })
        }
    }

    pub fn sector_of(&self, i: NodeId) -> Result<SectorId> {
        self.check_node(i)?;
        Ok(self.sector_of[i.index()])
    }

    pub fn is_eligible(&self, i: NodeId) -> bool {
        self.eligible.get(i.index()).copied().unwrap_or(false)
    }

    pub fn sector_nodes(&self, s: SectorId) -> Result<&[NodeId]> {
        self.check_sector(s)?;
        Ok(&self.sectors[s.index()])
    }

    /// Pickup/drop-off eligible intersections of sector `s`.
    pub fn eligible_nodes(&self, s: SectorId) -> Result<&[NodeId]> {
        self.check_sector(s)?;
        Ok(&self.sector_eligible[s.index()])
    }

    /// Sectors sharing at least one street with `s`, ascending, excluding `s` itself.
    pub fn adjacent_sectors(&self, s: SectorId) -> Result<&[SectorId]> {
        self.check_sector(s)?;
        Ok(&self.sector_adjacency[s.index()])
    }

    /// `{s} ∪ A(s)`, ascending.
    pub fn sector_neighborhood(&self, s: SectorId) -> Result<Vec<SectorId>> {
        let mut out = self.adjacent_sectors(s)?.to_vec();
        out.push(s);
        out.sort_unstable();
        Ok(out)
    }

    /// Hop count without bounds checks beyond the slice index; `None` if unreachable.
    #[inline]
    pub fn hops(&self, src: NodeId, dst: NodeId) -> Option<u32> {
        let d = self.dist[src.index() * self.node_count() + dst.index()];
        (d != UNREACHABLE).then_some(d)
    }

    /// Next hop from `src` toward `dst`; `src` itself when they coincide or `dst` is unreachable.
    #[inline]
    pub fn next_hop(&self, src: NodeId, dst: NodeId) -> NodeId {
        NodeId(self.next[src.index() * self.node_count() + dst.index()])
    }

    pub fn is_strongly_connected(&self) -> bool {
        !self.dist.contains(&UNREACHABLE)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sectors {}", self.sector_count());
        for (i, (s, e)) in self.sector_of.iter().zip(&self.eligible).enumerate() {
            let _ = writeln!(out, "node {} {} {}", i, s, u8::from(*e));
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "edge {a} {b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut sector_count = None;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let num = |k: usize| -> Result<u32> {
                fields
                    .get(k)
                    .ok_or_else(|| Error::parse(line, "missing field"))?
                    .parse::<u32>()
                    .map_err(|e| Error::parse(line, e.to_string()))
            };
            match fields[0] {
                "sectors" if fields.len() == 2 => {
                    if sector_count.is_some() {
                        return Err(Error::parse(line, "duplicate sectors record"));
                    }
                    sector_count = Some(num(1)? as usize);
                }
                "node" if fields.len() == 4 => {
                    let id = num(1)?;
                    if id as usize != nodes.len() {
                        return Err(Error::parse(
                            line,
                            format!("expected node id {}, found {id}", nodes.len()),
                        ));
                    }
                    let sector = num(2)?;
                    if sector as usize >= sector_count.unwrap_or(0) {
                        return Err(Error::parse(line, format!("node {id} references missing sector {sector}")));
                    }
                    let eligible = match num(3)? {
                        0 => false,
                        1 => true,
                        v => return Err(Error::parse(line, format!("eligible flag must be 0 or 1, got {v}"))),
                    };
                    nodes.push((SectorId(sector), eligible));
                }
                "edge" if fields.len() == 3 => edges.push((NodeId(num(1)?), NodeId(num(2)?))),
                other => return Err(Error::parse(line, format!("unrecognised record `{other}`"))),
            }
        }
        let sector_count = sector_count.ok_or_else(|| Error::parse(0, "missing sectors record"))?;
        CityGraph::new(sector_count, nodes, edges)
    }

    /// `rows × cols` grid with two-way streets between orthogonal neighbours, split into a
    /// `sector_rows × sector_cols` block partition. Node id is `r * cols + c`; every node is eligible.
    pub fn grid(rows: usize, cols: usize, sector_rows: usize, sector_cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols < 2 {
            return Err(Error::InvalidGraph("grid needs at least two nodes".into()));
        }
        if sector_rows == 0 || sector_cols == 0 || sector_rows > rows || sector_cols > cols {
            return Err(Error::InvalidGraph(format!(
                "cannot split a {rows}x{cols} grid into {sector_rows}x{sector_cols} sectors"
            )));
        }
        let block = |x: usize, len: usize, parts: usize| (x * parts) / len;
        let mut nodes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let s = block(r, rows, sector_rows) * sector_cols + block(c, cols, sector_cols);
                nodes.push((SectorId(s as u32), true));
            }
        }
        let id = |r: usize, c: usize| NodeId((r * cols + c) as u32);
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                    edges.push((id(r, c + 1), id(r, c)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                    edges.push((id(r + 1, c), id(r, c)));
                }
            }
        }
        CityGraph::new(sector_rows * sector_cols, nodes, edges)
    }

    /// `sectors` neighbourhoods, each a two-way cycle of `per_sector` nodes, joined into a ring
    /// by a two-way street from the last node of each sector to the first node of the next.
    pub fn ring_of_sectors(sectors: usize, per_sector: usize) -> Result<Self> {
        if sectors < 1 || per_sector < 3 {
            return Err(Error::InvalidGraph("ring needs >= 1 sector of >= 3 nodes".into()));
        }
        let n = sectors * per_sector;
        let nodes = (0..n)
            .map(|i| (SectorId((i / per_sector) as u32), true))
            .collect();
        let mut edges = Vec::new();
        let mut push_two_way = |a: usize, b: usize| {
            edges.push((NodeId(a as u32), NodeId(b as u32)));
            edges.push((NodeId(b as u32), NodeId(a as u32)));
        };
        for s in 0..sectors {
            let base = s * per_sector;
            for k in 0..per_sector {
                push_two_way(base + k, base + (k + 1) % per_sector);
            }
        }
        if sectors > 1 {
            let links = if sectors == 2 { 1 } else { sectors };
            for s in 0..links {
                let from = s * per_sector + per_sector - 1;
                let to = ((s + 1) % sectors) * per_sector;
                push_two_way(from, to);
            }
        }
        CityGraph::new(sectors, nodes, edges)
    }
}

/// Breadth-first search from every node; next hop is the smallest neighbour on some shortest path.
fn all_pairs(adjacency: &[Vec<NodeId>]) -> (Vec<u32>, Vec<u32>) {
    let n = adjacency.len();
    let mut dist = vec![UNREACHABLE; n * n];
    let mut queue = VecDeque::with_capacity(n);
    for src in 0..n {
        let row = &mut dist[src * n..(src + 1) * n];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = row[u];
            for v in &adjacency[u] {
                if row[v.index()] == UNREACHABLE {
                    row[v.index()] = du + 1;
                    queue.push_back(v.index());
                }
            }
        }
    }
    let mut next = vec![0u32; n * n];
    for src in 0..n {
        for dst in 0..n {
            let d = dist[src * n + dst];
            next[src * n + dst] = if d == 0 || d == UNREACHABLE {
                src as u32
            } else {
                adjacency[src]
                    .iter()
                    .find(|j| dist[j.index() * n + dst] == d - 1)
                    .map(|j| j.0)
                    .expect("BFS distance has a predecessor")
            };
        }
    }
    (dist, next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: u32) -> CityGraph {
        let nodes = vec![(SectorId(0), true); n as usize];
        let mut edges: Vec<_> = (0..n - 1).map(|i| (NodeId(i), NodeId(i + 1))).collect();
        edges.push((NodeId(n - 1), NodeId(n - 2)));
        CityGraph::new(1, nodes, edges).unwrap()
    }

    #[test]
    fn cycle_neighbors() {
        let g = CityGraph::new(
            1,
            vec![(SectorId(0), true); 3],
            vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2)), (NodeId(2), NodeId(0))],
        )
        .unwrap();
        assert_eq!(g.neighbors(NodeId(0)).unwrap(), &[NodeId(1)]);
        assert!(matches!(g.neighbors(NodeId(9)), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn fan_out_neighbors() {
        let mut nodes = vec![(SectorId(0), true); 8];
        nodes[1].0 = SectorId(0);
        let edges = vec![
            (NodeId(5), NodeId(7)),
            (NodeId(5), NodeId(6)),
            (NodeId(6), NodeId(5)),
            (NodeId(7), NodeId(5)),
            (NodeId(0), NodeId(1)),
            (NodeId(1), NodeId(0)),
            (NodeId(2), NodeId(3)),
            (NodeId(3), NodeId(4)),
            (NodeId(4), NodeId(2)),
        ];
        let g = CityGraph::new(1, nodes, edges).unwrap();
        assert_eq!(g.neighbors(NodeId(5)).unwrap(), &[NodeId(6), NodeId(7)]);
        assert!(!g.is_strongly_connected());
        assert_eq!(g.shortest_path(NodeId(0), NodeId(5)).unwrap(), Route::Unreachable);
    }

    #[test]
    fn grid_center_has_four_neighbors() {
        let g = CityGraph::grid(3, 3, 1, 1).unwrap();
        // 3x3 centre is node 4; orthogonal neighbours 1, 3, 5, 7.
        assert_eq!(
            g.neighbors(NodeId(4)).unwrap(),
            &[NodeId(1), NodeId(3), NodeId(5), NodeId(7)]
        );
    }

    #[test]
    fn shortest_path_basics() {
        let g = line(4);
        assert_eq!(
            g.shortest_path(NodeId(2), NodeId(2)).unwrap(),
            Route::Reachable { hops: 0, next_hop: NodeId(2) }
        );
        assert_eq!(
            g.shortest_path(NodeId(0), NodeId(3)).unwrap(),
            Route::Reachable { hops: 3, next_hop: NodeId(1) }
        );
        // Only the last edge points back, so 3 -> 0 is reachable only via 2 and then stuck.
        assert_eq!(g.shortest_path(NodeId(3), NodeId(0)).unwrap(), Route::Unreachable);
    }

    #[test]
    fn tie_break_prefers_lowest_next_hop() {
        let g = CityGraph::grid(2, 2, 1, 1).unwrap();
        // 0 -> 3 via 1 or 2.
        assert_eq!(
            g.shortest_path(NodeId(0), NodeId(3)).unwrap(),
            Route::Reachable { hops: 2, next_hop: NodeId(1) }
        );
    }

    #[test]
    fn sector_lookup() {
        let g = CityGraph::new(
            2,
            vec![(SectorId(0), true), (SectorId(0), true), (SectorId(1), true)],
            vec![
                (NodeId(0), NodeId(1)),
                (NodeId(1), NodeId(2)),
                (NodeId(2), NodeId(0)),
            ],
        )
        .unwrap();
        assert_eq!(g.sector_of(NodeId(2)).unwrap(), SectorId(1));
        assert_eq!(g.sector_of(NodeId(2)).unwrap(), SectorId(1));
        assert_eq!(g.adjacent_sectors(SectorId(0)).unwrap(), &[SectorId(1)]);
        assert!(matches!(g.sector_of(NodeId(3)), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn rejects_bad_graphs() {
        let two = vec![(SectorId(0), true); 2];
        let dup = vec![(NodeId(0), NodeId(1)), (NodeId(0), NodeId(1)), (NodeId(1), NodeId(0))];
        assert!(CityGraph::new(1, two.clone(), dup).is_err());
        let sink = vec![(NodeId(0), NodeId(1))];
        assert!(CityGraph::new(1, two.clone(), sink).is_err());
        let ok = vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(0))];
        assert!(CityGraph::new(2, two.clone(), ok.clone()).is_err(), "empty sector");
        let bad_sector = vec![(SectorId(0), true), (SectorId(3), true)];
        assert!(CityGraph::new(1, bad_sector, ok).is_err());
        assert!(CityGraph::from_text("sectors 1\nnode 0 2 1\n").is_err());
        assert!(CityGraph::from_text("sectors 1\nnode 0 0 1\nnode 1 0 1\nedge 0 1\nedge 0 1\nedge 1 0\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let g = CityGraph::grid(4, 5, 2, 2).unwrap();
        let text = g.to_text();
        let back = CityGraph::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn generators_are_strongly_connected() {
        assert!(CityGraph::grid(10, 10, 2, 3).unwrap().is_strongly_connected());
        assert!(CityGraph::ring_of_sectors(6, 5).unwrap().is_strongly_connected());
        let ring = CityGraph::ring_of_sectors(6, 5).unwrap();
        assert_eq!(ring.adjacent_sectors(SectorId(0)).unwrap(), &[SectorId(1), SectorId(5)]);
    }

    #[test]
    fn sector_adjacency_is_symmetric_on_grid() {
        let g = CityGraph::grid(10, 10, 2, 3).unwrap();
        for s in g.sectors() {
            for &h in g.adjacent_sectors(s).unwrap() {
                assert!(g.adjacent_sectors(h).unwrap().contains(&s));
            }
        }
        // Top-left block touches its right and lower neighbours only.
        assert_eq!(g.adjacent_sectors(SectorId(0)).unwrap(), &[SectorId(1), SectorId(3)]);
    }
}
