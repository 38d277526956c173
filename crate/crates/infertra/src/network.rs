//! Directed road-network graph: geometry, adjacency, baseline routing and
//! simple-path enumeration.
//!
//! External node/edge ids are arbitrary `u64`s; on load they are remapped to
//! dense indexes so the samplers can use array-backed adjacency. The original
//! ids are kept for all I/O.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Dense node index, valid only within the network that produced it.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub(crate) u32);

/// Dense edge index, valid only within the network that produced it.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct EdgeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub ext_id: u64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub id: EdgeId,
    pub ext_id: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
}

/// Immutable directed road network. Safe to share across threads.
#[derive(Clone, Debug)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    out: Vec<Vec<EdgeId>>,
    inc: Vec<Vec<EdgeId>>,
    node_by_ext: HashMap<u64, NodeId>,
    edge_by_ext: HashMap<u64, EdgeId>,
    edge_by_endpoints: HashMap<(NodeId, NodeId), EdgeId>,
}

/// A directed path: `nodes.len() == edges.len() + 1`. A single-node path has
/// no edges and cost zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
    pub cost: f64,
}

#[derive(Default)]
pub struct NetworkBuilder {
    nodes: Vec<(u64, f64, f64)>,
    edges: Vec<(u64, u64, u64, f64)>,
}

impl NetworkBuilder {
    pub fn node(mut self, ext_id: u64, lat: f64, lon: f64) -> Self {
        self.nodes.push((ext_id, lat, lon));
        self
    }

    pub fn edge(mut self, ext_id: u64, src: u64, dst: u64, length_m: f64) -> Self {
        self.edges.push((ext_id, src, dst, length_m));
        self
    }

    pub fn build(self) -> Result<RoadNetwork> {
        RoadNetwork::from_parts(self.nodes, self.edges)
    }
}

impl RoadNetwork {
    pub fn builder() -> NetworkBuilder {
        NetworkBuilder::default()
    }

    fn from_parts(
        raw_nodes: Vec<(u64, f64, f64)>,
        raw_edges: Vec<(u64, u64, u64, f64)>,
    ) -> Result<Self> {
        let mut node_by_ext = HashMap::with_capacity(raw_nodes.len());
        let mut nodes = Vec::with_capacity(raw_nodes.len());
        for (ext_id, lat, lon) in raw_nodes {
            if !(-90.0..=90.0).contains(&lat) {
                return Err(Error::CoordinateRange {
                    node: ext_id,
                    what: format!("lat {lat}"),
                });
            }
            if !(-180.0..180.0).contains(&lon) {
                return Err(Error::CoordinateRange {
                    node: ext_id,
                    what: format!("lon {lon}"),
                });
            }
            let id = NodeId(nodes.len() as u32);
            if node_by_ext.insert(ext_id, id).is_some() {
                return Err(Error::DuplicateNode(ext_id));
            }
            nodes.push(Node {
                id,
                ext_id,
                lat,
                lon,
            });
        }

        let mut edge_by_ext = HashMap::with_capacity(raw_edges.len());
        let mut edge_by_endpoints = HashMap::with_capacity(raw_edges.len());
        let mut edges: Vec<Edge> = Vec::with_capacity(raw_edges.len());
        let mut out = vec![Vec::new(); nodes.len()];
        let mut inc = vec![Vec::new(); nodes.len()];
        for (ext_id, src, dst, length_m) in raw_edges {
            let from = *node_by_ext.get(&src).ok_or(Error::DanglingEndpoint {
                edge: ext_id,
                node: src,
            })?;
            let to = *node_by_ext.get(&dst).ok_or(Error::DanglingEndpoint {
                edge: ext_id,
                node: dst,
            })?;
            if from == to {
                return Err(Error::SelfLoop {
                    edge: ext_id,
                    node: src,
                });
            }
            if length_m.is_nan() || length_m <= 0.0 {
                return Err(Error::NonPositiveLength {
                    edge: ext_id,
                    length: length_m,
                });
            }
            let id = EdgeId(edges.len() as u32);
            if edge_by_ext.insert(ext_id, id).is_some() {
                return Err(Error::DuplicateEdgeId(ext_id));
            }
            if let Some(prev) = edge_by_endpoints.insert((from, to), id) {
                return Err(Error::DuplicateEdge {
                    src,
                    dst,
                    first: edges[prev.index()].ext_id,
                    second: ext_id,
                });
            }
            out[from.index()].push(id);
            inc[to.index()].push(id);
            edges.push(Edge {
                id,
                ext_id,
                from,
                to,
                length_m,
            });
        }
        // Stable adjacency order by dense edge id (= load order).
        for list in out.iter_mut().chain(inc.iter_mut()) {
            list.sort_unstable();
        }

        Ok(RoadNetwork {
            nodes,
            edges,
            out,
            inc,
            node_by_ext,
            edge_by_ext,
            edge_by_endpoints,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.index()]
    }

    pub fn node_by_ext(&self, ext_id: u64) -> Result<NodeId> {
        self.node_by_ext
            .get(&ext_id)
            .copied()
            .ok_or(Error::UnknownNode(ext_id))
    }

    pub fn edge_by_ext(&self, ext_id: u64) -> Result<EdgeId> {
        self.edge_by_ext
            .get(&ext_id)
            .copied()
            .ok_or(Error::UnknownEdge(ext_id))
    }

    pub fn edge_between(&self, from: NodeId, to: NodeId) -> Option<EdgeId> {
        self.edge_by_endpoints.get(&(from, to)).copied()
    }

    fn check_node(&self, v: NodeId) -> Result<()> {
        if v.index() < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(v.0 as u64))
        }
    }

    /// Outgoing edges of `v`, in stable edge-id order.
    pub fn out_edges(&self, v: NodeId) -> Result<&[EdgeId]> {
        self.check_node(v)?;
        Ok(&self.out[v.index()])
    }

    /// Incoming edges of `v`, in stable edge-id order.
    pub fn in_edges(&self, v: NodeId) -> Result<&[EdgeId]> {
        self.check_node(v)?;
        Ok(&self.inc[v.index()])
    }

    /// Minimum-cost directed path under `edge_cost`, or `None` if `dst` is
    /// unreachable. Equal-cost ties resolve to the lexicographically smallest
    /// node-id sequence.
    pub fn shortest_path<F>(&self, src: NodeId, dst: NodeId, edge_cost: F) -> Result<Option<Path>>
    where
        F: Fn(&Edge) -> f64,
    {
        self.check_node(src)?;
        self.check_node(dst)?;
        if src == dst {
            return Ok(Some(Path {
                nodes: vec![src],
                edges: vec![],
                cost: 0.0,
            }));
        }

        // Reverse Dijkstra gives cost-to-destination; a forward greedy walk
        // over optimal continuations then picks the lex-smallest tie.
        let dist = self.dijkstra_to(dst, &edge_cost);
        let total = dist[src.index()];
        if !total.is_finite() {
            return Ok(None);
        }

        let mut nodes = vec![src];
        let mut edges = Vec::new();
        let mut cost = 0.0;
        let mut curr = src;
        let mut guard = 0usize;
        while curr != dst {
            guard += 1;
            if guard > self.nodes.len() + 1 {
                // Only reachable with zero-cost cycles on the optimal front.
                return Err(Error::Param {
                    name: "edge_cost",
                    msg: "zero-cost cycle on an optimal path".into(),
                });
            }
            let here = dist[curr.index()];
            let mut best: Option<(u64, EdgeId, NodeId)> = None;
            for &eid in &self.out[curr.index()] {
                let e = &self.edges[eid.index()];
                let c = edge_cost(e);
                let through = c + dist[e.to.index()];
                if on_optimal_front(through, here) {
                    let key = self.nodes[e.to.index()].ext_id;
                    if best.is_none_or(|(k, _, _)| key < k) {
                        best = Some((key, eid, e.to));
                    }
                }
            }
            let (_, eid, next) = best.ok_or_else(|| Error::Param {
                name: "edge_cost",
                msg: "inconsistent cost function (non-deterministic or negative)".into(),
            })?;
            cost += edge_cost(&self.edges[eid.index()]);
            edges.push(eid);
            nodes.push(next);
            curr = next;
        }
        Ok(Some(Path { nodes, edges, cost }))
    }

    fn dijkstra_to<F>(&self, dst: NodeId, edge_cost: &F) -> Vec<f64>
    where
        F: Fn(&Edge) -> f64,
    {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        #[derive(PartialEq)]
        struct Item(f64, u32);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.0
                    .partial_cmp(&other.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(self.1.cmp(&other.1))
            }
        }

        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        dist[dst.index()] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse(Item(0.0, dst.0)));
        while let Some(Reverse(Item(d, v))) = heap.pop() {
            if d > dist[v as usize] {
                continue;
            }
            for &eid in &self.inc[v as usize] {
                let e = &self.edges[eid.index()];
                let nd = d + edge_cost(e);
                if nd < dist[e.from.index()] {
                    dist[e.from.index()] = nd;
                    heap.push(Reverse(Item(nd, e.from.0)));
                }
            }
        }
        dist
    }

    /// Fewest-edge hop distance, or `None` if unreachable.
    pub fn hop_distance(&self, src: NodeId, dst: NodeId) -> Result<Option<usize>> {
        self.check_node(src)?;
        self.check_node(dst)?;
        if src == dst {
            return Ok(Some(0));
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[src.index()] = true;
        let mut frontier = vec![src];
        let mut hops = 0usize;
        while !frontier.is_empty() {
            hops += 1;
            let mut next = Vec::new();
            for v in frontier {
                for &eid in &self.out[v.index()] {
                    let to = self.edges[eid.index()].to;
                    if to == dst {
                        return Ok(Some(hops));
                    }
                    if !seen[to.index()] {
                        seen[to.index()] = true;
                        next.push(to);
                    }
                }
            }
            frontier = next;
        }
        Ok(None)
    }

    /// Default enumeration hop budget: 2.5x the stitched shortest-path hop
    /// count over the waypoint legs.
    pub fn default_hop_budget(&self, waypoints: &[NodeId]) -> Result<Option<usize>> {
        let mut total = 0usize;
        for pair in waypoints.windows(2) {
            match self.hop_distance(pair[0], pair[1])? {
                Some(h) => total += h,
                None => return Ok(None),
            }
        }
        Ok(Some((total as f64 * 2.5).ceil() as usize))
    }

    /// Every simple directed path that visits `waypoints` in order, ends at
    /// the final waypoint and uses at most `max_hops` edges. Results come out
    /// sorted by node sequence.
    pub fn enumerate_acyclic_paths(
        &self,
        waypoints: &[NodeId],
        max_hops: usize,
    ) -> Result<Vec<Path>> {
        let (paths, truncated) = self.enumerate_with_limit(waypoints, max_hops, None)?;
        debug_assert!(!truncated);
        Ok(paths)
    }

    /// As `enumerate_acyclic_paths`, but stops after `limit` paths and
    /// reports truncation instead of running away on dense graphs.
    pub fn enumerate_with_limit(
        &self,
        waypoints: &[NodeId],
        max_hops: usize,
        limit: Option<usize>,
    ) -> Result<(Vec<Path>, bool)> {
        if waypoints.is_empty() {
            return Err(Error::Param {
                name: "waypoints",
                msg: "at least one waypoint is required".into(),
            });
        }
        for &w in waypoints {
            self.check_node(w)?;
        }
        // A waypoint appearing twice can never be visited in order by a
        // simple path (other than the trivial repetition), so reject it.
        for pair in waypoints.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::Param {
                    name: "waypoints",
                    msg: "consecutive waypoints must be distinct".into(),
                });
            }
        }

        let start = waypoints[0];
        let mut waypoint_rank: HashMap<NodeId, usize> = HashMap::new();
        for (i, &w) in waypoints.iter().enumerate() {
            waypoint_rank.insert(w, i);
        }

        let mut results = Vec::new();
        let mut truncated = false;
        let mut visited = vec![false; self.nodes.len()];
        visited[start.index()] = true;
        let mut node_stack = vec![start];
        let mut edge_stack: Vec<EdgeId> = Vec::new();
        self.dfs_paths(
            start,
            1, // next waypoint index to reach
            waypoints,
            &waypoint_rank,
            max_hops,
            limit,
            &mut visited,
            &mut node_stack,
            &mut edge_stack,
            &mut results,
            &mut truncated,
        );
        results.sort_by(|a, b| a.nodes.cmp(&b.nodes));
        Ok((results, truncated))
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs_paths(
        &self,
        curr: NodeId,
        next_wp: usize,
        waypoints: &[NodeId],
        waypoint_rank: &HashMap<NodeId, usize>,
        max_hops: usize,
        limit: Option<usize>,
        visited: &mut Vec<bool>,
        node_stack: &mut Vec<NodeId>,
        edge_stack: &mut Vec<EdgeId>,
        results: &mut Vec<Path>,
        truncated: &mut bool,
    ) {
        if next_wp == waypoints.len() {
            // All waypoints consumed; the path ends exactly here.
            let cost = edge_stack
                .iter()
                .map(|e| self.edges[e.index()].length_m)
                .sum();
            results.push(Path {
                nodes: node_stack.clone(),
                edges: edge_stack.clone(),
                cost,
            });
            return;
        }
        if *truncated || edge_stack.len() >= max_hops {
            return;
        }
        for &eid in &self.out[curr.index()] {
            if let Some(limit) = limit {
                if results.len() >= limit {
                    *truncated = true;
                    return;
                }
            }
            let to = self.edges[eid.index()].to;
            if visited[to.index()] {
                continue;
            }
            let mut wp = next_wp;
            if let Some(&rank) = waypoint_rank.get(&to) {
                if rank == next_wp {
                    wp = next_wp + 1;
                } else if rank > next_wp {
                    // Hitting a later waypoint early can never be repaired by
                    // a simple path.
                    continue;
                }
            }
            visited[to.index()] = true;
            node_stack.push(to);
            edge_stack.push(eid);
            self.dfs_paths(
                to,
                wp,
                waypoints,
                waypoint_rank,
                max_hops,
                limit,
                visited,
                node_stack,
                edge_stack,
                results,
                truncated,
            );
            edge_stack.pop();
            node_stack.pop();
            visited[to.index()] = false;
        }
    }

    /// FNV-1a over the canonical node/edge listing; identifies the network a
    /// model was trained against.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&(self.nodes.len() as u64).to_le_bytes());
        for n in &self.nodes {
            eat(&n.ext_id.to_le_bytes());
            eat(&n.lat.to_le_bytes());
            eat(&n.lon.to_le_bytes());
        }
        eat(&(self.edges.len() as u64).to_le_bytes());
        for e in &self.edges {
            eat(&e.ext_id.to_le_bytes());
            eat(&self.nodes[e.from.index()].ext_id.to_le_bytes());
            eat(&self.nodes[e.to.index()].ext_id.to_le_bytes());
            eat(&e.length_m.to_le_bytes());
        }
        h
    }
}

/// Great-circle distance in meters.
pub fn haversine(a: &Node, b: &Node) -> f64 {
    haversine_coords(a.lat, a.lon, b.lat, b.lon)
}

pub fn haversine_coords(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

fn on_optimal_front(through: f64, here: f64) -> bool {
    let tol = 1e-9 * here.abs().max(1.0);
    (through - here).abs() <= tol
}

// ---------------------------------------------------------------------------
// Loading

#[derive(Deserialize, Serialize)]
struct JsonNode {
    id: u64,
    lat: f64,
    lon: f64,
}

#[derive(Deserialize, Serialize)]
struct JsonEdge {
    id: u64,
    src: u64,
    dst: u64,
    length_m: f64,
}

#[derive(Deserialize, Serialize)]
struct JsonNetwork {
    nodes: Vec<JsonNode>,
    edges: Vec<JsonEdge>,
}

impl RoadNetwork {
    /// Loads the csv-pair format: a nodes file with header `node_id,lat,lon`
    /// and an edges file with header `edge_id,src,dst,length_m`.
    pub fn load_csv(nodes: impl Read, edges: impl Read) -> Result<Self> {
        let raw_nodes = parse_csv(nodes, "nodes", &["node_id", "lat", "lon"], |f, line| {
            Ok((
                parse_field::<u64>(f[0], "node_id", "nodes", line)?,
                parse_field::<f64>(f[1], "lat", "nodes", line)?,
                parse_field::<f64>(f[2], "lon", "nodes", line)?,
            ))
        })?;
        let raw_edges = parse_csv(
            edges,
            "edges",
            &["edge_id", "src", "dst", "length_m"],
            |f, line| {
                Ok((
                    parse_field::<u64>(f[0], "edge_id", "edges", line)?,
                    parse_field::<u64>(f[1], "src", "edges", line)?,
                    parse_field::<u64>(f[2], "dst", "edges", line)?,
                    parse_field::<f64>(f[3], "length_m", "edges", line)?,
                ))
            },
        )?;
        RoadNetwork::from_parts(raw_nodes, raw_edges)
    }

    /// Loads the single-object json format.
    pub fn load_json(reader: impl Read) -> Result<Self> {
        let parsed: JsonNetwork = serde_json::from_reader(reader)?;
        RoadNetwork::from_parts(
            parsed
                .nodes
                .into_iter()
                .map(|n| (n.id, n.lat, n.lon))
                .collect(),
            parsed
                .edges
                .into_iter()
                .map(|e| (e.id, e.src, e.dst, e.length_m))
                .collect(),
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self
                .nodes
                .iter()
                .map(|n| serde_json::json!({"id": n.ext_id, "lat": n.lat, "lon": n.lon}))
                .collect::<Vec<_>>(),
            "edges": self
                .edges
                .iter()
                .map(|e| serde_json::json!({
                    "id": e.ext_id,
                    "src": self.nodes[e.from.index()].ext_id,
                    "dst": self.nodes[e.to.index()].ext_id,
                    "length_m": e.length_m,
                }))
                .collect::<Vec<_>>(),
        })
    }

    pub fn write_csv(
        &self,
        mut nodes: impl std::io::Write,
        mut edges: impl std::io::Write,
    ) -> Result<()> {
        writeln!(nodes, "node_id,lat,lon")?;
        for n in &self.nodes {
            writeln!(nodes, "{},{},{}", n.ext_id, n.lat, n.lon)?;
        }
        writeln!(edges, "edge_id,src,dst,length_m")?;
        for e in &self.edges {
            writeln!(
                edges,
                "{},{},{},{}",
                e.ext_id,
                self.nodes[e.from.index()].ext_id,
                self.nodes[e.to.index()].ext_id,
                e.length_m
            )?;
        }
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(raw: &str, field: &str, file: &str, line: usize) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        file: file.into(),
        line,
        msg: format!("field `{field}`: cannot parse `{raw}`"),
    })
}

fn parse_csv<T, F>(reader: impl Read, file: &str, header: &[&str], mut row: F) -> Result<Vec<T>>
where
    F: FnMut(&[&str], usize) -> Result<T>,
{
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Parse {
        file: file.into(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let first = first?;
    let got: Vec<&str> = first.split(',').map(str::trim).collect();
    if got != header {
        return Err(Error::Parse {
            file: file.into(),
            line: 1,
            msg: format!("expected header `{}`, got `{first}`", header.join(",")),
        });
    }
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                file: file.into(),
                line: lineno,
                msg: format!("expected {} fields, got {}", header.len(), fields.len()),
            });
        }
        out.push(row(&fields, lineno)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::d4_network;

    #[test]
    fn load_minimal_csv() {
        let nodes = "node_id,lat,lon\n1,0.0,0.0\n2,0.0,0.01\n";
        let edges = "edge_id,src,dst,length_m\n1,1,2,1100\n";
        let net = RoadNetwork::load_csv(nodes.as_bytes(), edges.as_bytes()).unwrap();
        assert_eq!(net.node_count(), 2);
        assert_eq!(net.edge_count(), 1);
    }

    #[test]
    fn dangling_endpoint_rejected() {
        let nodes = "node_id,lat,lon\n1,0.0,0.0\n";
        let edges = "edge_id,src,dst,length_m\n1,1,9,500\n";
        let err = RoadNetwork::load_csv(nodes.as_bytes(), edges.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DanglingEndpoint { edge: 1, node: 9 }));
    }

    #[test]
    fn parse_error_reports_position() {
        let nodes = "node_id,lat,lon\n1,0.0,0.0\n2,abc,0.0\n";
        let edges = "edge_id,src,dst,length_m\n";
        let err = RoadNetwork::load_csv(nodes.as_bytes(), edges.as_bytes()).unwrap_err();
        match err {
            Error::Parse { file, line, msg } => {
                assert_eq!(file, "nodes");
                assert_eq!(line, 3);
                assert!(msg.contains("lat"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_direction_rejected() {
        let err = RoadNetwork::builder()
            .node(1, 0.0, 0.0)
            .node(2, 0.0, 0.01)
            .edge(1, 1, 2, 100.0)
            .edge(2, 1, 2, 200.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateEdge { .. }));
    }

    #[test]
    fn d4_counts_and_adjacency() {
        let net = d4_network();
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.edge_count(), 4);
        let a = net.node_by_ext(1).unwrap();
        let d = net.node_by_ext(4).unwrap();
        let b = net.node_by_ext(2).unwrap();
        let out_a: Vec<u64> = net
            .out_edges(a)
            .unwrap()
            .iter()
            .map(|&e| net.edge(e).ext_id)
            .collect();
        assert_eq!(out_a, vec![1, 2]); // a->b, a->c
        assert!(net.out_edges(d).unwrap().is_empty());
        let out_b: Vec<u64> = net
            .out_edges(b)
            .unwrap()
            .iter()
            .map(|&e| net.edge(e).ext_id)
            .collect();
        assert_eq!(out_b, vec![3]); // b->d
    }

    #[test]
    fn adjacency_matches_edge_set() {
        let net = d4_network();
        let mut from_adjacency = Vec::new();
        for n in net.nodes() {
            for &e in net.out_edges(n.id).unwrap() {
                from_adjacency.push(e);
            }
        }
        from_adjacency.sort_unstable();
        let all: Vec<EdgeId> = net.edges().iter().map(|e| e.id).collect();
        assert_eq!(from_adjacency, all);
        let mut from_in = Vec::new();
        for n in net.nodes() {
            for &e in net.in_edges(n.id).unwrap() {
                from_in.push(e);
            }
        }
        from_in.sort_unstable();
        assert_eq!(from_in, all);
    }

    #[test]
    fn d4_shortest_path_tie_breaks_to_smaller_ids() {
        let net = d4_network();
        let a = net.node_by_ext(1).unwrap();
        let d = net.node_by_ext(4).unwrap();
        let p = net
            .shortest_path(a, d, |e| e.length_m)
            .unwrap()
            .expect("reachable");
        assert!((p.cost - 2000.0).abs() < 1e-9);
        let ids: Vec<u64> = p.nodes.iter().map(|&n| net.node(n).ext_id).collect();
        assert_eq!(ids, vec![1, 2, 4]); // a->b->d preferred over a->c->d
    }

    #[test]
    fn shortest_path_identity_and_unreachable() {
        let net = d4_network();
        let a = net.node_by_ext(1).unwrap();
        let d = net.node_by_ext(4).unwrap();
        let p = net.shortest_path(a, a, |e| e.length_m).unwrap().unwrap();
        assert_eq!(p.nodes, vec![a]);
        assert!(p.edges.is_empty());
        assert_eq!(p.cost, 0.0);
        assert!(net.shortest_path(d, a, |e| e.length_m).unwrap().is_none());
    }

    #[test]
    fn d4_path_enumeration() {
        let net = d4_network();
        let a = net.node_by_ext(1).unwrap();
        let d = net.node_by_ext(4).unwrap();
        let paths = net.enumerate_acyclic_paths(&[a, d], 4).unwrap();
        let seqs: Vec<Vec<u64>> = paths
            .iter()
            .map(|p| p.nodes.iter().map(|&n| net.node(n).ext_id).collect())
            .collect();
        assert_eq!(seqs, vec![vec![1, 2, 4], vec![1, 3, 4]]);
        assert!(net.enumerate_acyclic_paths(&[d, a], 4).unwrap().is_empty());
    }

    #[test]
    fn enumerated_paths_are_simple_and_ordered() {
        let net = d4_network();
        let a = net.node_by_ext(1).unwrap();
        let d = net.node_by_ext(4).unwrap();
        let sp = net.shortest_path(a, d, |e| e.length_m).unwrap().unwrap();
        for p in net.enumerate_acyclic_paths(&[a, d], 6).unwrap() {
            let mut seen = std::collections::HashSet::new();
            assert!(p.nodes.iter().all(|n| seen.insert(*n)), "path not simple");
            assert_eq!(p.nodes.first(), Some(&a));
            assert_eq!(p.nodes.last(), Some(&d));
            assert!(sp.cost <= p.cost + 1e-9);
        }
    }

    #[test]
    fn haversine_reference_values() {
        let a = Node {
            id: NodeId(0),
            ext_id: 0,
            lat: 0.0,
            lon: 0.0,
        };
        let b = Node {
            id: NodeId(1),
            ext_id: 1,
            lat: 0.0,
            lon: 1.0,
        };
        let d = haversine(&a, &b);
        assert!((d - 111_195.0).abs() / 111_195.0 < 0.001, "got {d}");
        assert_eq!(haversine(&a, &b), haversine(&b, &a));
        assert_eq!(haversine(&a, &a), 0.0);
    }

    #[test]
    fn fingerprint_changes_with_topology() {
        let net = d4_network();
        let other = RoadNetwork::builder()
            .node(1, 0.0, 0.0)
            .node(2, 0.0, 0.01)
            .edge(1, 1, 2, 100.0)
            .build()
            .unwrap();
        assert_ne!(net.fingerprint(), other.fingerprint());
        assert_eq!(net.fingerprint(), d4_network().fingerprint());
    }

    #[test]
    fn json_roundtrip() {
        let net = d4_network();
        let blob = serde_json::to_string(&net.to_json()).unwrap();
        let again = RoadNetwork::load_json(blob.as_bytes()).unwrap();
        assert_eq!(again.node_count(), net.node_count());
        assert_eq!(again.fingerprint(), net.fingerprint());
    }
}
