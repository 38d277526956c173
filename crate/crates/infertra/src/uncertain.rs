//! The inference result: an edge-weighted subgraph whose weights are
//! traversal marginals, annotated with source, destination and simulated
//! arrival times. All public identifiers here are external ids so a result
//! file is self-contained.
//!
//! Weights are stored as integer sample counts over the total; node visit
//! likelihoods and flow checks are computed on the counts, which keeps the
//! identities exact (the destination's in-weight is `total/total`, not a
//! sum of rounded ratios).

use crate::error::{Error, Result};
use crate::inference::EdgeMarginals;
use crate::network::{haversine_coords, NodeId, RoadNetwork};
use crate::time::{circular_distance_f64, TimeOfDay, SECONDS_PER_DAY};
use crate::trajectory::StPoint;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::Read;

#[derive(Clone, Debug, PartialEq)]
pub struct UEdge {
    /// External edge id of the underlying road segment.
    pub id: u64,
    pub src: u64,
    pub dst: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNode {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub nodes: Vec<u64>,
    /// Fractional seconds-of-day, unwrapped within each observation pair.
    pub times: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct UncertainTrajectory {
    source: u64,
    dest: u64,
    total: u64,
    edges: Vec<UEdge>,
    nodes: Vec<UNode>,
    node_slot: HashMap<u64, usize>,
    out_by_node: HashMap<u64, Vec<usize>>,
    in_by_node: HashMap<u64, Vec<usize>>,
    /// Full-stream arrival time sums per node: (sum, count).
    time_sums: HashMap<u64, (f64, u64)>,
    traces: Vec<Trace>,
    origin_time: u32,
}

pub struct TimeDistribution {
    /// Node the distribution belongs to (nearest in-result node when the
    /// queried one is absent).
    pub node: u64,
    pub fallback: bool,
    pub mean: f64,
    /// Wrapped seconds-of-day from the retained traces.
    pub samples: Vec<f64>,
}

impl UncertainTrajectory {
    pub(crate) fn from_sampling(
        net: &RoadNetwork,
        source: StPoint,
        dest: StPoint,
        marginals: &EdgeMarginals,
        node_sums: &HashMap<NodeId, (f64, u64)>,
        retained: Vec<(Vec<NodeId>, Vec<f64>)>,
    ) -> Self {
        let mut edges: Vec<UEdge> = marginals
            .counts()
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&e, &count)| {
                let edge = net.edge(e);
                UEdge {
                    id: edge.ext_id,
                    src: net.node(edge.from).ext_id,
                    dst: net.node(edge.to).ext_id,
                    count,
                }
            })
            .collect();
        edges.sort_by_key(|e| (e.src, e.dst));
        let mut node_ids: Vec<u64> = edges.iter().flat_map(|e| [e.src, e.dst]).collect();
        node_ids.sort_unstable();
        node_ids.dedup();
        let nodes: Vec<UNode> = node_ids
            .iter()
            .map(|&ext| {
                let n = net.node(net.node_by_ext(ext).expect("result node exists"));
                UNode {
                    id: ext,
                    lat: n.lat,
                    lon: n.lon,
                }
            })
            .collect();
        let time_sums = node_sums
            .iter()
            .map(|(&n, &sums)| (net.node(n).ext_id, sums))
            .collect();
        let traces = retained
            .into_iter()
            .map(|(nodes, times)| Trace {
                nodes: nodes.into_iter().map(|n| net.node(n).ext_id).collect(),
                times,
            })
            .collect();
        Self::assemble(
            net.node(source.node).ext_id,
            net.node(dest.node).ext_id,
            marginals.total(),
            edges,
            nodes,
            time_sums,
            traces,
            source.time.seconds(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        source: u64,
        dest: u64,
        total: u64,
        edges: Vec<UEdge>,
        nodes: Vec<UNode>,
        time_sums: HashMap<u64, (f64, u64)>,
        traces: Vec<Trace>,
        origin_time: u32,
    ) -> Self {
        let node_slot = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut out_by_node: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut in_by_node: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            out_by_node.entry(e.src).or_default().push(i);
            in_by_node.entry(e.dst).or_default().push(i);
        }
        UncertainTrajectory {
            source,
            dest,
            total,
            edges,
            nodes,
            node_slot,
            out_by_node,
            in_by_node,
            time_sums,
            traces,
            origin_time,
        }
    }

    pub fn source(&self) -> u64 {
        self.source
    }

    pub fn dest(&self) -> u64 {
        self.dest
    }

    pub fn total_samples(&self) -> u64 {
        self.total
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[UEdge] {
        &self.edges
    }

    pub fn nodes(&self) -> &[UNode] {
        &self.nodes
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn weight(&self, e: &UEdge) -> f64 {
        e.count as f64 / self.total as f64
    }

    pub fn edge_weight_ext(&self, src: u64, dst: u64) -> Option<f64> {
        self.out_by_node
            .get(&src)?
            .iter()
            .map(|&i| &self.edges[i])
            .find(|e| e.dst == dst)
            .map(|e| self.weight(e))
    }

    pub fn contains_node(&self, v: u64) -> bool {
        self.node_slot.contains_key(&v)
    }

    /// Visit likelihood: the sum of incoming edge weights, the source fixed
    /// at one. Computed over integer counts, so nodes on every sample come
    /// out exactly 1.
    pub fn node_weight(&self, v: u64) -> Result<f64> {
        if !self.contains_node(v) {
            return Err(Error::NodeNotInResult(v));
        }
        if v == self.source {
            return Ok(1.0);
        }
        let count: u64 = self
            .in_by_node
            .get(&v)
            .map(|ids| ids.iter().map(|&i| self.edges[i].count).sum())
            .unwrap_or(0);
        Ok(count as f64 / self.total as f64)
    }

    fn out_count_sum(&self, v: u64) -> u64 {
        self.out_by_node
            .get(&v)
            .map(|ids| ids.iter().map(|&i| self.edges[i].count).sum())
            .unwrap_or(0)
    }

    /// Exact in/out count balance at every interior node.
    pub fn flow_conserved(&self) -> bool {
        self.nodes.iter().all(|n| {
            if n.id == self.source || n.id == self.dest {
                return true;
            }
            let inc: u64 = self
                .in_by_node
                .get(&n.id)
                .map(|ids| ids.iter().map(|&i| self.edges[i].count).sum())
                .unwrap_or(0);
            inc == self.out_count_sum(n.id)
        })
    }

    /// Chained likelihood of a full source-to-destination path: at each node
    /// the probability of its next edge among the node's out-edges in the
    /// result graph.
    pub fn trajectory_likelihood(&self, path: &[u64]) -> Result<f64> {
        if path.len() < 2 || path[0] != self.source || *path.last().unwrap() != self.dest {
            return Err(Error::PathNotInResult(
                "path must run from the source to the destination".into(),
            ));
        }
        let mut likelihood = 1.0;
        for w in path.windows(2) {
            let Some(out) = self.out_by_node.get(&w[0]) else {
                return Err(Error::PathNotInResult(format!(
                    "no out-edges at node {}",
                    w[0]
                )));
            };
            let Some(edge) = out.iter().map(|&i| &self.edges[i]).find(|e| e.dst == w[1]) else {
                return Err(Error::PathNotInResult(format!(
                    "edge {} -> {} not in the result",
                    w[0], w[1]
                )));
            };
            likelihood *= edge.count as f64 / self.out_count_sum(w[0]) as f64;
        }
        Ok(likelihood)
    }

    /// The source-to-destination path maximizing the chained likelihood,
    /// found by branch-and-bound over log ratios with per-path cycle
    /// exclusion; ties resolve to the lexicographically smallest node
    /// sequence.
    pub fn most_likely_trajectory(&self) -> Result<(Vec<u64>, f64)> {
        if self.edges.is_empty() {
            return Err(Error::EmptyResult);
        }
        let mut best: Option<(f64, Vec<u64>)> = None;
        let mut stack = vec![self.source];
        self.mlt_dfs(self.source, 0.0, &mut stack, &mut best);
        match best {
            Some((log, path)) => Ok((path, log.exp())),
            None => Err(Error::EmptyResult),
        }
    }

    fn mlt_dfs(
        &self,
        curr: u64,
        log_so_far: f64,
        stack: &mut Vec<u64>,
        best: &mut Option<(f64, Vec<u64>)>,
    ) {
        if curr == self.dest {
            if best.as_ref().is_none_or(|(b, _)| log_so_far > *b) {
                *best = Some((log_so_far, stack.clone()));
            }
            return;
        }
        // Every remaining ratio is <= 1, so a branch at or below the best
        // cannot strictly improve; ties keep the first (lex-smallest) path.
        if let Some((b, _)) = best {
            if log_so_far <= *b {
                return;
            }
        }
        let Some(out) = self.out_by_node.get(&curr) else {
            return;
        };
        let denom = self.out_count_sum(curr) as f64;
        let mut next: Vec<&UEdge> = out.iter().map(|&i| &self.edges[i]).collect();
        next.sort_by_key(|e| e.dst);
        for e in next {
            if stack.contains(&e.dst) {
                continue;
            }
            stack.push(e.dst);
            self.mlt_dfs(
                e.dst,
                log_so_far + (e.count as f64 / denom).ln(),
                stack,
                best,
            );
            stack.pop();
        }
    }

    /// Highest-weight edges, descending, ties by external edge id. Returns
    /// fewer than `k` when the result is smaller.
    pub fn top_k_edges(&self, k: usize) -> Vec<(UEdge, f64)> {
        let mut all: Vec<&UEdge> = self.edges.iter().collect();
        all.sort_by(|a, b| b.count.cmp(&a.count).then(a.id.cmp(&b.id)));
        all.into_iter()
            .take(k)
            .map(|e| (e.clone(), self.weight(e)))
            .collect()
    }

    /// Distribution of the walker's location at time `t`: per retained
    /// trace, the node whose simulated arrival is nearest `t` on the day
    /// circle; frequencies over traces.
    pub fn location_at_time(&self, t: TimeOfDay) -> Result<Vec<(u64, f64)>> {
        if self.traces.is_empty() {
            return Err(Error::NoTimeSamples);
        }
        let target = t.seconds() as f64;
        let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
        for trace in &self.traces {
            let mut best = (f64::INFINITY, trace.nodes[0]);
            for (&n, &at) in trace.nodes.iter().zip(&trace.times) {
                let d = circular_distance_f64(at, target);
                if d < best.0 {
                    best = (d, n);
                }
            }
            *counts.entry(best.1).or_insert(0) += 1;
        }
        let total = self.traces.len() as f64;
        Ok(counts
            .into_iter()
            .map(|(n, c)| (n, c as f64 / total))
            .collect())
    }

    /// Arrival-time distribution at `v`. When `v` is not part of the result
    /// the spatially nearest result node answers instead, flagged as a
    /// fallback; resolving an unknown node's coordinates needs the network.
    pub fn time_at_node(&self, v: u64, net: Option<&RoadNetwork>) -> Result<TimeDistribution> {
        if self.traces.is_empty() {
            return Err(Error::NoTimeSamples);
        }
        let (node, fallback) = if self.contains_node(v) {
            (v, false)
        } else {
            let net = net.ok_or(Error::NodeNotInResult(v))?;
            let q = net.node(net.node_by_ext(v)?);
            let nearest = self
                .nodes
                .iter()
                .map(|n| {
                    let d = haversine_coords(n.lat, n.lon, q.lat, q.lon);
                    (d, n.id)
                })
                .min_by(|a, b| a.partial_cmp(b).unwrap())
                .ok_or(Error::EmptyResult)?;
            (nearest.1, true)
        };
        let day = SECONDS_PER_DAY as f64;
        let samples: Vec<f64> = self
            .traces
            .iter()
            .filter_map(|t| {
                t.nodes
                    .iter()
                    .position(|&n| n == node)
                    .map(|i| t.times[i].rem_euclid(day))
            })
            .collect();
        if samples.is_empty() {
            return Err(Error::NoTimeSamples);
        }
        let mean = match self.time_sums.get(&node) {
            Some(&(sum, count)) if count > 0 => (sum / count as f64).rem_euclid(day),
            _ => samples.iter().sum::<f64>() / samples.len() as f64,
        };
        Ok(TimeDistribution {
            node,
            fallback,
            mean,
            samples,
        })
    }

    /// Probability-weighted spatial error of the location prediction at `t`
    /// against a known true position.
    pub fn weighted_spatial_distance(
        &self,
        t: TimeOfDay,
        truth_lat: f64,
        truth_lon: f64,
    ) -> Result<f64> {
        let dist = self.location_at_time(t)?;
        let mut sd = 0.0;
        for (node, p) in dist {
            let slot = self.node_slot[&node];
            let n = &self.nodes[slot];
            sd += p * haversine_coords(n.lat, n.lon, truth_lat, truth_lon);
        }
        Ok(sd)
    }

    /// True when the result graph has no directed cycle.
    pub fn is_acyclic(&self) -> bool {
        let mut indeg: HashMap<u64, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for e in &self.edges {
            *indeg.get_mut(&e.dst).unwrap() += 1;
        }
        let mut queue: Vec<u64> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut seen = 0usize;
        while let Some(n) = queue.pop() {
            seen += 1;
            if let Some(out) = self.out_by_node.get(&n) {
                for &i in out {
                    let d = indeg.get_mut(&self.edges[i].dst).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        queue.push(self.edges[i].dst);
                    }
                }
            }
        }
        seen == self.nodes.len()
    }

    /// All simple source-to-destination paths inside the result graph, up to
    /// `limit`. Supports likelihood-normalization checks on small results.
    pub fn enumerate_paths(&self, limit: usize) -> Vec<Vec<u64>> {
        let mut out = Vec::new();
        let mut stack = vec![self.source];
        self.paths_dfs(self.source, &mut stack, limit, &mut out);
        out
    }

    fn paths_dfs(&self, curr: u64, stack: &mut Vec<u64>, limit: usize, out: &mut Vec<Vec<u64>>) {
        if out.len() >= limit {
            return;
        }
        if curr == self.dest {
            out.push(stack.clone());
            return;
        }
        let Some(outs) = self.out_by_node.get(&curr) else {
            return;
        };
        for &i in outs {
            let to = self.edges[i].dst;
            if stack.contains(&to) {
                continue;
            }
            stack.push(to);
            self.paths_dfs(to, stack, limit, out);
            stack.pop();
        }
    }

    // -----------------------------------------------------------------------
    // Serialization

    pub fn to_json_value(&self) -> serde_json::Value {
        let rec = JsonU {
            source: self.source,
            dest: self.dest,
            samples: self.total,
            origin_t: self.origin_time,
            edges: self
                .edges
                .iter()
                .map(|e| JsonUEdge {
                    id: e.id,
                    src: e.src,
                    dst: e.dst,
                    weight: self.weight(e),
                    count: e.count,
                })
                .collect(),
            nodes: self
                .nodes
                .iter()
                .map(|n| JsonUNode {
                    id: n.id,
                    lat: n.lat,
                    lon: n.lon,
                })
                .collect(),
            node_times: self
                .time_sums
                .iter()
                .filter(|(_, &(_, c))| c > 0)
                .map(|(&n, &(sum, count))| {
                    (
                        n,
                        JsonNodeTime {
                            mean_t: (sum / count as f64).rem_euclid(SECONDS_PER_DAY as f64),
                            samples: count,
                        },
                    )
                })
                .collect(),
            traces: self
                .traces
                .iter()
                .map(|t| JsonTrace {
                    nodes: t.nodes.clone(),
                    t: t.times.clone(),
                })
                .collect(),
        };
        serde_json::to_value(rec).expect("serializable")
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut buf = serde_json::to_vec_pretty(&self.to_json_value()).expect("serializable");
        buf.push(b'\n');
        buf
    }

    pub fn from_json(reader: impl Read) -> Result<Self> {
        let rec: JsonU = serde_json::from_reader(reader)?;
        let mut edges: Vec<UEdge> = rec
            .edges
            .into_iter()
            .map(|e| UEdge {
                id: e.id,
                src: e.src,
                dst: e.dst,
                count: e.count,
            })
            .collect();
        edges.sort_by_key(|e| (e.src, e.dst));
        let mut nodes: Vec<UNode> = rec
            .nodes
            .into_iter()
            .map(|n| UNode {
                id: n.id,
                lat: n.lat,
                lon: n.lon,
            })
            .collect();
        nodes.sort_by_key(|n| n.id);
        let time_sums = rec
            .node_times
            .into_iter()
            .map(|(n, t)| (n, (t.mean_t * t.samples as f64, t.samples)))
            .collect();
        let traces = rec
            .traces
            .into_iter()
            .map(|t| Trace {
                nodes: t.nodes,
                times: t.t,
            })
            .collect();
        Ok(Self::assemble(
            rec.source,
            rec.dest,
            rec.samples,
            edges,
            nodes,
            time_sums,
            traces,
            rec.origin_t,
        ))
    }

    /// GeoJSON FeatureCollection: one LineString per edge with weight
    /// properties, plus source/destination points.
    pub fn to_geojson_value(&self) -> serde_json::Value {
        let mut features: Vec<serde_json::Value> = Vec::new();
        for e in &self.edges {
            let a = &self.nodes[self.node_slot[&e.src]];
            let b = &self.nodes[self.node_slot[&e.dst]];
            features.push(serde_json::json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[a.lon, a.lat], [b.lon, b.lat]],
                },
                "properties": {
                    "src": e.src,
                    "dst": e.dst,
                    "weight": self.weight(e),
                    "count": e.count,
                },
            }));
        }
        for (id, role) in [(self.source, "source"), (self.dest, "dest")] {
            if let Some(&slot) = self.node_slot.get(&id) {
                let n = &self.nodes[slot];
                features.push(serde_json::json!({
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [n.lon, n.lat]},
                    "properties": {"role": role, "node": id},
                }));
            }
        }
        serde_json::json!({"type": "FeatureCollection", "features": features})
    }
}

#[derive(Serialize, Deserialize)]
struct JsonUEdge {
    id: u64,
    src: u64,
    dst: u64,
    weight: f64,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct JsonUNode {
    id: u64,
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonNodeTime {
    mean_t: f64,
    samples: u64,
}

#[derive(Serialize, Deserialize)]
struct JsonTrace {
    nodes: Vec<u64>,
    t: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonU {
    source: u64,
    dest: u64,
    samples: u64,
    origin_t: u32,
    edges: Vec<JsonUEdge>,
    nodes: Vec<JsonUNode>,
    node_times: BTreeMap<u64, JsonNodeTime>,
    traces: Vec<JsonTrace>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{d4_database, d4_network};
    use crate::inference::{infer, RwrConfig};
    use crate::nmm::{learn, LearnParams};
    use crate::trajectory::Observation;

    fn d4_result() -> UncertainTrajectory {
        let net = d4_network();
        let db = d4_database(&net);
        let model = learn(
            &net,
            &db,
            &LearnParams {
                order: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let obs = Observation {
            points: vec![
                StPoint {
                    node: net.node_by_ext(1).unwrap(),
                    time: TimeOfDay::parse("08:00:00").unwrap(),
                },
                StPoint {
                    node: net.node_by_ext(4).unwrap(),
                    time: TimeOfDay::parse("08:02:00").unwrap(),
                },
            ],
        };
        let cfg = RwrConfig {
            seed: 11,
            min_samples: 20_000,
            ..Default::default()
        };
        infer(&net, &model, &obs, &cfg).unwrap()
    }

    #[test]
    fn node_weights_on_d4() {
        let u = d4_result();
        assert_eq!(u.node_weight(4).unwrap(), 1.0);
        let wb = u.node_weight(2).unwrap();
        assert!((wb - 0.75).abs() < 0.03);
        assert_eq!(u.node_weight(1).unwrap(), 1.0);
        assert!(matches!(u.node_weight(99), Err(Error::NodeNotInResult(99))));
    }

    #[test]
    fn likelihoods_on_d4() {
        let u = d4_result();
        let via_b = u.trajectory_likelihood(&[1, 2, 4]).unwrap();
        let via_c = u.trajectory_likelihood(&[1, 3, 4]).unwrap();
        assert!((via_b - 0.75).abs() < 0.03);
        assert!((via_c - 0.25).abs() < 0.03);
        assert!((via_b + via_c - 1.0).abs() < 1e-9);
        assert!(u.trajectory_likelihood(&[1, 4]).is_err());
        assert!(u.trajectory_likelihood(&[2, 4]).is_err());
    }

    #[test]
    fn mlt_on_d4() {
        let u = d4_result();
        let (path, p) = u.most_likely_trajectory().unwrap();
        assert_eq!(path, vec![1, 2, 4]);
        assert!((p - 0.75).abs() < 0.03);
        // Exhaustive check against every enumerable path.
        for path in u.enumerate_paths(100) {
            assert!(u.trajectory_likelihood(&path).unwrap() <= p + 1e-12);
        }
    }

    #[test]
    fn top_k_on_d4() {
        let u = d4_result();
        let top = u.top_k_edges(2);
        assert_eq!(top.len(), 2);
        // a->b (edge 1) and b->d (edge 3) tie near 0.75; order by edge id.
        assert_eq!(top[0].0.id, 1);
        assert_eq!(top[1].0.id, 3);
        assert!(u.top_k_edges(100).len() == 4);
    }

    #[test]
    fn location_at_time_on_d4() {
        let u = d4_result();
        let at_start = u
            .location_at_time(TimeOfDay::parse("08:00:00").unwrap())
            .unwrap();
        assert_eq!(at_start, vec![(1, 1.0)]);
        let at_end = u
            .location_at_time(TimeOfDay::parse("08:02:00").unwrap())
            .unwrap();
        let p_d = at_end
            .iter()
            .find(|(n, _)| *n == 4)
            .map(|(_, p)| *p)
            .unwrap();
        assert!(p_d >= 0.95, "{p_d}");
        for dist in [at_start, at_end] {
            let sum: f64 = dist.iter().map(|(_, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(dist.iter().all(|(_, p)| *p >= 0.0));
        }
    }

    #[test]
    fn time_at_node_on_d4() {
        let u = d4_result();
        let at_b = u.time_at_node(2, None).unwrap();
        assert!(!at_b.fallback);
        assert!((at_b.mean - 28_860.0).abs() < 5.0, "{}", at_b.mean);
        let at_source = u.time_at_node(1, None).unwrap();
        assert_eq!(at_source.mean, 28_800.0);
        assert!(at_source.samples.iter().all(|&s| s == 28_800.0));
    }

    #[test]
    fn time_at_node_fallback() {
        let net = d4_network();
        let db = d4_database(&net);
        let model = learn(
            &net,
            &db,
            &LearnParams {
                order: 1,
                ..Default::default()
            },
        )
        .unwrap();
        // Observe only the a->b leg so node c (ext 3) stays outside U.
        let obs = Observation {
            points: vec![
                StPoint {
                    node: net.node_by_ext(1).unwrap(),
                    time: TimeOfDay::parse("08:00:00").unwrap(),
                },
                StPoint {
                    node: net.node_by_ext(2).unwrap(),
                    time: TimeOfDay::parse("08:01:00").unwrap(),
                },
            ],
        };
        let u = infer(&net, &model, &obs, &RwrConfig::default()).unwrap();
        assert!(!u.contains_node(3));
        let d = u.time_at_node(3, Some(&net)).unwrap();
        assert!(d.fallback);
        assert!(u.contains_node(d.node));
    }

    #[test]
    fn weighted_spatial_distance_arithmetic() {
        let u = d4_result();
        // Prediction concentrated on the true node: zero distance.
        let n1 = u.nodes().iter().find(|n| n.id == 1).unwrap().clone();
        let sd = u
            .weighted_spatial_distance(TimeOfDay::parse("08:00:00").unwrap(), n1.lat, n1.lon)
            .unwrap();
        assert_eq!(sd, 0.0);
        // Never exceeds the largest single distance.
        let t = TimeOfDay::parse("08:01:00").unwrap();
        let dist = u.location_at_time(t).unwrap();
        let max_d = dist
            .iter()
            .map(|(n, _)| {
                let slot = u.nodes().iter().find(|x| x.id == *n).unwrap();
                haversine_coords(slot.lat, slot.lon, n1.lat, n1.lon)
            })
            .fold(0.0f64, f64::max);
        let sd = u.weighted_spatial_distance(t, n1.lat, n1.lon).unwrap();
        assert!(sd <= max_d + 1e-9);
    }

    #[test]
    fn flow_conservation_and_acyclicity_on_d4() {
        let u = d4_result();
        assert!(u.flow_conserved());
        assert!(u.is_acyclic());
    }

    #[test]
    fn likelihoods_normalize_on_acyclic_results() {
        let u = d4_result();
        let total: f64 = u
            .enumerate_paths(1000)
            .iter()
            .map(|p| u.trajectory_likelihood(p).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn json_roundtrip_preserves_queries() {
        let u = d4_result();
        let bytes = u.to_json_bytes();
        let v = UncertainTrajectory::from_json(bytes.as_slice()).unwrap();
        assert_eq!(u.source(), v.source());
        assert_eq!(u.total_samples(), v.total_samples());
        assert_eq!(u.node_weight(4).unwrap(), v.node_weight(4).unwrap());
        assert_eq!(
            u.most_likely_trajectory().unwrap().0,
            v.most_likely_trajectory().unwrap().0
        );
        assert_eq!(bytes, v.to_json_bytes());
    }

    #[test]
    fn geojson_shape() {
        let u = d4_result();
        let g = u.to_geojson_value();
        assert_eq!(g["type"], "FeatureCollection");
        let features = g["features"].as_array().unwrap();
        assert_eq!(features.len(), u.edge_count() + 2);
    }
}
