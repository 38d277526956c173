//! Synthetic road networks and planted-model trajectory corpora. The
//! generator walks mirror the inference walk structure (preference-weighted
//! steps with cycle avoidance), so a model learned from a planted corpus can
//! recover the planted preferences.

use crate::error::{Error, Result};
use crate::network::{haversine_coords, NodeId, RoadNetwork};
use crate::time::TimeOfDay;
use crate::trajectory::{validate_trajectory, StPoint, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;

/// Meters per degree of latitude (and of longitude at the equator).
const M_PER_DEG: f64 = crate::network::EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Bidirected grid: every undirected link becomes two directed edges.
/// External node ids are `row * cols + col + 1`; coordinates sit near the
/// equator so both axes measure `spacing` meters.
pub fn grid_network(rows: usize, cols: usize, spacing: f64) -> Result<RoadNetwork> {
    if rows < 2 || cols < 2 {
        return Err(Error::Param {
            name: "grid",
            msg: "rows and cols must be >= 2".into(),
        });
    }
    if spacing.is_nan() || spacing <= 0.0 {
        return Err(Error::Param {
            name: "spacing",
            msg: "must be positive".into(),
        });
    }
    let mut b = RoadNetwork::builder();
    let node_id = |r: usize, c: usize| (r * cols + c + 1) as u64;
    for r in 0..rows {
        for c in 0..cols {
            b = b.node(
                node_id(r, c),
                (r as f64 * spacing) / M_PER_DEG,
                (c as f64 * spacing) / M_PER_DEG,
            );
        }
    }
    let mut next_edge = 1u64;
    for r in 0..rows {
        for c in 0..cols {
            let mut neighbors = Vec::new();
            if c + 1 < cols {
                neighbors.push(node_id(r, c + 1));
            }
            if r + 1 < rows {
                neighbors.push(node_id(r + 1, c));
            }
            for to in neighbors {
                let from = node_id(r, c);
                b = b.edge(next_edge, from, to, spacing);
                next_edge += 1;
                b = b.edge(next_edge, to, from, spacing);
                next_edge += 1;
            }
        }
    }
    b.build()
}

/// Seeded random connected network: a random spanning tree (both directions)
/// plus extra random directed edges, capped at `max_edges`. Node positions
/// are uniform in a `box_m`-sized square; edge lengths follow the geometry.
pub fn random_network(
    n_nodes: usize,
    max_edges: usize,
    box_m: f64,
    seed: u64,
) -> Result<RoadNetwork> {
    if n_nodes < 2 {
        return Err(Error::Param {
            name: "n_nodes",
            msg: "must be >= 2".into(),
        });
    }
    if max_edges < 2 * (n_nodes - 1) {
        return Err(Error::Param {
            name: "max_edges",
            msg: format!(
                "need at least {} for a bidirected spanning tree",
                2 * (n_nodes - 1)
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = RoadNetwork::builder();
    let mut coords = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let lat = rng.random::<f64>() * box_m / M_PER_DEG;
        let lon = rng.random::<f64>() * box_m / M_PER_DEG;
        coords.push((lat, lon));
        b = b.node(i as u64 + 1, lat, lon);
    }
    let length = |a: usize, z: usize| -> f64 {
        haversine_coords(coords[a].0, coords[a].1, coords[z].0, coords[z].1).max(50.0)
    };
    let mut present: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    let mut next_edge = 1u64;
    let mut edges: Vec<(u64, u64, u64, f64)> = Vec::new();
    for i in 1..n_nodes {
        let j = rng.random_range(0..i);
        for (a, z) in [(i, j), (j, i)] {
            present.insert((a, z));
            edges.push((next_edge, a as u64 + 1, z as u64 + 1, length(a, z)));
            next_edge += 1;
        }
    }
    let mut guard = 0;
    while edges.len() < max_edges && guard < 10_000 {
        guard += 1;
        let a = rng.random_range(0..n_nodes);
        let z = rng.random_range(0..n_nodes);
        if a == z || present.contains(&(a, z)) {
            continue;
        }
        present.insert((a, z));
        edges.push((next_edge, a as u64 + 1, z as u64 + 1, length(a, z)));
        next_edge += 1;
    }
    for (id, src, dst, len) in edges {
        b = b.edge(id, src, dst, len);
    }
    b.build()
}

/// A time-windowed preference override for one node.
#[derive(Clone, Debug)]
pub struct TimePref {
    pub node: NodeId,
    /// Applies to departures with seconds-of-day in `[from, to)`.
    pub from: u32,
    pub to: u32,
    /// Weights aligned with the node's out-edge order.
    pub weights: Vec<f64>,
}

/// Generator model for synthetic corpora. Preference resolution per step:
/// second-order pair rule, then time-windowed rule, then the node's base
/// preference, then uniform.
///
/// Two trip modes: free-roaming walks of `min_hops..=max_hops` edges, or
/// destination-driven trips when `od_pairs` is set, where a walk is kept
/// only if it reaches its drawn destination within `max_hops` edges.
#[derive(Clone, Debug)]
pub struct PlantedModel {
    pub net: RoadNetwork,
    pub node_prefs: HashMap<NodeId, Vec<f64>>,
    pub time_prefs: Vec<TimePref>,
    pub pair_prefs: HashMap<(NodeId, NodeId), Vec<f64>>,
    /// Trip length range in edges, inclusive.
    pub min_hops: usize,
    pub max_hops: usize,
    /// Origin/destination pairs; trips draw one uniformly when non-empty.
    pub od_pairs: Vec<(NodeId, NodeId)>,
    /// Departure windows `[from, to)` in seconds-of-day; trips draw a window
    /// uniformly, then a second uniformly inside it.
    pub departure_windows: Vec<(u32, u32)>,
    /// Constant travel speed, m/s.
    pub speed_mps: f64,
    /// When set, every edge takes exactly this many seconds regardless of
    /// its length (speeds then vary per edge).
    pub edge_seconds: Option<f64>,
    /// Trip sources; every non-sink node when empty.
    pub sources: Vec<NodeId>,
    pub seed: u64,
}

impl PlantedModel {
    pub fn uniform(net: RoadNetwork, min_hops: usize, max_hops: usize, seed: u64) -> Self {
        PlantedModel {
            net,
            node_prefs: HashMap::new(),
            time_prefs: Vec::new(),
            pair_prefs: HashMap::new(),
            min_hops,
            max_hops,
            od_pairs: Vec::new(),
            departure_windows: vec![(6 * 3600, 22 * 3600)],
            speed_mps: 10.0,
            edge_seconds: None,
            sources: Vec::new(),
            seed,
        }
    }

    fn weights_for(&self, prev: Option<NodeId>, node: NodeId, depart: u32) -> Option<&[f64]> {
        if let Some(p) = prev {
            if let Some(w) = self.pair_prefs.get(&(p, node)) {
                return Some(w);
            }
        }
        for tp in &self.time_prefs {
            if tp.node == node && depart >= tp.from && depart < tp.to {
                return Some(&tp.weights);
            }
        }
        self.node_prefs.get(&node).map(|w| w.as_slice())
    }

    fn validate(&self) -> Result<()> {
        if self.min_hops == 0 || self.max_hops < self.min_hops {
            return Err(Error::Param {
                name: "hops",
                msg: "need 1 <= min <= max".into(),
            });
        }
        if self.departure_windows.is_empty() {
            return Err(Error::Param {
                name: "departures",
                msg: "need a window".into(),
            });
        }
        if self.speed_mps.is_nan() || self.speed_mps <= 0.0 {
            return Err(Error::Param {
                name: "speed",
                msg: "must be positive".into(),
            });
        }
        let shortest = self
            .net
            .edges()
            .iter()
            .map(|e| e.length_m)
            .fold(f64::INFINITY, f64::min);
        let fastest = self.edge_seconds.unwrap_or(shortest / self.speed_mps);
        if fastest < 2.0 {
            return Err(Error::Param {
                name: "speed",
                msg: "edge travel times below 2 s cannot produce strictly increasing stamps".into(),
            });
        }
        Ok(())
    }
}

/// Draws `n` valid trajectories from the planted model, deterministic under
/// the model seed and ordered by trip index.
pub fn simulate_corpus(pm: &PlantedModel, n: usize) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::Param {
            name: "n",
            msg: "must be >= 1".into(),
        });
    }
    pm.validate()?;
    let sources: Vec<NodeId> = if pm.sources.is_empty() {
        pm.net
            .nodes()
            .iter()
            .filter(|nd| !pm.net.out_edges(nd.id).unwrap().is_empty())
            .map(|nd| nd.id)
            .collect()
    } else {
        pm.sources.clone()
    };
    if sources.is_empty() {
        return Err(Error::Param {
            name: "sources",
            msg: "network has no non-sink node".into(),
        });
    }
    let trips: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| generate_trip(pm, &sources, i))
        .collect::<Result<_>>()?;
    Ok(trips)
}

fn generate_trip(pm: &PlantedModel, sources: &[NodeId], index: usize) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_mix(pm.seed, index as u64));
    let mut best: Option<Vec<(NodeId, f64)>> = None;
    for _attempt in 0..1_000 {
        let (from, to) = pm.departure_windows[rng.random_range(0..pm.departure_windows.len())];
        let depart = if to > from {
            rng.random_range(from..to)
        } else {
            from
        };
        if pm.od_pairs.is_empty() {
            let source = sources[rng.random_range(0..sources.len())];
            let target_hops = rng.random_range(pm.min_hops..=pm.max_hops);
            let walk = walk_preferences(pm, source, depart, target_hops, None, &mut rng);
            if walk.len() > pm.min_hops {
                best = Some(walk);
                break;
            }
            if walk.len() >= 2 && best.as_ref().is_none_or(|b| b.len() < walk.len()) {
                best = Some(walk);
            }
        } else {
            let (source, dest) = pm.od_pairs[rng.random_range(0..pm.od_pairs.len())];
            let walk = walk_preferences(pm, source, depart, pm.max_hops, Some(dest), &mut rng);
            if walk.last().map(|&(n, _)| n) == Some(dest) {
                best = Some(walk);
                break;
            }
        }
    }
    let walk = best.ok_or_else(|| {
        Error::InsufficientData(format!("trip {index}: no walk of length >= 2 found"))
    })?;
    let t = Trajectory {
        id: format!("t{index:06}"),
        points: walk
            .into_iter()
            .map(|(node, at)| StPoint {
                node,
                time: TimeOfDay::wrapping(at.round() as i64),
            })
            .collect(),
    };
    debug_assert!(validate_trajectory(&pm.net, &t).is_empty());
    Ok(t)
}

fn walk_preferences(
    pm: &PlantedModel,
    source: NodeId,
    depart: u32,
    target_hops: usize,
    dest: Option<NodeId>,
    rng: &mut ChaCha8Rng,
) -> Vec<(NodeId, f64)> {
    let mut out = vec![(source, depart as f64)];
    let mut visited = vec![source];
    let mut prev: Option<NodeId> = None;
    let mut clock = depart as f64;
    for _ in 0..target_hops {
        let curr = visited[visited.len() - 1];
        if dest == Some(curr) {
            break;
        }
        let edges = pm.net.out_edges(curr).unwrap();
        let prefs = pm.weights_for(prev, curr, depart);
        let mut cands: Vec<(usize, f64)> = Vec::new();
        for (slot, &eid) in edges.iter().enumerate() {
            let to = pm.net.edge(eid).to;
            if visited.contains(&to) {
                continue;
            }
            let w = prefs.map_or(1.0, |p| p.get(slot).copied().unwrap_or(0.0));
            if w > 0.0 {
                cands.push((slot, w));
            }
        }
        if cands.is_empty() {
            break;
        }
        let total: f64 = cands.iter().map(|(_, w)| w).sum();
        let mut draw = rng.random::<f64>() * total;
        let mut chosen = cands[cands.len() - 1].0;
        for &(slot, w) in &cands {
            draw -= w;
            if draw <= 0.0 {
                chosen = slot;
                break;
            }
        }
        let eid = edges[chosen];
        let edge = pm.net.edge(eid);
        clock += pm.edge_seconds.unwrap_or(edge.length_m / pm.speed_mps);
        prev = Some(curr);
        visited.push(edge.to);
        out.push((edge.to, clock));
    }
    out
}

fn split_mix(seed: u64, i: u64) -> u64 {
    let mut z = seed
        .wrapping_add(i.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(1);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Slot index of the directed edge `from -> to` within `from`'s out-edge
/// order; panics if absent. Convenience for building preference tables.
pub fn out_slot(net: &RoadNetwork, from: NodeId, to: NodeId) -> usize {
    net.out_edges(from)
        .unwrap()
        .iter()
        .position(|&e| net.edge(e).to == to)
        .expect("edge exists")
}

/// Sets one node's preference vector from `(to_node, weight)` pairs; slots
/// not listed get zero weight.
pub fn set_node_pref(pm: &mut PlantedModel, node_ext: u64, prefs: &[(u64, f64)]) -> Result<()> {
    let node = pm.net.node_by_ext(node_ext)?;
    let mut weights = vec![0.0; pm.net.out_edges(node)?.len()];
    for &(to_ext, w) in prefs {
        let to = pm.net.node_by_ext(to_ext)?;
        weights[out_slot(&pm.net, node, to)] = w;
    }
    pm.node_prefs.insert(node, weights);
    Ok(())
}

/// Grid with a single preference fork that flips between morning and
/// afternoon: morning trips strongly favor the east branch, afternoon trips
/// the south one. Surrounding preferences funnel routes west-to-east through
/// the fork toward a symmetric merge node, so the fork choice is the only
/// real degree of freedom. Returns the model plus the favored morning edge
/// (fork, east branch) as external ids.
///
/// Grid ids (4x4): fork = 6, approach = 5, branches 7 (east) and 10
/// (south), merge = 11.
pub fn bimodal_fork_model(seed: u64) -> Result<(PlantedModel, (u64, u64))> {
    let net = grid_network(4, 4, 1000.0)?;
    let fork = net.node_by_ext(6)?;
    let east = net.node_by_ext(7)?;
    let south = net.node_by_ext(10)?;
    let out = net.out_edges(fork)?.len();
    let mut morning = vec![0.0; out];
    let mut afternoon = vec![0.0; out];
    morning[out_slot(&net, fork, east)] = 0.8;
    morning[out_slot(&net, fork, south)] = 0.2;
    afternoon[out_slot(&net, fork, east)] = 0.2;
    afternoon[out_slot(&net, fork, south)] = 0.8;
    let sources = vec![net.node_by_ext(1)?, net.node_by_ext(5)?];
    let mut pm = PlantedModel::uniform(net, 4, 6, seed);
    pm.time_prefs = vec![
        TimePref {
            node: fork,
            from: 6 * 3600,
            to: 11 * 3600,
            weights: morning,
        },
        TimePref {
            node: fork,
            from: 13 * 3600,
            to: 18 * 3600,
            weights: afternoon,
        },
    ];
    pm.departure_windows = vec![(6 * 3600, 10 * 3600), (13 * 3600, 17 * 3600)];
    pm.sources = sources;
    set_node_pref(&mut pm, 1, &[(2, 0.2), (5, 0.8)])?;
    set_node_pref(&mut pm, 2, &[(6, 0.9), (3, 0.1)])?;
    set_node_pref(&mut pm, 5, &[(6, 0.92), (9, 0.04), (1, 0.04)])?;
    set_node_pref(&mut pm, 9, &[(10, 0.9), (13, 0.1)])?;
    set_node_pref(&mut pm, 7, &[(11, 0.9), (8, 0.05), (3, 0.05)])?;
    set_node_pref(
        &mut pm,
        10,
        &[(11, 0.9), (14, 0.05), (9, 0.025), (6, 0.025)],
    )?;
    set_node_pref(&mut pm, 11, &[(12, 0.5), (15, 0.5)])?;
    Ok((pm, (6, 7)))
}

/// Chain of fork/merge cells: each junction X_i splits into a top and a
/// bottom node that both rejoin at X_{i+1}. External ids: X_i = 3i + 1,
/// top_i = 3i + 2, bottom_i = 3i + 3.
pub fn braid_network(cells: usize) -> Result<RoadNetwork> {
    if cells == 0 {
        return Err(Error::Param {
            name: "cells",
            msg: "must be >= 1".into(),
        });
    }
    let mut b = RoadNetwork::builder();
    let deg = 1000.0 / M_PER_DEG;
    for i in 0..=cells {
        b = b.node((3 * i + 1) as u64, 0.0, 2.0 * i as f64 * deg);
        if i < cells {
            b = b.node((3 * i + 2) as u64, deg, (2 * i + 1) as f64 * deg);
            b = b.node((3 * i + 3) as u64, -deg, (2 * i + 1) as f64 * deg);
        }
    }
    let mut eid = 1u64;
    for i in 0..cells {
        let x = (3 * i + 1) as u64;
        let top = (3 * i + 2) as u64;
        let bottom = (3 * i + 3) as u64;
        let x_next = (3 * (i + 1) + 1) as u64;
        for (from, to) in [(x, top), (x, bottom), (top, x_next), (bottom, x_next)] {
            b = b.edge(eid, from, to, 1000.0);
            eid += 1;
        }
    }
    b.build()
}

/// Planted corpus on the braid. With `second_order` the branch choice at
/// each junction follows the previous cell's branch with probability 0.9;
/// without it every junction is an independent fifty-fifty, so longer
/// histories add nothing.
pub fn braid_model(cells: usize, second_order: bool, seed: u64) -> Result<PlantedModel> {
    let net = braid_network(cells)?;
    let sources = vec![net.node_by_ext(1)?];
    let mut pm = PlantedModel::uniform(net, 2 * cells, 2 * cells, seed);
    pm.sources = sources;
    pm.departure_windows = vec![(8 * 3600, 10 * 3600)];
    if second_order {
        for i in 1..cells {
            let x = pm.net.node_by_ext((3 * i + 1) as u64)?;
            let top_prev = pm.net.node_by_ext((3 * (i - 1) + 2) as u64)?;
            let bottom_prev = pm.net.node_by_ext((3 * (i - 1) + 3) as u64)?;
            let top = pm.net.node_by_ext((3 * i + 2) as u64)?;
            let bottom = pm.net.node_by_ext((3 * i + 3) as u64)?;
            let mut stay_top = vec![0.0; pm.net.out_edges(x)?.len()];
            stay_top[out_slot(&pm.net, x, top)] = 0.9;
            stay_top[out_slot(&pm.net, x, bottom)] = 0.1;
            let mut stay_bottom = vec![0.0; pm.net.out_edges(x)?.len()];
            stay_bottom[out_slot(&pm.net, x, top)] = 0.1;
            stay_bottom[out_slot(&pm.net, x, bottom)] = 0.9;
            pm.pair_prefs.insert((top_prev, x), stay_top);
            pm.pair_prefs.insert((bottom_prev, x), stay_bottom);
        }
    }
    Ok(pm)
}
