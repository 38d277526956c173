//! Network-constrained trajectories, sparse observations and m-histories.
//!
//! A trajectory is a connected acyclic path with strictly increasing
//! timestamps; it may cross midnight at most once, in which case the
//! timestamps are unwrapped for validation but stored as time-of-day.

use crate::error::{Error, Result};
use crate::network::{NodeId, RoadNetwork};
use crate::time::{TimeOfDay, SECONDS_PER_DAY};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct StPoint {
    pub node: NodeId,
    pub time: TimeOfDay,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<StPoint>,
}

/// A sparse sighting sequence; consecutive points need not be adjacent in
/// the network.
#[derive(Clone, Debug)]
pub struct Observation {
    pub points: Vec<StPoint>,
}

/// The last `p <= m` nodes traversed before (and including) an anchor node.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct MHistory {
    nodes: Vec<NodeId>,
}

impl MHistory {
    pub fn new(nodes: Vec<NodeId>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Param {
                name: "history",
                msg: "history cannot be empty".into(),
            });
        }
        Ok(MHistory { nodes })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn anchor(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Violation {
    TooFewPoints { count: usize },
    DisconnectedStep { index: usize },
    RepeatedNode { index: usize },
    NonIncreasingTime { index: usize },
}

pub fn describe_violations(vs: &[Violation]) -> String {
    let parts: Vec<String> = vs
        .iter()
        .map(|v| match v {
            Violation::TooFewPoints { count } => format!("only {count} point(s)"),
            Violation::DisconnectedStep { index } => {
                format!("no edge between points {} and {}", index, index + 1)
            }
            Violation::RepeatedNode { index } => format!("node repeated at point {index}"),
            Violation::NonIncreasingTime { index } => {
                format!("timestamp not increasing at point {}", index + 1)
            }
        })
        .collect();
    parts.join("; ")
}

/// Unwraps time-of-day stamps into a monotone i64 sequence, allowing at most
/// one midnight crossing. A decrease counts as a crossing only when wrapping
/// forward is the short way around the clock; a small backwards jump (say
/// 08:01 to 08:00) is a time-order violation, not a 24-hour trip, and maps
/// to `NonIncreasingTime` by the caller.
pub(crate) fn unwrap_times(points: &[StPoint]) -> Vec<i64> {
    let mut out = Vec::with_capacity(points.len());
    let mut offset = 0i64;
    let mut wrapped = false;
    for (i, p) in points.iter().enumerate() {
        let raw = p.time.seconds() as i64;
        if i > 0 && !wrapped {
            let backwards = points[i - 1].time.seconds() as i64 - raw;
            if backwards >= SECONDS_PER_DAY as i64 / 2 {
                offset = SECONDS_PER_DAY as i64;
                wrapped = true;
            }
        }
        out.push(raw + offset);
    }
    out
}

/// Checks every trajectory invariant and reports all violations found.
pub fn validate_trajectory(net: &RoadNetwork, t: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.points.len() < 2 {
        out.push(Violation::TooFewPoints {
            count: t.points.len(),
        });
        return out;
    }
    let times = unwrap_times(&t.points);
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            out.push(Violation::NonIncreasingTime { index: i - 1 });
        }
    }
    let mut seen = std::collections::HashSet::new();
    for (i, p) in t.points.iter().enumerate() {
        if !seen.insert(p.node) {
            out.push(Violation::RepeatedNode { index: i });
        }
    }
    for i in 0..t.points.len() - 1 {
        if net
            .edge_between(t.points[i].node, t.points[i + 1].node)
            .is_none()
        {
            out.push(Violation::DisconnectedStep { index: i });
        }
    }
    out
}

pub fn validate_observation(points: &[StPoint]) -> Vec<Violation> {
    let mut out = Vec::new();
    if points.len() < 2 {
        out.push(Violation::TooFewPoints {
            count: points.len(),
        });
        return out;
    }
    let times = unwrap_times(points);
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            out.push(Violation::NonIncreasingTime { index: i - 1 });
        }
    }
    out
}

/// All paths of at most `m` nodes ending at `v`, the singleton included.
pub fn m_histories(net: &RoadNetwork, v: NodeId, m: usize) -> Result<Vec<MHistory>> {
    if m == 0 {
        return Err(Error::Param {
            name: "m",
            msg: "order must be >= 1".into(),
        });
    }
    net.out_edges(v)?; // node existence check
    let mut out = Vec::new();
    let mut stack = vec![v];
    collect_histories(net, &mut stack, m, &mut out);
    out.sort();
    Ok(out)
}

fn collect_histories(
    net: &RoadNetwork,
    stack: &mut Vec<NodeId>,
    m: usize,
    out: &mut Vec<MHistory>,
) {
    let mut nodes: Vec<NodeId> = stack.iter().rev().copied().collect();
    out.push(MHistory {
        nodes: std::mem::take(&mut nodes),
    });
    if stack.len() == m {
        return;
    }
    let head = *stack.last().unwrap();
    for &eid in net.in_edges(head).unwrap() {
        let from = net.edge(eid).from;
        if stack.contains(&from) {
            continue;
        }
        stack.push(from);
        collect_histories(net, stack, m, out);
        stack.pop();
    }
}

/// Spatio-temporal containment: `h` occurs contiguously in `t`'s node
/// sequence and the point matching `h`'s last node lies within `delta`
/// seconds (circular) of `at`.
pub fn contains(h: &MHistory, t: &Trajectory, at: TimeOfDay, delta: u32) -> bool {
    match match_end_index(h.nodes(), t) {
        Some(end) => t.points[end].time.circular_distance(at) <= delta,
        None => false,
    }
}

/// Index (into `t.points`) of the last node of the unique contiguous match
/// of `needle`, if any. Trajectories are simple, so at most one match exists.
pub(crate) fn match_end_index(needle: &[NodeId], t: &Trajectory) -> Option<usize> {
    if needle.is_empty() || needle.len() > t.points.len() {
        return None;
    }
    let n = needle.len();
    (0..=t.points.len() - n)
        .find(|&a| (0..n).all(|i| t.points[a + i].node == needle[i]))
        .map(|a| a + n - 1)
}

/// Sampling-interval degradation: keeps the first point, then greedily each
/// point at least `si` seconds after the last kept one, and always the final
/// point.
pub fn downsample(t: &Trajectory, si: u32) -> Observation {
    let times = unwrap_times(&t.points);
    let mut keep = vec![0usize];
    for i in 1..t.points.len() {
        if times[i] - times[keep[keep.len() - 1]] >= si as i64 {
            keep.push(i);
        }
    }
    let last = t.points.len() - 1;
    if *keep.last().unwrap() != last {
        keep.push(last);
    }
    Observation {
        points: keep.into_iter().map(|i| t.points[i]).collect(),
    }
}

// ---------------------------------------------------------------------------
// JSON Lines I/O: one `{"id": ..., "points": [{"node": ..., "t": ...}]}`
// object per line. Observations use the same shape with `id` optional.

#[derive(Serialize, Deserialize)]
struct JsonPoint {
    node: u64,
    t: u32,
}

#[derive(Serialize, Deserialize)]
struct JsonTrajectory {
    #[serde(default)]
    id: Option<String>,
    points: Vec<JsonPoint>,
}

fn points_from_json(net: &RoadNetwork, pts: Vec<JsonPoint>, line: usize) -> Result<Vec<StPoint>> {
    pts.into_iter()
        .map(|p| {
            Ok(StPoint {
                node: net.node_by_ext(p.node).map_err(|e| Error::Parse {
                    file: "trajectories".into(),
                    line,
                    msg: e.to_string(),
                })?,
                time: TimeOfDay::new(p.t).map_err(|e| Error::Parse {
                    file: "trajectories".into(),
                    line,
                    msg: e.to_string(),
                })?,
            })
        })
        .collect()
}

/// Reads and validates a trajectory database. Any invariant violation is an
/// error naming the offending trajectory.
pub fn read_trajectories(net: &RoadNetwork, reader: impl Read) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parsed: JsonTrajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: "trajectories".into(),
            line: lineno,
            msg: e.to_string(),
        })?;
        let id = parsed.id.unwrap_or_else(|| format!("line{lineno}"));
        let t = Trajectory {
            id,
            points: points_from_json(net, parsed.points, lineno)?,
        };
        let violations = validate_trajectory(net, &t);
        if !violations.is_empty() {
            return Err(Error::InvalidTrajectory {
                id: t.id,
                violations,
            });
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_trajectories(net: &RoadNetwork, db: &[Trajectory], mut w: impl Write) -> Result<()> {
    for t in db {
        let rec = JsonTrajectory {
            id: Some(t.id.clone()),
            points: t
                .points
                .iter()
                .map(|p| JsonPoint {
                    node: net.node(p.node).ext_id,
                    t: p.time.seconds(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads observations (same JSONL shape; adjacency between consecutive
/// points is not required).
pub fn read_observations(net: &RoadNetwork, reader: impl Read) -> Result<Vec<Observation>> {
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parsed: JsonTrajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: "observations".into(),
            line: lineno,
            msg: e.to_string(),
        })?;
        let points = points_from_json(net, parsed.points, lineno)?;
        let violations = validate_observation(&points);
        if !violations.is_empty() {
            return Err(Error::InvalidTrajectory {
                id: format!("observation line{lineno}"),
                violations,
            });
        }
        out.push(Observation { points });
    }
    Ok(out)
}

pub fn write_observations(net: &RoadNetwork, obs: &[Observation], mut w: impl Write) -> Result<()> {
    for o in obs {
        let rec = JsonTrajectory {
            id: None,
            points: o
                .points
                .iter()
                .map(|p| JsonPoint {
                    node: net.node(p.node).ext_id,
                    t: p.time.seconds(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{d4_network, d4_trajectory};

    fn tod(s: &str) -> TimeOfDay {
        TimeOfDay::parse(s).unwrap()
    }

    #[test]
    fn valid_d4_path() {
        let net = d4_network();
        let t = d4_trajectory(&net, "t", &[1, 2, 4], tod("08:00:00"), 60);
        assert!(validate_trajectory(&net, &t).is_empty());
    }

    #[test]
    fn disconnected_step_reported() {
        let net = d4_network();
        let t = d4_trajectory(&net, "t", &[1, 4], tod("08:00:00"), 60);
        let vs = validate_trajectory(&net, &t);
        assert_eq!(vs, vec![Violation::DisconnectedStep { index: 0 }]);
    }

    #[test]
    fn time_order_violation_reported() {
        let net = d4_network();
        let a = net.node_by_ext(1).unwrap();
        let b = net.node_by_ext(2).unwrap();
        let t = Trajectory {
            id: "t".into(),
            points: vec![
                StPoint {
                    node: a,
                    time: tod("08:01:00"),
                },
                StPoint {
                    node: b,
                    time: tod("08:00:00"),
                },
            ],
        };
        let vs = validate_trajectory(&net, &t);
        assert_eq!(vs, vec![Violation::NonIncreasingTime { index: 0 }]);
    }

    #[test]
    fn midnight_crossing_is_allowed_once() {
        let net = d4_network();
        let a = net.node_by_ext(1).unwrap();
        let b = net.node_by_ext(2).unwrap();
        let d = net.node_by_ext(4).unwrap();
        let t = Trajectory {
            id: "t".into(),
            points: vec![
                StPoint {
                    node: a,
                    time: tod("23:59:00"),
                },
                StPoint {
                    node: b,
                    time: tod("23:59:50"),
                },
                StPoint {
                    node: d,
                    time: tod("00:00:40"),
                },
            ],
        };
        assert!(validate_trajectory(&net, &t).is_empty());
    }

    #[test]
    fn m_histories_on_d4() {
        let net = d4_network();
        let d = net.node_by_ext(4).unwrap();
        let hs = m_histories(&net, d, 2).unwrap();
        let seqs: Vec<Vec<u64>> = hs
            .iter()
            .map(|h| h.nodes().iter().map(|&n| net.node(n).ext_id).collect())
            .collect();
        let mut expect = vec![vec![4], vec![2, 4], vec![3, 4]];
        expect.sort();
        let mut got = seqs.clone();
        got.sort();
        assert_eq!(got, expect);
    }

    #[test]
    fn m1_histories_are_singletons() {
        let net = d4_network();
        for n in net.nodes() {
            let hs = m_histories(&net, n.id, 1).unwrap();
            assert_eq!(hs.len(), 1);
            assert_eq!(hs[0].nodes(), &[n.id]);
        }
    }

    #[test]
    fn histories_nest_with_order() {
        let net = d4_network();
        for n in net.nodes() {
            for m in 1..4 {
                let small: std::collections::HashSet<_> =
                    m_histories(&net, n.id, m).unwrap().into_iter().collect();
                let large: std::collections::HashSet<_> = m_histories(&net, n.id, m + 1)
                    .unwrap()
                    .into_iter()
                    .collect();
                assert!(small.is_subset(&large));
            }
        }
    }

    #[test]
    fn containment_examples() {
        let net = d4_network();
        let t = d4_trajectory(&net, "t", &[1, 2, 4], tod("08:00:00"), 60);
        let h = MHistory::new(vec![
            net.node_by_ext(1).unwrap(),
            net.node_by_ext(2).unwrap(),
        ])
        .unwrap();
        assert!(contains(&h, &t, tod("08:01:00"), 1800));
        assert!(!contains(&h, &t, tod("20:00:00"), 60));
        let full = MHistory::new(t.points.iter().map(|p| p.node).collect()).unwrap();
        assert!(contains(&full, &t, t.points.last().unwrap().time, 1));
    }

    #[test]
    fn containment_monotone_in_delta() {
        let net = d4_network();
        let t = d4_trajectory(&net, "t", &[1, 2, 4], tod("08:00:00"), 60);
        let h = MHistory::new(vec![net.node_by_ext(2).unwrap()]).unwrap();
        let at = tod("09:00:00");
        let mut prev = false;
        for delta in [60, 600, 3600, 7200, 40000] {
            let now = contains(&h, &t, at, delta);
            assert!(!prev || now, "containment regressed as delta grew");
            prev = now;
        }
    }

    #[test]
    fn downsample_examples() {
        let net = d4_network();
        let a = net.node_by_ext(1).unwrap();
        let b = net.node_by_ext(2).unwrap();
        let d = net.node_by_ext(4).unwrap();
        let c = net.node_by_ext(3).unwrap();
        // 5 points at 60s spacing (node sequence irrelevant for the rule).
        let t = Trajectory {
            id: "t".into(),
            points: [a, b, d, c, a]
                .iter()
                .enumerate()
                .map(|(i, &n)| StPoint {
                    node: n,
                    time: TimeOfDay::new(28_800 + 60 * i as u32).unwrap(),
                })
                .collect(),
        };
        let o = downsample(&t, 120);
        let kept: Vec<u32> = o.points.iter().map(|p| p.time.seconds()).collect();
        assert_eq!(kept, vec![28_800, 28_920, 29_040]); // indices 0, 2, 4

        let all = downsample(&t, 0);
        assert_eq!(all.points.len(), t.points.len());

        let ends = downsample(&t, 100_000);
        assert_eq!(ends.points.len(), 2);
        assert_eq!(ends.points[0].node, a);
        assert_eq!(ends.points[1].node, a);
    }

    #[test]
    fn jsonl_roundtrip() {
        let net = d4_network();
        let db = vec![
            d4_trajectory(&net, "x", &[1, 2, 4], tod("08:00:00"), 60),
            d4_trajectory(&net, "y", &[1, 3, 4], tod("09:10:00"), 90),
        ];
        let mut buf = Vec::new();
        write_trajectories(&net, &db, &mut buf).unwrap();
        let back = read_trajectories(&net, buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, "x");
        assert_eq!(back[1].points.len(), 3);
    }
}
