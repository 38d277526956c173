//! Canonical fixtures: the D4 diamond, the six-node fork network transcribed
//! from a figure, and the bimodal planted model, together with golden-file
//! regeneration so checked-in expected values cannot drift silently.

use crate::error::{Error, Result};
use crate::network::RoadNetwork;
use crate::time::TimeOfDay;
use crate::trajectory::{StPoint, Trajectory};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Diamond network: a->b, a->c, b->d, c->d, each 1000 m.
/// External ids: a=1, b=2, c=3, d=4; edges 1..4 in that order.
pub fn d4_network() -> RoadNetwork {
    RoadNetwork::builder()
        .node(1, 0.000, 0.000) // a
        .node(2, 0.006, 0.006) // b
        .node(3, -0.006, 0.006) // c
        .node(4, 0.000, 0.012) // d
        .edge(1, 1, 2, 1000.0)
        .edge(2, 1, 3, 1000.0)
        .edge(3, 2, 4, 1000.0)
        .edge(4, 3, 4, 1000.0)
        .build()
        .expect("d4 fixture is well-formed")
}

/// Builds a trajectory over external node ids with a fixed per-edge duration.
pub fn d4_trajectory(
    net: &RoadNetwork,
    id: &str,
    ext_nodes: &[u64],
    depart: TimeOfDay,
    edge_seconds: u32,
) -> Trajectory {
    let points = ext_nodes
        .iter()
        .enumerate()
        .map(|(i, &ext)| StPoint {
            node: net.node_by_ext(ext).expect("fixture node"),
            time: TimeOfDay::wrapping(depart.seconds() as i64 + (i as u32 * edge_seconds) as i64),
        })
        .collect();
    Trajectory {
        id: id.into(),
        points,
    }
}

/// The D4 training database: 6 trips a->b->d and 2 trips a->c->d, all
/// departing 08:00:00 with 60 s per edge.
pub fn d4_database(net: &RoadNetwork) -> Vec<Trajectory> {
    let depart = TimeOfDay::new(28_800).unwrap();
    let mut db = Vec::new();
    for i in 0..6 {
        db.push(d4_trajectory(
            net,
            &format!("ab{i}"),
            &[1, 2, 4],
            depart,
            60,
        ));
    }
    for i in 0..2 {
        db.push(d4_trajectory(
            net,
            &format!("ac{i}"),
            &[1, 3, 4],
            depart,
            60,
        ));
    }
    db
}

/// Fork network transcribed from a figure: six nodes a,b,c,d,e,g with edges
/// a->b, b->c, b->d, d->c, d->g, c->g, c->e. Node c has in-edges from b and
/// d; exactly three simple paths connect a to g; e is a dead end with
/// respect to g.
/// External ids: a=1, b=2, c=3, d=4, e=5, g=6; edges 1..7 in the order above.
pub fn fig1_network() -> RoadNetwork {
    RoadNetwork::builder()
        .node(1, 0.000, 0.000) // a
        .node(2, 0.000, 0.009) // b
        .node(3, 0.000, 0.018) // c
        .node(4, 0.008, 0.014) // d
        .node(5, -0.008, 0.022) // e
        .node(6, 0.000, 0.027) // g
        .edge(1, 1, 2, 1000.0) // a->b
        .edge(2, 2, 3, 1000.0) // b->c
        .edge(3, 2, 4, 1000.0) // b->d
        .edge(4, 4, 3, 1000.0) // d->c
        .edge(5, 4, 6, 1000.0) // d->g
        .edge(6, 3, 6, 1000.0) // c->g
        .edge(7, 3, 5, 1000.0) // c->e
        .build()
        .expect("fig1 fixture is well-formed")
}

/// Training database realizing the fixture's first-order transition table:
/// at b the split toward c/d is 0.25/0.75, at d toward c/g it is 7/9 / 2/9,
/// and at c toward e/g it is 0.8/0.2.
pub fn fig1_database(net: &RoadNetwork) -> Vec<Trajectory> {
    let depart = TimeOfDay::new(28_800).unwrap();
    let mut db = Vec::new();
    let push = |count: usize, name: &str, nodes: &[u64], db: &mut Vec<Trajectory>| {
        for i in 0..count {
            db.push(d4_trajectory(net, &format!("{name}{i}"), nodes, depart, 60));
        }
    };
    push(2, "abce", &[1, 2, 3, 5], &mut db);
    push(1, "abcg", &[1, 2, 3, 6], &mut db);
    push(6, "abdce", &[1, 2, 4, 3, 5], &mut db);
    push(1, "abdcg", &[1, 2, 4, 3, 6], &mut db);
    push(2, "abdg", &[1, 2, 4, 6], &mut db);
    db
}

// ---------------------------------------------------------------------------
// Golden files

/// A single expected value. Exact entries pin deterministic computations;
/// sampled entries carry the seed and sample count they were checked at.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GoldenValue {
    pub key: String,
    pub value: f64,
    pub tolerance: f64,
    /// How the value was obtained: "enumeration", "hand-counted",
    /// "closed-form", "figure-transcription" or "sampled".
    pub provenance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GoldenFile {
    pub fixture: String,
    pub note: String,
    pub values: Vec<GoldenValue>,
}

fn exact(key: &str, value: f64, tolerance: f64, provenance: &str) -> GoldenValue {
    GoldenValue {
        key: key.into(),
        value,
        tolerance,
        provenance: provenance.into(),
        seed: None,
        samples: None,
    }
}

fn sampled(key: &str, value: f64, tolerance: f64, seed: u64, samples: u64) -> GoldenValue {
    GoldenValue {
        key: key.into(),
        value,
        tolerance,
        provenance: "sampled".into(),
        seed: Some(seed),
        samples: Some(samples),
    }
}

pub const D4_INFER_SEED: u64 = 11;
pub const D4_INFER_SAMPLES: u64 = 20_000;
pub const FIG1_INFER_SEED: u64 = 13;
pub const FIG1_INFER_SAMPLES: u64 = 20_000;

/// Recomputes the D4 goldens from the enumeration oracle.
pub fn d4_golden() -> Result<GoldenFile> {
    let net = d4_network();
    let db = d4_database(&net);
    let obs = crate::trajectory::Observation {
        points: vec![
            StPoint {
                node: net.node_by_ext(1)?,
                time: TimeOfDay::new(28_800)?,
            },
            StPoint {
                node: net.node_by_ext(4)?,
                time: TimeOfDay::new(28_920)?,
            },
        ],
    };
    let oracle = crate::oracle::exact_marginals(
        &net,
        &db,
        &obs,
        1,
        1e-6,
        None,
        std::time::Duration::from_secs(10),
    )?;
    let marg = |src: u64, dst: u64| -> Result<f64> {
        let e = net
            .edge_between(net.node_by_ext(src)?, net.node_by_ext(dst)?)
            .ok_or(Error::UnknownEdge(0))?;
        Ok(*oracle.marginals.get(&e).unwrap_or(&0.0))
    };
    let mut values = vec![
        exact("affinity:a->b@08:00", 0.75, 1e-9, "hand-counted"),
        exact("affinity:a->c@08:00", 0.25, 1e-9, "hand-counted"),
        exact("affinity:b->d@08:01", 1.0, 1e-9, "hand-counted"),
        exact("oracle:marginal:a->b", marg(1, 2)?, 1e-9, "enumeration"),
        exact("oracle:marginal:a->c", marg(1, 3)?, 1e-9, "enumeration"),
        exact("oracle:marginal:b->d", marg(2, 4)?, 1e-9, "enumeration"),
        exact("oracle:marginal:c->d", marg(3, 4)?, 1e-9, "enumeration"),
        exact("mlt:likelihood", 0.75, 0.03, "enumeration"),
        exact("node_weight:d", 1.0, 0.0, "closed-form"),
    ];
    for (key, v) in [
        ("infer:marginal:a->b", marg(1, 2)?),
        ("infer:marginal:a->c", marg(1, 3)?),
        ("infer:marginal:b->d", marg(2, 4)?),
        ("infer:marginal:c->d", marg(3, 4)?),
    ] {
        values.push(sampled(key, v, 0.03, D4_INFER_SEED, D4_INFER_SAMPLES));
    }
    Ok(GoldenFile {
        fixture: "d4".into(),
        note: "diamond network; two equal-length routes with a 6:2 historical split".into(),
        values,
    })
}

/// Recomputes the fork-network goldens from the enumeration oracle.
pub fn fig1_golden() -> Result<GoldenFile> {
    let net = fig1_network();
    let db = fig1_database(&net);
    let a = net.node_by_ext(1)?;
    let g = net.node_by_ext(6)?;
    let obs = crate::trajectory::Observation {
        points: vec![
            StPoint {
                node: a,
                time: TimeOfDay::new(28_800)?,
            },
            StPoint {
                node: g,
                time: TimeOfDay::new(29_040)?,
            },
        ],
    };
    let paths = net.enumerate_acyclic_paths(&[a, g], 8)?;
    let oracle = crate::oracle::exact_marginals(
        &net,
        &db,
        &obs,
        1,
        1e-6,
        None,
        std::time::Duration::from_secs(10),
    )?;
    let cg = net
        .edge_between(net.node_by_ext(3)?, g)
        .ok_or(Error::UnknownEdge(0))?;
    let values = vec![
        exact(
            "paths:a->g",
            paths.len() as f64,
            0.0,
            "figure-transcription",
        ),
        exact("histories:c@m=2", 3.0, 0.0, "figure-transcription"),
        exact(
            "oracle:marginal:c->g",
            *oracle.marginals.get(&cg).unwrap_or(&0.0),
            1e-6,
            "enumeration",
        ),
        sampled(
            "infer:marginal:c->g",
            0.5,
            0.03,
            FIG1_INFER_SEED,
            FIG1_INFER_SAMPLES,
        ),
    ];
    Ok(GoldenFile {
        fixture: "fig1".into(),
        note: "fork network transcribed from a figure; destination bias halves the dominant fork"
            .into(),
        values,
    })
}

pub const BIMODAL_SEED: u64 = 21;
pub const BIMODAL_TRIPS: usize = 10_000;

/// Recomputes the bimodal-fork goldens: the planted morning/afternoon
/// split as targets, plus the exact affinities the learner produces at the
/// fixed seed, which pins the whole learning pipeline numerically.
pub fn bimodal_golden() -> Result<GoldenFile> {
    let (pm, (fork, east)) = crate::datagen::bimodal_fork_model(BIMODAL_SEED)?;
    let db = crate::datagen::simulate_corpus(&pm, BIMODAL_TRIPS)?;
    let model = crate::nmm::learn(
        &pm.net,
        &db,
        &crate::nmm::LearnParams {
            order: 1,
            ..Default::default()
        },
    )?;
    let f = pm.net.node_by_ext(fork)?;
    let eid = pm
        .net
        .edge_between(f, pm.net.node_by_ext(east)?)
        .ok_or(Error::UnknownEdge(0))?;
    let morning = model.affinity(&pm.net, eid, &[f], TimeOfDay::new(8 * 3600 + 1800)?)?;
    let afternoon = model.affinity(&pm.net, eid, &[f], TimeOfDay::new(15 * 3600 + 1800)?)?;
    let values = vec![
        sampled(
            "planted:morning",
            0.8,
            0.05,
            BIMODAL_SEED,
            BIMODAL_TRIPS as u64,
        ),
        sampled(
            "planted:afternoon",
            0.2,
            0.05,
            BIMODAL_SEED,
            BIMODAL_TRIPS as u64,
        ),
        exact("learned:morning", morning, 0.0, "sampled"),
        exact("learned:afternoon", afternoon, 0.0, "sampled"),
    ];
    Ok(GoldenFile {
        fixture: "bimodal".into(),
        note: "4x4 grid whose fork preference flips between morning and afternoon; \
               the corpus regenerates from the seed, so learned values are exact"
            .into(),
        values,
    })
}

fn golden_to_string(g: &GoldenFile) -> Result<String> {
    let mut s = serde_json::to_string_pretty(g)?;
    s.push('\n');
    Ok(s)
}

/// Writes network, trajectory and expected-result files for every fixture.
/// The bimodal corpus regenerates from its seed and is not materialized;
/// its directory carries the generator parameters instead.
pub fn write_fixture_dir(root: &Path) -> Result<()> {
    write_one(root, "d4", &d4_network(), d4_database, d4_golden)?;
    write_one(root, "fig1", &fig1_network(), fig1_database, fig1_golden)?;
    let dir = root.join("bimodal");
    std::fs::create_dir_all(&dir)?;
    let (pm, _) = crate::datagen::bimodal_fork_model(BIMODAL_SEED)?;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    pm.net.write_csv(&mut nodes, &mut edges)?;
    std::fs::write(dir.join("nodes.csv"), nodes)?;
    std::fs::write(dir.join("edges.csv"), edges)?;
    let params = serde_json::json!({
        "generator": "bimodal-fork",
        "seed": BIMODAL_SEED,
        "trips": BIMODAL_TRIPS,
        "fork": 6,
        "morning_branch": 7,
        "afternoon_branch": 10,
    });
    let mut blob = serde_json::to_vec_pretty(&params)?;
    blob.push(b'\n');
    std::fs::write(dir.join("params.json"), blob)?;
    std::fs::write(
        dir.join("expected.json"),
        golden_to_string(&bimodal_golden()?)?,
    )?;
    Ok(())
}

fn write_one(
    root: &Path,
    name: &str,
    net: &RoadNetwork,
    db: fn(&RoadNetwork) -> Vec<Trajectory>,
    golden: fn() -> Result<GoldenFile>,
) -> Result<()> {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir)?;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    net.write_csv(&mut nodes, &mut edges)?;
    std::fs::write(dir.join("nodes.csv"), nodes)?;
    std::fs::write(dir.join("edges.csv"), edges)?;
    let mut traj = Vec::new();
    crate::trajectory::write_trajectories(net, &db(net), &mut traj)?;
    std::fs::write(dir.join("trajectories.jsonl"), traj)?;
    std::fs::write(dir.join("expected.json"), golden_to_string(&golden()?)?)?;
    Ok(())
}

/// Compares checked-in expected files against freshly regenerated ones.
/// Returns the list of fixtures that drifted.
pub fn check_fixture_dir(root: &Path) -> Result<Vec<String>> {
    let mut drifted = Vec::new();
    for (name, golden) in [
        ("d4", d4_golden as fn() -> Result<GoldenFile>),
        ("fig1", fig1_golden as fn() -> Result<GoldenFile>),
        ("bimodal", bimodal_golden as fn() -> Result<GoldenFile>),
    ] {
        let path = root.join(name).join("expected.json");
        let fresh = golden_to_string(&golden()?)?;
        match std::fs::read_to_string(&path) {
            Ok(on_disk) if on_disk == fresh => {}
            Ok(_) => drifted.push(name.to_string()),
            Err(_) => drifted.push(format!("{name} (missing)")),
        }
    }
    Ok(drifted)
}
