//! Evaluation harness: weight-aware precision/recall, k-fold cross
//! validation with sampling-interval degradation, routing baselines and the
//! query-accuracy protocols.

use crate::error::{Error, Result};
use crate::inference::{infer_with_stats, RwrConfig};
use crate::network::{haversine, NodeId, RoadNetwork};
use crate::nmm::{learn, LearnParams, NetworkMobilityModel};
use crate::trajectory::{downsample, Observation, Trajectory};
use crate::uncertain::UncertainTrajectory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;

/// Precision/recall of a (possibly weighted) prediction. `undefined` marks
/// empty predictions, reported as zero so they aggregate.
#[derive(Copy, Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct PrScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub undefined: bool,
}

impl PrScore {
    fn from_parts(common: f64, truth_edges: usize, predicted_mass: f64) -> PrScore {
        if predicted_mass <= 0.0 || truth_edges == 0 {
            return PrScore {
                undefined: true,
                ..Default::default()
            };
        }
        let recall = common / truth_edges as f64;
        let precision = common / predicted_mass;
        PrScore {
            precision,
            recall,
            f_score: f_score(precision, recall),
            undefined: false,
        }
    }
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Directed edge pairs (by external node id) of a trajectory.
pub fn trajectory_edge_pairs(net: &RoadNetwork, t: &Trajectory) -> HashSet<(u64, u64)> {
    t.points
        .windows(2)
        .map(|w| (net.node(w[0].node).ext_id, net.node(w[1].node).ext_id))
        .collect()
}

/// Core formula on weighted edge predictions: recall is the common-edge
/// weight mass over the truth size, precision the common mass over all
/// predicted mass. Certain predictions pass weight one everywhere and the
/// formulas degenerate to the classical set versions.
pub fn precision_recall_weighted(
    truth: &HashSet<(u64, u64)>,
    predicted: &[((u64, u64), f64)],
) -> PrScore {
    let mut common = 0.0;
    let mut mass = 0.0;
    for &(pair, w) in predicted {
        mass += w;
        if truth.contains(&pair) {
            common += w;
        }
    }
    PrScore::from_parts(common, truth.len(), mass)
}

pub fn precision_recall_uncertain(
    net: &RoadNetwork,
    truth: &Trajectory,
    u: &UncertainTrajectory,
) -> PrScore {
    let truth_edges = trajectory_edge_pairs(net, truth);
    let predicted: Vec<((u64, u64), f64)> = u
        .edges()
        .iter()
        .map(|e| ((e.src, e.dst), u.weight(e)))
        .collect();
    precision_recall_weighted(&truth_edges, &predicted)
}

/// Certain (path) prediction: weight one per edge.
pub fn precision_recall_path(net: &RoadNetwork, truth: &Trajectory, path_ext: &[u64]) -> PrScore {
    let truth_edges = trajectory_edge_pairs(net, truth);
    let predicted: Vec<((u64, u64), f64)> =
        path_ext.windows(2).map(|w| ((w[0], w[1]), 1.0)).collect();
    precision_recall_weighted(&truth_edges, &predicted)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    /// Stitched length-shortest paths.
    Sp,
    /// Stitched time-shortest paths under mean historical traversal times.
    Stp,
    /// Most likely trajectory of the inferred result.
    Mlt,
}

/// Computes a baseline route (external node ids) for an observation.
pub fn run_baseline(
    net: &RoadNetwork,
    nmm: &NetworkMobilityModel,
    obs: &Observation,
    which: Baseline,
    rwr: &RwrConfig,
) -> Result<Vec<u64>> {
    match which {
        Baseline::Mlt => {
            let u = crate::inference::infer(net, nmm, obs, rwr)?;
            Ok(u.most_likely_trajectory()?.0)
        }
        Baseline::Sp => stitched(net, obs, |e| e.length_m),
        Baseline::Stp => stitched(net, obs, |e| e.length_m / nmm.mean_speed(e.id)),
    }
}

fn stitched<F>(net: &RoadNetwork, obs: &Observation, cost: F) -> Result<Vec<u64>>
where
    F: Fn(&crate::network::Edge) -> f64,
{
    let mut out: Vec<u64> = Vec::new();
    for w in obs.points.windows(2) {
        let leg = net
            .shortest_path(w[0].node, w[1].node, &cost)?
            .ok_or_else(|| Error::UnreachablePair {
                from: net.node(w[0].node).ext_id,
                to: net.node(w[1].node).ext_id,
            })?;
        let skip = usize::from(!out.is_empty());
        out.extend(leg.nodes.iter().skip(skip).map(|&n| net.node(n).ext_id));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub learn: LearnParams,
    pub rwr: RwrConfig,
    pub seed: u64,
    pub baselines: bool,
    pub location_queries: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            learn: LearnParams::default(),
            rwr: RwrConfig::default(),
            seed: 0,
            baselines: true,
            location_queries: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub id: String,
    pub fold: usize,
    pub observed_points: usize,
    pub truth_edges: usize,
    pub uncertain: PrScore,
    pub mlt: Option<PrScore>,
    pub sp: Option<PrScore>,
    pub stp: Option<PrScore>,
    /// Weighted spatial error of the location-at-time query, meters.
    pub location_error_m: Option<f64>,
    /// Circular error of the time-at-node query, seconds.
    pub time_error_s: Option<f64>,
    pub samples: u64,
    pub inference_failed: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Summary {
    pub trajectories: usize,
    pub failures: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f_score: f64,
    pub mlt_mean_f_score: f64,
    pub sp_mean_f_score: f64,
    pub stp_mean_f_score: f64,
    pub location_error_mean_m: Option<f64>,
    pub location_error_p50_m: Option<f64>,
    pub location_error_p90_m: Option<f64>,
    pub time_error_mean_s: Option<f64>,
    pub mean_samples: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub sampling_interval: u32,
    pub folds: usize,
    pub seed: u64,
    pub summary: Summary,
    pub trajectories: Vec<TrajectoryScore>,
}

/// Deterministic Fisher-Yates.
pub(crate) fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// K-fold cross validation: learn on k-1 folds, degrade each held-out
/// trajectory to the sampling interval, infer, and score. Fold assignment is
/// a seeded shuffle; the whole run is deterministic under (seed, config).
pub fn kfold_eval(
    net: &RoadNetwork,
    db: &[Trajectory],
    folds: usize,
    sampling_interval: u32,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if folds < 2 {
        return Err(Error::Param {
            name: "folds",
            msg: "must be >= 2".into(),
        });
    }
    if db.len() < folds {
        return Err(Error::InsufficientData(format!(
            "{} trajectories cannot fill {folds} folds",
            db.len()
        )));
    }
    let mut order: Vec<usize> = (0..db.len()).collect();
    seeded_shuffle(&mut order, cfg.seed);
    let fold_of = |position: usize| position % folds;

    let mut scores: Vec<TrajectoryScore> = Vec::with_capacity(db.len());
    for fold in 0..folds {
        let train: Vec<Trajectory> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| fold_of(*pos) != fold)
            .map(|(_, &i)| db[i].clone())
            .collect();
        let held: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| fold_of(*pos) == fold)
            .map(|(_, &i)| i)
            .collect();
        let model = learn(net, &train, &cfg.learn)?;
        let mut fold_scores: Vec<TrajectoryScore> = held
            .par_iter()
            .map(|&i| score_trajectory(net, &model, &db[i], fold, sampling_interval, cfg))
            .collect();
        scores.append(&mut fold_scores);
    }
    scores.sort_by(|a, b| a.id.cmp(&b.id));
    let summary = summarize(&scores);
    Ok(EvalReport {
        sampling_interval,
        folds,
        seed: cfg.seed,
        summary,
        trajectories: scores,
    })
}

fn score_trajectory(
    net: &RoadNetwork,
    model: &NetworkMobilityModel,
    truth: &Trajectory,
    fold: usize,
    sampling_interval: u32,
    cfg: &EvalConfig,
) -> TrajectoryScore {
    let obs = downsample(truth, sampling_interval);
    let truth_edges = truth.points.len() - 1;
    let mut score = TrajectoryScore {
        id: truth.id.clone(),
        fold,
        observed_points: obs.points.len(),
        truth_edges,
        uncertain: PrScore {
            undefined: true,
            ..Default::default()
        },
        mlt: None,
        sp: None,
        stp: None,
        location_error_m: None,
        time_error_s: None,
        samples: 0,
        inference_failed: false,
    };
    let rwr = RwrConfig {
        seed: crate::inference_seed(cfg.seed, &truth.id),
        ..cfg.rwr.clone()
    };
    match infer_with_stats(net, model, &obs, &rwr) {
        Ok((u, stats)) => {
            score.uncertain = precision_recall_uncertain(net, truth, &u);
            score.samples = stats.accepted_samples;
            if cfg.baselines {
                score.mlt = u
                    .most_likely_trajectory()
                    .ok()
                    .map(|(p, _)| precision_recall_path(net, truth, &p));
            }
            if cfg.location_queries {
                if let Some(q) = location_query_eval(net, truth, &obs, &u, rwr.seed) {
                    score.location_error_m = Some(q.spatial_error_m);
                    score.time_error_s = q.time_error_s;
                }
            }
        }
        Err(_) => score.inference_failed = true,
    }
    if cfg.baselines {
        score.sp = run_baseline(net, model, &obs, Baseline::Sp, &cfg.rwr)
            .ok()
            .map(|p| precision_recall_path(net, truth, &p));
        score.stp = run_baseline(net, model, &obs, Baseline::Stp, &cfg.rwr)
            .ok()
            .map(|p| precision_recall_path(net, truth, &p));
    }
    score
}

/// Outcome of the query-accuracy protocol on one trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocationQueryScore {
    /// External id of the hidden ground-truth node that was asked about.
    pub node: u64,
    /// Probability-weighted spatial error of location-at-time, meters.
    pub spatial_error_m: f64,
    /// Circular error of the predicted mean arrival time, seconds.
    pub time_error_s: Option<f64>,
}

/// Query-accuracy protocol: pick a seeded ground-truth point absent from
/// the observation (hidden points are what gets asked), then score the
/// location-at-its-time prediction by weighted spatial distance and the
/// time-at-the-node prediction by circular error. `None` when every truth
/// point was observed.
pub fn location_query_eval(
    net: &RoadNetwork,
    truth: &Trajectory,
    obs: &Observation,
    u: &UncertainTrajectory,
    seed: u64,
) -> Option<LocationQueryScore> {
    let observed: HashSet<NodeId> = obs.points.iter().map(|p| p.node).collect();
    let hidden: Vec<&crate::trajectory::StPoint> = truth
        .points
        .iter()
        .filter(|p| !observed.contains(&p.node))
        .collect();
    if hidden.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c6f_6361);
    let pick = hidden[rng.random_range(0..hidden.len())];
    let node = net.node(pick.node);
    let spatial_error_m = u
        .weighted_spatial_distance(pick.time, node.lat, node.lon)
        .ok()?;
    let time_error_s = u
        .time_at_node(node.ext_id, Some(net))
        .ok()
        .map(|dist| crate::time::circular_distance_f64(dist.mean, pick.time.seconds() as f64));
    Some(LocationQueryScore {
        node: node.ext_id,
        spatial_error_m,
        time_error_s,
    })
}

fn summarize(scores: &[TrajectoryScore]) -> Summary {
    let n = scores.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TrajectoryScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let opt_series = |f: &dyn Fn(&TrajectoryScore) -> Option<f64>| -> Vec<f64> {
        let mut v: Vec<f64> = scores.iter().filter_map(f).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let loc = opt_series(&|s: &TrajectoryScore| s.location_error_m);
    let time = opt_series(&|s: &TrajectoryScore| s.time_error_s);
    let percentile = |v: &[f64], q: f64| -> Option<f64> {
        if v.is_empty() {
            None
        } else {
            Some(v[((v.len() - 1) as f64 * q).round() as usize])
        }
    };
    Summary {
        trajectories: scores.len(),
        failures: scores.iter().filter(|s| s.inference_failed).count(),
        mean_precision: mean(&|s: &TrajectoryScore| s.uncertain.precision),
        mean_recall: mean(&|s: &TrajectoryScore| s.uncertain.recall),
        mean_f_score: mean(&|s: &TrajectoryScore| s.uncertain.f_score),
        mlt_mean_f_score: mean(&|s: &TrajectoryScore| s.mlt.map(|p| p.f_score).unwrap_or(0.0)),
        sp_mean_f_score: mean(&|s: &TrajectoryScore| s.sp.map(|p| p.f_score).unwrap_or(0.0)),
        stp_mean_f_score: mean(&|s: &TrajectoryScore| s.stp.map(|p| p.f_score).unwrap_or(0.0)),
        location_error_mean_m: if loc.is_empty() {
            None
        } else {
            Some(loc.iter().sum::<f64>() / loc.len() as f64)
        },
        location_error_p50_m: percentile(&loc, 0.5),
        location_error_p90_m: percentile(&loc, 0.9),
        time_error_mean_s: if time.is_empty() {
            None
        } else {
            Some(time.iter().sum::<f64>() / time.len() as f64)
        },
        mean_samples: mean(&|s: &TrajectoryScore| s.samples as f64),
    }
}

/// Mean held-out F-score of the uncertain prediction; inference failures
/// count as zero. Shared by order selection.
pub(crate) fn mean_f_score<'a, I>(
    net: &RoadNetwork,
    model: &NetworkMobilityModel,
    held: I,
    sampling_interval: u32,
    rwr: &RwrConfig,
) -> f64
where
    I: Iterator<Item = &'a Trajectory>,
{
    let held: Vec<&Trajectory> = held.collect();
    let scores: Vec<f64> = held
        .par_iter()
        .map(|t| {
            let obs = downsample(t, sampling_interval);
            let rwr = RwrConfig {
                seed: crate::inference_seed(rwr.seed, &t.id),
                ..rwr.clone()
            };
            match crate::inference::infer(net, model, &obs, &rwr) {
                Ok(u) => precision_recall_uncertain(net, t, &u).f_score,
                Err(_) => 0.0,
            }
        })
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// One bucket of the node-probability-vs-distance curves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveBucket {
    pub lo: f64,
    pub hi: f64,
    pub mean_probability: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Curves {
    pub spatial: Vec<CurveBucket>,
    pub temporal: Vec<CurveBucket>,
}

/// Mean visit likelihood of ground-truth nodes bucketed by spatial and
/// temporal distance to the nearest observation point.
pub fn node_probability_vs_distance(
    net: &RoadNetwork,
    cases: &[(&Trajectory, &Observation, &UncertainTrajectory)],
    spatial_bucket_m: f64,
    temporal_bucket_s: f64,
) -> Result<Curves> {
    if cases.is_empty() {
        return Err(Error::InsufficientData("no scored trajectories".into()));
    }
    let mut spatial: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    let mut temporal: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for (truth, obs, u) in cases {
        for p in &truth.points {
            let ext = net.node(p.node).ext_id;
            let prob = if u.contains_node(ext) {
                u.node_weight(ext)?.min(1.0)
            } else {
                0.0
            };
            let sd = obs
                .points
                .iter()
                .map(|o| haversine(net.node(p.node), net.node(o.node)))
                .fold(f64::INFINITY, f64::min);
            let td = obs
                .points
                .iter()
                .map(|o| p.time.circular_distance(o.time) as f64)
                .fold(f64::INFINITY, f64::min);
            let sb = (sd / spatial_bucket_m).floor() as usize;
            let tb = (td / temporal_bucket_s).floor() as usize;
            let cell = spatial.entry(sb).or_insert((0.0, 0));
            cell.0 += prob;
            cell.1 += 1;
            let cell = temporal.entry(tb).or_insert((0.0, 0));
            cell.0 += prob;
            cell.1 += 1;
        }
    }
    let collect = |map: std::collections::BTreeMap<usize, (f64, usize)>, width: f64| {
        map.into_iter()
            .map(|(b, (sum, count))| CurveBucket {
                lo: b as f64 * width,
                hi: (b + 1) as f64 * width,
                mean_probability: sum / count as f64,
                count,
            })
            .collect()
    };
    Ok(Curves {
        spatial: collect(spatial, spatial_bucket_m),
        temporal: collect(temporal, temporal_bucket_s),
    })
}

impl EvalReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut buf = serde_json::to_vec_pretty(self).expect("serializable");
        buf.push(b'\n');
        buf
    }

    /// One row per trajectory plus one summary row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "kind,id,fold,si,observed_points,truth_edges,precision,recall,f_score,\
             mlt_f,sp_f,stp_f,location_error_m,time_error_s,samples,failed"
        )?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let pr = |p: Option<PrScore>| opt(p.map(|x| x.f_score));
        for s in &self.trajectories {
            writeln!(
                w,
                "trajectory,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.id,
                s.fold,
                self.sampling_interval,
                s.observed_points,
                s.truth_edges,
                s.uncertain.precision,
                s.uncertain.recall,
                s.uncertain.f_score,
                pr(s.mlt),
                pr(s.sp),
                pr(s.stp),
                opt(s.location_error_m),
                opt(s.time_error_s),
                s.samples,
                s.inference_failed,
            )?;
        }
        let m = &self.summary;
        writeln!(
            w,
            "summary,all,,{},,,{},{},{},{},{},{},{},{},{},{}",
            self.sampling_interval,
            m.mean_precision,
            m.mean_recall,
            m.mean_f_score,
            m.mlt_mean_f_score,
            m.sp_mean_f_score,
            m.stp_mean_f_score,
            opt(m.location_error_mean_m),
            opt(m.time_error_mean_s),
            m.mean_samples,
            m.failures,
        )?;
        Ok(())
    }
}
