//! Experiment driver: scene family, evaluation, local-map collection,
//! similarity per scene, sensor sweeps and rank correlation.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drl::DqnAgent;
use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::observation::{build_obstacle_map, LocalMapParams, ObservationBuilder};
use crate::scene::{Obstacle, SceneSpec};
use crate::sim::{episode_rng, run_episode_with, DoneReason, EpisodeConfig, LidarConfig, NavEnv, Policy};
use crate::similarity::{
    default_local_angles, global_scene_similarity, local_scene_similarity, weighted_scene_score,
    GlobalSimilarityParams, WeightMatrix,
};

pub const DEFAULT_N_GOALS: usize = 50;
pub const DEFAULT_COLLECT_INTERVAL: usize = 10;
pub const DEFAULT_N_LOCAL_MAPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub goal: usize,
    pub outcome: DoneReason,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene_id: String,
    pub goals: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    /// Mean of `steps * dt` over successful episodes; `None` without successes.
    pub mean_nav_time: Option<f64>,
    pub ss_global: Option<f64>,
    pub ss_local: Option<f64>,
    pub episodes: Vec<EpisodeSummary>,
}

impl EvalReport {
    fn from_episodes(scene_id: &str, dt: f64, episodes: Vec<EpisodeSummary>) -> Self {
        let count = |r| episodes.iter().filter(|e| e.outcome == r).count();
        let successes = count(DoneReason::Goal);
        let goals = episodes.len();
        let nav: Vec<f64> = episodes
            .iter()
            .filter(|e| e.outcome == DoneReason::Goal)
            .map(|e| e.steps as f64 * dt)
            .collect();
        Self {
            scene_id: scene_id.to_string(),
            goals,
            successes,
            collisions: count(DoneReason::Collision),
            timeouts: count(DoneReason::Timeout),
            success_rate: if goals == 0 { 0.0 } else { successes as f64 / goals as f64 },
            mean_nav_time: (!nav.is_empty()).then(|| nav.iter().sum::<f64>() / nav.len() as f64),
            ss_global: None,
            ss_local: None,
            episodes,
        }
    }
}

pub const REPORT_HEADER: [&str; 10] = [
    "scene",
    "goals",
    "successes",
    "collisions",
    "timeouts",
    "success_rate",
    "mean_nav_time",
    "ss_global",
    "ss_local",
    "variant",
];

/// Writes one row per report; `variants` labels each row (empty when absent).
pub fn write_reports_csv<W: Write>(reports: &[EvalReport], variants: &[String], out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record([
            r.scene_id.clone(),
            r.goals.to_string(),
            r.successes.to_string(),
            r.collisions.to_string(),
            r.timeouts.to_string(),
            r.success_rate.to_string(),
            opt(r.mean_nav_time),
            opt(r.ss_global),
            opt(r.ss_local),
            variants.get(i).cloned().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Runs `n_goals` episodes; goal `k` draws its start and goal from stream
/// `k` of `seed`, so every policy faces the same goals.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    scene_id: &str,
    scene: &SceneSpec,
    cfg: &EpisodeConfig,
    n_goals: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut env = NavEnv::new(scene.clone(), cfg.clone())?;
    let builder = if policy.needs_local_map() {
        Some(ObservationBuilder::new(cfg.local_map.clone(), cfg.robot_radius)?)
    } else {
        None
    };
    let mut episodes = Vec::with_capacity(n_goals);
    for goal in 0..n_goals {
        let mut rng = episode_rng(seed, goal as u64);
        env.reset(&mut rng)?;
        let ep = run_episode_with(&mut env, policy, builder.as_ref(), &mut rng)?;
        episodes.push(EpisodeSummary { goal, outcome: ep.outcome, steps: ep.steps() });
    }
    Ok(EvalReport::from_episodes(scene_id, cfg.dt, episodes))
}

/// Greedy evaluation of a trained agent with its own episode settings.
pub fn evaluate_agent(agent: &DqnAgent, scene_id: &str, scene: &SceneSpec, n_goals: usize, seed: u64) -> Result<EvalReport> {
    let cfg = agent.config.env.clone();
    evaluate_policy(&mut agent.clone(), scene_id, scene, &cfg, n_goals, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectedMaps {
    pub maps: Vec<GridImage>,
    /// True when the episode budget ran out before `n_maps` were gathered.
    pub partial: bool,
    pub episodes: usize,
}

/// Rolls out the greedy agent and keeps the obstacle map of every
/// `interval`-th step (counted across episodes). Maps are rebuilt from the
/// scan with `dilation_kernel`, so similarity can use undilated rasters.
pub fn collect_local_maps(
    agent: &DqnAgent,
    scene: &SceneSpec,
    n_maps: usize,
    interval: usize,
    dilation_kernel: usize,
    seed: u64,
) -> Result<CollectedMaps> {
    if n_maps == 0 || interval == 0 {
        return Err(Error::invalid("need at least one map and a positive interval"));
    }
    let cfg = agent.config.env.clone();
    let builder = agent.observation_builder()?;
    let ss_params = LocalMapParams { dilation_kernel, ..cfg.local_map.clone() };
    let mut env = NavEnv::new(scene.clone(), cfg)?;
    let mut maps = Vec::with_capacity(n_maps);
    let mut step = 0usize;
    let max_episodes = 10 * n_maps;
    let mut episodes = 0;
    while maps.len() < n_maps && episodes < max_episodes {
        let mut rng = episode_rng(seed, episodes as u64);
        env.reset(&mut rng)?;
        episodes += 1;
        loop {
            let scan = env.scan(&mut rng);
            if step.is_multiple_of(interval) {
                maps.push(build_obstacle_map(&scan, &ss_params)?);
                if maps.len() == n_maps {
                    break;
                }
            }
            step += 1;
            let local = builder.build(&scan, env.goal_polar())?;
            let action = agent.config.actions[agent.greedy(&local)?];
            if env.step(action)?.done {
                break;
            }
        }
    }
    let partial = maps.len() < n_maps;
    if partial {
        log::warn!("collected {} of {n_maps} local maps in {episodes} episodes", maps.len());
    }
    Ok(CollectedMaps { maps, partial, episodes })
}

/// Settings for the visitation-weighted local similarity of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSimilarityParams {
    pub n_maps: usize,
    pub interval: usize,
    pub dilation_kernel: usize,
    pub angles: Vec<f64>,
    pub n_max: u32,
}

impl Default for LocalSimilarityParams {
    fn default() -> Self {
        Self {
            n_maps: DEFAULT_N_LOCAL_MAPS,
            interval: DEFAULT_COLLECT_INTERVAL,
            dilation_kernel: 1,
            angles: default_local_angles(),
            n_max: crate::similarity::DEFAULT_N_MAX,
        }
    }
}

/// Weighted similarity of the agent's local maps in `scene` against the
/// training scene's global map.
pub fn weighted_similarity_in(
    agent: &DqnAgent,
    scene: &SceneSpec,
    train_map: &GridImage,
    wt: &WeightMatrix,
    params: &LocalSimilarityParams,
    seed: u64,
) -> Result<f64> {
    let maps = collect_local_maps(agent, scene, params.n_maps, params.interval, params.dilation_kernel, seed)?;
    Ok(weighted_scene_score(train_map, &maps.maps, wt, &params.angles)?.aggregate)
}

/// Scores every scene: `SS_local` relative to the training scene's own
/// weighted score (fresh rollouts with the same seed), and `SS_global`.
pub fn scene_similarities(
    agent: &DqnAgent,
    train: &SceneSpec,
    scenes: &[(String, SceneSpec)],
    wt: &WeightMatrix,
    params: &LocalSimilarityParams,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let res = agent.config.env.local_map.resolution;
    let train_map = train.rasterize(res)?;
    let ss_train = weighted_similarity_in(agent, train, &train_map, wt, params, seed)?;
    scenes
        .iter()
        .map(|(_, s)| {
            let ss_test = if s == train {
                ss_train
            } else {
                weighted_similarity_in(agent, s, &train_map, wt, params, seed)?
            };
            let global = global_scene_similarity(&train_map, &s.rasterize(res)?, &GlobalSimilarityParams::default())?;
            Ok((local_scene_similarity(ss_test, ss_train), global.aggregate))
        })
        .collect()
}

/// LiDAR variants: 360 degrees with 360/260/160/60/30 rays, then 270 and
/// 180 degree fields of view at one ray per degree.
pub fn default_sensor_variants() -> Vec<LidarConfig> {
    let full = |n| LidarConfig { n_rays: n, ..LidarConfig::default() };
    let mut v: Vec<LidarConfig> = [360, 260, 160, 60, 30].into_iter().map(full).collect();
    v.push(LidarConfig { fov: 270.0, n_rays: 270, ..LidarConfig::default() });
    v.push(LidarConfig { fov: 180.0, n_rays: 180, ..LidarConfig::default() });
    v
}

pub fn sensor_label(l: &LidarConfig) -> String {
    format!("fov{}_rays{}", l.fov, l.n_rays)
}

/// Evaluates the same weights under each LiDAR variant.
pub fn sensor_sweep(
    agent: &DqnAgent,
    scene_id: &str,
    scene: &SceneSpec,
    variants: &[LidarConfig],
    n_goals: usize,
    seed: u64,
) -> Result<Vec<(LidarConfig, EvalReport)>> {
    variants
        .iter()
        .map(|l| {
            let mut variant = agent.clone();
            variant.config.env.lidar = *l;
            Ok((*l, evaluate_agent(&variant, scene_id, scene, n_goals, seed)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_sr: f64,
    /// Population standard deviation; 0 for empty or single-sample bins.
    pub std_sr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub pairs: Vec<(f64, f64)>,
    /// Spearman rank correlation of (SS, SR).
    pub rho: f64,
    /// True when either variable is constant; `rho` is then reported as 0.
    pub degenerate: bool,
    /// Equal-width bins over the observed SS range, lowest first.
    pub bins: Vec<Bin>,
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Rank correlation and binned SR statistics of `(SS, SR)` pairs.
pub fn correlate(pairs: &[(f64, f64)], n_bins: usize) -> Result<CorrelationSummary> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 (SS, SR) pairs, got {}", pairs.len())));
    }
    if n_bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    let ss: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let sr: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rho = pearson(&average_ranks(&ss), &average_ranks(&sr));
    let lo = ss.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_bins = if hi > lo { n_bins } else { 1 };
    let width = (hi - lo) / n_bins as f64;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for &(s, r) in pairs {
        let b = if width > 0.0 { (((s - lo) / width) as usize).min(n_bins - 1) } else { 0 };
        members[b].push(r);
    }
    let bins = members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let count = m.len();
            let mean = if count == 0 { 0.0 } else { m.iter().sum::<f64>() / count as f64 };
            let var = if count == 0 { 0.0 } else { m.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / count as f64 };
            Bin {
                lo: lo + i as f64 * width,
                hi: if i + 1 == n_bins { hi } else { lo + (i + 1) as f64 * width },
                count,
                mean_sr: mean,
                std_sr: var.sqrt(),
            }
        })
        .collect();
    Ok(CorrelationSummary { pairs: pairs.to_vec(), rho: rho.unwrap_or(0.0), degenerate: rho.is_none(), bins })
}

pub fn write_correlation_csv<W: Write>(summary: &CorrelationSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin", "lo", "hi", "count", "mean_sr", "std_sr", "rho", "degenerate"])?;
    for (i, b) in summary.bins.iter().enumerate() {
        w.write_record([
            i.to_string(),
            b.lo.to_string(),
            b.hi.to_string(),
            b.count.to_string(),
            b.mean_sr.to_string(),
            b.std_sr.to_string(),
            summary.rho.to_string(),
            summary.degenerate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn rect(cx: f64, cy: f64, w: f64, h: f64) -> Obstacle {
    Obstacle::Rect { cx, cy, w, h }
}

fn circle(cx: f64, cy: f64, r: f64) -> Obstacle {
    Obstacle::Circle { cx, cy, r }
}

/// Seeded clutter: obstacles placed by rejection so that no two come closer
/// than `gap` metres and all stay `gap` away from the walls.
fn clutter(seed: u64, n: usize, gap: f64, size: (f64, f64)) -> Vec<Obstacle> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Obstacle> = Vec::new();
    let mut attempts = 0;
    while out.len() < n && attempts < 100_000 {
        attempts += 1;
        let s = rng.gen_range(size.0..size.1);
        let o = if rng.gen_bool(0.5) {
            let aspect: f64 = rng.gen_range(0.5..2.0);
            rect(0.0, 0.0, s * aspect.sqrt(), s / aspect.sqrt())
        } else {
            circle(0.0, 0.0, s / 2.0)
        };
        let (x0, y0, x1, y1) = o.bounds();
        let (hw, hh) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
        let cx = rng.gen_range(gap + hw..5.0 - gap - hw);
        let cy = rng.gen_range(gap + hh..5.0 - gap - hh);
        let placed = match o {
            Obstacle::Rect { w, h, .. } => rect(cx, cy, w, h),
            Obstacle::Circle { r, .. } => circle(cx, cy, r),
        };
        let (a0, b0, a1, b1) = placed.bounds();
        let clear = out.iter().all(|q| {
            let (c0, d0, c1, d1) = q.bounds();
            a1 + gap <= c0 || c1 + gap <= a0 || b1 + gap <= d0 || d1 + gap <= b0
        });
        if clear {
            out.push(placed);
        }
    }
    out
}

/// The 5 m x 5 m training scene followed by test scenes of increasing
/// dissimilarity. Deterministic.
pub fn scene_family() -> Vec<(String, SceneSpec)> {
    let scene = |obstacles: Vec<Obstacle>| SceneSpec { extent_m: [5.0, 5.0], walls: true, obstacles };
    let train = vec![
        circle(1.5, 1.5, 0.3),
        circle(3.5, 3.5, 0.3),
        circle(1.5, 3.5, 0.25),
        circle(3.5, 1.5, 0.25),
    ];
    let mut family = vec![("train".to_string(), scene(train))];
    family.push((
        "shifted".into(),
        scene(vec![circle(1.3, 1.8, 0.3), circle(3.7, 3.2, 0.3), circle(1.8, 3.6, 0.25), circle(3.3, 1.2, 0.25)]),
    ));
    family.push((
        "boxes".into(),
        scene(vec![rect(1.5, 1.5, 0.6, 0.6), rect(3.5, 3.5, 0.6, 0.6), rect(1.5, 3.5, 0.5, 0.5), rect(3.5, 1.5, 0.5, 0.5)]),
    ));
    family.push(("scattered".into(), scene(clutter(21, 8, 0.7, (0.3, 0.6)))));
    family.push((
        "partitions".into(),
        scene(vec![rect(1.5, 2.0, 0.15, 2.4), rect(3.5, 3.0, 0.15, 2.4), rect(2.5, 4.2, 0.8, 0.15), rect(2.5, 0.8, 0.8, 0.15)]),
    ));
    family.push(("clutter".into(), scene(clutter(22, 14, 0.55, (0.3, 0.7)))));
    family.push(("dense".into(), scene(clutter(23, 24, 0.45, (0.25, 0.6)))));
    family
}
