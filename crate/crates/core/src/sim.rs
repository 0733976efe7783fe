//! Deterministic 2D differential-drive navigation environment.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{LocalMap, LocalMapParams, ObservationBuilder};
use crate::scene::{Obstacle, SceneSpec};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Random stream for one episode of a seeded batch.
pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
}

impl RobotState {
    pub fn at(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_angle(heading), v: 0.0, omega: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub max_range: f64,
    /// Field of view in degrees.
    pub fov: f64,
    pub n_rays: usize,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self { max_range: 3.5, fov: 360.0, n_rays: 360 }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov <= 360.0) {
            return Err(Error::invalid(format!("LiDAR fov must be in (0, 360], got {}", self.fov)));
        }
        if self.n_rays == 0 {
            return Err(Error::invalid("LiDAR needs at least one ray"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid(format!("LiDAR max range must be positive, got {}", self.max_range)));
        }
        Ok(())
    }

    /// Ray angles relative to the heading, spread uniformly over the fov and
    /// centred on 0. A full circle uses `n` distinct directions.
    pub fn ray_offsets(&self) -> Vec<f64> {
        let fov = self.fov.to_radians();
        let n = self.n_rays;
        if n == 1 {
            return vec![0.0];
        }
        let full = (self.fov - 360.0).abs() < 1e-12;
        let step = if full { fov / n as f64 } else { fov / (n - 1) as f64 };
        (0..n).map(|i| normalize_angle(-fov / 2.0 + i as f64 * step)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarReturn {
    pub rho: f64,
    pub theta: f64,
    /// False for a no-return ray, which then reports `rho == max_range`.
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub max_range: f64,
    pub returns: Vec<LidarReturn>,
}

/// Distance along the unit ray `(ox, oy) + t (dx, dy)` to the first
/// intersection with the primitive; 0 when the origin is inside it.
fn ray_obstacle(o: &Obstacle, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
    match *o {
        Obstacle::Rect { .. } => {
            let (x0, y0, x1, y1) = o.bounds();
            let mut t0 = 0.0f64;
            let mut t1 = f64::INFINITY;
            for (orig, dir, lo, hi) in [(ox, dx, x0, x1), (oy, dy, y0, y1)] {
                if dir == 0.0 {
                    if orig < lo || orig > hi {
                        return None;
                    }
                } else {
                    let a = (lo - orig) / dir;
                    let b = (hi - orig) / dir;
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
            }
            (t0 <= t1).then_some(t0)
        }
        Obstacle::Circle { cx, cy, r } => {
            let (fx, fy) = (ox - cx, oy - cy);
            let c = fx * fx + fy * fy - r * r;
            if c <= 0.0 {
                return Some(0.0);
            }
            let b = fx * dx + fy * dy;
            let disc = b * b - c;
            if disc < 0.0 || b > 0.0 {
                return None;
            }
            Some(-b - disc.sqrt())
        }
    }
}

fn ray_walls(scene: &SceneSpec, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
    if !scene.walls {
        return None;
    }
    let mut best = f64::INFINITY;
    for (orig, dir, hi) in [(ox, dx, scene.width()), (oy, dy, scene.height())] {
        if dir > 0.0 {
            best = best.min((hi - orig) / dir);
        } else if dir < 0.0 {
            best = best.min(-orig / dir);
        }
    }
    best.is_finite().then(|| best.max(0.0))
}

/// Analytic nearest-hit range for every ray; misses report `max_range`.
pub fn raycast(scene: &SceneSpec, pose: &RobotState, cfg: &LidarConfig) -> LidarScan {
    let returns = cfg
        .ray_offsets()
        .into_iter()
        .map(|theta| {
            let a = pose.heading + theta;
            let (dx, dy) = (a.cos(), a.sin());
            let mut t = ray_walls(scene, pose.x, pose.y, dx, dy).unwrap_or(f64::INFINITY);
            for o in &scene.obstacles {
                if let Some(h) = ray_obstacle(o, pose.x, pose.y, dx, dy) {
                    t = t.min(h);
                }
            }
            if t <= cfg.max_range {
                LidarReturn { rho: t, theta, hit: true }
            } else {
                LidarReturn { rho: cfg.max_range, theta, hit: false }
            }
        })
        .collect();
    LidarScan { max_range: cfg.max_range, returns }
}

/// Exact unicycle integration over `dt`.
pub fn step_dynamics(state: &RobotState, action: Action, dt: f64) -> RobotState {
    let Action { v, omega } = action;
    let h = state.heading;
    let (x, y, heading) = if omega.abs() < 1e-9 {
        (state.x + v * dt * h.cos(), state.y + v * dt * h.sin(), h)
    } else {
        let h1 = h + omega * dt;
        let r = v / omega;
        (state.x + r * (h1.sin() - h.sin()), state.y - r * (h1.cos() - h.cos()), h1)
    };
    RobotState { x, y, heading: normalize_angle(heading), v, omega }
}

/// True when the closed robot disc touches an obstacle or the boundary.
pub fn check_collision(scene: &SceneSpec, state: &RobotState, robot_radius: f64) -> bool {
    disc_collides(scene, state.x, state.y, robot_radius)
}

fn disc_collides(scene: &SceneSpec, x: f64, y: f64, r: f64) -> bool {
    if scene.walls && (x - r <= 0.0 || y - r <= 0.0 || x + r >= scene.width() || y + r >= scene.height()) {
        return true;
    }
    scene.obstacles.iter().any(|o| match *o {
        Obstacle::Rect { .. } => {
            let (x0, y0, x1, y1) = o.bounds();
            let qx = x.clamp(x0, x1) - x;
            let qy = y.clamp(y0, y1) - y;
            qx * qx + qy * qy <= r * r
        }
        Obstacle::Circle { cx, cy, r: rc } => {
            let (dx, dy) = (x - cx, y - cy);
            dx * dx + dy * dy <= (r + rc) * (r + rc)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub r_step: f64,
    pub r_succ: f64,
    pub r_nav: f64,
    pub r_coll: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { r_step: 0.0, r_succ: 1.0, r_nav: -0.001, r_coll: -1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoneReason {
    Running,
    Goal,
    Collision,
    Timeout,
}

impl DoneReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DoneReason::Running => "running",
            DoneReason::Goal => "goal",
            DoneReason::Collision => "collision",
            DoneReason::Timeout => "timeout",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != DoneReason::Running
    }
}

impl std::fmt::Display for DoneReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Step reward and the terminal branch it took. Success wins over collision,
/// collision over the distance penalty.
pub fn compute_reward(
    d_t: f64,
    d_prev: f64,
    collided: bool,
    goal_radius: f64,
    cfg: &RewardConfig,
) -> (f64, DoneReason) {
    if d_t < goal_radius {
        (cfg.r_step + cfg.r_succ, DoneReason::Goal)
    } else if collided {
        (cfg.r_step + cfg.r_coll, DoneReason::Collision)
    } else if d_t > d_prev {
        (cfg.r_step + cfg.r_nav, DoneReason::Running)
    } else {
        (cfg.r_step, DoneReason::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Control period in seconds.
    pub dt: f64,
    pub t_max: usize,
    pub goal_radius: f64,
    pub robot_radius: f64,
    /// Extra free-space margin required around sampled start and goal points.
    pub clearance: f64,
    /// Lower bound on the sampled start-to-goal distance; never below `goal_radius`.
    pub min_goal_distance: f64,
    /// Upper bound on the sampled start-to-goal distance, if any.
    pub max_goal_distance: Option<f64>,
    pub max_sampling_attempts: usize,
    /// Standard deviation of Gaussian range noise; 0 disables it.
    pub range_noise_std: f64,
    pub reward: RewardConfig,
    pub lidar: LidarConfig,
    pub local_map: LocalMapParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            t_max: 10_000,
            goal_radius: 0.25,
            robot_radius: 0.17,
            clearance: 0.05,
            min_goal_distance: 0.25,
            max_goal_distance: None,
            max_sampling_attempts: 10_000,
            range_noise_std: 0.0,
            reward: RewardConfig::default(),
            lidar: LidarConfig::default(),
            local_map: LocalMapParams::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.t_max == 0 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::invalid(format!("goal radius must be positive, got {}", self.goal_radius)));
        }
        if !(self.robot_radius > 0.0) || self.clearance < 0.0 || self.range_noise_std < 0.0 {
            return Err(Error::invalid("robot radius, clearance and noise must be non-negative"));
        }
        if let Some(max_d) = self.max_goal_distance {
            if !(max_d >= self.min_goal_distance.max(self.goal_radius)) {
                return Err(Error::invalid(format!("max goal distance {max_d} is below the minimum")));
            }
        }
        self.lidar.validate()
    }
}

/// Uniform rejection sampling of a start pose and goal point in free space.
pub fn sample_start_goal<R: Rng + ?Sized>(
    scene: &SceneSpec,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<(RobotState, (f64, f64))> {
    let margin = cfg.robot_radius + cfg.clearance;
    let min_d = cfg.min_goal_distance.max(cfg.goal_radius);
    let free_point = |rng: &mut R| {
        let x = rng.gen::<f64>() * scene.width();
        let y = rng.gen::<f64>() * scene.height();
        (!disc_collides(scene, x, y, margin)).then_some((x, y))
    };
    for _ in 0..cfg.max_sampling_attempts {
        let Some((sx, sy)) = free_point(rng) else { continue };
        let Some((gx, gy)) = free_point(rng) else { continue };
        let d = (gx - sx).hypot(gy - sy);
        if d < min_d || cfg.max_goal_distance.is_some_and(|m| d > m) {
            continue;
        }
        let heading = normalize_angle(rng.gen::<f64>() * 2.0 * PI - PI);
        return Ok((RobotState::at(sx, sy, heading), (gx, gy)));
    }
    Err(Error::SceneInfeasible(format!(
        "no collision-free start/goal pair after {} attempts",
        cfg.max_sampling_attempts
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: RobotState,
    pub reward: f64,
    pub done: bool,
    pub reason: DoneReason,
    pub d_t: f64,
}

/// A single navigation episode in a fixed scene.
#[derive(Debug, Clone)]
pub struct NavEnv {
    scene: SceneSpec,
    cfg: EpisodeConfig,
    state: RobotState,
    goal: (f64, f64),
    t: usize,
    d_prev: f64,
    reason: DoneReason,
    noise: Option<Normal<f64>>,
}

impl NavEnv {
    pub fn new(scene: SceneSpec, cfg: EpisodeConfig) -> Result<Self> {
        scene.validate()?;
        cfg.validate()?;
        let noise = if cfg.range_noise_std > 0.0 {
            Some(Normal::new(0.0, cfg.range_noise_std).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        let state = RobotState::at(scene.width() / 2.0, scene.height() / 2.0, 0.0);
        let goal = (state.x, state.y);
        Ok(Self { scene, cfg, state, goal, t: 0, d_prev: 0.0, reason: DoneReason::Running, noise })
    }

    pub fn scene(&self) -> &SceneSpec {
        &self.scene
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    /// Starts a new episode from a freshly sampled start and goal.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (start, goal) = sample_start_goal(&self.scene, &self.cfg, rng)?;
        self.reset_to(start, goal);
        Ok(())
    }

    pub fn reset_to(&mut self, start: RobotState, goal: (f64, f64)) {
        self.state = start;
        self.goal = goal;
        self.t = 0;
        self.d_prev = self.goal_distance();
        self.reason = DoneReason::Running;
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn goal(&self) -> (f64, f64) {
        self.goal
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn reason(&self) -> DoneReason {
        self.reason
    }

    pub fn goal_distance(&self) -> f64 {
        (self.goal.0 - self.state.x).hypot(self.goal.1 - self.state.y)
    }

    /// Goal distance and bearing relative to the heading.
    pub fn goal_polar(&self) -> (f64, f64) {
        let (dx, dy) = (self.goal.0 - self.state.x, self.goal.1 - self.state.y);
        (dx.hypot(dy), normalize_angle(dy.atan2(dx) - self.state.heading))
    }

    /// LiDAR scan at the current pose; noise (when enabled) perturbs hits only.
    pub fn scan<R: Rng + ?Sized>(&self, rng: &mut R) -> LidarScan {
        let mut scan = raycast(&self.scene, &self.state, &self.cfg.lidar);
        if let Some(noise) = &self.noise {
            for r in scan.returns.iter_mut().filter(|r| r.hit) {
                r.rho = (r.rho + noise.sample(rng)).clamp(0.0, scan.max_range);
            }
        }
        scan
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.reason.is_terminal() {
            return Err(Error::invalid("step called on a finished episode"));
        }
        self.state = step_dynamics(&self.state, action, self.cfg.dt);
        self.t += 1;
        let d_t = self.goal_distance();
        let collided = check_collision(&self.scene, &self.state, self.cfg.robot_radius);
        let (reward, mut reason) = compute_reward(d_t, self.d_prev, collided, self.cfg.goal_radius, &self.cfg.reward);
        if reason == DoneReason::Running && self.t >= self.cfg.t_max {
            reason = DoneReason::Timeout;
        }
        self.d_prev = d_t;
        self.reason = reason;
        Ok(StepOutcome { state: self.state, reward, done: reason.is_terminal(), reason, d_t })
    }
}

/// What a policy sees at one control step.
pub struct PolicyInput<'a> {
    pub t: usize,
    /// Control period in seconds.
    pub dt: f64,
    pub state: &'a RobotState,
    pub goal: (f64, f64),
    pub goal_polar: (f64, f64),
    pub scan: &'a LidarScan,
    /// Present only when [`Policy::needs_local_map`] returns true.
    pub local_map: Option<&'a LocalMap>,
}

pub trait Policy {
    fn act(&mut self, input: &PolicyInput<'_>) -> Result<Action>;

    fn needs_local_map(&self) -> bool {
        false
    }
}

/// Hand-written controllers addressable by name from the CLI.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ScriptedPolicy {
    /// Always `v = 0`, `omega = 0`.
    Stationary,
    /// Constant forward speed, no turning.
    Straight { v: f64 },
    /// Turns in place toward the goal, then drives straight at it.
    GoalSeeking { v: f64, omega: f64 },
    /// Uniform choice among the given actions.
    Random { actions: Vec<Action>, rng: ChaCha8Rng },
}

impl ScriptedPolicy {
    pub const NAMES: [&'static str; 4] = ["stationary", "straight", "goal-seeking", "random"];

    pub fn from_name(name: &str, seed: u64) -> Option<Self> {
        Some(match name {
            "stationary" => ScriptedPolicy::Stationary,
            "straight" => ScriptedPolicy::Straight { v: 0.15 },
            "goal-seeking" => ScriptedPolicy::GoalSeeking { v: 0.15, omega: 1.0 },
            "random" => ScriptedPolicy::Random {
                actions: [-1.0, 0.0, 1.0].iter().map(|&omega| Action { v: 0.15, omega }).collect(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            _ => return None,
        })
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, input: &PolicyInput<'_>) -> Result<Action> {
        Ok(match self {
            ScriptedPolicy::Stationary => Action { v: 0.0, omega: 0.0 },
            ScriptedPolicy::Straight { v } => Action { v: *v, omega: 0.0 },
            ScriptedPolicy::GoalSeeking { v, omega } => {
                let alpha = input.goal_polar.1;
                if alpha.abs() > 1e-3 {
                    // Largest rotation that does not overshoot in one control period.
                    let w = (alpha / input.dt).clamp(-*omega, *omega);
                    Action { v: 0.0, omega: w }
                } else {
                    Action { v: *v, omega: 0.0 }
                }
            }
            ScriptedPolicy::Random { actions, rng } => actions[rng.gen_range(0..actions.len())],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
    pub reward: f64,
    pub done_reason: DoneReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub start: RobotState,
    pub goal: (f64, f64),
    /// Row 0 is the start pose; each later row is the state after one step.
    pub records: Vec<StepRecord>,
    pub outcome: DoneReason,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn path_length(&self) -> f64 {
        self.records.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum()
    }

    /// Positions visited after each step (the start pose excluded).
    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.records.iter().skip(1).map(|r| (r.x, r.y)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "heading", "v", "omega", "reward", "done_reason"])?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.heading.to_string(),
                r.v.to_string(),
                r.omega.to_string(),
                r.reward.to_string(),
                r.done_reason.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Runs the observe, act, step loop until a terminal reason is reached.
pub fn run_episode_with<R: Rng + ?Sized>(
    env: &mut NavEnv,
    policy: &mut dyn Policy,
    builder: Option<&ObservationBuilder>,
    rng: &mut R,
) -> Result<Episode> {
    let start = *env.state();
    let goal = env.goal();
    let mut records = vec![StepRecord {
        t: 0,
        x: start.x,
        y: start.y,
        heading: start.heading,
        v: start.v,
        omega: start.omega,
        reward: 0.0,
        done_reason: DoneReason::Running,
    }];
    loop {
        let scan = env.scan(rng);
        let local = match (policy.needs_local_map(), builder) {
            (true, Some(b)) => Some(b.build(&scan, env.goal_polar())?),
            (true, None) => return Err(Error::invalid("policy needs a local map builder")),
            (false, _) => None,
        };
        let input = PolicyInput {
            t: env.t(),
            dt: env.config().dt,
            state: env.state(),
            goal,
            goal_polar: env.goal_polar(),
            scan: &scan,
            local_map: local.as_ref(),
        };
        let action = policy.act(&input)?;
        let out = env.step(action)?;
        records.push(StepRecord {
            t: env.t(),
            x: out.state.x,
            y: out.state.y,
            heading: out.state.heading,
            v: out.state.v,
            omega: out.state.omega,
            reward: out.reward,
            done_reason: out.reason,
        });
        if out.done {
            return Ok(Episode { start, goal, records, outcome: out.reason });
        }
    }
}

/// Samples a start and goal from `seed`, then runs one episode.
pub fn run_episode(scene: &SceneSpec, policy: &mut dyn Policy, cfg: &EpisodeConfig, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = NavEnv::new(scene.clone(), cfg.clone())?;
    env.reset(&mut rng)?;
    let builder = if policy.needs_local_map() {
        Some(ObservationBuilder::new(cfg.local_map.clone(), cfg.robot_radius)?)
    } else {
        None
    };
    run_episode_with(&mut env, policy, builder.as_ref(), &mut rng)
}
