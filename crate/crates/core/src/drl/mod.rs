//! Deep Q-learning over local-map observations.
//!
//! Agent files are little-endian binary:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `SSDQN\0\0\0` |
//! | 4 | format version (u32), currently 1 |
//! | 8 | length `n` of the config JSON (u64) |
//! | n | [`AgentConfig`] as UTF-8 JSON |
//! | 8 | parameter count `p` (u64) |
//! | 8p | parameters (f64), in [`QNetwork`] layout |

pub mod net;
pub mod replay;

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{LocalMap, ObservationBuilder};
use crate::scene::SceneSpec;
use crate::sim::{
    episode_rng, run_episode_with, sample_start_goal, Action, DoneReason, EpisodeConfig, NavEnv, Policy, PolicyInput,
};

pub use net::{Adam, ConvSpec, NetConfig, PoolSpec, QNetwork, Trace};
pub use replay::{encode_local_map, NStepWindow, PackedMap, ReplayBuffer, Transition};

/// `v = 0.15 m/s` with `omega` in {-1, 0, 1} rad/s.
pub const DQN_ACTIONS: [Action; 3] = [
    Action { v: 0.15, omega: -1.0 },
    Action { v: 0.15, omega: 0.0 },
    Action { v: 0.15, omega: 1.0 },
];

const MAGIC: &[u8; 8] = b"SSDQN\0\0\0";
const FORMAT_VERSION: u32 = 1;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Uniform random action with probability `epsilon`, otherwise greedy.
/// Always draws one uniform number so the stream does not depend on the outcome.
pub fn act_epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.len())
    } else {
        argmax(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub net: NetConfig,
    /// Episode settings the agent was trained with; its observation
    /// parameters and robot radius define the network input.
    pub env: EpisodeConfig,
    pub actions: Vec<Action>,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let lm = &self.env.local_map;
        if self.net.input_channels != 3 || self.net.input_height != lm.height || self.net.input_width != lm.width {
            return Err(Error::invalid(format!(
                "network input {}x{}x{} does not match the {}x{} local map",
                self.net.input_channels, self.net.input_height, self.net.input_width, lm.height, lm.width
            )));
        }
        if self.actions.len() != self.net.outputs {
            return Err(Error::invalid("one network output per action is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnAgent {
    pub config: AgentConfig,
    pub net: QNetwork,
}

impl DqnAgent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = QNetwork::new(config.net.clone(), &mut rng)?;
        Ok(Self { config, net })
    }

    pub fn q_values(&self, map: &LocalMap) -> Result<Vec<f64>> {
        self.net.forward(&encode_local_map(map))
    }

    pub fn greedy(&self, map: &LocalMap) -> Result<usize> {
        Ok(argmax(&self.q_values(map)?))
    }

    pub fn observation_builder(&self) -> Result<ObservationBuilder> {
        ObservationBuilder::new(self.config.env.local_map.clone(), self.config.env.robot_radius)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<agent>", e);
        let json = serde_json::to_vec(&self.config)?;
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        let params = self.net.params();
        w.write_all(&(params.len() as u64).to_le_bytes()).map_err(io)?;
        for p in params {
            w.write_all(&p.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::io("<agent>", e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::invalid("not an agent file"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported agent file version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let config: AgentConfig = serde_json::from_slice(&json)?;
        config.validate()?;
        let mut net = QNetwork::zeros(config.net.clone())?;
        r.read_exact(&mut b8).map_err(io)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n != net.num_params() {
            return Err(Error::invalid(format!("agent file holds {n} parameters, network needs {}", net.num_params())));
        }
        for p in net.params_mut() {
            r.read_exact(&mut b8).map_err(io)?;
            *p = f64::from_le_bytes(b8);
        }
        Ok(Self { config, net })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl Policy for DqnAgent {
    fn act(&mut self, input: &PolicyInput<'_>) -> Result<Action> {
        let map = input.local_map.ok_or_else(|| Error::invalid("agent needs a local map"))?;
        Ok(self.config.actions[self.greedy(map)?])
    }

    fn needs_local_map(&self) -> bool {
        true
    }
}

/// Caps the start-to-goal distance of training episodes. The cap grows
/// linearly from `start_distance` and is lifted after `fraction` of the episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalCurriculum {
    pub start_distance: f64,
    pub fraction: f64,
}

/// Periodic greedy evaluation on the training scenes. The agent with the best
/// success rate seen (latest on ties) is the one returned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    /// Episodes between checks.
    pub every: usize,
    /// Goals per training scene.
    pub goals: usize,
    /// Goal `k` comes from stream `k` of this seed.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Transitions collected before the first gradient step.
    pub warmup: usize,
    /// Gradient steps between hard target-network copies.
    pub target_update: usize,
    /// Environment steps per gradient step.
    pub train_every: usize,
    /// Steps summed into each stored return; the target bootstraps with `gamma^n_step`.
    pub n_step: usize,
    /// Select the bootstrap action with the online network (Double DQN).
    pub double_dqn: bool,
    pub goal_curriculum: Option<GoalCurriculum>,
    pub validation: Option<Validation>,
    pub net: NetConfig,
    pub env: EpisodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 4500,
            learning_rate: 1e-4,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.8,
            batch_size: 64,
            replay_capacity: 1_000_000,
            warmup: 1000,
            target_update: 1000,
            train_every: 1,
            n_step: 1,
            double_dqn: false,
            goal_curriculum: None,
            validation: None,
            net: NetConfig::default(),
            env: EpisodeConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Budget that trains a single-core run in minutes on a small sparse scene.
    pub fn desk_scale() -> Self {
        Self {
            episodes: 800,
            learning_rate: 2.5e-4,
            batch_size: 32,
            target_update: 250,
            train_every: 4,
            n_step: 10,
            double_dqn: true,
            validation: Some(Validation { every: 25, goals: 50, seed: 5000 }),
            env: EpisodeConfig { t_max: 400, ..EpisodeConfig::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("learning rate must be positive and gamma in [0, 1]"));
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end) || self.epsilon_end > self.epsilon_start {
            return Err(Error::invalid("epsilon must decay within [0, 1]"));
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return Err(Error::invalid("epsilon decay fraction must be in (0, 1]"));
        }
        if self.batch_size == 0
            || self.replay_capacity == 0
            || self.target_update == 0
            || self.train_every == 0
            || self.n_step == 0
        {
            return Err(Error::invalid(
                "batch size, replay capacity, target update, train interval and n-step must be positive",
            ));
        }
        if self.validation.is_some_and(|v| v.every == 0 || v.goals == 0) {
            return Err(Error::invalid("validation needs a positive interval and goal count"));
        }
        if let Some(c) = self.goal_curriculum {
            if !(c.fraction > 0.0 && c.fraction <= 1.0) || !(c.start_distance >= self.env.min_goal_distance.max(self.env.goal_radius)) {
                return Err(Error::invalid("goal curriculum needs a fraction in (0, 1] and a start distance above the minimum"));
            }
        }
        Ok(())
    }

    /// Start-to-goal distance cap for `episode` in a scene with the given diagonal.
    pub fn goal_distance_cap(&self, episode: usize, diagonal: f64) -> Option<f64> {
        let c = self.goal_curriculum?;
        let frac = episode as f64 / (c.fraction * self.episodes as f64);
        (frac < 1.0).then(|| c.start_distance + (diagonal - c.start_distance).max(0.0) * frac)
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig { net: self.net.clone(), env: self.env.clone(), actions: DQN_ACTIONS.to_vec() }
    }

    /// Linear decay over the first `epsilon_decay_fraction` of episodes, then flat.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let span = self.epsilon_decay_fraction * self.episodes as f64;
        let frac = if span <= 0.0 { 1.0 } else { episode as f64 / span };
        if frac >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// `r + gamma * max_a' Q(s', a')` from `bootstrap`, with no bootstrap on terminal states.
pub fn td_targets(bootstrap: &QNetwork, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                Ok(t.reward)
            } else {
                let q = bootstrap.forward(&t.next_obs.unpack())?;
                Ok(t.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
        })
        .collect()
}

/// Double-DQN targets: `online` picks the next action, `bootstrap` values it.
pub fn double_td_targets(online: &QNetwork, bootstrap: &QNetwork, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                Ok(t.reward)
            } else {
                let next = t.next_obs.unpack();
                let a = argmax(&online.forward(&next)?);
                Ok(t.reward + gamma * bootstrap.forward(&next)?[a])
            }
        })
        .collect()
}

/// Gradient of the mean squared TD error on the taken actions.
pub fn loss_and_gradient(online: &QNetwork, batch: &[&Transition], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = batch.len() as f64;
    let mut grads = vec![0.0; online.num_params()];
    let mut loss = 0.0;
    let outputs = online.config().outputs;
    for (t, &y) in batch.iter().zip(targets) {
        let trace = online.forward_trace(&t.obs.unpack()).expect("stored observations match the network");
        let diff = trace.output()[t.action] - y;
        loss += diff * diff;
        let mut g = vec![0.0; outputs];
        g[t.action] = 2.0 * diff / n;
        online.backward(&trace, &g, &mut grads);
    }
    (loss / n, grads)
}

/// One optimiser step on a sampled batch; returns the loss before the step.
pub fn backward_and_update(
    online: &mut QNetwork,
    target: &QNetwork,
    adam: &mut Adam,
    batch: &[&Transition],
    gamma: f64,
    double: bool,
) -> Result<f64> {
    let targets = if double { double_td_targets(online, target, batch, gamma)? } else { td_targets(target, batch, gamma)? };
    let (loss, grads) = loss_and_gradient(online, batch, &targets);
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged(format!("non-finite loss {loss} on a batch of {}", batch.len())));
    }
    adam.step(online.params_mut(), &grads);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub outcome: DoneReason,
    pub epsilon: f64,
    /// Mean loss of the gradient steps taken during the episode.
    pub loss_mean: Option<f64>,
}

pub fn write_log_csv<W: Write>(log: &[EpisodeLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "steps", "return", "outcome", "epsilon", "loss_mean"])?;
    for e in log {
        w.write_record([
            e.episode.to_string(),
            e.steps.to_string(),
            e.ret.to_string(),
            e.outcome.to_string(),
            e.epsilon.to_string(),
            e.loss_mean.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: DqnAgent,
    pub log: Vec<EpisodeLog>,
    /// Robot positions after every environment step, per episode.
    pub trajectories: Vec<Vec<(f64, f64)>>,
    pub env_steps: usize,
    pub grad_steps: usize,
    /// `(episodes completed, success rate)` of every validation check.
    pub validation: Vec<(usize, f64)>,
    /// Episodes completed when the returned agent was taken.
    pub selected_after: usize,
}

/// Greedy success rate over `goals` seeded goals in each scene.
pub fn validation_success_rate(agent: &DqnAgent, scenes: &[SceneSpec], goals: usize, seed: u64) -> Result<f64> {
    let builder = agent.observation_builder()?;
    let mut policy = agent.clone();
    let mut successes = 0usize;
    for scene in scenes {
        let mut env = NavEnv::new(scene.clone(), agent.config.env.clone())?;
        for k in 0..goals {
            let mut rng = episode_rng(seed, k as u64);
            env.reset(&mut rng)?;
            if run_episode_with(&mut env, &mut policy, Some(&builder), &mut rng)?.outcome == DoneReason::Goal {
                successes += 1;
            }
        }
    }
    Ok(successes as f64 / (goals * scenes.len()) as f64)
}

pub fn train(scenes: &[SceneSpec], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_with(scenes, cfg, seed, &mut |_, _| Ok(()))
}

/// Trains one agent, cycling through `scenes` by episode. `on_episode` runs
/// after every episode with its log row and the current agent.
pub fn train_with(
    scenes: &[SceneSpec],
    cfg: &TrainConfig,
    seed: u64,
    on_episode: &mut dyn FnMut(&EpisodeLog, &DqnAgent) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::invalid("training needs at least one scene"));
    }
    let mut agent = DqnAgent::new(cfg.agent_config(), seed)?;
    let builder = agent.observation_builder()?;
    let mut target = agent.net.clone();
    let mut adam = Adam::new(agent.net.num_params(), cfg.learning_rate);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut envs = scenes
        .iter()
        .map(|s| NavEnv::new(s.clone(), cfg.env.clone()))
        .collect::<Result<Vec<_>>>()?;

    let mut log = Vec::with_capacity(cfg.episodes);
    let mut trajectories = Vec::with_capacity(cfg.episodes);
    let (mut env_steps, mut grad_steps) = (0usize, 0usize);
    let bootstrap_gamma = cfg.gamma.powi(cfg.n_step as i32);
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, DqnAgent)> = None;
    for episode in 0..cfg.episodes {
        let epsilon = cfg.epsilon_at(episode);
        let scene = &scenes[episode % scenes.len()];
        let env = &mut envs[episode % scenes.len()];
        match cfg.goal_distance_cap(episode, scene.width().hypot(scene.height())) {
            Some(cap) => {
                let capped = EpisodeConfig { max_goal_distance: Some(cap), ..cfg.env.clone() };
                let (start, goal) = sample_start_goal(scene, &capped, &mut rng)?;
                env.reset_to(start, goal);
            }
            None => env.reset(&mut rng)?,
        }
        let mut input = encode_local_map(&builder.build(&env.scan(&mut rng), env.goal_polar())?);
        let (mut ret, mut losses, mut path) = (0.0, Vec::new(), Vec::new());
        let mut window = NStepWindow::new(cfg.n_step, cfg.gamma);
        let outcome = loop {
            let q = agent.net.forward(&input)?;
            let a = act_epsilon_greedy(&q, epsilon, &mut rng);
            let out = env.step(agent.config.actions[a])?;
            path.push((out.state.x, out.state.y));
            ret += out.reward;
            env_steps += 1;
            let next = encode_local_map(&builder.build(&env.scan(&mut rng), env.goal_polar())?);
            let terminal = matches!(out.reason, DoneReason::Goal | DoneReason::Collision);
            let completed =
                window.step(PackedMap::from_input(&input), a, out.reward, &PackedMap::from_input(&next), terminal, out.done);
            for t in completed {
                buffer.push(t);
            }
            input = next;
            if buffer.len() >= cfg.warmup.max(1) && env_steps % cfg.train_every == 0 {
                let batch = buffer.sample(cfg.batch_size, &mut rng);
                let loss = backward_and_update(&mut agent.net, &target, &mut adam, &batch, bootstrap_gamma, cfg.double_dqn)
                    .map_err(|e| match e {
                        Error::TrainingDiverged(m) => {
                            Error::TrainingDiverged(format!("{m} (episode {episode}, gradient step {grad_steps})"))
                        }
                        other => other,
                    })?;
                losses.push(loss);
                grad_steps += 1;
                if grad_steps % cfg.target_update == 0 {
                    target.set_params(agent.net.params())?;
                }
            }
            if out.done {
                break out.reason;
            }
        };
        let row = EpisodeLog {
            episode,
            steps: path.len(),
            ret,
            outcome,
            epsilon,
            loss_mean: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        };
        log::debug!("episode {episode}: {} steps, {outcome}, eps {epsilon:.3}", row.steps);
        on_episode(&row, &agent)?;
        log.push(row);
        trajectories.push(path);
        if let Some(v) = cfg.validation.filter(|v| (episode + 1) % v.every == 0) {
            let sr = validation_success_rate(&agent, scenes, v.goals, v.seed)?;
            log::debug!("validation after {} episodes: {sr:.3}", episode + 1);
            validation.push((episode + 1, sr));
            if best.as_ref().is_none_or(|b| sr >= b.0) {
                best = Some((sr, episode + 1, agent.clone()));
            }
        }
    }
    let (agent, selected_after) = match best {
        Some((_, after, best_agent)) => (best_agent, after),
        None => (agent, cfg.episodes),
    };
    Ok(TrainOutcome { agent, log, trajectories, env_steps, grad_steps, validation, selected_after })
}
