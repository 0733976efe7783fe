use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use scenesim::drl::{self, DqnAgent, TrainConfig};
use scenesim::harness::{self, EvalReport, LocalSimilarityParams};
use scenesim::matching::{best_match_rotated, parse_angle_range};
use scenesim::observation::{assemble_local_map, LocalMap};
use scenesim::pgm::{load_map, save_map};
use scenesim::sim::{self, episode_rng, run_episode_with, EpisodeConfig, NavEnv, Policy, RobotState, ScriptedPolicy};
use scenesim::similarity::{
    self, accumulate_arrivals, global_scene_similarity, weighted_scene_score,
    GlobalSimilarityParams, WeightMatrix,
};
use scenesim::{Error, GridImage, Result, SceneSpec};

#[derive(Parser, Debug)]
#[command(name = "scenesim", version, about = "Scene similarity, navigation simulation and DQN training")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// JSON configuration for the command (episode, training or similarity settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rasterize a scene file to a PGM map with a meta sidecar.
    Rasterize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
        /// Output file stem; defaults to the scene file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Write the three local-map channels seen from a pose.
    Observe {
        #[arg(long)]
        scene: PathBuf,
        /// `x,y,heading` in metres and radians.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        /// `x,y` in metres.
        #[arg(long, allow_hyphen_values = true)]
        goal: String,
        #[arg(long, default_value = "obs")]
        prefix: String,
    },
    /// Best rotated placement of a template in an image.
    Match {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        template: PathBuf,
        #[arg(long, default_value = "360")]
        angles: String,
    },
    /// Global scene similarity of a test map against a training map.
    SsGlobal {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = similarity::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = similarity::DEFAULT_STRIDE)]
        stride: usize,
        #[arg(long, default_value = "10:10:360")]
        angles: String,
        /// Square dilation applied to both maps first.
        #[arg(long, default_value_t = 1)]
        dilate: usize,
    },
    /// Visitation-weighted similarity of collected local maps.
    SsLocal {
        #[arg(long)]
        train_map: PathBuf,
        /// Arrival-count PGM (meta carries n_max) or a weight raster.
        #[arg(long)]
        weights: PathBuf,
        /// Directory of `*.obstacle.pgm` local maps.
        #[arg(long)]
        obs_dir: PathBuf,
        #[arg(long, default_value = "1:1:360")]
        angles: String,
        /// Training-scene score; when given, the relative score is printed too.
        #[arg(long, allow_hyphen_values = true)]
        baseline: Option<f64>,
    },
    /// Train a DQN agent on one or more scenes.
    Train(TrainArgs),
    /// Roll out an agent file or a scripted policy and log trajectories.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        /// Agent file or one of: stationary, straight, goal-seeking, random.
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
    },
    /// Evaluate an agent on scenes, optionally with similarity scores.
    Eval(EvalArgs),
    /// Evaluate an agent under several LiDAR configurations.
    SweepSensors {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        agent: PathBuf,
        #[arg(long, default_value_t = harness::DEFAULT_N_GOALS)]
        goals: usize,
    },
    /// Rank correlation between similarity and success rate.
    Correlate {
        /// Evaluation CSV files produced by `eval`.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Which similarity column to use: `local` or `global`.
        #[arg(long, default_value = "local")]
        metric: String,
        #[arg(long, default_value_t = 9)]
        bins: usize,
    },
    /// Write the built-in scene family as scene files.
    Family,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, required = true, num_args = 1..)]
    scene: Vec<PathBuf>,
    /// Episodes between weight snapshots; 0 disables them.
    #[arg(long, default_value_t = 0)]
    snapshot_every: usize,
    /// Use the single-core desk-scale preset as the base configuration.
    #[arg(long)]
    desk_scale: bool,
    /// Override the number of episodes.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = similarity::DEFAULT_N_MAX)]
    n_max: u32,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    scene: Vec<PathBuf>,
    #[arg(long)]
    agent: PathBuf,
    #[arg(long, default_value_t = harness::DEFAULT_N_GOALS)]
    goals: usize,
    /// Training scene; enables the global similarity column.
    #[arg(long)]
    train_scene: Option<PathBuf>,
    /// Arrival counts from training; with `--train-scene` enables the local similarity column.
    #[arg(long)]
    arrivals: Option<PathBuf>,
    /// Local maps collected per scene for the local similarity.
    #[arg(long, default_value_t = harness::DEFAULT_N_LOCAL_MAPS)]
    n_maps: usize,
    #[arg(long, default_value = "1:1:360")]
    angles: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.to_path_buf(),
                line: e.line(),
                offset: e.column(),
                message: e.to_string(),
            })
        }
    }
}

fn parse_floats(text: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("{what} must be {n} comma-separated numbers, got {text:?}")))?;
    if v.len() != n {
        return Err(Error::invalid(format!("{what} must be {n} comma-separated numbers, got {text:?}")));
    }
    Ok(v)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("out").to_string()
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_file(dir: &Path, name: &str) -> Result<std::io::BufWriter<fs::File>> {
    let p = dir.join(name);
    Ok(std::io::BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?))
}

fn write_manifest(cli: &Cli, extra: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "tool": "scenesim",
        "version": env!("CARGO_PKG_VERSION"),
        "command": format!("{:?}", cli.command),
        "seed": cli.seed,
        "out": cli.out,
        "config": cli.config,
        "details": extra,
    });
    let p = cli.out.join("run-manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&p, e))
}

fn load_policy(name: &str, seed: u64) -> Result<Box<dyn Policy>> {
    if let Some(p) = ScriptedPolicy::from_name(name, seed) {
        return Ok(Box::new(p));
    }
    if Path::new(name).exists() {
        return Ok(Box::new(DqnAgent::load(name)?));
    }
    Err(Error::invalid(format!(
        "policy {name:?} is neither an agent file nor one of {:?}",
        ScriptedPolicy::NAMES
    )))
}

fn load_obstacle_maps(dir: &Path) -> Result<Vec<(String, GridImage)>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".obstacle.pgm")))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| Ok((p.file_name().and_then(|s| s.to_str()).unwrap_or("").to_string(), load_map(&p)?)))
        .collect()
}

fn run(cli: &Cli) -> Result<()> {
    create_out(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Rasterize { scene, resolution, name } => {
            let spec = SceneSpec::load(scene)?;
            let img = spec.rasterize(*resolution)?;
            let name = name.clone().unwrap_or_else(|| stem(scene));
            let path = out.join(format!("{name}.pgm"));
            save_map(&img, &path)?;
            println!("{} ({}x{})", path.display(), img.width(), img.height());
            write_manifest(cli, json!({ "scene": scene, "resolution": resolution, "map": path }))
        }
        Command::Observe { scene, pose, goal, prefix } => {
            let cfg: EpisodeConfig = load_config(cli.config.as_deref())?;
            let spec = SceneSpec::load(scene)?;
            let p = parse_floats(pose, 3, "pose")?;
            let g = parse_floats(goal, 2, "goal")?;
            let state = RobotState::at(p[0], p[1], p[2]);
            let mut env = NavEnv::new(spec, cfg.clone())?;
            env.reset_to(state, (g[0], g[1]));
            let mut rng = episode_rng(cli.seed, 0);
            let scan = env.scan(&mut rng);
            let map: LocalMap = assemble_local_map(&scan, cfg.robot_radius, env.goal_polar(), &cfg.local_map)?;
            map.save(&out.join(prefix))?;
            let (d, a) = env.goal_polar();
            println!("goal distance {d} bearing {a}; {} obstacle pixels", map.obstacle.count_nonzero());
            write_manifest(cli, json!({ "scene": scene, "pose": p, "goal": g, "prefix": prefix, "episode": cfg }))
        }
        Command::Match { image, template, angles } => {
            let img = load_map(image)?;
            let tpl = load_map(template)?;
            let angles = parse_angle_range(angles)?;
            let m = best_match_rotated(&img, &tpl, &angles)?;
            let mut w = csv::Writer::from_writer(csv_file(out, "match.csv")?);
            w.write_record(["x", "y", "phi", "score"])?;
            w.write_record([m.x.to_string(), m.y.to_string(), m.phi.to_string(), m.score.to_string()])?;
            w.flush().map_err(|e| Error::io(out, e))?;
            println!("x={} y={} phi={} score={}", m.x, m.y, m.phi, m.score);
            write_manifest(cli, json!({ "image": image, "template": template, "angles": angles }))
        }
        Command::SsGlobal { train, test, window, stride, angles, dilate } => {
            let params = GlobalSimilarityParams {
                window_w: *window,
                window_h: *window,
                stride_x: *stride,
                stride_y: *stride,
                angles: parse_angle_range(angles)?,
                dilation_kernel: *dilate,
            };
            let report = global_scene_similarity(&load_map(train)?, &load_map(test)?, &params)?;
            report.write_csv(&out.join("ss_global.csv"))?;
            println!("SS_global {}", report.aggregate);
            write_manifest(
                cli,
                json!({ "train": train, "test": test, "params": params, "skipped": report.skipped, "ss_global": report.aggregate }),
            )
        }
        Command::SsLocal { train_map, weights, obs_dir, angles, baseline } => {
            let global = load_map(train_map)?;
            let wt = WeightMatrix::load(weights)?;
            let maps = load_obstacle_maps(obs_dir)?;
            let angles = parse_angle_range(angles)?;
            let imgs: Vec<GridImage> = maps.iter().map(|(_, m)| m.clone()).collect();
            let report = weighted_scene_score(&global, &imgs, &wt, &angles)?;
            report.write_csv(&out.join("ss_local.csv"))?;
            println!("SS {}", report.aggregate);
            let rel = baseline.map(|b| similarity::local_scene_similarity(report.aggregate, b));
            if let Some(r) = rel {
                println!("SS_local {r}");
            }
            let files: Vec<&str> = maps.iter().map(|(n, _)| n.as_str()).collect();
            write_manifest(
                cli,
                json!({
                    "train_map": train_map, "weights": weights, "obs_dir": obs_dir, "maps": files,
                    "n_max": wt.n_max, "angles": angles, "skipped": report.skipped,
                    "ss": report.aggregate, "baseline": baseline, "ss_local": rel,
                }),
            )
        }
        Command::Train(args) => train_cmd(cli, args),
        Command::Simulate { scene, policy, episodes } => {
            let cfg: EpisodeConfig = load_config(cli.config.as_deref())?;
            let spec = SceneSpec::load(scene)?;
            let mut pol = load_policy(policy, cli.seed)?;
            // An agent brings its own episode settings unless a config file overrides them.
            let cfg = match (Path::new(policy).exists(), cli.config.is_some()) {
                (true, false) => DqnAgent::load(policy)?.config.env,
                _ => cfg,
            };
            let builder = if pol.needs_local_map() {
                Some(scenesim::observation::ObservationBuilder::new(cfg.local_map.clone(), cfg.robot_radius)?)
            } else {
                None
            };
            let mut env = NavEnv::new(spec, cfg)?;
            let mut summary = csv::Writer::from_writer(csv_file(out, "summary.csv")?);
            summary.write_record(["episode", "steps", "return", "outcome", "path_length"])?;
            for k in 0..*episodes {
                let mut rng = episode_rng(cli.seed, k as u64);
                env.reset(&mut rng)?;
                let ep = run_episode_with(&mut env, pol.as_mut(), builder.as_ref(), &mut rng)?;
                ep.save_csv(&out.join(format!("trajectory_{k:04}.csv")))?;
                summary.write_record([
                    k.to_string(),
                    ep.steps().to_string(),
                    ep.total_reward().to_string(),
                    ep.outcome.to_string(),
                    ep.path_length().to_string(),
                ])?;
            }
            summary.flush().map_err(|e| Error::io(out, e))?;
            write_manifest(cli, json!({ "scene": scene, "policy": policy, "episodes": episodes }))
        }
        Command::Eval(args) => eval_cmd(cli, args),
        Command::SweepSensors { scene, agent, goals } => {
            let spec = SceneSpec::load(scene)?;
            let a = DqnAgent::load(agent)?;
            let variants = harness::default_sensor_variants();
            let rows = harness::sensor_sweep(&a, &stem(scene), &spec, &variants, *goals, cli.seed)?;
            let labels: Vec<String> = rows.iter().map(|(l, _)| harness::sensor_label(l)).collect();
            let reports: Vec<EvalReport> = rows.into_iter().map(|(_, r)| r).collect();
            for (l, r) in labels.iter().zip(&reports) {
                println!("{l}: SR {}", r.success_rate);
            }
            harness::write_reports_csv(&reports, &labels, csv_file(out, "sweep.csv")?)?;
            write_manifest(cli, json!({ "scene": scene, "agent": agent, "goals": goals, "variants": variants }))
        }
        Command::Correlate { input, metric, bins } => {
            let column = match metric.as_str() {
                "local" => "ss_local",
                "global" => "ss_global",
                other => return Err(Error::invalid(format!("metric must be local or global, got {other:?}"))),
            };
            let mut pairs = Vec::new();
            for path in input {
                let mut r = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
                let headers = r.headers()?.clone();
                let col = |name: &str| {
                    headers
                        .iter()
                        .position(|h| h == name)
                        .ok_or_else(|| Error::invalid(format!("{} lacks a {name} column", path.display())))
                };
                let (ci, si) = (col(column)?, col("success_rate")?);
                for rec in r.records() {
                    let rec = rec?;
                    let (Ok(ss), Ok(sr)) = (rec[ci].parse::<f64>(), rec[si].parse::<f64>()) else { continue };
                    pairs.push((ss, sr));
                }
            }
            let summary = harness::correlate(&pairs, *bins)?;
            harness::write_correlation_csv(&summary, csv_file(out, "correlation.csv")?)?;
            println!("rank correlation {} over {} pairs{}", summary.rho, pairs.len(), if summary.degenerate { " (degenerate)" } else { "" });
            write_manifest(cli, json!({ "input": input, "metric": metric, "bins": bins, "rho": summary.rho }))
        }
        Command::Family => {
            let mut files = Vec::new();
            for (id, s) in harness::scene_family() {
                let p = out.join(format!("{id}.json"));
                s.save(&p)?;
                files.push(p);
            }
            println!("{} scenes", files.len());
            write_manifest(cli, json!({ "scenes": files }))
        }
    }
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let out = cli.out.as_path();
    let mut cfg: TrainConfig = match (&cli.config, args.desk_scale) {
        (Some(p), _) => load_config(Some(p))?,
        (None, true) => TrainConfig::desk_scale(),
        (None, false) => TrainConfig::default(),
    };
    if let Some(n) = args.episodes {
        cfg.episodes = n;
    }
    let scenes = args.scene.iter().map(SceneSpec::load).collect::<Result<Vec<_>>>()?;
    let snapshot_every = args.snapshot_every;
    let outcome = drl::train_with(&scenes, &cfg, cli.seed, &mut |row, agent| {
        if snapshot_every > 0 && (row.episode + 1) % snapshot_every == 0 {
            agent.save(out.join(format!("agent_ep{:05}.bin", row.episode + 1)))?;
        }
        log::info!("episode {} {} steps {}", row.episode, row.steps, row.outcome);
        Ok(())
    })?;
    outcome.agent.save(out.join("agent.bin"))?;
    drl::write_log_csv(&outcome.log, csv_file(out, "train_log.csv")?)?;
    if !outcome.validation.is_empty() {
        let mut w = csv::Writer::from_writer(csv_file(out, "validation.csv")?);
        w.write_record(["episodes", "success_rate", "selected"])?;
        for &(after, sr) in &outcome.validation {
            w.write_record([after.to_string(), sr.to_string(), (after == outcome.selected_after).to_string()])?;
        }
        w.flush().map_err(|e| Error::io(out.join("validation.csv"), e))?;
    }
    // Arrival counts live on the raster of the first scene.
    let grid = scenes[0].rasterize(cfg.env.local_map.resolution)?;
    let counts = accumulate_arrivals(&outcome.trajectories, &grid);
    counts.save(out.join("arrivals.pgm"), args.n_max)?;
    let successes = outcome.log.iter().filter(|e| e.outcome == sim::DoneReason::Goal).count();
    println!(
        "{} episodes, {} steps, {} gradient steps, {} successes, agent taken after {} episodes",
        outcome.log.len(),
        outcome.env_steps,
        outcome.grad_steps,
        successes,
        outcome.selected_after
    );
    write_manifest(
        cli,
        json!({ "scenes": args.scene, "train_config": cfg, "n_max": args.n_max, "env_steps": outcome.env_steps, "selected_after": outcome.selected_after, "arrivals_total": counts.total() }),
    )
}

fn eval_cmd(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let out = cli.out.as_path();
    let agent = DqnAgent::load(&args.agent)?;
    let res = agent.config.env.local_map.resolution;
    let train = args.train_scene.as_ref().map(SceneSpec::load).transpose()?;
    let train_map = train.as_ref().map(|s| s.rasterize(res)).transpose()?;
    let wt = match (&args.arrivals, &train_map) {
        (Some(p), Some(_)) => Some(WeightMatrix::load(p)?),
        (Some(_), None) => return Err(Error::invalid("--arrivals needs --train-scene")),
        _ => None,
    };
    let params = LocalSimilarityParams {
        n_maps: args.n_maps,
        angles: parse_angle_range(&args.angles)?,
        n_max: wt.as_ref().map_or(similarity::DEFAULT_N_MAX, |w| w.n_max),
        ..LocalSimilarityParams::default()
    };
    let ss_train = match (&train, &train_map, &wt) {
        (Some(t), Some(m), Some(w)) => Some(harness::weighted_similarity_in(&agent, t, m, w, &params, cli.seed)?),
        _ => None,
    };
    let mut reports = Vec::new();
    for path in &args.scene {
        let spec = SceneSpec::load(path)?;
        let mut r = harness::evaluate_agent(&agent, &stem(path), &spec, args.goals, cli.seed)?;
        if let Some(m) = &train_map {
            r.ss_global = Some(global_scene_similarity(m, &spec.rasterize(res)?, &GlobalSimilarityParams::default())?.aggregate);
        }
        if let (Some(m), Some(w), Some(base)) = (&train_map, &wt, ss_train) {
            let ss = harness::weighted_similarity_in(&agent, &spec, m, w, &params, cli.seed)?;
            r.ss_local = Some(similarity::local_scene_similarity(ss, base));
        }
        println!("{}: SR {} ({} goals)", r.scene_id, r.success_rate, r.goals);
        reports.push(r);
    }
    harness::write_reports_csv(&reports, &[], csv_file(out, "eval.csv")?)?;
    write_manifest(
        cli,
        json!({ "scenes": args.scene, "agent": args.agent, "goals": args.goals, "train_scene": args.train_scene,
                "arrivals": args.arrivals, "local_params": params, "ss_train": ss_train }),
    )
}
