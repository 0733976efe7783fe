//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Training criteria (7, 8, 9) share three agents trained once per seed.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenesim::drl::{self, DqnAgent, TrainConfig};
use scenesim::grid::polar_to_image;
use scenesim::harness::{self, EvalReport, LocalSimilarityParams};
use scenesim::matching::oracle::best_match_oracle;
use scenesim::matching::{best_match, best_match_rotated};
use scenesim::observation::{build_goal_map, footprint_radius_px, LocalMapParams};
use scenesim::sim::LidarConfig;
use scenesim::similarity::{
    accumulate_arrivals, global_scene_similarity, weight_matrix, ArrivalCounts,
    GlobalSimilarityParams,
};
use scenesim::{Error, GridImage, MatchResult, Result, SceneSpec};

const SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_SEED: u64 = 10_000;
const N_GOALS: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion(n: usize, name: &str, failures: &mut usize, f: impl FnOnce() -> Result<Outcome>) {
    let t0 = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f));
    let secs = t0.elapsed().as_secs_f64();
    let (pass, detail) = match res {
        Ok(Ok(o)) => (o.pass, o.detail),
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".to_string()),
    };
    if !pass {
        *failures += 1;
    }
    println!("{} criterion {n:>2} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GridImage {
    let density = rng.gen_range(0.05..0.6);
    let grey = rng.gen_bool(0.3);
    let px = (0..w * h)
        .map(|_| if grey { rng.gen_range(0..=255) } else if rng.gen_bool(density) { 255 } else { 0 })
        .collect();
    GridImage::from_pixels(w, h, 0.05, px).unwrap()
}

fn same_result(a: &Result<MatchResult>, b: &Result<MatchResult>) -> bool {
    match (a, b) {
        (Ok(a), Ok(b)) => a.x == b.x && a.y == b.y && a.phi == b.phi && (a.score - b.score).abs() <= 1e-9,
        (Err(Error::NoValidPlacement), Err(Error::NoValidPlacement)) => true,
        _ => false,
    }
}

fn oracle_equivalence() -> Result<Outcome> {
    let t0 = Instant::now();
    let angles = [90.0, 180.0, 270.0, 360.0];
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (iw, ih) = (rng.gen_range(16..=64), rng.gen_range(16..=64));
        let (tw, th) = (rng.gen_range(2..=16), rng.gen_range(2..=16));
        let img = random_image(&mut rng, iw, ih);
        let tpl = random_image(&mut rng, tw, th);
        if !same_result(&best_match(&img, &tpl), &best_match_oracle(&img, &tpl, &[0.0])) {
            mismatches += 1;
        }
        if !same_result(&best_match_rotated(&img, &tpl, &angles), &best_match_oracle(&img, &tpl, &angles)) {
            mismatches += 1;
        }
    }
    let elapsed = t0.elapsed();
    Ok(outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("{mismatches} mismatches on 100 instances in {:.1}s (limit 60s)", elapsed.as_secs_f64()),
    ))
}

fn identity_similarity() -> Result<Outcome> {
    let t0 = Instant::now();
    let params = GlobalSimilarityParams::default();
    assert!(params.angles.contains(&360.0));
    let mut worst = 0.0f64;
    for (_, scene) in harness::scene_family().into_iter().take(5) {
        let m = scene.rasterize(0.05)?;
        let ss = global_scene_similarity(&m, &m, &params)?.aggregate;
        worst = worst.max((ss - 1.0).abs());
    }
    let elapsed = t0.elapsed();
    Ok(outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(300),
        format!("max |SS - 1| = {worst:.3e} over 5 scenes in {:.1}s", elapsed.as_secs_f64()),
    ))
}

fn weight_table() -> Result<Outcome> {
    let counts = ArrivalCounts { width: 6, height: 1, resolution: 0.05, counts: vec![0, 25, 50, 75, 100, 500], skipped: 0 };
    let w = weight_matrix(&counts, 100)?;
    let expected = [0.5, 0.5, 0.5, 0.75, 1.0, 1.0];
    Ok(outcome(w.values == expected, format!("weights {:?}", w.values)))
}

fn goal_map_guarantee() -> Result<Outcome> {
    let params = LocalMapParams::default();
    let radius = footprint_radius_px(0.17, params.resolution)?;
    let mut failures = 0;
    for k in 0..3600 {
        let alpha = -PI + 2.0 * PI * k as f64 / 3600.0;
        if build_goal_map(1e6, alpha, radius, &params)?.count_nonzero() == 0 {
            failures += 1;
        }
    }
    Ok(outcome(failures == 0, format!("{failures} empty goal maps over 3600 bearings")))
}

fn coordinate_transform() -> Result<Outcome> {
    let got = [
        polar_to_image(0.0, 1.234, 0.05, 60, 60),
        polar_to_image(1.0, 0.0, 0.05, 60, 60),
        polar_to_image(1.0, PI / 2.0, 0.05, 60, 60),
    ];
    let want = [(30, 30), (50, 30), (30, 10)];
    Ok(outcome(got == want, format!("{got:?}")))
}

fn gradient_check() -> Result<Outcome> {
    let t0 = Instant::now();
    let r = common::gradcheck::gradient_check(20);
    let elapsed = t0.elapsed();
    Ok(outcome(
        r.worst < 1e-4 && elapsed < Duration::from_secs(120),
        format!(
            "max relative error {:.3e} over {} parameters ({} kink crossings skipped)",
            r.worst, r.checked, r.skipped
        ),
    ))
}

struct Trained {
    seed: u64,
    agent: DqnAgent,
    counts: ArrivalCounts,
    minutes: f64,
}

fn train_agents(train: &SceneSpec) -> Result<Vec<Trained>> {
    let cfg = TrainConfig::desk_scale();
    let grid = train.rasterize(cfg.env.local_map.resolution)?;
    SEEDS
        .iter()
        .map(|&seed| {
            let t0 = Instant::now();
            let out = drl::train(std::slice::from_ref(train), &cfg, seed)?;
            let minutes = t0.elapsed().as_secs_f64() / 60.0;
            eprintln!("trained seed {seed} in {minutes:.1} min ({} env steps)", out.env_steps);
            Ok(Trained { seed, counts: accumulate_arrivals(&out.trajectories, &grid), agent: out.agent, minutes })
        })
        .collect()
}

fn training_success(agents: &[Trained], train: &SceneSpec) -> Result<Outcome> {
    let mut srs = Vec::new();
    for a in agents {
        srs.push(harness::evaluate_agent(&a.agent, "train", train, N_GOALS, EVAL_SEED)?.success_rate);
    }
    let m = median(srs.clone());
    let slowest = agents.iter().map(|a| a.minutes).fold(0.0, f64::max);
    Ok(outcome(
        m >= 0.8 && slowest <= 60.0,
        format!("median SR {m:.2} (per seed {srs:?}); slowest training {slowest:.1} min"),
    ))
}

fn trend(agents: &[Trained], train: &SceneSpec) -> Result<Outcome> {
    let family = harness::scene_family();
    let params = LocalSimilarityParams::default();
    let mut rhos = Vec::new();
    let mut pooled = Vec::new();
    for a in agents {
        let wt = weight_matrix(&a.counts, params.n_max)?;
        let ss = harness::scene_similarities(&a.agent, train, &family, &wt, &params, EVAL_SEED)?;
        let mut pairs = Vec::new();
        for ((id, scene), (ss_local, _)) in family.iter().zip(&ss) {
            let sr = harness::evaluate_agent(&a.agent, id, scene, N_GOALS, EVAL_SEED)?.success_rate;
            pairs.push((*ss_local, sr));
        }
        let summary = harness::correlate(&pairs, 3)?;
        eprintln!("seed {}: rho {:.3} pairs {:?}", a.seed, summary.rho, pairs);
        rhos.push(summary.rho);
        pooled.extend(pairs);
    }
    let rho = median(rhos.clone());
    let bins = harness::correlate(&pooled, 3)?.bins;
    let (low, high) = (bins.first().unwrap(), bins.last().unwrap());
    Ok(outcome(
        family.len() >= 6 && rho >= 0.6 && low.std_sr > high.std_sr,
        format!(
            "median rho {rho:.3} (per seed {rhos:.3?}) over {} scenes; SR std lowest-SS bin {:.3} vs highest {:.3}",
            family.len(),
            low.std_sr,
            high.std_sr
        ),
    ))
}

fn sensor_robustness(agents: &[Trained], train: &SceneSpec) -> Result<Outcome> {
    let full = LidarConfig::default();
    let variants = [
        full,
        LidarConfig { n_rays: 60, ..full },
        LidarConfig { fov: 270.0, n_rays: 270, ..full },
        LidarConfig { fov: 180.0, n_rays: 180, ..full },
    ];
    let (mut d60, mut d270, mut d180) = (Vec::new(), Vec::new(), Vec::new());
    for a in agents {
        let before = a.agent.net.params().to_vec();
        let rows: Vec<EvalReport> =
            harness::sensor_sweep(&a.agent, "train", train, &variants, N_GOALS, EVAL_SEED)?.into_iter().map(|(_, r)| r).collect();
        assert_eq!(before, a.agent.net.params());
        let base = rows[0].success_rate;
        d60.push(base - rows[1].success_rate);
        d270.push(base - rows[2].success_rate);
        d180.push(base - rows[3].success_rate);
    }
    let (m60, m270, m180) = (median(d60.clone()), median(d270.clone()), median(d180.clone()));
    Ok(outcome(
        m60 <= 0.15 && m270 <= 0.10 && m180 <= 0.10,
        format!(
            "median SR loss: 60 rays {m60:.2} (limit 0.15), fov 270 {m270:.2}, fov 180 {m180:.2} (limit 0.10); per seed {d60:.2?} {d270:.2?} {d180:.2?}"
        ),
    ))
}

fn cli(out: &Path, args: &[&str]) -> Result<()> {
    let o = Command::new(env!("CARGO_BIN_EXE_scenesim"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| Error::io(out, e))?;
    if !o.status.success() {
        return Err(Error::invalid(format!("scenesim {args:?}: {}", String::from_utf8_lossy(&o.stderr))));
    }
    Ok(())
}

fn collect_outputs(dir: &Path, base: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_outputs(&p, base, acc)?;
        } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "pgm" | "meta")) {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            acc.push((p.strip_prefix(base).unwrap().to_path_buf(), bytes));
        }
    }
    Ok(())
}

fn pipeline(root: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let scenes = root.join("scenes");
    cli(&scenes, &["family"])?;
    let train = s(&scenes.join("train.json"));
    let dense = s(&scenes.join("dense.json"));
    let maps = root.join("maps");
    cli(&maps, &["rasterize", "--scene", &train])?;
    cli(&maps, &["rasterize", "--scene", &dense])?;
    let obs = root.join("obs");
    cli(&obs, &["observe", "--scene", &train, "--pose", "1.2,3.1,0.7", "--goal", "4,1", "--prefix", "a"])?;
    cli(&obs, &["observe", "--scene", &train, "--pose", "3.9,1.1,-2.0", "--goal", "1,4", "--prefix", "b"])?;
    cli(&root.join("match"), &["match", "--image", &s(&maps.join("train.pgm")), "--template", &s(&obs.join("a.obstacle.pgm")), "--angles", "30:30:360"])?;
    cli(&root.join("ssg"), &["ss-global", "--train", &s(&maps.join("train.pgm")), "--test", &s(&maps.join("dense.pgm")), "--angles", "90:90:360"])?;
    cli(&root.join("sim"), &["--seed", "5", "simulate", "--scene", &dense, "--policy", "goal-seeking", "--episodes", "2"])?;
    let cfg = root.join("train.cfg.json");
    fs::write(&cfg, r#"{"episodes": 4, "warmup": 30, "batch_size": 8, "target_update": 20, "train_every": 2, "n_step": 3, "double_dqn": true,
            "validation": {"every": 2, "goals": 2, "seed": 1}, "env": {"t_max": 60}}"#)
        .map_err(|e| Error::io(&cfg, e))?;
    let tr = root.join("train");
    cli(&tr, &["--seed", "7", "--config", &s(&cfg), "train", "--scene", &train])?;
    let agent = s(&tr.join("agent.bin"));
    let arrivals = s(&tr.join("arrivals.pgm"));
    cli(&root.join("ssl"), &["ss-local", "--train-map", &s(&maps.join("train.pgm")), "--weights", &arrivals, "--obs-dir", &s(&obs), "--angles", "90:90:360", "--baseline", "0.5"])?;
    let ev = root.join("eval");
    cli(&ev, &[
        "--seed", "8", "eval", "--scene", &train, &dense, &s(&scenes.join("boxes.json")), "--agent", &agent, "--goals", "4",
        "--train-scene", &train, "--arrivals", &arrivals, "--n-maps", "3", "--angles", "90:90:360",
    ])?;
    cli(&root.join("sweep"), &["--seed", "9", "sweep-sensors", "--scene", &train, "--agent", &agent, "--goals", "3"])?;
    cli(&root.join("corr"), &["correlate", "--input", &s(&ev.join("eval.csv")), "--metric", "global", "--bins", "2"])?;
    let mut acc = Vec::new();
    collect_outputs(root, root, &mut acc)?;
    acc.sort();
    Ok(acc)
}

fn determinism() -> Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let a = pipeline(&tmp.path().join("a"))?;
    let b = pipeline(&tmp.path().join("b"))?;
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    Ok(outcome(
        a.len() == b.len() && differing.is_empty() && a.len() > 20,
        format!("{} CSV/raster outputs compared across two runs, {} differ {:?}", a.len(), differing.len(), differing),
    ))
}

fn main() {
    let mut failures = 0;
    criterion(1, "template matching agrees with the exhaustive oracle", &mut failures, oracle_equivalence);
    criterion(2, "global similarity of a map with itself is 1", &mut failures, identity_similarity);
    criterion(3, "weight matrix table", &mut failures, weight_table);
    criterion(4, "goal map never empty", &mut failures, goal_map_guarantee);
    criterion(5, "polar to image examples", &mut failures, coordinate_transform);
    criterion(6, "Q-network gradient check", &mut failures, gradient_check);

    let train = harness::scene_family().remove(0).1;
    match train_agents(&train) {
        Ok(agents) => {
            criterion(7, "desk-scale training success rate", &mut failures, || training_success(&agents, &train));
            criterion(8, "local similarity tracks success rate", &mut failures, || trend(&agents, &train));
            criterion(9, "sensor swap robustness", &mut failures, || sensor_robustness(&agents, &train));
        }
        Err(e) => {
            for (n, name) in [(7, "desk-scale training success rate"), (8, "local similarity tracks success rate"), (9, "sensor swap robustness")] {
                failures += 1;
                println!("FAIL criterion {n:>2} {name}: training failed: {e}");
            }
        }
    }
    criterion(10, "CLI outputs are byte-identical across runs", &mut failures, determinism);

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
