mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use common::gradcheck::{gradient_check, reduced};
use scenesim::drl::{encode_local_map, loss_and_gradient, td_targets, NetConfig, PackedMap, QNetwork, Transition};
use scenesim::observation::{assemble_local_map, LocalMapParams};
use scenesim::scene::{Obstacle, SceneSpec};
use scenesim::sim::{raycast, LidarConfig, RobotState};

#[test]
fn analytic_gradient_matches_central_differences() {
    let r = gradient_check(20);
    assert!(r.worst < 1e-4, "max relative error {}", r.worst);
    assert!(r.skipped * 10 < r.checked, "{} of {} perturbations crossed a kink", r.skipped, r.checked + r.skipped);
}

#[test]
fn td_loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = NetConfig { input_scale: 1.0 / 255.0, ..reduced() };
    let mut net = QNetwork::new(cfg.clone(), &mut rng).unwrap();
    let target = QNetwork::new(cfg, &mut rng).unwrap();
    let batch: Vec<Transition> = (0..4)
        .map(|k| {
            let obs: Vec<f64> = (0..432).map(|_| if rng.gen_bool(0.3) { 255.0 } else { 0.0 }).collect();
            let next: Vec<f64> = (0..432).map(|_| if rng.gen_bool(0.3) { 255.0 } else { 0.0 }).collect();
            Transition {
                obs: PackedMap::from_input(&obs),
                action: k % 3,
                reward: 0.1 * k as f64,
                next_obs: PackedMap::from_input(&next),
                done: k == 2,
            }
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let inputs: Vec<Vec<f64>> = batch.iter().map(|t| t.obs.unpack()).collect();
    let traces = |net: &QNetwork| inputs.iter().map(|x| net.forward_trace(x).unwrap()).collect::<Vec<_>>();
    let base = traces(&net);
    let same = |other: &[scenesim::drl::Trace]| base.iter().zip(other).all(|(a, b)| a.same_branches(b));
    let y = td_targets(&target, &refs, 0.99).unwrap();
    let (_, grads) = loss_and_gradient(&net, &refs, &y);
    let (mut worst, mut checked) = (0.0f64, 0usize);
    #[allow(clippy::needless_range_loop)]
    for i in 0..net.num_params() {
        let p0 = net.params()[i];
        let h = 1e-5 * p0.abs().max(1.0);
        net.params_mut()[i] = p0 + h;
        let (lp, tp) = (loss_and_gradient(&net, &refs, &y).0, traces(&net));
        net.params_mut()[i] = p0 - h;
        let (lm, tm) = (loss_and_gradient(&net, &refs, &y).0, traces(&net));
        net.params_mut()[i] = p0;
        if !same(&tp) || !same(&tm) {
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let denom = grads[i].abs().max(numeric.abs());
        if denom > 1e-6 {
            worst = worst.max((grads[i] - numeric).abs() / denom);
            checked += 1;
        }
    }
    assert!(checked > net.num_params() / 4, "only {checked} parameters checked");
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn input_scaling_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = QNetwork::new(NetConfig { input_scale: 1.0, ..reduced() }, &mut rng).unwrap();
    let x01: Vec<f64> = (0..432).map(|i| if i % 4 == 1 { 1.0 } else { 0.0 }).collect();
    let x255: Vec<f64> = x01.iter().map(|v| v * 255.0).collect();
    let mut scaled = base.clone();
    let (off, len) = scaled.first_layer_weights();
    for p in &mut scaled.params_mut()[off..off + len] {
        *p /= 255.0;
    }
    let a = base.forward_trace(&x01).unwrap();
    let b = scaled.forward_trace(&x255).unwrap();
    for (u, v) in a.output().iter().zip(b.output()) {
        assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()), "{u} vs {v}");
    }
}

#[test]
fn zero_weights_give_zero_output() {
    let net = QNetwork::zeros(NetConfig::default()).unwrap();
    let x: Vec<f64> = (0..10800).map(|i| (i % 255) as f64).collect();
    assert_eq!(net.forward(&x).unwrap(), vec![0.0; 3]);
}

#[test]
fn golden_forward_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let net = QNetwork::new(NetConfig::default(), &mut rng).unwrap();
    let scene = SceneSpec::new(
        5.0,
        5.0,
        vec![Obstacle::Circle { cx: 3.0, cy: 2.5, r: 0.4 }, Obstacle::Rect { cx: 1.0, cy: 4.0, w: 0.6, h: 0.3 }],
    )
    .unwrap();
    let pose = RobotState::at(2.0, 2.0, 0.4);
    let scan = raycast(&scene, &pose, &LidarConfig::default());
    let map = assemble_local_map(&scan, 0.17, (1.2, -0.7), &LocalMapParams::default()).unwrap();
    let q = net.forward(&encode_local_map(&map)).unwrap();
    let golden = GOLDEN;
    for (a, b) in q.iter().zip(golden) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{q:?}");
    }
}

const GOLDEN: [f64; 3] = [0.1273861287207384, -0.4596793438292478, 0.06849799996680939];
