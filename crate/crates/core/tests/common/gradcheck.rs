//! Finite-difference gradient check shared by the network tests and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenesim::drl::{ConvSpec, NetConfig, PoolSpec, QNetwork, Trace};

/// Width-reduced network on a 3-channel 12x12 input using every layer type.
pub fn reduced() -> NetConfig {
    NetConfig {
        input_channels: 3,
        input_height: 12,
        input_width: 12,
        input_scale: 1.0,
        conv: vec![
            ConvSpec { out_channels: 3, kernel: 3, stride: 1, pool: Some(PoolSpec { size: 2, stride: 2 }) },
            ConvSpec { out_channels: 4, kernel: 2, stride: 1, pool: Some(PoolSpec { size: 2, stride: 1 }) },
            ConvSpec { out_channels: 5, kernel: 2, stride: 1, pool: None },
        ],
        hidden: vec![6],
        outputs: 3,
    }
}

fn objective(net: &QNetwork, x: &[f64], c: &[f64]) -> (f64, Trace) {
    let trace = net.forward_trace(x).unwrap();
    let l = trace.output().iter().zip(c).map(|(q, w)| q * w).sum();
    (l, trace)
}

pub struct GradCheck {
    pub worst: f64,
    pub checked: usize,
    /// Perturbations that flipped a ReLU or a pooling choice.
    pub skipped: usize,
}

/// Compares backprop against central differences of `c . Q(x)` for every
/// parameter on `samples` seeded (input, weight) draws.
pub fn gradient_check(samples: u64) -> GradCheck {
    let mut r = GradCheck { worst: 0.0, checked: 0, skipped: 0 };
    for sample in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + sample);
        let mut net = QNetwork::new(reduced(), &mut rng).unwrap();
        for p in net.params_mut() {
            *p += rng.gen_range(-0.1..0.1);
        }
        let x: Vec<f64> = (0..432)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, trace) = objective(&net, &x, &c);
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&trace, &c, &mut grads);

        #[allow(clippy::needless_range_loop)]
        for i in 0..net.num_params() {
            let p0 = net.params()[i];
            let h = 1e-4 * p0.abs().max(1.0);
            net.params_mut()[i] = p0 + h;
            let (lp, tp) = objective(&net, &x, &c);
            net.params_mut()[i] = p0 - h;
            let (lm, tm) = objective(&net, &x, &c);
            net.params_mut()[i] = p0;
            if !trace.same_branches(&tp) || !trace.same_branches(&tm) {
                r.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads[i];
            let denom = analytic.abs().max(numeric.abs());
            let rel = if denom > 1e-7 { (analytic - numeric).abs() / denom } else { (analytic - numeric).abs() / 1e-7 };
            r.worst = r.worst.max(rel);
            r.checked += 1;
        }
    }
    r
}
