//! Oracles shared by the integration suites and the acceptance target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spnas::autodiff::{BatchNormState, GateKind, Padding, Var};
use spnas::space::{Encoding, SearchSpaceConfig};
use spnas::tensor::Mask;
use spnas::{Graph, Result, Supernet, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One differentiable function of a few input tensors.
pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor>,
    /// Function whose analytic gradient is checked.
    pub build: Build,
    /// Function differenced numerically; `None` means `build` itself.
    pub reference: Option<Build>,
}

impl Case {
    fn new(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Self {
        Case {
            name: name.to_string(),
            inputs,
            build: Box::new(build),
            reference: None,
        }
    }
}

/// Weighted sum `Σ w ⊙ f(inputs)` so that every output element matters.
fn objective(build: &Build, inputs: &[Tensor], weights: &Option<Tensor>, params: bool) -> (Graph, Vec<Var>, Var, Tensor) {
    let mut g = Graph::new(0);
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if params { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let y = build(&mut g, &vars).expect("forward");
    let shape = g.value(y).shape().to_vec();
    let w = weights.clone().unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
        Tensor::uniform(&shape, -1.0, 1.0, &mut rng)
    });
    let wv = g.constant(w.clone());
    let prod = g.mul(y, wv).expect("weights");
    let s = g.sum(prod).expect("sum");
    (g, vars, s, w)
}

/// Largest norm-wise relative error `‖a − n‖ / (‖a‖ + ‖n‖)` over the
/// inputs of `case`, with central differences of step [`FD_STEP`].
pub fn check(case: &Case) -> f64 {
    let (g, vars, s, w) = objective(&case.build, &case.inputs, &None, true);
    let grads = g.backward(s).expect("backward");
    let reference = case.reference.as_ref().unwrap_or(&case.build);
    let eval = |inputs: &[Tensor]| {
        let (g, _, s, _) = objective(reference, inputs, &Some(w.clone()), false);
        g.value(s).item()
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.tensor(&g, *v);
        let mut num = vec![0.0; case.inputs[i].numel()];
        for (j, n) in num.iter_mut().enumerate() {
            let mut plus = case.inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = case.inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            *n = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic.data().iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let an: f64 = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = num.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = if an + nn < 1e-12 { 0.0 } else { diff / (an + nn) };
        worst = worst.max(rel);
    }
    worst
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Uniform values kept at least `gap` away from every point in `kinks`.
fn away_from(shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::uniform(shape, lo, hi, rng);
    for v in t.data_mut() {
        for k in kinks {
            if (*v - k).abs() < gap {
                *v = k + gap * if *v >= *k { 1.0 } else { -1.0 };
            }
        }
    }
    t
}

fn random_mask(shape: &[usize], rng: &mut ChaCha8Rng) -> Mask {
    let n: usize = shape.iter().product();
    let bits: Vec<bool> = (0..n).map(|i| i == 0 || rng.gen_bool(0.5)).collect();
    let strides: Vec<usize> = (0..shape.len()).map(|d| shape[d + 1..].iter().product()).collect();
    Mask::from_fn(shape, move |idx| bits[idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>()])
}

/// Every primitive, plus the relaxed indicators, under one seed.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = Vec::new();
    for (name, x, k, stride, pad) in [
        ("conv2d same s1 k3", [2, 3, 5, 5], [4, 3, 3, 3], 1, Padding::Same),
        ("conv2d same s2 k5", [2, 3, 6, 6], [2, 3, 5, 5], 2, Padding::Same),
        ("conv2d valid s2 k3", [1, 2, 7, 7], [3, 2, 3, 3], 2, Padding::Valid),
        ("conv2d same s2 k1", [2, 2, 5, 5], [3, 2, 1, 1], 2, Padding::Same),
    ] {
        cases.push(Case::new(name, vec![randn(&x, r), randn(&k, r)], move |g, v| g.conv2d(v[0], v[1], stride, pad)));
    }
    for (name, x, k, stride, pad) in [
        ("depthwise same s1 k3", [2, 3, 5, 5], [3, 1, 3, 3], 1, Padding::Same),
        ("depthwise same s2 k5", [2, 3, 6, 6], [3, 1, 5, 5], 2, Padding::Same),
        ("depthwise valid s1 k5", [1, 2, 6, 6], [2, 1, 5, 5], 1, Padding::Valid),
    ] {
        cases.push(Case::new(name, vec![randn(&x, r), randn(&k, r)], move |g, v| {
            g.depthwise_conv2d(v[0], v[1], stride, pad)
        }));
    }
    cases.push(Case::new("matmul", vec![randn(&[3, 4], r), randn(&[4, 5], r)], |g, v| g.matmul(v[0], v[1])));
    cases.push(Case::new("add", vec![randn(&[2, 3], r), randn(&[2, 3], r)], |g, v| g.add(v[0], v[1])));
    cases.push(Case::new("sub", vec![randn(&[2, 3], r), randn(&[2, 3], r)], |g, v| g.sub(v[0], v[1])));
    cases.push(Case::new("mul", vec![randn(&[2, 3], r), randn(&[2, 3], r)], |g, v| g.mul(v[0], v[1])));
    cases.push(Case::new("scale", vec![randn(&[2, 3], r), Tensor::scalar(r.gen_range(-1.0..1.0))], |g, v| g.scale(v[0], v[1])));
    cases.push(Case::new("affine", vec![randn(&[2, 3], r)], |g, v| g.affine(v[0], 1.7, -0.3)));
    cases.push(Case::new("one_minus", vec![randn(&[4], r)], |g, v| g.one_minus(v[0])));
    cases.push(Case::new("add_row_bias", vec![randn(&[3, 4], r), randn(&[4], r)], |g, v| g.add_row_bias(v[0], v[1])));
    cases.push(Case::new("add_channel_bias", vec![randn(&[2, 3, 2, 2], r), randn(&[3], r)], |g, v| {
        g.add_channel_bias(v[0], v[1])
    }));
    cases.push(Case::new("mul_channels", vec![randn(&[2, 3, 2, 2], r), randn(&[2, 3], r)], |g, v| {
        g.mul_channels(v[0], v[1])
    }));
    cases.push(Case::new("relu6", vec![away_from(&[3, 5], -2.0, 8.0, &[0.0, 6.0], 1e-3, r)], |g, v| g.relu6(v[0])));
    cases.push(Case::new("sigmoid", vec![Tensor::uniform(&[3, 4], -4.0, 4.0, r)], |g, v| g.sigmoid(v[0])));
    cases.push(Case::new("log", vec![Tensor::uniform(&[3, 4], 0.5, 3.0, r)], |g, v| g.log(v[0])));
    cases.push(Case::new("global_avg_pool", vec![randn(&[2, 3, 3, 3], r)], |g, v| g.global_avg_pool(v[0])));
    for train in [true, false] {
        let mean = randn(&[3], r);
        let var = Tensor::uniform(&[3], 0.5, 2.0, r);
        cases.push(Case::new(
            if train { "batchnorm train" } else { "batchnorm eval" },
            vec![randn(&[4, 3, 2, 2], r), randn(&[3], r), randn(&[3], r)],
            move |g, v| {
                let mut state = BatchNormState::new(3, 0.1, 1e-5);
                state.running_mean = mean.data().to_vec();
                state.running_var = var.data().to_vec();
                g.batchnorm(v[0], v[1], v[2], &mut state, train)
            },
        ));
    }
    let m = random_mask(&[3, 4], r);
    cases.push(Case::new("mask", vec![randn(&[3, 4], r)], move |g, v| g.mask(v[0], &m)));
    let m = random_mask(&[2, 2, 3], r);
    cases.push(Case::new("group_lasso_sq_norm", vec![randn(&[2, 2, 3], r)], move |g, v| {
        g.group_lasso_sq_norm(v[0], &m)
    }));
    let labels: Vec<usize> = (0..3).map(|_| r.gen_range(0..4)).collect();
    cases.push(Case::new("cross_entropy", vec![randn(&[3, 4], r)], move |g, v| g.cross_entropy(v[0], &labels)));
    cases.push(Case::new("softmax", vec![randn(&[5], r)], |g, v| g.softmax(v[0])));
    let idx = r.gen_range(0..6);
    cases.push(Case::new("select", vec![randn(&[2, 3], r)], move |g, v| g.select(v[0], idx)));
    cases.push(Case::new("sum", vec![randn(&[2, 3], r)], |g, v| g.sum(v[0])));
    cases.push(Case::new("reshape", vec![randn(&[2, 3], r)], |g, v| g.reshape(v[0], &[3, 2])));
    // indicator relaxations
    let (x, t) = (Tensor::scalar(r.gen_range(-1.0..1.0)), Tensor::scalar(r.gen_range(-1.0..1.0)));
    for beta in [1.0, 5.0] {
        cases.push(Case::new(&format!("gate sigmoid beta {beta}"), vec![x.clone(), t.clone()], move |g, v| {
            g.gate(v[0], v[1], GateKind::Sigmoid { beta })
        }));
    }
    let gap = away_from(&[1], -1.0, 1.0, &[0.0], 1e-2, r);
    let t2 = Tensor::scalar(x.item() - gap.item());
    cases.push(Case::new("gate hard", vec![x.clone(), t2.clone()], |g, v| g.gate(v[0], v[1], GateKind::Hard)));
    cases.push(Case {
        name: "gate straight-through vs surrogate x - t".into(),
        inputs: vec![x, t2],
        build: Box::new(|g, v| g.gate(v[0], v[1], GateKind::StraightThrough)),
        reference: Some(Box::new(|g, v| g.sub(v[0], v[1]))),
    });
    cases
}

/// Tiny supernet for whole-network gradient checks.
pub fn tiny_space() -> SearchSpaceConfig {
    use spnas::space::LayerSpec;
    SearchSpaceConfig {
        image_size: 6,
        stem_channels: 4,
        layers: vec![
            LayerSpec { out_channels: 4, stride: 1 },
            LayerSpec { out_channels: 6, stride: 2 },
        ],
        head_channels: 8,
        ..SearchSpaceConfig::default()
    }
}

/// Sigmoid-relaxed supernet loss: FD versus analytic gradient for every
/// threshold and a seeded sample of weights.
pub fn supernet_sigmoid_check(seed: u64) -> f64 {
    let cfg = tiny_space();
    let mut net = Supernet::new(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let x = Tensor::uniform(&[2, 1, 6, 6], 0.0, 1.0, &mut rng);
    let labels = vec![rng.gen_range(0..4), rng.gen_range(0..4)];
    let mode = GateKind::Sigmoid { beta: 5.0 };
    // Zero-initialized biases put ReLU6 inputs exactly on the kink, where
    // central differences see half the slope; jitter every parameter off
    // such ties, and thresholds off their initial values.
    let ids: Vec<_> = net.params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for v in net.params.get_mut(id).data_mut() {
            *v += 0.01 * rng.gen_range(-1.0..1.0);
        }
    }
    for i in 0..net.num_layers() {
        let mut t = net.thresholds(i).to_array();
        for v in &mut t {
            *v *= rng.gen_range(0.7..1.3);
        }
        net.set_thresholds(i, &spnas::space::Gates::from_array(t));
    }
    let loss = |net: &mut Supernet| -> (Graph, spnas::params::Bound, Var) {
        let mut g = Graph::new(0);
        let b = net.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let out = net.forward(&mut g, &b, xv, Encoding::Thresholds(mode), None, false).unwrap();
        let l = g.cross_entropy(out.logits, &labels).unwrap();
        (g, b, l)
    };
    let (g, b, l) = loss(&mut net);
    let grads = net.params.collect_grads(&b, &g.backward(l).unwrap());
    let mut probes: Vec<(usize, usize)> = net
        .threshold_ids()
        .into_iter()
        .map(|id| (id.0, 0))
        .collect();
    let sizes: Vec<usize> = net.params.iter().map(|(_, _, t)| t.numel()).collect();
    for _ in 0..20 {
        let p = rng.gen_range(0..sizes.len());
        probes.push((p, rng.gen_range(0..sizes[p])));
    }
    let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
    for (p, j) in probes {
        let id = spnas::params::ParamId(p);
        let orig = net.params.get(id).data()[j];
        net.params.get_mut(id).data_mut()[j] = orig + FD_STEP;
        let (g1, _, l1) = loss(&mut net);
        net.params.get_mut(id).data_mut()[j] = orig - FD_STEP;
        let (g2, _, l2) = loss(&mut net);
        net.params.get_mut(id).data_mut()[j] = orig;
        let num = (g1.value(l1).item() - g2.value(l2).item()) / (2.0 * FD_STEP);
        let a = grads[p][j];
        if std::env::var("FD_DEBUG").is_ok() {
            eprintln!("{} [{j}] analytic {a:e} numeric {num:e}", net.params.name(id));
        }
        diff += (a - num) * (a - num);
        an += a * a;
        nn += num * num;
    }
    let (diff, an, nn) = (diff.sqrt(), an.sqrt(), nn.sqrt());
    if an + nn < 1e-12 {
        0.0
    } else {
        diff / (an + nn)
    }
}
