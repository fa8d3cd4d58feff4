use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spnas::autodiff::GateKind;
use spnas::data::{synth_classification, Dataset, SynthConfig};
use spnas::latency::{lutgen, type_gates, RuntimeModel};
use spnas::nas::ablation::train_shared;
use spnas::nas::logs::{read_step_log, write_step_log};
use spnas::nas::random::{random_sample, runtime_bounds};
use spnas::nas::*;
use spnas::params::ParamStore;
use spnas::space::*;
use spnas::{Error, Graph, Tensor};

fn uniform_space() -> SearchSpaceConfig {
    SearchSpaceConfig {
        image_size: 8,
        stem_channels: 4,
        layers: vec![
            LayerSpec { out_channels: 4, stride: 1 },
            LayerSpec { out_channels: 4, stride: 1 },
            LayerSpec { out_channels: 4, stride: 1 },
        ],
        head_channels: 8,
        ..SearchSpaceConfig::default()
    }
}

/// Middle layer changes shape and cannot be skipped.
fn mixed_space() -> SearchSpaceConfig {
    SearchSpaceConfig {
        image_size: 8,
        stem_channels: 4,
        layers: vec![
            LayerSpec { out_channels: 4, stride: 1 },
            LayerSpec { out_channels: 8, stride: 2 },
            LayerSpec { out_channels: 8, stride: 1 },
        ],
        head_channels: 8,
        ..SearchSpaceConfig::default()
    }
}

fn data(space: &SearchSpaceConfig, n: usize) -> Dataset {
    synth_classification(
        &SynthConfig {
            classes: space.classes,
            n,
            image_size: space.image_size,
            ..SynthConfig::default()
        },
        0,
    )
    .unwrap()
}

fn model(space: &SearchSpaceConfig) -> RuntimeModel {
    RuntimeModel::new(lutgen(space, 0, 0.1).unwrap())
}

fn quick(variant: Variant, lambda: f64, steps: usize) -> SearchConfig {
    SearchConfig {
        variant,
        lambda,
        steps: Some(steps),
        batch_size: 8,
        proxy: TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        ..SearchConfig::default()
    }
}

fn minimal(space: &SearchSpaceConfig) -> Architecture {
    Architecture(
        space
            .resolve()
            .unwrap()
            .iter()
            .map(|l| if l.skippable() { MBConvType::Skip } else { MBConvType::MIN })
            .collect(),
    )
}

#[test]
fn loss_examples() {
    assert_eq!(loss_value(0.7, 12.0, 0.0).unwrap(), 0.7);
    assert!((loss_value(1.0, std::f64::consts::E, 2.0).unwrap() - 3.0).abs() < 1e-15);
    for bad in [0.0, -1.0] {
        let e = loss_value(1.0, bad, 1.0).unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
        assert_eq!(e.exit_code(), 3);
    }
}

fn threshold_grads(net: &Supernet<f64>, x: &Tensor, labels: &[usize], lambda: Option<f64>, runtime_only: bool) -> Vec<f64> {
    let mut net = net.clone();
    let m = model(&net.config);
    let mut g = Graph::new(0);
    let b = net.params.bind(&mut g);
    let xv = g.constant(x.clone());
    let out = net
        .forward(&mut g, &b, xv, Encoding::Thresholds(GateKind::Sigmoid { beta: 5.0 }), None, true)
        .unwrap();
    let ce = g.cross_entropy(out.logits, labels).unwrap();
    let r = m.network_runtime(&mut g, &out.gates).unwrap();
    let root = match (lambda, runtime_only) {
        (Some(l), _) => latency_loss(&mut g, ce, r, l).unwrap(),
        (None, true) => r,
        (None, false) => ce,
    };
    let grads = net.params.collect_grads(&b, &g.backward(root).unwrap());
    let mut v: Vec<f64> = net.threshold_ids().iter().map(|id| grads[id.0][0]).collect();
    if runtime_only {
        // d ln R / dt
        let rv = g.value(r).item();
        v.iter_mut().for_each(|d| *d /= rv);
    }
    v
}

#[test]
fn threshold_gradient_splits_into_task_and_runtime_terms() {
    let space = mixed_space();
    let net = Supernet::new(&space, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::uniform(&[3, 1, 8, 8], 0.0, 1.0, &mut rng);
    let labels = [0, 2, 3];
    let lambda = 0.7;
    let total = threshold_grads(&net, &x, &labels, Some(lambda), false);
    let ce = threshold_grads(&net, &x, &labels, None, false);
    let log_r = threshold_grads(&net, &x, &labels, None, true);
    assert!(log_r.iter().any(|v| v.abs() > 1e-6), "runtime must depend on the thresholds");
    for i in 0..total.len() {
        let expect = ce[i] + lambda * log_r[i];
        assert!((total[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()), "threshold {i}: {} vs {expect}", total[i]);
    }
}

#[test]
fn untrained_search_decodes_to_smallest_types() {
    for space in [uniform_space(), mixed_space()] {
        let d = data(&space, 32);
        let m = model(&space);
        for variant in [Variant::SingleSigmoid, Variant::SingleSte, Variant::SingleSoftmax, Variant::MultiPathSoftmax] {
            let run = run_search(&quick(variant, 0.0, 0), &space, &d, &m, &RunOptions::default()).unwrap();
            let r = run.report();
            let arch = r.decoded().unwrap();
            if variant == Variant::MultiPathSoftmax {
                // all paths tie; the first candidate wins
                let first: Vec<_> = space
                    .resolve()
                    .unwrap()
                    .iter()
                    .map(|l| MBConvType::candidates(l.skippable())[0])
                    .collect();
                assert_eq!(arch.0, first);
            } else {
                assert_eq!(arch, minimal(&space), "{variant}");
            }
            assert_eq!(r.hard_runtime_ms, m.architecture_runtime(&arch).unwrap());
            assert!(r.steps.is_empty() && r.optimizer_steps == 0);
        }
    }
}

#[test]
fn heavy_runtime_weight_reaches_the_smallest_network() {
    let space = mixed_space();
    let d = data(&space, 64);
    let m = model(&space);
    let cfg = SearchConfig {
        threshold_lr_scale: 20.0,
        ..quick(Variant::SingleSigmoid, 1e3, 20)
    };
    let heavy = search::<f64>(&cfg, &space, &d, &m, &RunOptions::default()).unwrap();
    let light = search::<f64>(&SearchConfig { lambda: 0.0, ..cfg.clone() }, &space, &d, &m, &RunOptions::default()).unwrap();
    assert_eq!(heavy.report.decoded().unwrap(), minimal(&space));
    assert!(heavy.report.hard_runtime_ms <= light.report.hard_runtime_ms);
    let first = heavy.report.steps.first().unwrap().runtime_ms;
    let last = heavy.report.steps.last().unwrap().runtime_ms;
    assert!(last < first, "relaxed runtime should fall: {first} -> {last}");
}

#[test]
fn single_level_search_logs_one_joint_step_per_batch() {
    let space = mixed_space();
    let d = data(&space, 48);
    let m = model(&space);
    for variant in [Variant::SingleSigmoid, Variant::SingleSte] {
        let cfg = quick(variant, 0.5, 6);
        let a = search::<f64>(&cfg, &space, &d, &m, &RunOptions::default()).unwrap().report;
        let b = search::<f64>(&cfg, &space, &d, &m, &RunOptions::default()).unwrap().report;
        assert_eq!(a.without_timing(), b.without_timing());
        assert_eq!(a.batches, 6);
        assert_eq!(a.optimizer_steps, 6);
        assert_eq!(a.steps.len(), 6);
        assert_eq!(a.step_seconds.len(), 6);
        for s in &a.steps {
            let identity = loss_value(s.ce, s.runtime_ms, cfg.lambda).unwrap();
            assert!((s.loss - identity).abs() < 1e-12, "step {}: {} vs {identity}", s.step, s.loss);
        }
        assert!(a.audit.iter().all(|p| p.phase == search::Phase::Joint && p.frozen_grad_norm == 0.0));
        let other = search::<f64>(&SearchConfig { seed: 1, ..cfg }, &space, &d, &m, &RunOptions::default()).unwrap();
        assert_ne!(a.steps, other.report.steps);
    }
}

#[test]
fn bilevel_search_alternates_and_freezes_the_other_group() {
    let space = mixed_space();
    let d = data(&space, 64);
    let m = model(&space);
    for variant in [Variant::SingleSoftmax, Variant::MultiPathSoftmax] {
        let cfg = quick(variant, 0.3, 3);
        let a = run_search(&cfg, &space, &d, &m, &RunOptions::default()).unwrap().into_report();
        let b = run_search(&cfg, &space, &d, &m, &RunOptions::default()).unwrap().into_report();
        assert_eq!(a.without_timing(), b.without_timing());
        assert_eq!(a.audit.len(), 6);
        assert_eq!(a.optimizer_steps, 6);
        for (i, p) in a.audit.iter().enumerate() {
            let want = if i % 2 == 0 { search::Phase::Weights } else { search::Phase::Architecture };
            assert_eq!(p.phase, want);
            assert_eq!(p.step, i / 2);
            assert_eq!(p.frozen_grad_norm, 0.0);
        }
        for s in &a.steps {
            assert!((s.loss - loss_value(s.ce, s.runtime_ms, 0.3).unwrap()).abs() < 1e-12);
        }
    }
}

fn one_hot(enc: &mut SoftmaxEncoding<f64>, layer: usize, ty: MBConvType) {
    let gates = type_gates(ty).to_array();
    for (id, on) in enc.ids[layer].into_iter().zip(gates) {
        let t = if on > 0.5 { [-60.0, 60.0] } else { [60.0, -60.0] };
        enc.logits.get_mut(id).data_mut().copy_from_slice(&t);
    }
}

#[test]
fn saturated_softmax_matches_the_selected_subnetwork() {
    let space = mixed_space();
    let layers = space.resolve().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
    for trial in 0..6 {
        let arch = sample_architecture(&layers, &mut rng);
        let net = Supernet::new(&space, trial).unwrap();
        let mut enc = SoftmaxEncoding::<f64>::new(space.num_layers());
        for (i, ty) in arch.layers().iter().enumerate() {
            one_hot(&mut enc, i, *ty);
        }
        assert_eq!(enc.decode(&layers), arch);

        let mut soft = net.clone();
        let mut g = Graph::new(0);
        let w = soft.params.bind(&mut g);
        let a = enc.logits.bind(&mut g);
        let gates = enc.gates(&mut g, &a, None).unwrap();
        let xv = g.constant(x.clone());
        let out = soft.forward(&mut g, &w, xv, Encoding::Given(&gates), None, true).unwrap();

        let mut fixed = FixedNet::from_supernet(&net, &arch).unwrap();
        let mut h = Graph::new(0);
        let fb = fixed.params.bind(&mut h);
        let xf = h.constant(x.clone());
        let reference = fixed.forward(&mut h, &fb, xf, true).unwrap();
        let (s, f) = (g.value(out.logits).data(), h.value(reference).data());
        for (p, q) in s.iter().zip(f) {
            assert!((p - q).abs() < 1e-12, "{arch:?}: {p} vs {q}");
        }
    }
}

#[test]
fn identical_paths_make_the_mixture_weights_irrelevant() {
    let space = mixed_space();
    let cands = vec![vec![MBConvType::MIN; 2]; space.num_layers()];
    let mut net = MultiPathNet::<f64>::with_candidates(&space, cands, 3).unwrap();
    for l in &net.layers {
        let (a, b) = (l.candidates[0].1.clone().unwrap(), l.candidates[1].1.clone().unwrap());
        for (src, dst) in [(a.expand, b.expand), (a.gamma, b.gamma), (a.beta, b.beta), (a.depthwise, b.depthwise), (a.project, b.project)] {
            let t = net.params.get(src).clone();
            *net.params.get_mut(dst) = t;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
    let logits = |net: &mut MultiPathNet<f64>| {
        let mut g = Graph::new(0);
        let w = net.params.bind(&mut g);
        let a = net.arch.bind(&mut g);
        let xv = g.constant(x.clone());
        let (y, _) = net.forward(&mut g, &w, &a, xv, None, false).unwrap();
        g.value(y).data().to_vec()
    };
    let base = logits(&mut net);
    for _ in 0..3 {
        let ids: Vec<_> = net.layers.iter().map(|l| l.alpha).collect();
        for id in ids {
            for v in net.arch.get_mut(id).data_mut() {
                *v = rng.gen_range(-4.0..4.0);
            }
        }
        for (p, q) in logits(&mut net).iter().zip(&base) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decoding_ignores_a_common_logit_shift(
        values in prop::collection::vec(-5.0f64..5.0, 30),
        shift in -50.0f64..50.0,
    ) {
        let space = mixed_space();
        let layers = space.resolve().unwrap();
        let mut enc = SoftmaxEncoding::<f64>::new(3);
        let mut shifted = SoftmaxEncoding::<f64>::new(3);
        for (k, (i, j)) in (0..3).flat_map(|i| (0..5).map(move |j| (i, j))).enumerate() {
            let v = [values[2 * k], values[2 * k + 1]];
            enc.logits.get_mut(enc.ids[i][j]).data_mut().copy_from_slice(&v);
            shifted.logits.get_mut(shifted.ids[i][j]).data_mut().copy_from_slice(&[v[0] + shift, v[1] + shift]);
        }
        prop_assert_eq!(enc.decode(&layers), shifted.decode(&layers));

        let mut net = MultiPathNet::<f64>::new(&space, 0).unwrap();
        let ids: Vec<_> = net.layers.iter().map(|l| l.alpha).collect();
        for (n, id) in ids.iter().enumerate() {
            for (c, v) in net.arch.get_mut(*id).data_mut().iter_mut().enumerate() {
                *v = values[(n * 13 + c) % 30];
            }
        }
        let before = net.decode();
        for id in ids {
            net.arch.get_mut(id).data_mut().iter_mut().for_each(|v| *v += shift);
        }
        prop_assert_eq!(before, net.decode());
    }
}

#[test]
fn rejection_sampling_accepts_at_the_enumerated_rate() {
    let space = uniform_space();
    let layers = space.resolve().unwrap();
    let m = model(&space);
    let all = enumerate_runtimes(&m, &layers).unwrap();
    assert_eq!(all.len(), 13usize.pow(3));
    let window = (runtime_percentile(&m, &layers, 30.0).unwrap(), runtime_percentile(&m, &layers, 60.0).unwrap());
    let inside = all.iter().filter(|r| (window.0..=window.1).contains(r)).count() as f64 / all.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut accepted, mut attempts) = (0usize, 0usize);
    for _ in 0..5000 {
        let (arch, r, n) = sample_in_window(&m, &layers, window, 10_000, &mut rng).unwrap();
        assert_eq!(r, m.architecture_runtime(&arch).unwrap());
        assert!((window.0..=window.1).contains(&r));
        accepted += 1;
        attempts += n;
    }
    let rate = accepted as f64 / attempts as f64;
    assert!((rate - inside).abs() < 0.02, "rate {rate} vs enumerated {inside}");
}

#[test]
fn percentile_uses_nearest_rank() {
    let space = uniform_space();
    let layers = space.resolve().unwrap();
    let m = model(&space);
    let all = enumerate_runtimes(&m, &layers).unwrap();
    assert!(all.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(runtime_percentile(&m, &layers, 100.0).unwrap(), *all.last().unwrap());
    assert_eq!(runtime_percentile(&m, &layers, 1e-9).unwrap(), all[0]);
    assert_eq!(runtime_percentile(&m, &layers, 50.0).unwrap(), all[(0.5f64 * 2197.0).ceil() as usize - 1]);
    assert!(runtime_percentile(&m, &layers, 0.0).is_err());
    let (lo, hi) = runtime_bounds(&m, &layers).unwrap();
    assert_eq!((lo, hi), (all[0], *all.last().unwrap()));
}

#[test]
fn impossible_windows_are_infeasible() {
    let space = mixed_space();
    let layers = space.resolve().unwrap();
    let m = model(&space);
    let (lo, hi) = runtime_bounds(&m, &layers).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for w in [(0.0, lo * 0.5), (hi * 2.0, hi * 3.0), (hi, lo)] {
        let e = sample_in_window(&m, &layers, w, 1000, &mut rng).unwrap_err();
        assert!(matches!(e, Error::Infeasible(_)), "{w:?}");
        assert_eq!(e.exit_code(), 4);
    }
}

#[test]
fn unbounded_window_accepts_every_draw() {
    let space = mixed_space();
    let d = data(&space, 32);
    let m = model(&space);
    let cfg = RandomSearchConfig {
        samples: 3,
        proxy: TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        },
        seed: 4,
        ..RandomSearchConfig::default()
    };
    let r = random_search(&space, &d, &m, &cfg).unwrap();
    assert_eq!(r.acceptance_rate, 1.0);
    assert_eq!(r.samples.len(), 3);
    assert_eq!(r, random_search(&space, &d, &m, &cfg).unwrap());
    let seeds: Vec<u64> = r.samples.iter().map(|s| s.seed).collect();
    assert_eq!(seeds, vec![4, 5, 6]);
    let acc: Vec<f64> = r.samples.iter().map(|s| s.accuracy).collect();
    assert_eq!(r.accuracy, Summary::of(&acc));
    assert!(r.samples.iter().all(|s| s.accuracy <= r.best_sample().accuracy));
}

fn study_base() -> SearchConfig {
    SearchConfig {
        proxy: TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        },
        ..quick(Variant::SingleSigmoid, 0.2, 2)
    }
}

#[test]
fn variance_study_reports_every_cell() {
    let space = mixed_space();
    let d = data(&space, 32);
    let m = model(&space);
    let vcfg = VarianceConfig {
        seeds: vec![0, 1],
        intra_samples: 2,
        workers: 2,
        ..VarianceConfig::default()
    };
    let base = study_base();
    let r = variance_study(&space, &d, &m, &base, &vcfg).unwrap();
    let cells: Vec<_> = r.cells.iter().map(|c| (c.variant, c.kind)).collect();
    use spnas::nas::variance::CellKind::*;
    assert_eq!(
        cells,
        vec![
            (Variant::SingleSigmoid, Inter),
            (Variant::SingleSte, Inter),
            (Variant::SingleSoftmax, Inter),
            (Variant::SingleSoftmax, Intra),
            (Variant::MultiPathSoftmax, Inter),
            (Variant::MultiPathSoftmax, Intra),
            (Variant::Random, Inter),
        ]
    );
    for c in &r.cells {
        let acc: Vec<f64> = c.runs.iter().map(|x| x.accuracy).collect();
        assert_eq!(c.accuracy, Summary::of(&acc));
        assert_eq!(c.runs.len(), 2);
    }
    let obs = r.observation.clone().unwrap();
    assert_eq!(obs.sigmoid_inter_accuracy_variance, r.cells[0].accuracy.variance);
    assert_eq!(obs.softmax_intra_accuracy_variance, r.cells[3].accuracy.variance);

    // the random cell is the plain rejection sampler, seed by seed
    let rcfg = RandomSearchConfig {
        samples: 1,
        proxy: base.proxy.clone(),
        ..RandomSearchConfig::default()
    };
    for run in &r.cells[6].runs {
        let s = random_sample(&space, &d, &m, &rcfg, run.seed).unwrap();
        assert_eq!((s.accuracy, s.runtime_ms, &s.architecture), (run.accuracy, run.runtime_ms, &run.architecture));
    }
    // one worker gives the same report
    let serial = variance_study(&space, &d, &m, &base, &VarianceConfig { workers: 1, ..vcfg }).unwrap();
    assert_eq!(serial, r);
}

#[test]
fn repeated_seeds_have_no_spread() {
    let space = mixed_space();
    let d = data(&space, 32);
    let m = model(&space);
    let vcfg = VarianceConfig {
        variants: vec![Variant::SingleSigmoid, Variant::Random],
        seeds: vec![7, 7, 7],
        ..VarianceConfig::default()
    };
    let r = variance_study(&space, &d, &m, &study_base(), &vcfg).unwrap();
    for c in &r.cells {
        assert_eq!(c.accuracy.variance, 0.0);
        assert_eq!(c.runtime_ms.variance, 0.0);
    }
    assert!(r.observation.is_none());
    let too_few = VarianceConfig { seeds: vec![1], ..vcfg };
    assert!(variance_study(&space, &d, &m, &study_base(), &too_few).is_err());
}

#[test]
fn fixed_training_is_reproducible() {
    let space = mixed_space();
    let d = data(&space, 48);
    let arch = Architecture(vec![MBConvType::MAX; 3]);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (a, _) = train_fixed::<f64>(&space, &arch, &d, &cfg).unwrap();
    let (b, _) = train_fixed::<f64>(&space, &arch, &d, &cfg).unwrap();
    assert_eq!((a.accuracy, &a.losses), (b.accuracy, &b.losses));
    assert_eq!(a.optimizer_steps, 5);
    assert!(a.losses.iter().all(|l| l.is_finite()));
    let (untrained, _) = train_fixed::<f64>(&space, &arch, &d, &TrainConfig { epochs: 0, ..cfg }).unwrap();
    assert_eq!(untrained.optimizer_steps, 0);
    assert!((0.0..=1.0).contains(&untrained.accuracy));
}

/// Stem and head only, built from the same seeded draw order as a network
/// whose layers are all skipped.
struct StemHead {
    backbone: Backbone,
    params: ParamStore<f64>,
    bn: Vec<spnas::autodiff::BatchNormState<f64>>,
}

impl Classifier<f64> for StemHead {
    fn params(&self) -> &ParamStore<f64> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }
    fn logits(&mut self, g: &mut Graph, b: &spnas::params::Bound, x: spnas::autodiff::Var, train: bool) -> spnas::Result<spnas::autodiff::Var> {
        let h = self.backbone.stem_forward(g, b, &mut self.bn, x, train)?;
        self.backbone.head_forward(g, b, &mut self.bn, h, train)
    }
}

use spnas::space::block::Backbone;

#[test]
fn all_skip_network_is_stem_plus_head() {
    let space = uniform_space();
    let d = data(&space, 48);
    let arch = Architecture(vec![MBConvType::Skip; 3]);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let (report, net) = train_fixed::<f64>(&space, &arch, &d, &cfg).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamStore::new();
    let mut bn = Vec::new();
    let stem = Backbone::init_stem(&space, &mut params, &mut bn, &mut rng);
    let backbone = Backbone::init_head(&space, stem, &mut params, &mut bn, &mut rng);
    let mut oracle = StemHead { backbone, params, bn };
    let expect = train_classifier(&mut oracle, &d, &cfg).unwrap();
    assert_eq!(report.losses, expect.losses);
    assert_eq!(report.accuracy, expect.accuracy);
    assert_eq!(net.params.scalar_count(), oracle.params.scalar_count());
    let m = model(&space);
    assert_eq!(m.architecture_runtime(&arch).unwrap(), m.table.fixed_overhead_ms);
}

#[test]
fn ablation_rows_are_reproducible() {
    let space = mixed_space();
    let d = data(&space, 32);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let rows = shared_subset_ablation(&space, &d, &cfg).unwrap();
    let names: Vec<_> = rows.iter().map(|r| (r.name.as_str(), r.kernel, r.shared)).collect();
    assert_eq!(
        names,
        vec![
            ("standalone_3x3", 3, false),
            ("standalone_5x5", 5, false),
            ("shared_inner_3x3", 3, true),
            ("shared_full_5x5", 5, true),
        ]
    );
    assert_eq!(rows, shared_subset_ablation(&space, &d, &cfg).unwrap());
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));

    // with no steps the shared network is the standalone 5x5 initialization
    let untrained = TrainConfig { epochs: 0, ..cfg };
    let shared = train_shared(&space, &d, &untrained).unwrap();
    let five = Architecture(vec![
        MBConvType::Block {
            kernel: 5,
            expansion: 6,
            se: SeRatio::None
        };
        3
    ]);
    let standalone = FixedNet::new(&space, &five, untrained.seed).unwrap();
    assert_eq!(shared.params, standalone.params);
}

#[test]
fn checkpoints_round_trip_and_derive() {
    let space = mixed_space();
    let d = data(&space, 48);
    let m = model(&space);
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::SingleSigmoid, Variant::SingleSte, Variant::SingleSoftmax, Variant::MultiPathSoftmax] {
        let cfg = SearchConfig { arch_lr: 5.0, ..quick(variant, 0.4, 3) };
        let run = run_search(&cfg, &space, &d, &m, &RunOptions::default()).unwrap();
        let ck = run.checkpoint(&cfg);
        let path = dir.path().join(format!("{variant}.ckpt"));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.to_bytes(), ck.to_bytes());
        assert_eq!(derive(&back).unwrap(), run.report().decoded().unwrap(), "{variant}");
    }
    let mut bytes = run_search(&quick(Variant::SingleSigmoid, 0.0, 0), &space, &d, &m, &RunOptions::default())
        .unwrap()
        .checkpoint(&SearchConfig::default())
        .to_bytes();
    bytes[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bytes).is_err());
}

#[test]
fn divergence_leaves_a_loadable_checkpoint() {
    let space = mixed_space();
    let d = data(&space, 48);
    let m = model(&space);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last_good.ckpt");
    let cfg = SearchConfig {
        lr: 1e150,
        lr_warmup_fraction: 0.0,
        ..quick(Variant::SingleSigmoid, 0.1, 6)
    };
    let opts = RunOptions {
        divergence_checkpoint: Some(path.clone()),
    };
    let Err(e) = run_search(&cfg, &space, &d, &m, &opts) else {
        panic!("a huge learning rate must diverge");
    };
    let Error::Diverged { step, checkpoint, .. } = &e else {
        panic!("unexpected error {e}");
    };
    assert!(*step >= 1);
    assert_eq!(checkpoint.as_deref(), Some(path.as_path()));
    assert_eq!(e.exit_code(), 3);
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.meta["step"], serde_json::json!(step - 1));
    let net = spnas::nas::search::load_supernet(&ck).unwrap();
    let finite = net.params.iter().all(|(_, _, t)| t.data().iter().all(|v| v.is_finite()));
    assert!(finite);
}

#[test]
fn step_log_csv_round_trips() {
    let space = mixed_space();
    let d = data(&space, 48);
    let m = model(&space);
    let r = run_search(&quick(Variant::SingleSigmoid, 0.25, 4), &space, &d, &m, &RunOptions::default())
        .unwrap()
        .into_report();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("steps.csv");
    write_step_log(&path, &r.steps).unwrap();
    assert_eq!(read_step_log(&path).unwrap(), r.steps);
    let header = std::fs::read_to_string(&path).unwrap();
    assert_eq!(header.lines().next().unwrap(), "step,ce,runtime_ms,loss,lr,dropout_p");
}
