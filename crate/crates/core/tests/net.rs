use cats_edge::autodiff::{Node, Tape};
use cats_edge::gradcheck::{self, CheckOptions};
use cats_edge::loss::{self, EdgeLabel, TracingConfig};
use cats_edge::net::{self, FusionMode, LevelGroup, LevelWeights, LossConfig, ModelState, NetArch};
use cats_edge::rng::Rng;
use cats_edge::Grid;

fn arch(stages: usize, fusion: FusionMode) -> NetArch {
    NetArch {
        stages,
        convs_per_stage: 2,
        base_channels: 3,
        in_channels: 1,
        fusion,
        cofusion_hidden: 4,
    }
}

fn image(rng: &mut Rng, h: usize, w: usize) -> Grid {
    Grid::from_fn(h, w, 1, |_, _, _| rng.uniform())
}

fn line_label(h: usize, w: usize, row: usize) -> EdgeLabel {
    let mut c = Grid::zeros(h, w, 1);
    for x in 0..w {
        c.set(0, row, x, 1.0);
    }
    EdgeLabel::derive(&c, 0.0, 3).unwrap()
}

#[test]
fn side_maps_match_input_resolution() {
    let mut rng = Rng::new(1);
    for (h, w) in [(64, 64), (37, 45), (4, 9)] {
        let state = ModelState::init(arch(3, FusionMode::CoFusion), 5).unwrap();
        let tape = Tape::new();
        let out = net::forward(&tape, &image(&mut rng, h, w), &state.bind(&tape, false)).unwrap();
        assert_eq!(out.pack.len(), 3);
        for &s in out.sides() {
            assert_eq!(tape.shape(s), (h, w, 1));
        }
        assert_eq!(tape.shape(out.final_logit), (h, w, 1));
        assert_eq!(tape.shape(out.weights.unwrap()), (h, w, 3));
    }
}

#[test]
fn too_small_or_wrong_channels_rejected() {
    let state = ModelState::init(arch(3, FusionMode::Fixed), 5).unwrap();
    let tape = Tape::new();
    let m = state.bind(&tape, false);
    assert!(net::forward(&tape, &Grid::zeros(3, 8, 1), &m).is_err());
    assert!(net::forward(&tape, &Grid::zeros(8, 8, 3), &m).is_err());
    assert!(net::forward(&tape, &Grid::zeros(4, 4, 1), &m).is_ok());
}

#[test]
fn single_stage_final_is_the_side() {
    let mut rng = Rng::new(2);
    let img = image(&mut rng, 9, 7);
    for mode in [FusionMode::Fixed, FusionMode::CoFusion] {
        let state = ModelState::init_with_std(arch(1, mode), 3, 0.3).unwrap();
        let tape = Tape::new();
        let out = net::forward(&tape, &img, &state.bind(&tape, false)).unwrap();
        assert_eq!(out.pack.len(), 1);
        assert_eq!(*tape.value(out.final_logit), *tape.value(out.sides()[0]));
    }
}

#[test]
fn zero_parameters_predict_one_half() {
    let mut rng = Rng::new(3);
    for mode in [FusionMode::Fixed, FusionMode::CoFusion] {
        let state = ModelState::zeros(arch(3, mode)).unwrap();
        let p = net::predict(&state, &image(&mut rng, 16, 16)).unwrap();
        assert!(p.fused.data().iter().all(|&v| v == 0.5));
        assert!(p.sides.iter().all(|s| s.data().iter().all(|&v| v == 0.5)));
    }
}

#[test]
fn backbone_is_identical_across_fusion_modes() {
    let mut rng = Rng::new(4);
    let img = image(&mut rng, 16, 12);
    let a = ModelState::init(arch(3, FusionMode::Fixed), 11).unwrap();
    let b = ModelState::init(arch(3, FusionMode::CoFusion), 11).unwrap();
    assert_eq!(a.stages, b.stages);
    assert_eq!(a.heads, b.heads);
    let pa = net::predict(&a, &img).unwrap();
    let pb = net::predict(&b, &img).unwrap();
    assert_eq!(pa.sides, pb.sides);
    assert!(pa.weights.is_none() && pb.weights.is_some());
}

#[test]
fn every_parameter_receives_gradient() {
    let mut rng = Rng::new(5);
    for mode in [FusionMode::Fixed, FusionMode::CoFusion] {
        let state = ModelState::init(arch(3, mode), 6).unwrap();
        let label = line_label(16, 16, 7);
        let cfg = LossConfig {
            k_bdry: 3,
            ..LossConfig::default()
        };
        let tape = Tape::new();
        let m = state.bind(&tape, true);
        let out = net::forward(&tape, &image(&mut rng, 16, 16), &m).unwrap();
        let l = net::total_loss(&tape, &out, &label, &cfg.side_configs(3).unwrap(), &cfg.final_config().unwrap()).unwrap();
        tape.backward(l.total).unwrap();
        for (g, name) in m.grads(&tape).iter().zip(state.kernel_names()) {
            assert!(g.values().any(|v| v != 0.0), "{mode}: {name} has zero gradient");
            assert!(g.values().all(f64::is_finite));
        }
    }
}

#[test]
fn single_stage_without_patch_terms_is_twice_the_ce() {
    let mut rng = Rng::new(6);
    let img = image(&mut rng, 8, 8);
    let label = line_label(8, 8, 2);
    let state = ModelState::init_with_std(arch(1, FusionMode::Fixed), 7, 0.3).unwrap();
    let cfg = LossConfig {
        k_bdry: 3,
        ..LossConfig::default()
    }
    .ce_only();
    let tape = Tape::new();
    let out = net::forward(&tape, &img, &state.bind(&tape, false)).unwrap();
    let l = net::total_loss(&tape, &out, &label, &cfg.side_configs(1).unwrap(), &cfg.final_config().unwrap()).unwrap();
    let p = tape.sigmoid(out.sides()[0]);
    let ce = loss::loss_ce(&tape, p, &label, cfg.lambda, cfg.epsilon).unwrap();
    assert_eq!(tape.scalar(l.total), 2.0 * tape.scalar(ce));
}

#[test]
fn per_level_weights_are_dispatched() {
    let mut rng = Rng::new(7);
    let img = image(&mut rng, 16, 16);
    let label = line_label(16, 16, 5);
    let cfg = LossConfig {
        delta: 0.0,
        lambda: 1.2,
        k_bdry: 3,
        groups: vec![
            LevelGroup {
                stages: vec![1, 2],
                lambda1: 4.0,
                lambda2: 0.05,
            },
            LevelGroup {
                stages: vec![3],
                lambda1: 2.0,
                lambda2: 0.1,
            },
        ],
        fused: LevelWeights {
            lambda1: 6.0,
            lambda2: 0.05,
        },
        ..LossConfig::default()
    };
    let sides = cfg.side_configs(3).unwrap();
    let fin = cfg.final_config().unwrap();
    let state = ModelState::init_with_std(arch(3, FusionMode::CoFusion), 8, 0.3).unwrap();
    let tape = Tape::new();
    let out = net::forward(&tape, &img, &state.bind(&tape, false)).unwrap();
    let l = net::total_loss(&tape, &out, &label, &sides, &fin).unwrap();

    let mut expected = 0.0;
    let expect = [(4.0, 0.05), (4.0, 0.05), (2.0, 0.1)];
    for (i, &s) in out.sides().iter().enumerate() {
        let prob = tape.value(tape.sigmoid(s)).clone();
        let c = TracingConfig {
            lambda: 1.2,
            lambda1: expect[i].0,
            lambda2: expect[i].1,
            k_bdry: 3,
            ..TracingConfig::default()
        };
        expected += loss::oracle::loss_oracle(&prob, &label, &c).unwrap().total;
    }
    let prob = tape.value(tape.sigmoid(out.final_logit)).clone();
    let c = TracingConfig {
        lambda: 1.2,
        lambda1: 6.0,
        lambda2: 0.05,
        k_bdry: 3,
        ..TracingConfig::default()
    };
    expected += loss::oracle::loss_oracle(&prob, &label, &c).unwrap().total;
    let got = tape.scalar(l.total);
    assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
}

#[test]
fn serialization_round_trips_bit_exactly() {
    for mode in [FusionMode::Fixed, FusionMode::CoFusion] {
        let mut s = ModelState::init(arch(3, mode), 9).unwrap();
        s.epoch = 17;
        let mut rng = Rng::new(10);
        for m in &mut s.momentum {
            m.weights.data_mut().iter_mut().for_each(|v| *v = rng.standard_normal());
        }
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..8], b"CATSMDL1");
        let back = ModelState::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        s.save(&path).unwrap();
        assert_eq!(ModelState::load(&path).unwrap(), s);
    }
}

#[test]
fn init_is_seeded_and_biases_are_zero() {
    let a = ModelState::init(arch(3, FusionMode::CoFusion), 1).unwrap();
    let b = ModelState::init(arch(3, FusionMode::CoFusion), 1).unwrap();
    let c = ModelState::init(arch(3, FusionMode::CoFusion), 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for k in a.kernels() {
        assert!(k.bias.iter().all(|b| b.data().iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn full_network_loss_matches_finite_differences() {
    for seed in 0..20u64 {
        let mode = if seed % 2 == 0 { FusionMode::CoFusion } else { FusionMode::Fixed };
        let mut a = arch(2, mode);
        a.base_channels = 2;
        a.convs_per_stage = 1;
        a.cofusion_hidden = 2;
        let state = ModelState::init_with_std(a, 100 + seed, 0.2).unwrap();
        let mut rng = Rng::new(200 + seed);
        let img = image(&mut rng, 8, 8);
        let label = line_label(8, 8, 1 + rng.index(6));
        let cfg = LossConfig {
            k_bdry: 3,
            delta: 0.0,
            ..LossConfig::default()
        };
        let sides = cfg.side_configs(2).unwrap();
        let fin = cfg.final_config().unwrap();
        let r = gradcheck::check(
            &state.tensors(),
            |t, n: &[Node]| {
                let m = state.bind_nodes(n)?;
                let out = net::forward(t, &img, &m)?;
                Ok(net::total_loss(t, &out, &label, &sides, &fin)?.total)
            },
            CheckOptions::default(),
        )
        .unwrap();
        assert!(r.passes(1e-5), "seed {seed} ({mode}): {r:?}");
    }
}
