use cats_edge::autodiff::{BoundKernel, Node, Tape};
use cats_edge::cofusion::{self, BoundCoFusion, CoFusionParams, SidePack};
use cats_edge::gradcheck::{self, CheckOptions};
use cats_edge::loss::{self, EdgeLabel, TracingConfig};
use cats_edge::rng::Rng;
use cats_edge::Grid;

fn random_sides(rng: &mut Rng, h: usize, w: usize, l: usize, scale: f64) -> Vec<Grid> {
    (0..l)
        .map(|_| Grid::from_fn(h, w, 1, |_, _, _| rng.uniform_range(-scale, scale)))
        .collect()
}

fn pack(tape: &Tape, sides: &[Grid]) -> SidePack {
    let nodes = sides.iter().map(|g| tape.constant(g.clone())).collect();
    SidePack::new(tape, nodes).unwrap()
}

#[test]
fn zero_parameters_average_the_sides() {
    let mut rng = Rng::new(1);
    let sides = random_sides(&mut rng, 6, 5, 3, 4.0);
    let tape = Tape::new();
    let p = pack(&tape, &sides);
    let params = CoFusionParams::zeros(3, 8).unwrap().bind(&tape);
    let out = cofusion::cofusion_forward(&tape, &p, &params).unwrap();
    let w = tape.value(out.weights.unwrap()).clone();
    assert!(w.data().iter().all(|&v| v == 1.0 / 3.0));
    let fused = tape.value(out.logit).clone();
    let fixed = cofusion::fixed_weight_fusion(&tape, &p, &[1.0 / 3.0; 3]).unwrap();
    let fixed = tape.value(fixed).clone();
    for y in 0..6 {
        for x in 0..5 {
            let mean = (sides[0].at(y, x) + sides[1].at(y, x) + sides[2].at(y, x)) / 3.0;
            assert!((fused.at(y, x) - mean).abs() < 1e-12);
            assert!((fixed.at(y, x) - fused.at(y, x)).abs() < 1e-12);
        }
    }
}

#[test]
fn hand_set_scores_give_one_third_two_thirds() {
    let mut rng = Rng::new(2);
    let sides = random_sides(&mut rng, 4, 4, 2, 3.0);
    let mut params = CoFusionParams::zeros(2, 4).unwrap();
    params.conv3.bias = Some(Grid::from_vec(1, 1, 2, vec![0.0, std::f64::consts::LN_2]).unwrap());
    let tape = Tape::new();
    let p = pack(&tape, &sides);
    let out = cofusion::cofusion_forward(&tape, &p, &params.bind(&tape)).unwrap();
    let w = tape.value(out.weights.unwrap()).clone();
    let fused = tape.value(out.logit).clone();
    for y in 0..4 {
        for x in 0..4 {
            assert!((w.get(0, y, x) - 1.0 / 3.0).abs() < 1e-12);
            assert!((w.get(1, y, x) - 2.0 / 3.0).abs() < 1e-12);
            let expected = (sides[0].at(y, x) + 2.0 * sides[1].at(y, x)) / 3.0;
            assert!((fused.at(y, x) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn single_side_passes_through() {
    let mut rng = Rng::new(3);
    let sides = random_sides(&mut rng, 5, 7, 1, 5.0);
    let params = CoFusionParams::gaussian(1, 4, 0.5, &mut rng).unwrap();
    let tape = Tape::new();
    let p = pack(&tape, &sides);
    let out = cofusion::cofusion_forward(&tape, &p, &params.bind(&tape)).unwrap();
    assert!(tape.value(out.weights.unwrap()).data().iter().all(|&v| v == 1.0));
    assert_eq!(*tape.value(out.logit), sides[0]);
}

#[test]
fn weights_are_normalized_and_fusion_is_convex() {
    for seed in 0..100u64 {
        let mut rng = Rng::new(100 + seed);
        let l = 1 + rng.index(4);
        let (h, w) = (2 + rng.index(9), 2 + rng.index(9));
        let sides = random_sides(&mut rng, h, w, l, 10.0);
        let params = CoFusionParams::gaussian(l, 6, 1.0, &mut rng).unwrap();
        let tape = Tape::new();
        let p = pack(&tape, &sides);
        let out = cofusion::cofusion_forward(&tape, &p, &params.bind(&tape)).unwrap();
        let wts = tape.value(out.weights.unwrap()).clone();
        let fused = tape.value(out.logit).clone();
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (0..l).map(|c| wts.get(c, y, x)).sum();
                assert!((s - 1.0).abs() < 1e-9, "seed {seed}: weights sum {s}");
                let lo = sides.iter().map(|g| g.at(y, x)).fold(f64::INFINITY, f64::min);
                let hi = sides.iter().map(|g| g.at(y, x)).fold(f64::NEG_INFINITY, f64::max);
                let f = fused.at(y, x);
                // a convex combination may overshoot the extremes by rounding only
                let slack = 1e-12 * hi.abs().max(lo.abs());
                assert!(f >= lo - slack && f <= hi + slack, "seed {seed}: {f} outside [{lo}, {hi}]");
            }
        }
    }
}

#[test]
fn weights_ignore_per_pixel_score_shifts() {
    let mut rng = Rng::new(4);
    let scores = Grid::from_fn(5, 5, 3, |_, _, _| rng.uniform_range(-3.0, 3.0));
    let shift = Grid::from_fn(5, 5, 1, |_, _, _| rng.uniform_range(-50.0, 50.0));
    let shifted = Grid::from_fn(5, 5, 3, |c, y, x| scores.get(c, y, x) + shift.at(y, x));
    let tape = Tape::new();
    let a = tape.channel_softmax(tape.constant(scores));
    let b = tape.channel_softmax(tape.constant(shifted));
    assert!(tape.value(a).max_abs_diff(&tape.value(b)) < 1e-12);
}

fn bound(n: &[Node], cout: [usize; 3]) -> BoundCoFusion {
    let k = |i: usize| BoundKernel {
        weight: n[1 + 2 * i],
        bias: Some(n[2 + 2 * i]),
        cout: cout[i],
    };
    BoundCoFusion {
        conv1: k(0),
        conv2: k(1),
        conv3: k(2),
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(700 + seed);
        let (l, hidden) = (3, 4);
        let sides = Grid::from_fn(8, 8, l, |_, _, _| rng.uniform_range(-2.0, 2.0));
        let params = CoFusionParams::gaussian(l, hidden, 0.2, &mut rng).unwrap();
        let mut inputs = vec![sides];
        for k in [&params.conv1, &params.conv2, &params.conv3] {
            inputs.push(k.weights.clone());
            inputs.push(Grid::from_fn(1, 1, k.cout, |_, _, _| rng.uniform_range(-0.2, 0.2)));
        }
        let mut c = Grid::zeros(8, 8, 1);
        for x in 0..8 {
            c.set(0, 3, x, 1.0);
        }
        let label = EdgeLabel::derive(&c, 0.0, 3).unwrap();
        let cfg = TracingConfig {
            k_bdry: 3,
            ..TracingConfig::default()
        };
        let r = gradcheck::check(
            &inputs,
            |t, n| {
                let planes: Vec<Node> = (0..l)
                    .map(|c| {
                        let one_hot = Grid::from_fn(1, 1, l, |cc, _, _| f64::from(u8::from(cc == c)));
                        t.conv2d(n[0], t.constant(one_hot), None, 1, true)
                    })
                    .collect::<cats_edge::Result<_>>()?;
                let p = SidePack::new(t, planes)?;
                let out = cofusion::cofusion_forward(t, &p, &bound(n, [hidden, hidden, l]))?;
                let prob = t.sigmoid(out.logit);
                Ok(loss::tracing_loss(t, prob, &label, &cfg)?.total)
            },
            CheckOptions::default(),
        )
        .unwrap();
        assert!(r.passes(1e-5), "seed {seed}: {r:?}");
    }
}
