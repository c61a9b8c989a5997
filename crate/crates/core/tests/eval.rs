use cats_edge::eval::postprocess::{non_max_suppress, postprocess, smooth, zhang_suen};
use cats_edge::eval::{self, correspond, match_radius, Counts, EvalConfig, Protocol, TOLERANCE_WIDE};
use cats_edge::loss::EdgeLabel;
use cats_edge::par::Execution;
use cats_edge::rng::Rng;
use cats_edge::synth::{self, SynthSpec};
use cats_edge::Grid;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use proptest::prelude::*;

type Px = (usize, usize);

fn within(a: Px, b: Px, r: usize) -> bool {
    let dy = a.0 as i64 - b.0 as i64;
    let dx = a.1 as i64 - b.1 as i64;
    dy * dy + dx * dx <= (r * r) as i64
}

fn random_set(rng: &mut Rng, n: usize, h: usize, w: usize) -> Vec<Px> {
    let mut cells: Vec<Px> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    rng.shuffle(&mut cells);
    cells.truncate(n);
    cells
}

/// Largest matching by trying every assignment of each prediction.
fn exhaustive(pred: &[Px], gt: &[Px], r: usize, used: &mut Vec<bool>) -> usize {
    let Some((&p, rest)) = pred.split_first() else {
        return 0;
    };
    let mut best = exhaustive(rest, gt, r, used);
    for (j, &g) in gt.iter().enumerate() {
        if !used[j] && within(p, g, r) {
            used[j] = true;
            best = best.max(1 + exhaustive(rest, gt, r, used));
            used[j] = false;
        }
    }
    best
}

/// Maximum-weight assignment over 0/1 feasibility weights.
fn hungarian(pred: &[Px], gt: &[Px], r: usize) -> usize {
    if pred.is_empty() || gt.is_empty() {
        return 0;
    }
    let n = pred.len().max(gt.len());
    let weights = Matrix::from_fn(n, n, |(i, j)| {
        i64::from(i < pred.len() && j < gt.len() && within(pred[i], gt[j], r))
    });
    kuhn_munkres(&weights).0 as usize
}

#[test]
fn matching_agrees_with_exhaustive_oracle() {
    let mut rng = Rng::new(1);
    for _ in 0..2000 {
        let (np, ng) = (rng.index(9), rng.index(9));
        let (h, w) = (2 + rng.index(6), 2 + rng.index(6));
        let pred = random_set(&mut rng, np.min(h * w), h, w);
        let gt = random_set(&mut rng, ng.min(h * w), h, w);
        let r = 1 + rng.index(3);
        let c = correspond(&pred, &gt, r);
        let want = exhaustive(&pred, &gt, r, &mut vec![false; gt.len()]);
        assert_eq!(c.counts.true_pos, want, "pred {pred:?} gt {gt:?} r {r}");
        assert_eq!(c.counts.false_pos, pred.len() - want);
        assert_eq!(c.counts.false_neg, gt.len() - want);
    }
}

#[test]
fn matching_agrees_with_hungarian_oracle() {
    let mut rng = Rng::new(2);
    for _ in 0..200 {
        let n = 10 + rng.index(40);
        let pred = random_set(&mut rng, n, 12, 12);
        let n = 10 + rng.index(40);
        let gt = random_set(&mut rng, n, 12, 12);
        let r = 1 + rng.index(2);
        let c = correspond(&pred, &gt, r);
        assert_eq!(c.counts.true_pos, hungarian(&pred, &gt, r));
    }
}

#[test]
fn matching_is_one_to_one_and_within_radius() {
    let mut rng = Rng::new(3);
    for _ in 0..200 {
        let (np, ng) = (rng.index(60), rng.index(60));
        let pred = random_set(&mut rng, np, 12, 12);
        let gt = random_set(&mut rng, ng, 12, 12);
        let c = correspond(&pred, &gt, 2);
        let mut seen_p = vec![false; pred.len()];
        let mut seen_g = vec![false; gt.len()];
        for &(i, j) in &c.pairs {
            assert!(!seen_p[i] && !seen_g[j]);
            seen_p[i] = true;
            seen_g[j] = true;
            assert!(within(pred[i], gt[j], 2));
        }
        assert_eq!(c.pairs.len(), c.counts.true_pos);
    }
}

#[test]
fn identical_and_shifted_sets() {
    let gt: Vec<Px> = (2..10).map(|x| (5, x)).collect();
    assert_eq!(correspond(&gt, &gt, 1).counts, Counts::new(8, 0, 0));
    let shifted: Vec<Px> = gt.iter().map(|&(y, x)| (y + 1, x + 1)).collect();
    let c = correspond(&shifted, &gt, 2).counts;
    assert_eq!(c, Counts::new(8, 0, 0));
    assert_eq!(c.f_measure(), 1.0);
    let far: Vec<Px> = gt.iter().map(|&(y, x)| (y + 3, x)).collect();
    let c = correspond(&far, &gt, 2).counts;
    assert_eq!(c, Counts::new(0, 8, 8));
    assert_eq!((c.precision(), c.recall(), c.f_measure()), (0.0, 0.0, 0.0));
}

fn px_set() -> impl Strategy<Value = Vec<Px>> {
    proptest::collection::btree_set((0usize..10, 0usize..10), 0..30).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn swapping_sides_swaps_errors(pred in px_set(), gt in px_set(), r in 1usize..4) {
        let a = correspond(&pred, &gt, r).counts;
        let b = correspond(&gt, &pred, r).counts;
        prop_assert_eq!(a.true_pos, b.true_pos);
        prop_assert_eq!(a.false_pos, b.false_neg);
        prop_assert_eq!(a.false_neg, b.false_pos);
    }

    #[test]
    fn larger_radius_never_loses_matches(pred in px_set(), gt in px_set(), r in 1usize..4) {
        let small = correspond(&pred, &gt, r).counts.true_pos;
        let large = correspond(&pred, &gt, r + 1).counts.true_pos;
        prop_assert!(large >= small);
    }
}

#[test]
fn hand_built_counts_give_ods_six_sevenths_and_ois_one() {
    let per_image = vec![
        vec![Counts::new(2, 0, 0), Counts::new(1, 0, 1)],
        vec![Counts::new(1, 1, 1), Counts::new(2, 0, 0)],
    ];
    let r = eval::summarize(vec![0.3, 0.6], per_image).unwrap();
    assert_eq!(r.totals, vec![Counts::new(3, 1, 1), Counts::new(3, 0, 1)]);
    assert_eq!((r.curve[0].precision, r.curve[0].recall, r.curve[0].f), (0.75, 0.75, 0.75));
    assert_eq!(r.ods.threshold, 0.6);
    assert_eq!((r.ods.precision, r.ods.recall), (1.0, 0.75));
    assert_eq!(r.ods.f, 6.0 / 7.0);
    assert_eq!(r.ois_choice, vec![0, 1]);
    assert_eq!((r.ois.precision, r.ois.recall, r.ois.f), (1.0, 1.0, 1.0));
}

#[test]
fn tolerance_sets_the_radius() {
    assert_eq!(match_radius(eval::TOLERANCE_DEFAULT, 64, 64), 1);
    assert_eq!(match_radius(TOLERANCE_WIDE, 64, 64), 1);
    assert_eq!(match_radius(TOLERANCE_WIDE, 481, 321), 6);
    assert_eq!(match_radius(eval::TOLERANCE_DEFAULT, 481, 321), 4);
    let cfg = EvalConfig {
        tolerance: TOLERANCE_WIDE,
        ..EvalConfig::default()
    };
    assert!(cfg.validate().is_ok());
}

fn label_of(mask: &Grid) -> EdgeLabel {
    EdgeLabel::derive(mask, 0.0, 1).unwrap()
}

/// Thin outlines of the synthetic shapes as consensus masks.
fn thin_masks(n: usize, size: usize, seed: u64) -> Vec<Grid> {
    let spec = SynthSpec {
        num_images: n,
        image_size: size,
        annotators: 1,
        annotator_jitter: 0,
        seed,
        ..SynthSpec::default()
    };
    synth::generate(&spec).unwrap().into_iter().map(|it| it.edges).collect()
}

#[test]
fn perfect_binary_prediction_scores_one() {
    let gt = Grid::from_fn(12, 16, 1, |_, y, x| f64::from(u8::from(y == 4 || x == 9)));
    for protocol in [Protocol::Crisp, Protocol::Standard] {
        let cfg = EvalConfig {
            protocol,
            ..EvalConfig::default()
        };
        let r = eval::evaluate(&[gt.clone()], &[label_of(&gt)], &cfg, Execution::Sequential).unwrap();
        assert!(r.curve.iter().all(|p| p.f == 1.0), "{protocol}");
        assert_eq!((r.ods.f, r.ois.f), (1.0, 1.0));
    }
    // Jittered, possibly thick positives still match exactly without thinning.
    let items = synth::generate(&SynthSpec {
        num_images: 5,
        image_size: 32,
        ..SynthSpec::default()
    })
    .unwrap();
    let labels: Vec<EdgeLabel> = items.iter().map(|it| EdgeLabel::derive(&it.consensus, 0.3, 1).unwrap()).collect();
    let preds: Vec<Grid> = labels.iter().map(|l| l.positive_mask().clone()).collect();
    let cfg = EvalConfig {
        protocol: Protocol::Crisp,
        ..EvalConfig::default()
    };
    let r = eval::evaluate(&preds, &labels, &cfg, Execution::Sequential).unwrap();
    assert_eq!((r.ods.f, r.ois.f), (1.0, 1.0));
}

#[test]
fn blurred_maps_lose_more_under_the_crisp_protocol() {
    let masks = thin_masks(8, 48, 5);
    let labels: Vec<EdgeLabel> = masks.iter().map(label_of).collect();
    let preds: Vec<Grid> = masks.iter().map(|m| smooth(m, 3.0).map(|v| (3.0 * v).min(1.0))).collect();
    let run = |protocol| {
        let cfg = EvalConfig {
            protocol,
            ..EvalConfig::default()
        };
        eval::evaluate(&preds, &labels, &cfg, Execution::Sequential).unwrap()
    };
    let (crisp, standard) = (run(Protocol::Crisp), run(Protocol::Standard));
    assert!(crisp.ods.f < standard.ods.f, "crisp {} standard {}", crisp.ods.f, standard.ods.f);
}

#[test]
fn ois_dominates_ods_on_noisy_predictions() {
    let masks = thin_masks(10, 40, 6);
    let labels: Vec<EdgeLabel> = masks.iter().map(label_of).collect();
    let mut rng = Rng::new(7);
    let preds: Vec<Grid> = masks
        .iter()
        .map(|m| {
            let gain = rng.uniform_range(0.3, 1.0);
            let noise: Vec<f64> = (0..m.len()).map(|_| 0.2 * rng.uniform()).collect();
            let s = smooth(m, 1.0);
            Grid::from_fn(m.height(), m.width(), 1, |_, y, x| {
                (gain * 2.0 * s.at(y, x) + noise[y * m.width() + x]).min(1.0)
            })
        })
        .collect();
    for protocol in [Protocol::Crisp, Protocol::Standard] {
        let cfg = EvalConfig {
            protocol,
            ..EvalConfig::default()
        };
        let r = eval::evaluate(&preds, &labels, &cfg, Execution::Sequential).unwrap();
        assert!(r.ois.f >= r.ods.f, "{protocol}: OIS {} < ODS {}", r.ois.f, r.ods.f);
        let par = eval::evaluate(&preds, &labels, &cfg, Execution::Parallel).unwrap();
        assert_eq!(format!("{r:?}"), format!("{par:?}"));
    }
}

#[test]
fn evaluate_rejects_bad_inputs() {
    let g = Grid::zeros(8, 8, 1);
    let l = label_of(&g);
    let cfg = EvalConfig::default();
    assert!(eval::evaluate(&[], &[], &cfg, Execution::Sequential).is_err());
    assert!(eval::evaluate(&[g.clone()], &[], &cfg, Execution::Sequential).is_err());
    assert!(eval::evaluate(&[Grid::zeros(8, 9, 1)], &[l], &cfg, Execution::Sequential).is_err());
}

#[test]
fn empty_prediction_and_ground_truth() {
    let g = Grid::zeros(8, 8, 1);
    let r = eval::evaluate(&[g.clone()], &[label_of(&g)], &EvalConfig::default(), Execution::Sequential).unwrap();
    assert_eq!(r.totals[0], Counts::new(0, 0, 0));
    assert_eq!((r.ods.precision, r.ods.recall), (1.0, 1.0));
}

#[test]
fn all_zero_map_stays_zero() {
    let z = Grid::zeros(9, 9, 1);
    assert_eq!(postprocess(&z, 1.0), z);
}

#[test]
fn one_pixel_ridge_is_kept() {
    let (row, x0, x1) = (4, 2, 12);
    let g = Grid::from_fn(9, 15, 1, |_, y, x| if y == row && (x0..=x1).contains(&x) { 0.8 } else { 0.0 });
    let out = postprocess(&g, 1.0);
    let kept: Vec<usize> = (0..15).filter(|&x| out.at(row, x) > 0.0).collect();
    assert!(kept.iter().all(|&x| out.at(row, x) == 0.8));
    assert_eq!(out.data().iter().filter(|&&v| v > 0.0).count(), kept.len());
    let (lo, hi) = (kept[0], *kept.last().unwrap());
    assert!(lo <= x0 + 1 && hi + 1 >= x1, "{kept:?}");
    assert_eq!(hi - lo + 1, kept.len(), "no gaps");
}

#[test]
fn peaked_plateau_keeps_only_its_centre_column() {
    // 7×7, columns 2..=4 form a plateau of height 0.5 / 1.0 / 0.5.
    let g = Grid::from_fn(7, 7, 1, |_, _, x| match x {
        2 | 4 => 0.5,
        3 => 1.0,
        _ => 0.0,
    });
    let nms = non_max_suppress(&g, 1.0);
    let out = postprocess(&g, 1.0);
    for y in 0..7 {
        for x in 0..7 {
            let want = if x == 3 { 1.0 } else { 0.0 };
            assert_eq!(nms.at(y, x), want, "nms ({y}, {x})");
            assert_eq!(out.at(y, x), want, "out ({y}, {x})");
        }
    }
}

#[test]
fn two_pixel_plateau_keeps_the_first_row() {
    let g = Grid::from_fn(8, 12, 1, |_, y, x| if (3..=4).contains(&y) && (1..11).contains(&x) { 0.7 } else { 0.0 });
    let nms = non_max_suppress(&g, 1.0);
    for x in 3..9 {
        assert_eq!((nms.at(3, x), nms.at(4, x)), (0.7, 0.0), "column {x}");
    }
}

fn components(mask: &[bool], h: usize, w: usize) -> Vec<usize> {
    // Label 8-connected components; 0 = background.
    let mut label = vec![0usize; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        let mut stack = vec![start];
        label[start] = next;
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    if mask[j] && label[j] == 0 {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    label
}

#[test]
fn thinning_is_thin_and_keeps_components_connected() {
    let mut rng = Rng::new(8);
    let items = synth::generate(&SynthSpec {
        num_images: 30,
        image_size: 48,
        ..SynthSpec::default()
    })
    .unwrap();
    for it in &items {
        // Realistic supports: thresholded blurred outlines and raw NMS output.
        let sigma = rng.uniform_range(0.5, 1.5);
        let t = rng.uniform_range(0.1, 0.4);
        let blurred = smooth(&it.consensus, sigma);
        for mask in [
            blurred.data().iter().map(|&v| v > t).collect::<Vec<bool>>(),
            non_max_suppress(&blurred, 1.0).data().iter().map(|&v| v > 0.02).collect(),
        ] {
            let (h, w) = (48, 48);
            let out = zhang_suen(&mask, h, w);
            let before = components(&mask, h, w);
            let after = components(&out, h, w);
            for i in 0..h * w {
                assert!(!out[i] || mask[i], "thinning only removes pixels");
            }
            let n_before = before.iter().copied().max().unwrap_or(0);
            for c in 1..=n_before {
                let kept: std::collections::BTreeSet<usize> =
                    (0..h * w).filter(|&i| before[i] == c && out[i]).map(|i| after[i]).collect();
                assert_eq!(kept.len(), 1, "component {c} split into {kept:?} or vanished");
            }
            for y in 0..h - 1 {
                for x in 0..w - 1 {
                    let block = [out[y * w + x], out[y * w + x + 1], out[(y + 1) * w + x], out[(y + 1) * w + x + 1]];
                    assert!(!block.iter().all(|&b| b), "2×2 block at ({y}, {x})");
                }
            }
        }
    }
}
