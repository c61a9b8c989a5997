use cats_edge::loss::dilate_box;
use cats_edge::par::Execution;
use cats_edge::pgm;
use cats_edge::rng::Rng;
use cats_edge::synth::{self, SynthSpec};
use cats_edge::Grid;
use proptest::prelude::*;

fn spec(n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        num_images: n,
        seed,
        ..SynthSpec::default()
    }
}

fn count(g: &Grid) -> usize {
    g.data().iter().filter(|&&v| v > 0.0).count()
}

#[test]
fn single_exact_annotator_reproduces_the_boundary() {
    let s = SynthSpec {
        annotators: 1,
        annotator_jitter: 0,
        ..spec(10, 4)
    };
    for it in synth::generate(&s).unwrap() {
        assert_eq!(it.consensus, it.edges);
    }
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let a = synth::generate_with(&spec(12, 7), Execution::Sequential).unwrap();
    let b = synth::generate_with(&spec(12, 7), Execution::Parallel).unwrap();
    let c = synth::generate(&spec(12, 8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    // Item i does not depend on how many items are requested.
    let short = synth::generate(&spec(5, 7)).unwrap();
    assert_eq!(&a[..5], &short[..]);
}

#[test]
fn labels_are_thin_sparse_and_banded() {
    let s = spec(60, 11);
    let j = s.annotator_jitter;
    let a = s.annotators as f64;
    let mut controversial = 0;
    for it in synth::generate(&s).unwrap() {
        let n = (s.image_size * s.image_size) as f64;
        let frac = count(&it.edges) as f64 / n;
        assert!(frac > 0.0 && frac < 0.25, "edge fraction {frac}");
        assert!(!synth::has_thick_block(&it.edges));
        let band = dilate_box(&it.edges, 2 * j + 1);
        for (i, &c) in it.consensus.data().iter().enumerate() {
            assert!((c * a - (c * a).round()).abs() < 1e-12, "consensus {c} not a multiple of 1/{a}");
            if c > 0.0 {
                assert!(band.data()[i] > 0.0, "consensus outside the jitter band");
            }
            if c > 0.0 && c <= 0.3 {
                controversial += 1;
            }
        }
        let (h, w, _) = it.edges.shape();
        for y in 0..h {
            for x in 0..w {
                let inside = (s.margin..h - s.margin).contains(&y) && (s.margin..w - s.margin).contains(&x);
                if !inside {
                    assert_eq!(it.edges.at(y, x), 0.0);
                }
            }
        }
        assert!(it.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(controversial > 0, "jittered annotators should leave a low-consensus band");
}

#[test]
fn invalid_specs_are_rejected() {
    for bad in [
        SynthSpec { image_size: 8, ..spec(1, 0) },
        SynthSpec { annotators: 0, ..spec(1, 0) },
        SynthSpec { shapes_min: 3, shapes_max: 2, ..spec(1, 0) },
        SynthSpec { kinds: vec![], ..spec(1, 0) },
    ] {
        assert!(synth::generate(&bad).is_err(), "{bad:?}");
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let s = spec(4, 5);
    let items = synth::generate(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    synth::write_dataset(dir.path(), &s, &items).unwrap();
    let (manifest, loaded) = synth::read_dataset(dir.path()).unwrap();
    let manifest = manifest.unwrap();
    assert_eq!(manifest.spec, s);
    assert_eq!(manifest.images, (0..4).map(|i| format!("images/{}", synth::item_name(i))).collect::<Vec<_>>());
    assert_eq!(loaded[3].name, "0003.pgm");
    assert_eq!(loaded.len(), 4);
    for (it, l) in items.iter().zip(&loaded) {
        assert_eq!(l.consensus, it.consensus, "consensus levels survive quantization");
        assert!(l.image.max_abs_diff(&it.image) <= 1.0 / 510.0 + 1e-15);
    }
}

proptest! {
    #[test]
    fn pgm_round_trip_error_is_bounded(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let mut rng = Rng::new(seed);
        let g = Grid::from_fn(h, w, 1, |_, _, _| rng.uniform());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        pgm::write_pgm(&g, &p).unwrap();
        let back = pgm::read_pgm(&p).unwrap();
        prop_assert_eq!(back.shape(), g.shape());
        prop_assert!(back.max_abs_diff(&g) <= 1.0 / 510.0 + 1e-15);
    }
}
