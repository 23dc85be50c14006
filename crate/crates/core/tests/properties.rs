use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarmtune_core::sso::update_solution;
use swarmtune_core::{
    baseline_vector, layer_output_size, parameter_count, propagate_shapes, run_experiment_with,
    Dataset, EvaluatorSpec, ExperimentPlan, HyperparamVector, ImageShape, RunArchive, SearchSpace,
    SsoConfig, TrainSpec,
};

const SHAPES: [(i64, i64, i64); 3] = [(28, 28, 1), (32, 32, 3), (20, 9, 2)];

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(10_000))]

    #[test]
    fn identity_kernel(i in 1i64..4096) {
        prop_assert_eq!(layer_output_size(i, 1, 0, 1), i);
    }

    #[test]
    fn output_size_monotone(i in 1i64..512, k in 1i64..64, p in 0i64..16, s in 1i64..16) {
        // the kernel must fit the padded input
        prop_assume!(k <= i + 2 * p);
        let o = layer_output_size(i, k, p, s);
        prop_assert!(layer_output_size(i, k + 1, p, s) <= o);
        prop_assert!(layer_output_size(i, k, p, s + 1) <= o);
        prop_assert!(layer_output_size(i + 1, k, p, s) >= o);
        prop_assert!(layer_output_size(i, k, p + 1, s) >= o);
    }
}

proptest! {
    #![proptest_config(cases(512))]

    #[test]
    fn batch_size_never_changes_param_count(seed in any::<u64>(), bs in 10i64..=30) {
        let input = ImageShape::new(28, 28, 1).unwrap();
        let mut v = SearchSpace::new(input).sample_vector(&mut ChaCha8Rng::seed_from_u64(seed));
        let before = parameter_count(&v, &input, 10).unwrap();
        v.set(16, bs);
        prop_assert_eq!(parameter_count(&v, &input, 10).unwrap(), before);
    }

    #[test]
    fn repair_is_idempotent_and_feasible(values in prop::array::uniform16(-50i64..200)) {
        let space = SearchSpace::new(ImageShape::new(32, 32, 3).unwrap());
        let once = space.repair_vector(&HyperparamVector::from_values(values));
        prop_assert!(space.is_feasible(&once), "{}", once);
        prop_assert_eq!(space.repair_vector(&once), once);
    }

    #[test]
    fn vector_text_round_trips(seed in any::<u64>()) {
        let v = SearchSpace::new(ImageShape::new(32, 32, 3).unwrap()).sample_vector(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(v.to_string().parse::<HyperparamVector>().unwrap(), v);
    }
}

#[test]
fn sampled_vectors_are_feasible() {
    for (w, h, c) in SHAPES {
        let input = ImageShape::new(w, h, c).unwrap();
        let space = SearchSpace::new(input);
        let mut rng = ChaCha8Rng::seed_from_u64(w as u64);
        for _ in 0..10_000 {
            let v = space.sample_vector(&mut rng);
            assert!(space.validate(&v).is_empty(), "{v} on {input}");
            let t = propagate_shapes(&v, &input).unwrap();
            assert!(t
                .stages()
                .iter()
                .all(|(_, s)| s.width_x >= 1 && s.height_y >= 1));
        }
    }
}

#[test]
fn updated_solutions_are_feasible() {
    let input = ImageShape::new(28, 28, 1).unwrap();
    let space = SearchSpace::new(input);
    let cfg = SsoConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cur = space.sample_vector(&mut rng);
    let mut pbest = space.sample_vector(&mut rng);
    let gbest = baseline_vector();
    for i in 0..10_000 {
        let (next, _) = update_solution(&mut rng, &cur, &pbest, &gbest, &space, &cfg);
        assert!(space.is_feasible(&next), "{next}");
        if i % 7 == 0 {
            pbest = next;
        }
        cur = next;
    }
}

fn small_archive(runs: u32) -> RunArchive {
    let cfg = SsoConfig {
        n_sol: 6,
        n_gen: 4,
        n_run: runs,
        seed: 5,
        ..SsoConfig::default()
    };
    let plan = ExperimentPlan::new(cfg, TrainSpec::new(Dataset::Cifar10));
    run_experiment_with(
        &plan,
        &EvaluatorSpec::ParamTarget {
            target: Some(80_000),
        },
    )
    .unwrap()
}

#[test]
fn archive_file_round_trip() {
    let a = small_archive(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.jsonl");
    a.write_jsonl(std::fs::File::create(&path).unwrap())
        .unwrap();
    let back = RunArchive::read_jsonl(std::io::BufReader::new(std::fs::File::open(&path).unwrap()))
        .unwrap();
    assert_eq!(back, a);
    assert_eq!(back.to_jsonl(), a.to_jsonl());
}

#[test]
fn summary_ignores_run_order() {
    let a = small_archive(5);
    let mut blocks: Vec<Vec<_>> = a
        .run_ids()
        .into_iter()
        .map(|r| a.entries.iter().filter(|e| e.run == r).cloned().collect())
        .collect();
    blocks.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let mut b = a.clone();
    b.entries = blocks.concat();
    assert_eq!(a.summary().unwrap(), b.summary().unwrap());
}
