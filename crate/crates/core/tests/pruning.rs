use kstar_core::data::{synth_dataset, SynthSpec};
use kstar_core::nn;
use kstar_core::optim::{self, Algorithm, OptimizerConfig, OptimizerState, ScheduleSpec};
use kstar_core::prune::{connection_sensitivity, prune_at_init, pruned_count, topk_mask, SaliencyVector};
use kstar_core::{Model, ModelSpec, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::topk_oracle;

#[test]
fn pruned_count_examples() {
    assert_eq!(pruned_count(0.0, 100), 0);
    assert_eq!(pruned_count(0.7, 10), 7);
    assert_eq!(pruned_count(0.29, 100), 29);
    assert_eq!(pruned_count(0.9, 1234), 1110);
    assert_eq!(pruned_count(0.5, 3), 1);
}

#[test]
fn four_parameter_saliency_matches_finite_differences() {
    // one input, two classes, no hidden layer: two weights and two biases
    let mut model = Model::build(&ModelSpec::mlp(1, &[], 2, 3)).unwrap();
    model.set_params(&[0.8, -0.3, 0.1, -0.2]).unwrap();
    let x = Tensor::new(vec![3, 1], vec![0.5, -1.0, 2.0]).unwrap();
    let y = [0usize, 1, 1];
    let sal = connection_sensitivity(&model, &x, &y).unwrap();

    let base = model.params().to_vec();
    let h = 1e-6;
    let mut scores = Vec::new();
    for j in 0..4 {
        let mut eval = |v: f64| {
            let mut p = base.clone();
            p[j] = v;
            model.set_params(&p).unwrap();
            let (logits, _) = nn::forward(&model, &x).unwrap();
            nn::loss_and_error(&logits, &y).unwrap().0
        };
        let g = (eval(base[j] + h) - eval(base[j] - h)) / (2.0 * h);
        scores.push((g * base[j]).abs());
    }
    let total: f64 = scores.iter().sum();
    for (s, o) in sal.values().iter().zip(&scores) {
        assert!((s - o / total).abs() < 1e-7, "{s} vs {}", o / total);
    }
    assert!((sal.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn topk_ties_go_to_lower_index() {
    let s = SaliencyVector::new(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
    assert_eq!(topk_mask(&s, 0.5).unwrap().bits(), &[true, true, false, false]);
    assert!(topk_mask(&s, 1.0).is_err());
    assert!(topk_mask(&s, -0.1).is_err());
}

#[test]
fn sparsity_is_exact_and_masks_survive_500_steps_of_each_algorithm() {
    let spec = SynthSpec {
        classes: 3,
        dims: 8,
        per_class: 100,
        separation: 3.0,
        conditioning: 1.0,
        clusters: 1,
    };
    let ds = synth_dataset(&spec, 5).unwrap();
    for alg in [Algorithm::Sgd, Algorithm::Momentum, Algorithm::Nesterov] {
        for s in [0.5, 0.7, 0.9] {
            let mut model = Model::build(&ModelSpec::mlp(8, &[16], 3, 2)).unwrap();
            let idx: Vec<usize> = (0..64).collect();
            let (x, y) = ds.batch(&idx);
            let mask = prune_at_init(&mut model, &x, &y, s).unwrap();
            let m = model.param_count();
            assert_eq!(mask.kept(), m - pruned_count(s, m));
            let before = mask.bits().to_vec();

            let config = OptimizerConfig {
                algorithm: alg,
                eta_bar: 0.05,
                momentum: if alg == Algorithm::Sgd { 0.0 } else { 0.9 },
                schedule: ScheduleSpec::linear_decay(500, 0.1),
            };
            let mut state = OptimizerState::new(m);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..500 {
                let batch: Vec<usize> = (0..16).map(|_| rng.random_range(0..ds.len())).collect();
                let (bx, by) = ds.batch(&batch);
                let (_, _, g) = nn::loss_and_gradient(&model, &bx, &by).unwrap();
                optim::step(&mut model, &g, &config, &mut state).unwrap();
            }
            assert_eq!(model.mask().bits(), &before[..]);
            for (w, &on) in model.params().iter().zip(&before) {
                if !on {
                    assert_eq!(*w, 0.0, "{alg:?} s={s}");
                }
            }
            assert!(state.velocity().iter().zip(&before).all(|(v, &on)| on || *v == 0.0));
        }
    }
}

#[test]
fn pruning_twice_is_rejected() {
    let mut model = Model::build(&ModelSpec::mlp(2, &[3], 2, 0)).unwrap();
    let x = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
    prune_at_init(&mut model, &x, &[0], 0.5).unwrap();
    assert!(prune_at_init(&mut model, &x, &[0], 0.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn topk_matches_brute_force_sort(
        m in 1usize..=10_000,
        sparsity in 0.0f64..0.999,
        seed in 0u64..1_000_000,
        levels in 1u32..50,
    ) {
        // quantised scores force plenty of ties
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mask = topk_mask(&SaliencyVector::new(scores.clone()).unwrap(), sparsity).unwrap();
        prop_assert_eq!(mask.bits(), &topk_oracle(&scores, sparsity)[..]);
        prop_assert_eq!(mask.len() - mask.kept(), pruned_count(sparsity, m));
    }

    #[test]
    fn kept_entries_dominate_pruned_entries(m in 2usize..500, sparsity in 0.0f64..0.99, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let mask = topk_mask(&SaliencyVector::new(scores.clone()).unwrap(), sparsity).unwrap();
        let min_kept = scores.iter().zip(mask.bits()).filter(|p| *p.1).map(|p| *p.0).fold(f64::INFINITY, f64::min);
        let max_pruned = scores.iter().zip(mask.bits()).filter(|p| !*p.1).map(|p| *p.0).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_kept >= max_pruned);
    }
}
