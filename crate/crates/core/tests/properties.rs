use mlmc_learn::model::call_payoff;
use mlmc_learn::nn::{loss_and_grad, Batch};
use mlmc_learn::oracle::{bs_expected_payoff, measure_error};
use mlmc_learn::par;
use mlmc_learn::rng::{sample_uniform_box, seed_stream, stream_id, Phase};
use mlmc_learn::sde::{coarse_increment, exact_gbm_terminal, simulate_payoff_path};
use mlmc_learn::stats::sample_stats;
use mlmc_learn::trainer::{train_single_level, DataMode, TrainConfig};
use mlmc_learn::*;
use proptest::prelude::*;

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        structure: NetworkStructure::new(5, vec![8, 8]).unwrap(),
        schedule: LrSchedule::standard(),
        steps: 25,
        batch_size: 600,
        level_spec: LevelSpec::dyadic(3),
        bx: TrainingBox::standard(),
        seed,
        data_mode: DataMode::SinglePath,
        optimizer: Optimizer::adam(),
    }
}

#[test]
fn training_is_independent_of_worker_count() {
    let cfg = small_config(21);
    let one = par::with_threads(Some(1), || train_single_level(&cfg).unwrap());
    let four = par::with_threads(Some(4), || train_single_level(&cfg).unwrap());
    assert_eq!(one.net.weights, four.net.weights);
    assert_eq!(one.log, four.log);
}

#[test]
fn error_measurement_is_independent_of_worker_count() {
    let out = train_single_level(&small_config(5)).unwrap();
    let net = &out.net;
    let stream = seed_stream(5, stream_id(Phase::Evaluate, 0, 0, 0));
    let run = |t| par::with_threads(Some(t), || measure_error(|y: &ParamVector| net.eval(y), &net.bx, 20_000, stream).unwrap());
    let (a, b) = (run(1), run(3));
    assert_eq!(a, b);
    assert!(a.l1 <= a.linf && a.linf.is_finite());
}

#[test]
fn oracle_matches_exact_monte_carlo() {
    // 1e7 exact-GBM draws at 20 random points of the standard box.
    let bx = TrainingBox::standard();
    let mut pick = seed_stream(77, 0);
    for p in 0..20u64 {
        let y = sample_uniform_box(&mut pick, &bx).unwrap();
        let base = seed_stream(77, stream_id(Phase::Study, 9, 0, p));
        let st = sample_stats(10_000_000, |i| Ok(call_payoff(exact_gbm_terminal(&y, &mut base.for_sample(i)), y.strike))).unwrap();
        let exact = bs_expected_payoff(&y).unwrap();
        assert!((st.mean - exact).abs() < 4.0 * st.std_error(), "{y:?}: {} vs {exact} (se {})", st.mean, st.std_error());
    }
}

#[test]
fn single_path_targets_are_unbiased() {
    // At h = 1/64 the weak error (about 0.007) is 0.6 standard errors.
    let y = ParamVector::reference();
    let spec = LevelSpec::dyadic(6);
    let base = seed_stream(8, stream_id(Phase::Study, 9, 6, 0));
    let st = sample_stats(1_000_000, |i| simulate_payoff_path(&y, &spec, &mut base.for_sample(i))).unwrap();
    let exact = bs_expected_payoff(&y).unwrap();
    assert!((st.mean - exact).abs() < 4.0 * st.std_error(), "{} vs {exact}", st.mean);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_permutation_invariant(seed in 0u64..1000, n in 2usize..40, rot in 1usize..39) {
        let s = NetworkStructure::new(5, vec![4, 3]).unwrap();
        let theta = mlmc_learn::nn::init_weights(&s, &mut seed_stream(seed, 1));
        let mut st = seed_stream(seed, 2);
        let pairs: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|_| ((0..5).map(|_| st.next_uniform()).collect(), 10.0 * st.next_uniform()))
            .collect();
        let mut rotated = pairs.clone();
        rotated.rotate_left(rot % n);
        let (la, ga) = loss_and_grad(&s, &theta, &Batch::from_pairs(&pairs));
        let (lb, gb) = loss_and_grad(&s, &theta, &Batch::from_pairs(&rotated));
        prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0));
        for (a, b) in ga.iter().zip(&gb) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn box_samples_stay_inside(seed in any::<u64>(), lo in -5.0..5.0f64, w in 0.0..3.0f64) {
        let bx = TrainingBox::new([(lo, lo + w), (0.1, 0.2), (80.0, 120.0), (0.9, 1.0), (109.0, 109.0 + w)]).unwrap();
        let mut s = seed_stream(seed, 0);
        for _ in 0..32 {
            let y = sample_uniform_box(&mut s, &bx).unwrap();
            prop_assert!(bx.contains(&y));
            let u = bx.to_unit(&y);
            prop_assert!(u.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn coupling_sum_is_exact(incs in proptest::collection::vec(-1.0..1.0f64, 2..=2)) {
        prop_assert_eq!(coarse_increment(&incs), incs[0] + incs[1]);
    }

    #[test]
    fn oracle_bounds_hold(seed in any::<u64>()) {
        let bx = TrainingBox::standard();
        let y = sample_uniform_box(&mut seed_stream(seed, 3), &bx).unwrap();
        let p = bs_expected_payoff(&y).unwrap();
        prop_assert!(p >= 0.0 && p <= y.s0 * (y.mu * y.maturity).exp());
    }
}
