use approx::assert_relative_eq;
use cpt_core::baselines::energy::EnergyStatistic;
use cpt_core::baselines::lrt::lrt_on_features;
use cpt_core::classifiers::logistic::{loglik_at, penalized_loglik, penalized_score};
use cpt_core::classifiers::{fit_logistic, IrlsOptions, Knn};
use cpt_core::dataset::expand_covariates;
use cpt_core::perm::{binomial, exact_cpt_result, shuffle_labels};
use cpt_core::sim::sigma_rho;
use cpt_core::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = cpt_core::rng::stream(seed, &[]);
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn balanced_labels(l: usize, m: usize) -> Vec<u8> {
    (0..l + m).map(|i| u8::from(i < l)).collect()
}

fn dataset(x: DMatrix<f64>, t: Vec<u8>) -> Dataset {
    let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    Dataset::new(x, t, None, names).unwrap()
}

fn labels_strategy(n: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..=1, n).prop_filter("both classes", |t| t.contains(&0) && t.contains(&1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn irls_gradient_matches_central_differences(
        n in 4usize..=40,
        q in 1usize..=10,
        seed in any::<u64>(),
        ridge in 0.0f64..2.0,
    ) {
        let x = normal_matrix(n, q, seed);
        let mut rng = cpt_core::rng::stream(seed, &[1]);
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1u8)).collect();
        let w = DVector::from_fn(q + 1, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let g = penalized_score(&x, &y, &w, ridge);
        let h = 1e-5;
        for j in 0..=q {
            let mut up = w.clone();
            let mut down = w.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (penalized_loglik(&x, &y, &up, ridge) - penalized_loglik(&x, &y, &down, ridge)) / (2.0 * h);
            let rel = (fd - g[j]).abs() / g[j].abs().max(1.0);
            prop_assert!(rel < 1e-4, "coordinate {j}: fd {fd}, analytic {}", g[j]);
        }
    }

    #[test]
    fn csv_round_trip(
        values in proptest::collection::vec(-1e6f64..1e6, 12),
        t in labels_strategy(6),
    ) {
        let d = Dataset::new(
            DMatrix::from_column_slice(6, 2, &values),
            t,
            Some(vec!["a".into(), "a".into(), "b".into(), "b".into(), "c".into(), "c".into()]),
            vec!["u".into(), "v".into()],
        );
        // Blocks whose units all share one label are still valid datasets.
        let d = match d { Ok(d) => d, Err(_) => return Ok(()) };
        let mut buf = Vec::new();
        write_csv(&d, &mut buf, "treat", "blk").unwrap();
        let back = read_csv(buf.as_slice(), &LoadOptions::new("treat").with_blocks("blk")).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn design_expansion_commutes_with_row_permutation(seed in any::<u64>(), p in 1usize..5) {
        let x = normal_matrix(7, p, seed);
        let names: Vec<String> = (0..p).map(|j| format!("c{j}")).collect();
        let mut perm: Vec<usize> = (0..7).collect();
        perm.rotate_left((seed % 7) as usize);
        let permuted = x.select_rows(&perm);
        for kind in [DesignKind::MainEffects, DesignKind::TwoWay] {
            let a = expand_covariates(&x, &names, kind, true);
            let b = expand_covariates(&permuted, &names, kind, true);
            prop_assert_eq!(a.values.select_rows(&perm), b.values);
            prop_assert_eq!(a.feature_names, b.feature_names);
        }
    }

    #[test]
    fn knn_is_label_symmetric(seed in any::<u64>(), k in 1usize..6, t in labels_strategy(12)) {
        let x = normal_matrix(12, 3, seed);
        let flipped: Vec<u8> = t.iter().map(|v| 1 - v).collect();
        let a = Knn::fit(&x, &t, k);
        let b = Knn::fit(&x, &flipped, k);
        let probes = normal_matrix(20, 3, seed ^ 0xabc);
        for i in 0..20 {
            let row: Vec<f64> = probes.row(i).iter().copied().collect();
            // Even-k vote ties go to 0 under both labellings, so only odd k is symmetric.
            if k % 2 == 1 {
                prop_assert_eq!(a.predict(&row), 1 - b.predict(&row));
            }
        }
    }

    #[test]
    fn forest_training_accuracy_at_least_half(seed in any::<u64>(), t in labels_strategy(30)) {
        let d = dataset(normal_matrix(30, 3, seed), t);
        let forest: ClassifierSpec = "forest:trees=15".parse().unwrap();
        let s = stat_in_sample(&forest, &d, seed).unwrap();
        prop_assert!(s >= 0.5, "{s}");
    }

    #[test]
    fn nested_logistic_never_fits_better(seed in any::<u64>(), t in labels_strategy(30)) {
        let x = normal_matrix(30, 3, seed);
        let opts = IrlsOptions::with_ridge(1e-8);
        let full = fit_logistic(&x, &t, opts).unwrap();
        let sub = x.columns(0, 2).into_owned();
        let nested = fit_logistic(&sub, &t, opts).unwrap();
        prop_assert!(loglik_at(&x, &t, &full.weights) >= loglik_at(&sub, &t, &nested.weights) - 1e-6);
    }

    #[test]
    fn shuffles_preserve_counts(seed in any::<u64>(), t in labels_strategy(16)) {
        let groups: Vec<Vec<usize>> = (0..4).map(|b| (4 * b..4 * b + 4).collect()).collect();
        let mut rng = cpt_core::rng::stream(seed, &[]);
        let across = shuffle_labels(&t, None, PermuteMode::Across, &mut rng).unwrap();
        prop_assert_eq!(across.iter().filter(|&&v| v == 1).count(), t.iter().filter(|&&v| v == 1).count());
        let within = shuffle_labels(&t, Some(&groups), PermuteMode::Within, &mut rng).unwrap();
        for g in &groups {
            let count = |y: &[u8]| g.iter().filter(|&&i| y[i] == 1).count();
            prop_assert_eq!(count(&within), count(&t));
        }
    }

    #[test]
    fn energy_is_nonnegative_and_label_symmetric(seed in any::<u64>(), t in labels_strategy(14)) {
        let e = EnergyStatistic::new(&normal_matrix(14, 2, seed));
        let flipped: Vec<u8> = t.iter().map(|v| 1 - v).collect();
        let a = e.value(&t).unwrap();
        prop_assert!(a >= -1e-12);
        assert_relative_eq!(a, e.value(&flipped).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn p_values_lie_on_the_permutation_grid(seed in any::<u64>()) {
        let d = dataset(normal_matrix(16, 2, seed), balanced_labels(8, 8));
        let r = run_cpt(&d, &ClassifierSpec::logistic(DesignKind::MainEffects), &StatSpec::InSample, &PermutationPlan::new(39, seed)).unwrap();
        let k = r.p_value * 40.0;
        prop_assert!((k - k.round()).abs() < 1e-9 && (1.0..=40.0).contains(&k.round()));
        prop_assert!(r.null_draws.iter().chain([&r.observed]).all(|s| ((s * 16.0) - (s * 16.0).round()).abs() < 1e-9));
    }
}

fn hand_accuracy(x: &DMatrix<f64>, y: &[u8], held: [usize; 2]) -> f64 {
    let train: Vec<usize> = (0..y.len()).filter(|i| !held.contains(i)).collect();
    let xt = x.select_rows(&train);
    let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let fit = fit_logistic(&xt, &yt, IrlsOptions::with_ridge(1e-4 * train.len() as f64)).unwrap();
    let correct = held
        .iter()
        .filter(|&&i| cpt_core::classifiers::LogisticFit::classify_eta(fit.linear_predictor(x.row(i).iter().copied())) == y[i])
        .count();
    correct as f64 / 2.0
}

#[test]
fn exact_out_of_sample_matches_brute_force() {
    for seed in 0..5 {
        let x = normal_matrix(4, 1, seed);
        let y = vec![1, 1, 0, 0];
        let d = dataset(x.clone(), y.clone());
        let mut total = 0.0;
        for ht in [0, 1] {
            for hc in [2, 3] {
                total += hand_accuracy(&x, &y, [ht, hc]);
            }
        }
        let stat = StatSpec::OutOfSample {
            kappa: Some(1),
            partitions: Partitions::Exact,
        };
        let s = stat_out_sample(&ClassifierSpec::logistic(DesignKind::MainEffects), &d, &stat, 0).unwrap();
        assert_relative_eq!(s, total / 4.0, epsilon = 1e-12);
    }
}

#[test]
fn exact_partitions_agree_with_monte_carlo() {
    let d = dataset(normal_matrix(10, 2, 3), balanced_labels(5, 5));
    let spec = ClassifierSpec::logistic(DesignKind::MainEffects);
    let exact = StatSpec::OutOfSample {
        kappa: Some(2),
        partitions: Partitions::Exact,
    };
    let a = stat_out_sample(&spec, &d, &exact, 0).unwrap();
    let b = stat_out_sample(&spec, &d, &StatSpec::out_of_sample(Some(2), 2000), 0).unwrap();
    assert!((a - b).abs() <= 0.01, "exact {a}, monte carlo {b}");
}

#[test]
fn exact_partitions_ignore_within_group_row_order() {
    let x = normal_matrix(10, 2, 8);
    let d = dataset(x.clone(), balanced_labels(5, 5));
    let order = [3, 0, 4, 2, 1, 9, 7, 5, 8, 6];
    let e = dataset(x.select_rows(&order), balanced_labels(5, 5));
    let spec = ClassifierSpec::knn(3);
    let stat = StatSpec::OutOfSample {
        kappa: Some(2),
        partitions: Partitions::Exact,
    };
    assert_eq!(stat_out_sample(&spec, &d, &stat, 0).unwrap(), stat_out_sample(&spec, &e, &stat, 0).unwrap());
}

#[test]
fn one_nn_out_of_sample_is_half_under_the_null() {
    let stat = StatSpec::out_of_sample(Some(9), 3);
    let mean: f64 = (0..500)
        .map(|i| {
            let d = gen_mvn_dataset(0.0, 10, 10, 2, i).unwrap();
            stat_out_sample(&ClassifierSpec::knn(1), &d, &stat, i).unwrap()
        })
        .sum::<f64>()
        / 500.0;
    assert!((mean - 0.5).abs() <= 0.05, "{mean}");
}

#[test]
fn generator_covariance_matches_sigma() {
    let d = gen_mvn_dataset(0.4, 20_000, 10, 3, 17).unwrap();
    let x = d.covariates().rows(0, 20_000).into_owned();
    let cov = x.tr_mul(&x) / 20_000.0;
    assert!((cov - sigma_rho(0.4, 3)).norm() < 0.05);
}

#[test]
fn main_effects_lrt_is_roughly_uniform_under_the_null() {
    let p: Vec<f64> = (0..300)
        .map(|i| {
            let d = gen_mvn_dataset(0.0, 100, 100, 3, 1000 + i).unwrap();
            lrt_logistic(&d, DesignKind::MainEffects).unwrap().p_value
        })
        .collect();
    let reject = p.iter().filter(|&&v| v <= 0.05).count() as f64 / 300.0;
    let mean = p.iter().sum::<f64>() / 300.0;
    assert!(reject <= 0.088, "{reject}");
    assert!((mean - 0.5).abs() < 0.06, "{mean}");
}

#[test]
fn lrt_degrees_of_freedom_follow_retained_columns() {
    let x = normal_matrix(60, 2, 4);
    let mut with_dup = DMatrix::zeros(60, 3);
    with_dup.columns_mut(0, 2).copy_from(&x);
    with_dup.set_column(2, &(x.column(0) * 2.0 + x.column(1)));
    let y = balanced_labels(30, 30);
    let r = lrt_on_features(&with_dup, &y).unwrap();
    assert_eq!((r.df, r.dropped), (2, 1));
    assert!(r.statistic >= 0.0);
}

#[test]
fn roc_of_identical_distributions_hugs_the_diagonal() {
    let mut rng = cpt_core::rng::stream(5, &[]);
    let a: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
    let pts = roc_points(&a, &b).unwrap();
    let worst = pts.iter().map(|(f, t)| (f - t).abs()).fold(0.0, f64::max);
    assert!(worst < 0.06, "{worst}");
    assert_eq!(pts.first(), Some(&(0.0, 0.0)));
    assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
}

#[test]
fn oob_forest_statistic_is_informative_and_full_vote_is_not() {
    let d = gen_mvn_dataset(0.0, 30, 30, 3, 2).unwrap();
    let full: ClassifierSpec = "forest:trees=60".parse().unwrap();
    let oob: ClassifierSpec = "forest:trees=60,oob=true".parse().unwrap();
    assert!(stat_in_sample(&full, &d, 1).unwrap() > 0.9);
    let s = stat_in_sample(&oob, &d, 1).unwrap();
    assert!((0.2..0.8).contains(&s), "{s}");
    assert_eq!(oob.to_string(), "forest:trees=60,mtry=sqrt,depth=none,min_leaf=1,oob=true");
}

#[test]
fn randomized_forest_statistic_is_reproducible_per_seed() {
    let d = gen_mvn_dataset(0.3, 15, 15, 3, 9).unwrap();
    let spec: ClassifierSpec = "forest:trees=25,oob=true".parse().unwrap();
    let plan = PermutationPlan::new(19, 4);
    let a = run_cpt(&d, &spec, &StatSpec::InSample, &plan).unwrap();
    let b = run_cpt(&d, &spec, &StatSpec::InSample, &plan).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(exact_cpt_result(&d, &spec, &StatSpec::InSample).is_err());
}

#[test]
fn exact_enumeration_count() {
    assert_eq!(binomial(8, 4), 70);
    let d = dataset(normal_matrix(8, 2, 1), balanced_labels(4, 4));
    let r = exact_cpt_result(&d, &ClassifierSpec::logistic(DesignKind::MainEffects), &StatSpec::InSample).unwrap();
    assert_eq!(r.assignments, 70);
    assert!(r.p_value >= 1.0 / 70.0 && r.p_value <= 1.0);
}
