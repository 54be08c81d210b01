mod common;

use common::{assert_density, rng, seeded};
use hyperent::analyzers::{settings_to_json, SettingsEntry};
use hyperent::bell::qubit_pair_layout;
use hyperent::metrics;
use hyperent::qcore::json::LayoutJson;
use hyperent::qcore::random::random_density;
use hyperent::qcore::{DensityOperator, Dof, SubsystemLayout};
use hyperent::source::*;
use hyperent::tomography::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn poln_pair() -> SubsystemLayout {
    qubit_pair_layout(Dof::Polarization)
}

fn qubit_settings() -> Vec<SettingsEntry> {
    canonical_set(2).unwrap().settings(&poln_pair()).unwrap()
}

fn expected_counts(rho: &DensityOperator, settings: &[SettingsEntry], scale: f64) -> Vec<f64> {
    settings
        .iter()
        .map(|e| scale * e.element(rho.layout()).unwrap().probability(rho))
        .collect()
}

fn simulated(rho: &DensityOperator, settings: &[SettingsEntry], mean: f64, seed: u64) -> Vec<CountRecord> {
    let rate = pair_rate_for_mean_counts(rho, settings, mean, 1.0).unwrap();
    let cfg = SourceConfig {
        pair_rate: rate,
        seed,
        ..SourceConfig::default()
    };
    simulate_counts(rho, settings, &cfg, 1.0).unwrap()
}

fn assert_monotone(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] >= w[0], "log-likelihood fell from {} to {}", w[0], w[1]);
    }
}

#[test]
fn linear_and_mle_agree_on_noiseless_data() {
    let settings = qubit_settings();
    let mut r = rng(2718);
    for i in 0..20 {
        let truth = random_density(&mut r, poln_pair(), 1 + i % 4);
        let p = TomographyProblem::from_expected(
            poln_pair(),
            &settings,
            &expected_counts(&truth, &settings, 1e5),
            TomographyOptions::default(),
        )
        .unwrap();
        let lin = linear_inversion(&p).unwrap();
        let mle = mle_reconstruct(&p).unwrap();
        assert!(mle.converged);
        assert_monotone(&mle.log_likelihood);
        assert_density(&mle.rho);
        let err = (&lin.matrix - mle.rho.matrix()).frobenius_norm();
        assert!(err <= 1e-6, "state {i}: frobenius {err}");
    }
}

proptest! {
    #![proptest_config(seeded(40))]

    #[test]
    fn mle_is_monotone_physical_and_order_invariant(seed in any::<u64>(), rank in 1usize..5, mean in 10.0f64..1e4) {
        let settings = qubit_settings();
        let truth = random_density(&mut rng(seed), poln_pair(), rank);
        let mut records = simulated(&truth, &settings, mean, seed);
        let opts = TomographyOptions::default();
        let base = mle_reconstruct(&TomographyProblem::from_records(poln_pair(), &settings, &records, opts.clone()).unwrap()).unwrap();
        assert_monotone(&base.log_likelihood);
        assert_density(&base.rho);

        records.shuffle(&mut rng(seed ^ 0xabc));
        let mut shuffled_settings = settings.clone();
        shuffled_settings.shuffle(&mut rng(seed ^ 0xdef));
        let again = mle_reconstruct(&TomographyProblem::from_records(poln_pair(), &shuffled_settings, &records, opts).unwrap()).unwrap();
        prop_assert_eq!(base.rho.matrix(), again.rho.matrix());
        prop_assert_eq!(&base.log_likelihood, &again.log_likelihood);
    }
}

/// Rank of the Gram matrix `|⟨ψ_i|ψ_j⟩|²` of the joint product kets, built
/// directly from the joint vectors rather than from the local Gram matrices.
fn joint_gram_rank(d: usize) -> usize {
    let set = canonical_set(d).unwrap();
    let kets = set.kets();
    let joint: Vec<Vec<_>> = kets
        .iter()
        .flat_map(|a| kets.iter().map(move |b| hyperent::qcore::kron_vec(a, b)))
        .collect();
    let n = joint.len();
    let g = DMatrix::from_fn(n, n, |i, j| hyperent::qcore::inner(&joint[i], &joint[j]).norm_sqr());
    let sv = g.singular_values();
    let tol = sv.max() * n as f64 * 1e-12;
    sv.iter().filter(|&&s| s > tol).count()
}

#[test]
fn joint_sets_are_informationally_complete() {
    for d in [2usize, 3, 6] {
        assert_eq!(canonical_set(d).unwrap().gram_rank().unwrap(), d * d);
        assert_eq!(joint_gram_rank(d), d.pow(4), "d = {d}");
    }
}

#[test]
fn linear_inversion_error_at_ten_thousand_counts() {
    let settings = qubit_settings();
    let mut r = rng(99);
    for seed in 0..10 {
        let truth = random_density(&mut r, poln_pair(), 4);
        let recs = simulated(&truth, &settings, 1e4, seed);
        let p = TomographyProblem::from_records(poln_pair(), &settings, &recs, TomographyOptions::default()).unwrap();
        let err = (&linear_inversion(&p).unwrap().matrix - truth.matrix()).frobenius_norm();
        assert!(err <= 0.05, "seed {seed}: frobenius {err}");
    }
}

#[test]
fn bootstrap_spread_vanishes_for_giant_counts() {
    let settings = qubit_settings();
    let truth = white_noise(&make_named_state("phi+_poln").unwrap(), 0.9);
    let p = TomographyProblem::from_expected(
        poln_pair(),
        &settings,
        &expected_counts(&truth, &settings, 1e8 * settings.len() as f64 / 4.0),
        TomographyOptions::default(),
    )
    .unwrap();
    let fit = mle_reconstruct(&p).unwrap();
    let rep = bootstrap_errors(&p, &fit, 30, 1).unwrap();
    assert_eq!(rep.resamples, 30);
    for v in [rep.tangle, rep.linear_entropy, rep.fidelity, rep.negativity] {
        assert!(v.unwrap() < 1e-3, "{rep:?}");
    }
}

fn phi_bootstrap(visibility: f64) -> (f64, f64) {
    let settings = qubit_settings();
    let truth = white_noise(&make_named_state("phi+_poln").unwrap(), visibility);
    let recs = simulated(&truth, &settings, 1e4, 3);
    let p = TomographyProblem::from_records(poln_pair(), &settings, &recs, TomographyOptions::default()).unwrap();
    let fit = mle_reconstruct(&p).unwrap();
    let rep = bootstrap_errors(&p, &fit, 200, 5).unwrap();
    (metrics::tangle(&fit.rho).unwrap(), rep.tangle.unwrap())
}

#[test]
fn bootstrap_tangle_spread_near_lab_visibility() {
    // at the measured two-photon visibility the spread is of order 0.01
    let (_, std) = phi_bootstrap(0.985);
    assert!((0.01 / 3.0..=0.03).contains(&std), "tangle std {std}");
}

#[test]
fn bootstrap_tangle_spread_for_ideal_source_is_second_order() {
    // a pure maximally entangled state sits at the tangle maximum, so
    // first-order fluctuations vanish
    let (t, std) = phi_bootstrap(1.0);
    assert!(t >= 0.99);
    assert!(std < 1e-3, "tangle std {std}");
}

#[test]
fn fitted_state_closed_loop_at_full_scale() {
    let truth = make_named_state("fig2_fit").unwrap();
    let settings = canonical_set(6).unwrap().settings(truth.layout()).unwrap();
    assert_eq!(settings.len(), 1296);
    let recs = simulated(&truth, &settings, 1e4, 11);
    let p = TomographyProblem::from_records(truth.layout().clone(), &settings, &recs, TomographyOptions::default())
        .unwrap();
    let fit = mle_reconstruct(&p).unwrap();
    assert!(fit.converged);
    assert_monotone(&fit.log_likelihood);
    assert_density(&fit.rho);
    let f = metrics::fidelity(&fit.rho, &truth).unwrap();
    assert!(f >= 0.99, "fidelity {f}");
}

#[test]
fn bundle_round_trip() {
    let dir = std::env::temp_dir().join(format!("hyperent-bundle-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let settings = qubit_settings();
    let truth = random_density(&mut rng(5), poln_pair(), 2);
    let recs = simulated(&truth, &settings, 1e3, 5);
    std::fs::write(dir.join("settings.json"), settings_to_json(&settings)).unwrap();
    write_counts_csv(&recs, std::fs::File::create(dir.join("counts.csv")).unwrap()).unwrap();
    let opts = BundleOptions {
        layout: LayoutJson::from_layout(&poln_pair()),
        method: Method::Linear,
        max_iterations: 500,
        tolerance: 1e-9,
    };
    std::fs::write(dir.join("options.json"), serde_json::to_string(&opts).unwrap()).unwrap();
    let (p, method) = read_bundle(&dir).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(method, Method::Linear);
    assert_eq!(p.options.max_iterations, 500);
    let direct = TomographyProblem::from_records(poln_pair(), &settings, &recs, p.options.clone()).unwrap();
    assert_eq!(mle_reconstruct(&p).unwrap().rho, mle_reconstruct(&direct).unwrap().rho);
}
