use std::collections::BTreeSet;

use coarseconv::bootstrap::{bootstrap_run, BootstrapConfig};
use coarseconv::coarsening::coarsening_from_cultures;
use coarseconv::distribution::ConversionDistribution;
use coarseconv::effect::fit_effect;
use coarseconv::glm::{fit_logistic, FitOptions, LogisticProblem};
use coarseconv::imputation::PatientBenchmark;
use coarseconv::sim::{enumerate_t_values, SimLaw};
use coarseconv::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn result() -> impl Strategy<Value = TestResult> {
    prop_oneof![Just(TestResult::Negative), Just(TestResult::Positive), Just(TestResult::Missing)]
}

fn patient(max_weeks: usize) -> impl Strategy<Value = PatientRecord> {
    (1..=max_weeks)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(result(), k),
                prop::collection::vec(result(), k),
                any::<bool>(),
                any::<bool>(),
            )
        })
        .prop_map(|(c, s, treated, cav)| {
            let arm = if treated { Arm::Treated } else { Arm::Control };
            PatientRecord::from_results("p", arm, cav, &c, &s)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn coarsening_set_matches_completion_enumeration(cultures in prop::collection::vec(result(), 1..=10)) {
        let set = coarsening_from_cultures(&cultures);
        let times: BTreeSet<u32> = set.times.iter().copied().collect();
        prop_assert_eq!(times, enumerate_t_values(&cultures));
        prop_assert_eq!(set.lower, set.times[0]);
        prop_assert_eq!(set.upper, *set.times.last().unwrap());
    }

    #[test]
    fn conditional_mass_is_a_distribution_on_the_set(p in patient(6), seed in any::<u64>(), alpha in -60.0..60.0f64) {
        let law = SimLaw::random(p.weeks(), 2.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let bench = PatientBenchmark::compute(&p, &law.params).unwrap();
        let dist = bench.distribution(alpha);
        prop_assert!((dist.total() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(dist.support.iter().map(|&(t, _)| t).collect::<Vec<_>>(), bench.set.times.clone());
        prop_assert!(dist.support.iter().all(|&(_, m)| (0.0..=1.0).contains(&m)));
    }

    #[test]
    fn patient_cdf_falls_as_alpha_rises(p in patient(6), seed in any::<u64>(), a in -8.0..8.0f64, step in 0.0..4.0f64) {
        let law = SimLaw::random(p.weeks(), 2.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let bench = PatientBenchmark::compute(&p, &law.params).unwrap();
        let cdf = |alpha: f64| {
            let d = bench.distribution(alpha);
            (1..=p.weeks() + 1)
                .scan(0.0, |acc, t| {
                    *acc += d.mass(t);
                    Some(*acc)
                })
                .collect::<Vec<f64>>()
        };
        let (lo, hi) = (cdf(a), cdf(a + step));
        for (x, y) in lo.iter().zip(&hi) {
            prop_assert!(*y <= *x + 1e-12);
        }
    }

    #[test]
    fn tilt_multiplies_odds(p0 in 0.001..0.999f64, alpha in -5.0..5.0f64) {
        let odds = |p: f64| p / (1.0 - p);
        let ratio = odds(tilt(p0, alpha)) / odds(p0);
        prop_assert!((ratio / alpha.exp() - 1.0).abs() <= 1e-10);
        prop_assert_eq!(tilt(p0, 0.0), p0);
    }

    #[test]
    fn hazards_rebuild_the_pmf(raw in prop::collection::vec(0.01..1.0f64, 2..10)) {
        let total: f64 = raw.iter().sum();
        let pmf: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let d = ConversionDistribution::new(Arm::Control, 0.0, pmf.clone());
        let h = d.hazards();
        let mut survive = 1.0;
        for (k, hk) in h.iter().enumerate() {
            let hk = hk.unwrap();
            prop_assert!((survive * hk - pmf[k]).abs() <= 1e-12);
            survive *= 1.0 - hk;
        }
    }

    #[test]
    fn logistic_score_vanishes_and_row_order_is_irrelevant(seed in any::<u64>(), n in 60usize..200) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (rng.random::<f64>() < glm::expit(0.3 + r[1] - 0.5 * r[2])) as u8 as f64).collect();
        let opts = FitOptions::default();
        let fit = match fit_logistic(&LogisticProblem::from_rows(&rows, &y), &opts) {
            Ok(f) => f,
            Err(Error::Separation { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(fit.score_norm < 1e-8);
        let (rrows, ry): (Vec<_>, Vec<_>) = rows.iter().cloned().zip(y.iter().copied()).rev().unzip();
        let back = fit_logistic(&LogisticProblem::from_rows(&rrows, &ry), &opts).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&back.coefficients) {
            prop_assert!((a.unwrap() - b.unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn shifting_a_feature_leaves_fitted_probabilities(seed in any::<u64>(), shift in -3.0..3.0f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..150).map(|_| vec![1.0, rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (rng.random::<f64>() < glm::expit(r[1] - 0.2)) as u8 as f64).collect();
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| vec![1.0, r[1] + shift]).collect();
        let opts = FitOptions::default();
        let (Ok(a), Ok(b)) = (
            fit_logistic(&LogisticProblem::from_rows(&rows, &y), &opts),
            fit_logistic(&LogisticProblem::from_rows(&shifted, &y), &opts),
        ) else {
            return Ok(());
        };
        let prob = |c: &[Option<f64>], r: &[f64]| glm::expit(c[0].unwrap() * r[0] + c[1].unwrap() * r[1]);
        for (r, s) in rows.iter().zip(&shifted) {
            prop_assert!((prob(&a.coefficients, r) - prob(&b.coefficients, s)).abs() < 1e-10);
        }
    }

    #[test]
    fn effect_is_antisymmetric_in_arm_labels(h0 in prop::collection::vec(0.02..0.9f64, 1..8), shift in -1.0..1.0f64) {
        let h1: Vec<f64> = h0.iter().map(|h| {
            let o = h / (1.0 - h) * shift.exp() * 1.1;
            o / (1.0 + o)
        }).collect();
        let a: Vec<Option<f64>> = h0.iter().copied().map(Some).collect();
        let b: Vec<Option<f64>> = h1.iter().copied().map(Some).collect();
        let ab = fit_effect(&a, &b).unwrap();
        let ba = fit_effect(&b, &a).unwrap();
        prop_assert!((ab.beta + ba.beta).abs() < 1e-7);
        // Exactly proportional odds are recovered.
        prop_assert!((ab.beta - (shift + 1.1f64.ln())).abs() < 1e-7);
    }

    #[test]
    fn csv_round_trip_and_row_order(seed in any::<u64>(), n in 1usize..12) {
        let cohort = generate(&SimConfig {
            law: SimLaw::reference(3),
            n_per_arm: [n, n + 1],
            cavitation_prevalence: [0.4, 0.7],
            seed,
        }).unwrap();
        let mut text = Vec::new();
        write_cohort(&cohort, &mut text).unwrap();
        let parsed = parse_cohort(text.as_slice(), 3).unwrap();
        prop_assert_eq!(&parsed, &cohort);

        let s = String::from_utf8(text.clone()).unwrap();
        let mut lines: Vec<&str> = s.lines().collect();
        lines[1..].reverse();
        let shuffled = lines.join("\n");
        prop_assert_eq!(parse_cohort(shuffled.as_bytes(), 3).unwrap(), cohort);
    }
}

#[test]
fn bootstrap_is_identical_across_thread_counts() {
    let cohort = generate(&SimConfig {
        law: SimLaw::reference(4),
        n_per_arm: [200, 200],
        cavitation_prevalence: [0.5, 0.7],
        seed: 17,
    })
    .unwrap();
    let cfg = BootstrapConfig {
        replicates: 24,
        seed: 99,
        level: 0.9,
    };
    let opts = AnalysisOptions::benchmark_only();
    let analysis = |c: &Cohort| estimate(c, &opts).map(|e| e.estimand_vector());
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap_run(&cohort, analysis, &cfg).unwrap())
    };
    let bits = |r: &BootstrapResult| -> Vec<Vec<u64>> {
        r.replicates
            .iter()
            .map(|v| v.as_ref().map_or(Vec::new(), |v| v.iter().map(|x| x.to_bits()).collect()))
            .collect()
    };
    let serial = run(1);
    let parallel = run(4);
    assert_eq!(bits(&serial), bits(&parallel));
    assert_eq!(
        serial.intervals.iter().map(|i| i.map(|i| (i.low.to_bits(), i.high.to_bits()))).collect::<Vec<_>>(),
        parallel.intervals.iter().map(|i| i.map(|i| (i.low.to_bits(), i.high.to_bits()))).collect::<Vec<_>>()
    );
}
