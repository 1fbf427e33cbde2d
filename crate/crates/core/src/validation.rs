//! Self-checks of the estimation engine against brute-force oracles and closed forms.
//!
//! Each check returns a [`CheckResult`]; the `validate` subcommand and the acceptance suite
//! both run them.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{estimate, AnalysisOptions};
use crate::bootstrap::{bootstrap_run, BootstrapConfig};
use crate::coarsening::{coarsening_from_cultures, coarsening_set, status_from_cultures};
use crate::data::{Arm, Cohort, PatientRecord, TestResult};
use crate::distribution::ConversionDistribution;
use crate::effect::{fit_effect, objective, profiled_objective};
use crate::error::Result;
use crate::glm::{expit, fit_logistic, fit_models, FitOptions, LogisticProblem, ModelKind};
use crate::imputation::{benchmark_prob, benchmark_prob_with, tilt, PatientBenchmark, TiltParams};
use crate::sim::{
    enumerate_conditional, enumerate_t_values, generate, population_distribution, SimConfig, SimLaw,
    SmearMissingnessModel,
};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub time_limit: Duration,
}

impl CheckResult {
    fn finish(id: u32, name: &'static str, start: Instant, limit: Duration, ok: bool, detail: String) -> Self {
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let detail = if in_time {
            detail
        } else {
            format!("{detail}; exceeded time limit {:.0?}", limit)
        };
        CheckResult {
            id,
            name,
            passed: ok && in_time,
            detail,
            elapsed,
            time_limit: limit,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:>2}] {:<28} {:>9.2?}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed,
            self.detail
        )
    }
}

const OUTCOMES: [TestResult; 3] = [TestResult::Negative, TestResult::Positive, TestResult::Missing];

fn random_result<R: Rng>(rng: &mut R) -> TestResult {
    OUTCOMES[rng.random_range(0..3)]
}

fn random_patient<R: Rng>(weeks: u32, rng: &mut R) -> PatientRecord {
    let k = weeks as usize;
    let cultures: Vec<TestResult> = (0..k).map(|_| random_result(rng)).collect();
    let smears: Vec<TestResult> = (0..k).map(|_| random_result(rng)).collect();
    let arm = Arm::from_index(rng.random_range(0..2));
    PatientRecord::from_results("r", arm, rng.random::<bool>(), &cultures, &smears)
}

fn sim_cohort(weeks: u32, n_per_arm: usize, seed: u64) -> Result<Cohort> {
    generate(&SimConfig {
        law: SimLaw::reference(weeks),
        n_per_arm: [n_per_arm; 2],
        cavitation_prevalence: REFERENCE_PREVALENCE,
        seed,
    })
}

/// Cavitation prevalence in the control and treated arms of the reference simulation.
pub const REFERENCE_PREVALENCE: [f64; 2] = [0.569, 0.811];

/// The five culture patterns of the worked example with their status rows and sets.
pub fn table_one_cases() -> Vec<(Vec<TestResult>, &'static str, Vec<u32>)> {
    use TestResult::{Missing as M, Negative as N, Positive as P};
    vec![
        (vec![M, P, M, N, M, N, N, N], "NNUUUYYY", vec![3, 4, 6]),
        (vec![M, P, M, N, P, N, N, N], "NNNNNYYY", vec![6]),
        (vec![M, P, M, N, N, N, N, N], "NNUYYYYY", vec![3, 4]),
        (vec![M, P, P, N, N, N, N, N], "NNNYYYYY", vec![4]),
        (vec![M, P, N, N, N, N, N, N], "NNYYYYYY", vec![3]),
    ]
}

pub fn check_table_one() -> CheckResult {
    let start = Instant::now();
    let mut bad = Vec::new();
    for (i, (cultures, status, set)) in table_one_cases().into_iter().enumerate() {
        let got: String = status_from_cultures(&cultures).iter().map(|s| s.symbol()).collect();
        let got_set = coarsening_from_cultures(&cultures).times;
        if got != status || got_set != set {
            bad.push(format!("pattern {}: {got} {got_set:?}", i + 1));
        }
    }
    let ok = bad.is_empty();
    let detail = if ok { "5/5 patterns match".into() } else { bad.join("; ") };
    CheckResult::finish(1, "worked-example patterns", start, Duration::from_secs(1), ok, detail)
}

pub fn check_coarsening_oracle(random_patterns: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut checked = 0;
    for code in 0..3usize.pow(5) {
        let cultures: Vec<TestResult> = (0..5).map(|i| OUTCOMES[code / 3usize.pow(i) % 3]).collect();
        let set = coarsening_from_cultures(&cultures);
        if set.times.iter().copied().collect::<std::collections::BTreeSet<_>>() != enumerate_t_values(&cultures) {
            mismatches += 1;
        }
        checked += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_patterns {
        let cultures: Vec<TestResult> = (0..8).map(|_| random_result(&mut rng)).collect();
        let set = coarsening_from_cultures(&cultures);
        if set.times.iter().copied().collect::<std::collections::BTreeSet<_>>() != enumerate_t_values(&cultures) {
            mismatches += 1;
        }
        checked += 1;
    }
    CheckResult::finish(
        2,
        "coarsening-set oracle",
        start,
        Duration::from_secs(30),
        mismatches == 0,
        format!("{mismatches} mismatches in {checked} patterns"),
    )
}

/// Random patient with a multi-element coarsening set and a feasible target time.
fn random_target<R: Rng>(weeks: u32, rng: &mut R) -> (PatientRecord, u32) {
    loop {
        let p = random_patient(weeks, rng);
        let set = coarsening_set(&p);
        if !set.is_singleton() {
            let k = set.times[rng.random_range(1..set.times.len())];
            return (p, k);
        }
    }
}

pub fn check_identification(cases: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut errors = Vec::new();
    for _ in 0..cases {
        let law = SimLaw::random(4, 1.5, &mut rng);
        let (p, k) = random_target(4, &mut rng);
        match (benchmark_prob(&p, k, &law.params), enumerate_conditional(&law, &p, k)) {
            (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
            (a, b) => errors.push(format!("{:?} / {:?}", a.err(), b.err())),
        }
    }
    let ok = errors.is_empty() && worst <= 1e-10;
    let mut detail = format!("max |benchmark - enumeration| = {worst:.2e} over {cases} cases");
    if !errors.is_empty() {
        detail.push_str(&format!("; {} errors, first: {}", errors.len(), errors[0]));
    }
    CheckResult::finish(3, "identification oracle", start, Duration::from_secs(60), ok, detail)
}

pub fn check_tilt(cases: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let odds = |p: f64| p / (1.0 - p);
    let mut worst_ratio = 0.0_f64;
    let mut identity_broken = 0;
    for _ in 0..cases {
        let p0 = rng.random_range(0.001..0.999);
        let alpha = rng.random_range(-5.0..5.0);
        let ratio = odds(tilt(p0, alpha)) / odds(p0);
        worst_ratio = worst_ratio.max((ratio / alpha.exp() - 1.0).abs());
        if tilt(p0, 0.0) != p0 {
            identity_broken += 1;
        }
    }

    // Extreme tilts put each patient's mass on the ends of the coarsening set.
    let mut bound_failures = 0;
    let mut patients = 0;
    let law = SimLaw::reference(8);
    let cohort = sim_cohort(8, 250, seed ^ 0x5eed);
    let mut error = None;
    match cohort {
        Ok(cohort) => {
            for p in &cohort.patients {
                let b = match PatientBenchmark::compute(p, &law.params) {
                    Ok(b) => b,
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                };
                if b.set.is_singleton() {
                    continue;
                }
                patients += 1;
                if b.distribution(50.0).mass(b.set.upper) < 1.0 - 1e-10
                    || b.distribution(-50.0).mass(b.set.lower) < 1.0 - 1e-10
                {
                    bound_failures += 1;
                }
            }
        }
        Err(e) => error = Some(e.to_string()),
    }
    let ok = worst_ratio <= 1e-10 && identity_broken == 0 && bound_failures == 0 && error.is_none();
    let mut detail = format!(
        "max rel. odds-ratio error {worst_ratio:.2e}; alpha=0 mismatches {identity_broken}; \
         bound failures {bound_failures}/{patients}"
    );
    if let Some(e) = error {
        detail.push_str(&format!("; error: {e}"));
    }
    CheckResult::finish(4, "tilt identities", start, Duration::from_secs(60), ok, detail)
}

pub fn check_mass_law(n_per_arm: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let run = || -> Result<(usize, f64, usize)> {
        let cohort = sim_cohort(8, n_per_arm, seed)?;
        let fitted = fit_models(&cohort, &FitOptions::default())?;
        let grid = [-4.0, 0.0, 4.0];
        let mut worst = 0.0_f64;
        let mut off_support = 0;
        let mut evaluated = 0;
        for p in &cohort.patients {
            let bench = PatientBenchmark::compute(p, &fitted.params)?;
            for &a0 in &grid {
                for &a1 in &grid {
                    let tp = TiltParams::new(a0, a1);
                    let dist = bench.distribution(tp.for_arm(p.arm));
                    worst = worst.max((dist.total() - 1.0).abs());
                    let support: Vec<u32> = dist.support.iter().map(|&(t, _)| t).collect();
                    if support != bench.set.times || dist.support.iter().any(|&(_, m)| !(0.0..=1.0).contains(&m)) {
                        off_support += 1;
                    }
                    for t in 1..=cohort.weeks + 1 {
                        if !bench.set.contains(t) && dist.mass(t) != 0.0 {
                            off_support += 1;
                        }
                    }
                    evaluated += 1;
                }
            }
        }
        Ok((evaluated, worst, off_support))
    };
    let (ok, detail) = match run() {
        Ok((n, worst, off)) => (
            worst <= 1e-12 && off == 0,
            format!("{n} patient-grid evaluations; max |total - 1| = {worst:.2e}; support violations {off}"),
        ),
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult::finish(5, "conditional-mass law", start, Duration::from_secs(60), ok, detail)
}

pub fn check_glm(problems: usize, n: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_score = 0.0_f64;
    let mut worst_fd = 0.0_f64;
    let mut errors = Vec::new();
    for _ in 0..problems {
        let p = 4;
        let truth: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = vec![1.0];
            row.extend((1..p).map(|_| rng.random_range(-2.0..2.0)));
            let eta: f64 = row.iter().zip(&truth).map(|(a, b)| a * b).sum();
            y.push((rng.random::<f64>() < expit(eta)) as u8 as f64);
            rows.push(row);
        }
        let problem = LogisticProblem::from_rows(&rows, &y);
        match fit_logistic(&problem, &FitOptions::default()) {
            Ok(fit) => {
                let at_fit = problem.score(&fit.present()).norm();
                worst_score = worst_score.max(fit.score_norm).max(at_fit);
            }
            Err(e) => errors.push(e.to_string()),
        }

        // Gradient check away from the optimum.
        let point = DVector::from_iterator(p, truth.iter().map(|t| t + rng.random_range(-0.5..0.5)));
        let analytic = problem.score(&point);
        let h = 1e-5;
        for j in 0..p {
            let mut up = point.clone();
            let mut down = point.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (problem.log_likelihood(&up) - problem.log_likelihood(&down)) / (2.0 * h);
            let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(1.0);
            worst_fd = worst_fd.max(rel);
        }
    }

    // Returned fits of the three sub-models on a simulated cohort.
    match sim_cohort(8, 500, seed).and_then(|c| fit_models(&c, &FitOptions::default())) {
        Ok(f) => {
            for r in &f.reports {
                worst_score = worst_score.max(r.fit.score_norm);
            }
        }
        Err(e) => errors.push(e.to_string()),
    }
    let ok = errors.is_empty() && worst_score < 1e-8 && worst_fd <= 1e-6;
    let mut detail = format!("max score norm {worst_score:.2e}; max rel. gradient error {worst_fd:.2e}");
    if !errors.is_empty() {
        detail.push_str(&format!("; {} fit errors, first: {}", errors.len(), errors[0]));
    }
    CheckResult::finish(6, "logistic fits", start, Duration::from_secs(60), ok, detail)
}

/// Smallest profiled objective over a coarse grid on `[-5, 5]` refined around its best point.
fn grid_minimum(h0: &[Option<f64>], h1: &[Option<f64>]) -> Result<f64> {
    let mut best = (0.0, f64::INFINITY);
    for i in 0..=2000 {
        let b = -5.0 + i as f64 * 0.005;
        let v = profiled_objective(h0, h1, b)?;
        if v < best.1 {
            best = (b, v);
        }
    }
    let centre = best.0;
    for i in 0..=2000 {
        let b = centre - 0.005 + i as f64 * 5e-6;
        let v = profiled_objective(h0, h1, b)?;
        if v < best.1 {
            best = (b, v);
        }
    }
    Ok(best.1)
}

pub fn check_min_distance(problems: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;

    let h0 = [Some(0.2), Some(1.0 / 3.0)];
    let h1 = [Some(1.0 / 3.0), Some(0.5)];
    match fit_effect(&h0, &h1) {
        Ok(f) => {
            let tau_err = (f.tau[0].unwrap_or(f64::NAN) - 0.25)
                .abs()
                .max((f.tau[1].unwrap_or(f64::NAN) - 0.5).abs());
            let beta_err = (f.beta - 2f64.ln()).abs();
            let exact = beta_err < 1e-9 && tau_err < 1e-9 && f.objective < 1e-18;
            ok &= exact;
            notes.push(format!(
                "exact example |beta - ln 2| {beta_err:.1e}, tau err {tau_err:.1e}, objective {:.1e}",
                f.objective
            ));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("exact example failed: {e}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..problems {
        let beta = rng.random_range(-1.5..1.5);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..8 {
            let tau: f64 = rng.random_range(0.05..0.6);
            let o0 = tau * (1.0 + rng.random_range(-0.3..0.3));
            let o1 = tau * f64::exp(beta) * (1.0 + rng.random_range(-0.3..0.3));
            a.push(Some(o0 / (1.0 + o0)));
            b.push(Some(o1 / (1.0 + o1)));
        }
        match (fit_effect(&a, &b), grid_minimum(&a, &b)) {
            (Ok(f), Ok(g)) => {
                let at_fit = objective(&a, &b, &f.tau, f.beta);
                worst = worst.max(at_fit - g);
            }
            (x, y) => {
                ok = false;
                notes.push(format!("perturbed problem failed: {:?} {:?}", x.err(), y.err()));
            }
        }
    }
    ok &= worst <= 1e-9;
    notes.push(format!("max objective excess over grid oracle {worst:.2e} on {problems} problems"));
    CheckResult::finish(7, "minimum-distance fit", start, Duration::from_secs(60), ok, notes.join("; "))
}

/// Per-arm standardized pmf of `T` under `law`, with `weight` on the cavitated stratum.
pub fn population_pmf(law: &SimLaw, arm: Arm, weight: f64, alpha: f64) -> Result<Vec<f64>> {
    let with = population_distribution(law, arm, true, alpha)?;
    let without = population_distribution(law, arm, false, alpha)?;
    Ok(with.iter().zip(&without).map(|(a, b)| weight * a + (1.0 - weight) * b).collect())
}

/// Benchmark treatment effect implied by the simulation law at equal arm sizes.
pub fn true_beta(law: &SimLaw, prevalence: [f64; 2]) -> Result<f64> {
    let w = (prevalence[0] + prevalence[1]) / 2.0;
    let h0 = ConversionDistribution::new(Arm::Control, 0.0, population_pmf(law, Arm::Control, w, 0.0)?).hazards();
    let h1 = ConversionDistribution::new(Arm::Treated, 0.0, population_pmf(law, Arm::Treated, w, 0.0)?).hazards();
    Ok(fit_effect(&h0, &h1)?.beta)
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoverySummary {
    pub true_beta: f64,
    pub worst_component_share: f64,
    pub worst_component: String,
    pub beta_hats: Vec<f64>,
    pub culture_missing_share: f64,
}

/// Repeated simulation at the reference law: refit the sub-models and the benchmark effect.
pub fn recovery_study(law: &SimLaw, sims: usize, n_per_arm: usize, seed: u64) -> Result<RecoverySummary> {
    let beta = true_beta(law, REFERENCE_PREVALENCE)?;
    let truth: Vec<(ModelKind, String, Option<f64>)> = law.params.terms();
    let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(sims);
    let mut beta_hats = Vec::with_capacity(sims);
    let mut missing = 0usize;
    let mut visits = 0usize;
    for s in 0..sims {
        let cohort = generate(&SimConfig {
            law: law.clone(),
            n_per_arm: [n_per_arm; 2],
            cavitation_prevalence: REFERENCE_PREVALENCE,
            seed: seed.wrapping_add(s as u64),
        })?;
        for p in &cohort.patients {
            missing += p.visits.iter().filter(|v| v.culture.is_missing()).count();
            visits += p.visits.len();
        }
        let est = estimate(&cohort, &AnalysisOptions::benchmark_only())?;
        estimates.push(est.fitted.params.terms().into_iter().map(|(_, _, c)| c.unwrap_or(f64::NAN)).collect());
        beta_hats.push(est.grid[0].fit.as_ref().map_err(|e| crate::error::Error::Effect(e.clone()))?.beta);
    }
    let mut worst = (1.0, String::new());
    for (j, (kind, term, value)) in truth.iter().enumerate() {
        let column: Vec<f64> = estimates.iter().map(|e| e[j]).collect();
        let mean = column.iter().sum::<f64>() / sims as f64;
        let sd = (column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (sims as f64 - 1.0)).sqrt();
        let target = value.unwrap_or(f64::NAN);
        let share = column.iter().filter(|v| (*v - target).abs() <= 3.0 * sd).count() as f64 / sims as f64;
        if share < worst.0 {
            worst = (share, format!("{kind}:{term}"));
        }
    }
    Ok(RecoverySummary {
        true_beta: beta,
        worst_component_share: worst.0,
        worst_component: worst.1,
        beta_hats,
        culture_missing_share: missing as f64 / visits as f64,
    })
}

pub fn check_recovery(sims: usize, n_per_arm: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let (ok, detail) = match recovery_study(&SimLaw::reference(6), sims, n_per_arm, seed) {
        Ok(r) => {
            let worst_beta = r.beta_hats.iter().map(|b| (b - r.true_beta).abs()).fold(0.0, f64::max);
            (
                r.worst_component_share >= 0.9 && worst_beta <= 0.15,
                format!(
                    "missing cultures {:.1}%; least-covered term {} within 3 MC SE in {:.0}% of sims; \
                     true beta {:.4}, max |beta_hat - beta| {:.4}",
                    100.0 * r.culture_missing_share,
                    r.worst_component,
                    100.0 * r.worst_component_share,
                    r.true_beta,
                    worst_beta
                ),
            )
        }
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult::finish(8, "parameter recovery", start, Duration::from_secs(600), ok, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageSummary {
    pub true_beta: f64,
    pub covered: usize,
    pub outer: usize,
    pub failed_replicates: usize,
}

/// Outer simulations with a percentile bootstrap interval for the benchmark effect in each.
pub fn coverage_study(
    law: &SimLaw,
    outer: usize,
    n_per_arm: usize,
    replicates: usize,
    seed: u64,
) -> Result<CoverageSummary> {
    let beta = true_beta(law, REFERENCE_PREVALENCE)?;
    let opts = AnalysisOptions::benchmark_only();
    let mut covered = 0;
    let mut failed = 0;
    for s in 0..outer {
        let cohort = generate(&SimConfig {
            law: law.clone(),
            n_per_arm: [n_per_arm; 2],
            cavitation_prevalence: REFERENCE_PREVALENCE,
            seed: seed.wrapping_add(s as u64),
        })?;
        let cfg = BootstrapConfig {
            replicates,
            seed: seed.wrapping_mul(31).wrapping_add(s as u64),
            level: 0.95,
        };
        let boot = bootstrap_run(&cohort, |c| beta_only(c, &opts), &cfg)?;
        failed += boot.failures.len();
        if let Some(ci) = boot.intervals[0] {
            if ci.low <= beta && beta <= ci.high {
                covered += 1;
            }
        }
    }
    Ok(CoverageSummary {
        true_beta: beta,
        covered,
        outer,
        failed_replicates: failed,
    })
}

fn beta_only(c: &Cohort, opts: &AnalysisOptions) -> Result<Vec<f64>> {
    let est = estimate(c, opts)?;
    Ok(vec![est.grid[0].fit.as_ref().map_or(f64::NAN, |f| f.beta)])
}

pub fn check_coverage(outer: usize, n_per_arm: usize, replicates: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let run = || -> Result<(CoverageSummary, bool)> {
        let summary = coverage_study(&SimLaw::reference(6), outer, n_per_arm, replicates, seed)?;
        // Determinism: two runs of the same bootstrap give identical replicate values.
        let cohort = sim_cohort(6, n_per_arm, seed)?;
        let cfg = BootstrapConfig {
            replicates: replicates.min(100),
            seed,
            level: 0.95,
        };
        let opts = AnalysisOptions::benchmark_only();
        let a = bootstrap_run(&cohort, |c| beta_only(c, &opts), &cfg)?;
        let b = bootstrap_run(&cohort, |c| beta_only(c, &opts), &cfg)?;
        let bits = |r: &crate::bootstrap::BootstrapResult| -> Vec<Option<Vec<u64>>> {
            r.replicates
                .iter()
                .map(|v| v.as_ref().map(|v| v.iter().map(|x| x.to_bits()).collect()))
                .collect()
        };
        Ok((summary, bits(&a) == bits(&b)))
    };
    let (ok, detail) = match run() {
        Ok((s, same)) => {
            let rate = s.covered as f64 / s.outer as f64;
            (
                (0.90..=0.99).contains(&rate) && same,
                format!(
                    "coverage {}/{} = {:.3} (true beta {:.4}); failed replicates {}; repeat runs identical: {same}",
                    s.covered, s.outer, rate, s.true_beta, s.failed_replicates
                ),
            )
        }
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult::finish(9, "bootstrap coverage", start, Duration::from_secs(1800), ok, detail)
}

pub fn check_cancellation(laws: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let run = || -> Result<(f64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cohort = sim_cohort(8, 150, seed)?;
        let mut worst = 0.0_f64;
        let mut compared = 0;
        for _ in 0..laws {
            let params = SimLaw::random(8, 1.5, &mut rng).params;
            let smear_law = SmearMissingnessModel::random(8, 3.0, &mut rng);
            for p in &cohort.patients {
                let set = coarsening_set(p);
                for &k in set.times.iter().skip(1) {
                    let plain = benchmark_prob(p, k, &params)?;
                    let with = benchmark_prob_with(p, k, &params, Some(&smear_law))?;
                    worst = worst.max((plain - with).abs());
                    compared += 1;
                }
            }
        }
        Ok((worst, compared))
    };
    let (ok, detail) = match run() {
        Ok((worst, n)) => (
            worst <= 1e-12 && n > 0,
            format!("max change {worst:.2e} over {n} probabilities and {laws} laws"),
        ),
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult::finish(10, "smear-missingness cancellation", start, Duration::from_secs(60), ok, detail)
}

/// Criteria that run in seconds: everything except the two simulation studies.
pub fn quick_battery(seed: u64) -> Vec<CheckResult> {
    vec![
        check_table_one(),
        check_coarsening_oracle(10_000, seed),
        check_identification(100, seed),
        check_tilt(1000, seed),
        check_mass_law(500, seed),
        check_glm(20, 500, seed),
        check_min_distance(50, seed),
        check_cancellation(20, seed),
    ]
}

/// The quick battery plus the recovery and coverage studies at full size.
pub fn full_battery(seed: u64) -> Vec<CheckResult> {
    let mut out = quick_battery(seed);
    out.insert(7, check_recovery(50, 2000, seed));
    out.insert(8, check_coverage(200, 200, 500, seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_check_passes() {
        assert!(check_table_one().passed);
    }
}
