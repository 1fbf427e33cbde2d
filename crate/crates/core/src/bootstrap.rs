//! Nonparametric bootstrap with resampling of patients within each arm.
//!
//! Replicate `b` draws from a ChaCha stream keyed by `(seed, b)`, so results do not depend on
//! how replicates are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Arm, Cohort, PatientRecord};
use crate::error::{Error, Result};

/// Replicates may fail (e.g. separation); more than this fraction aborts the run.
pub const MAX_FAILED_FRACTION: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            seed: 20_150_701,
            level: 0.95,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("bootstrap needs at least one replicate".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct BootstrapResult {
    /// One interval per estimand; `None` when no replicate produced a finite value.
    pub intervals: Vec<Option<Interval>>,
    /// Replicate estimands in replicate order; `None` for failed replicates.
    pub replicates: Vec<Option<Vec<f64>>>,
    pub failures: Vec<ReplicateFailure>,
}

impl BootstrapResult {
    pub fn separation_failures(&self) -> usize {
        self.failures.iter().filter(|f| f.kind == "separation").count()
    }
}

/// Empirical quantile with linear interpolation between order statistics (type 7).
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn percentile_interval(values: &[f64], level: f64) -> Option<Interval> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Some(Interval {
        low: quantile_type7(&v, tail),
        high: quantile_type7(&v, 1.0 - tail),
    })
}

/// Generator for replicate `index`.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws `n_z` patients with replacement from each arm.
pub fn resample<R: Rng>(cohort: &Cohort, rng: &mut R) -> Cohort {
    let mut patients: Vec<PatientRecord> = Vec::with_capacity(cohort.patients.len());
    for arm in Arm::BOTH {
        let members: Vec<&PatientRecord> = cohort.arm(arm).collect();
        if members.is_empty() {
            continue;
        }
        for _ in 0..members.len() {
            patients.push(members[rng.random_range(0..members.len())].clone());
        }
    }
    Cohort {
        weeks: cohort.weeks,
        patients,
    }
}

/// Runs `analysis` on `cfg.replicates` within-arm resamples and forms percentile intervals.
///
/// `analysis` returns a fixed-length vector of estimands; non-finite entries are ignored for
/// that estimand only. A replicate whose analysis errors is excluded entirely.
pub fn bootstrap_run<F>(cohort: &Cohort, analysis: F, cfg: &BootstrapConfig) -> Result<BootstrapResult>
where
    F: Fn(&Cohort) -> Result<Vec<f64>> + Sync,
{
    cfg.validate()?;
    for arm in Arm::BOTH {
        if cohort.arm_size(arm) == 0 {
            return Err(Error::EmptyStratum(format!("arm {}", arm.index())));
        }
    }
    let outcomes: Vec<Result<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(cfg.seed, b);
            analysis(&resample(cohort, &mut rng))
        })
        .collect();

    let mut replicates = Vec::with_capacity(cfg.replicates);
    let mut failures = Vec::new();
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => replicates.push(Some(v)),
            Err(e) => {
                failures.push(ReplicateFailure {
                    replicate: b,
                    kind: e.kind(),
                    message: e.to_string(),
                });
                replicates.push(None);
            }
        }
    }
    if failures.len() as f64 > MAX_FAILED_FRACTION * cfg.replicates as f64 {
        return Err(Error::BootstrapFailures {
            failed: failures.len(),
            total: cfg.replicates,
        });
    }

    let n_est = replicates.iter().flatten().map(Vec::len).max().unwrap_or(0);
    let intervals = (0..n_est)
        .map(|j| {
            let column: Vec<f64> = replicates
                .iter()
                .flatten()
                .filter_map(|v| v.get(j).copied())
                .collect();
            percentile_interval(&column, cfg.level)
        })
        .collect();
    Ok(BootstrapResult {
        intervals,
        replicates,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TestResult::*;

    fn cohort(n: usize) -> Cohort {
        let patients = (0..n)
            .map(|i| {
                let arm = if i % 2 == 0 { Arm::Control } else { Arm::Treated };
                let c = if i % 3 == 0 { Positive } else { Negative };
                PatientRecord::from_results(format!("p{i:03}"), arm, i % 5 == 0, &[c, Negative], &[Negative, Missing])
            })
            .collect();
        Cohort::new(2, patients).unwrap()
    }

    fn share_positive(c: &Cohort) -> Result<Vec<f64>> {
        let pos = c.patients.iter().filter(|p| p.culture(1) == Positive).count();
        Ok(vec![pos as f64 / c.patients.len() as f64])
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_eq!(quantile_type7(&v, 1.0), 4.0);
        assert!((quantile_type7(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn single_replicate_collapses() {
        let cfg = BootstrapConfig {
            replicates: 1,
            seed: 7,
            level: 0.95,
        };
        let r = bootstrap_run(&cohort(20), share_positive, &cfg).unwrap();
        let v = r.replicates[0].as_ref().unwrap()[0];
        assert_eq!(r.intervals[0], Some(Interval { low: v, high: v }));
    }

    #[test]
    fn constant_estimand_has_zero_width() {
        let cfg = BootstrapConfig {
            replicates: 50,
            seed: 1,
            level: 0.9,
        };
        let r = bootstrap_run(&cohort(30), |c| Ok(vec![c.weeks as f64]), &cfg).unwrap();
        assert_eq!(r.intervals[0], Some(Interval { low: 2.0, high: 2.0 }));
    }

    #[test]
    fn resampling_preserves_arm_sizes() {
        let c = cohort(31);
        let r = resample(&c, &mut replicate_rng(3, 0));
        for arm in Arm::BOTH {
            assert_eq!(r.arm_size(arm), c.arm_size(arm));
        }
    }

    #[test]
    fn deterministic_and_failure_accounting() {
        let cfg = BootstrapConfig {
            replicates: 40,
            seed: 99,
            level: 0.95,
        };
        let a = bootstrap_run(&cohort(40), share_positive, &cfg).unwrap();
        let b = bootstrap_run(&cohort(40), share_positive, &cfg).unwrap();
        assert_eq!(a.intervals, b.intervals);

        let flaky = |c: &Cohort| -> Result<Vec<f64>> {
            if c.patients[0].id.as_str() < "p010" {
                Err(Error::Separation { column: "x".into(), magnitude: 20.0 })
            } else {
                share_positive(c)
            }
        };
        match bootstrap_run(&cohort(40), flaky, &cfg) {
            Ok(r) => assert!(r.failures.len() <= 4),
            Err(Error::BootstrapFailures { failed, total }) => assert!(failed > 4 && total == 40),
            Err(e) => panic!("{e}"),
        }
    }
}
