//! Arm-level distribution of the conversion time, optionally standardized over cavitation.

use serde::Serialize;

use crate::data::{Arm, Cohort};
use crate::error::{Error, Result};
use crate::glm::ModelParams;
use crate::imputation::{PatientBenchmark, TiltParams};

/// Probability mass over weeks `1..=K+1` with CDF and discrete hazard over `1..=K`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConversionDistribution {
    pub arm: Arm,
    pub alpha: f64,
    /// `pmf[t - 1]` is `P[T = t]` for `t` in `1..=K+1`.
    pub pmf: Vec<f64>,
}

impl ConversionDistribution {
    pub fn new(arm: Arm, alpha: f64, pmf: Vec<f64>) -> Self {
        ConversionDistribution { arm, alpha, pmf }
    }

    pub fn weeks(&self) -> u32 {
        self.pmf.len() as u32 - 1
    }

    pub fn pmf_at(&self, t: u32) -> f64 {
        self.pmf[(t - 1) as usize]
    }

    /// `F(k) = P[T <= k]` for `k` in `1..=K`.
    pub fn cdf(&self) -> Vec<f64> {
        self.pmf[..self.weeks() as usize]
            .iter()
            .scan(0.0, |acc, &m| {
                *acc += m;
                Some(*acc)
            })
            .collect()
    }

    /// `P[T >= k]`.
    pub fn survivor(&self, k: u32) -> f64 {
        self.pmf[(k - 1) as usize..].iter().sum()
    }

    /// Discrete hazard `P[T = k | T >= k]`.
    pub fn hazard(&self, k: u32) -> Result<f64> {
        let at_risk = self.survivor(k);
        if !(at_risk > 0.0) {
            return Err(Error::UndefinedHazard(k));
        }
        Ok((self.pmf_at(k) / at_risk).clamp(0.0, 1.0))
    }

    /// Hazards for weeks `1..=K`; `None` where no mass remains.
    pub fn hazards(&self) -> Vec<Option<f64>> {
        (1..=self.weeks()).map(|k| self.hazard(k).ok()).collect()
    }
}

fn average_pmf<'a>(
    members: impl Iterator<Item = &'a PatientBenchmark>,
    weeks: u32,
    alpha: f64,
) -> Option<Vec<f64>> {
    let mut pmf = vec![0.0; weeks as usize + 1];
    let mut n = 0usize;
    for b in members {
        n += 1;
        for (t, m) in b.distribution(alpha).support {
            pmf[(t - 1) as usize] += m;
        }
    }
    if n == 0 {
        return None;
    }
    pmf.iter_mut().for_each(|m| *m /= n as f64);
    Some(pmf)
}

/// Arm distribution from precomputed per-patient benchmarks.
///
/// With `standardize`, the arm's cavitation-stratum averages are mixed with weight equal to
/// the pooled cavitation proportion `cavitation_weight`.
pub fn arm_distribution(
    benchmarks: &[PatientBenchmark],
    weeks: u32,
    arm: Arm,
    alpha: f64,
    cavitation_weight: Option<f64>,
) -> Result<ConversionDistribution> {
    let in_arm = || benchmarks.iter().filter(move |b| b.arm == arm);
    let pmf = match cavitation_weight {
        None => average_pmf(in_arm(), weeks, alpha)
            .ok_or_else(|| Error::EmptyStratum(format!("arm {}", arm.index())))?,
        Some(w) => {
            let stratum = |cav: bool| {
                average_pmf(in_arm().filter(|b| b.cavitation == cav), weeks, alpha).ok_or_else(|| {
                    Error::EmptyStratum(format!("arm {} with cavitation = {}", arm.index(), cav as u8))
                })
            };
            let with = stratum(true)?;
            let without = stratum(false)?;
            with.iter().zip(&without).map(|(a, b)| w * a + (1.0 - w) * b).collect()
        }
    };
    Ok(ConversionDistribution::new(arm, alpha, pmf))
}

/// Benchmarks for every patient in the cohort.
pub fn cohort_benchmarks(cohort: &Cohort, params: &ModelParams) -> Result<Vec<PatientBenchmark>> {
    cohort
        .patients
        .iter()
        .map(|p| PatientBenchmark::compute(p, params))
        .collect()
}

pub fn marginal_distribution(
    cohort: &Cohort,
    arm: Arm,
    params: &ModelParams,
    tp: &TiltParams,
    standardize: bool,
) -> Result<ConversionDistribution> {
    let benchmarks = cohort_benchmarks(cohort, params)?;
    let weight = standardize.then(|| cohort.cavitation_proportion());
    arm_distribution(&benchmarks, cohort.weeks, arm, tp.for_arm(arm), weight)
}

/// `(k*, F_alpha(k*) - F_0(k*))` with `k*` maximizing the absolute CDF gap; smallest `k` on ties.
pub fn signed_kolmogorov(tilted: &ConversionDistribution, bench: &ConversionDistribution) -> (u32, f64) {
    let fa = tilted.cdf();
    let f0 = bench.cdf();
    let mut best = (1u32, fa[0] - f0[0]);
    for (i, (a, b)) in fa.iter().zip(&f0).enumerate().skip(1) {
        let gap = a - b;
        if gap.abs() > best.1.abs() {
            best = (i as u32 + 1, gap);
        }
    }
    best
}

/// Best- and worst-case distributions: all mass at `L` or at `R + 1` for every patient.
pub fn bound_distributions(
    benchmarks: &[PatientBenchmark],
    weeks: u32,
    arm: Arm,
    cavitation_weight: Option<f64>,
) -> Result<(ConversionDistribution, ConversionDistribution)> {
    let collapse = |at_lower: bool| -> Vec<PatientBenchmark> {
        benchmarks
            .iter()
            .map(|b| {
                let t = if at_lower { b.set.lower } else { b.set.upper };
                PatientBenchmark {
                    set: crate::coarsening::CoarseningSet {
                        times: vec![t],
                        lower: t,
                        upper: t,
                    },
                    q: Vec::new(),
                    ..b.clone()
                }
            })
            .collect()
    };
    let best = arm_distribution(&collapse(true), weeks, arm, f64::NEG_INFINITY, cavitation_weight)?;
    let worst = arm_distribution(&collapse(false), weeks, arm, f64::INFINITY, cavitation_weight)?;
    Ok((best, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PatientRecord, TestResult::*};
    use approx::assert_abs_diff_eq;

    fn dist(pmf: &[f64]) -> ConversionDistribution {
        ConversionDistribution::new(Arm::Control, 0.0, pmf.to_vec())
    }

    #[test]
    fn hazard_arithmetic() {
        let d = dist(&[0.2, 0.3, 0.5]);
        assert_abs_diff_eq!(d.hazard(1).unwrap(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(d.hazard(2).unwrap(), 0.375, epsilon = 1e-15);
    }

    #[test]
    fn point_mass_at_k_plus_one_has_zero_hazard() {
        let d = dist(&[0.0, 0.0, 0.0, 1.0]);
        assert!(d.hazards().iter().all(|h| *h == Some(0.0)));
    }

    #[test]
    fn hazard_undefined_without_survivors() {
        let d = dist(&[1.0, 0.0, 0.0]);
        assert!(matches!(d.hazard(2), Err(Error::UndefinedHazard(2))));
    }

    #[test]
    fn kolmogorov_tie_and_sign() {
        let d = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(signed_kolmogorov(&d, &d), (1, 0.0));
        // Moving 0.1 of mass from week 1 to week K+1 lowers the CDF everywhere by 0.1.
        let shifted = dist(&[0.1, 0.3, 0.6]);
        let (k, gap) = signed_kolmogorov(&shifted, &d);
        assert_eq!(k, 1);
        assert_abs_diff_eq!(gap, -0.1, epsilon = 1e-15);
    }

    #[test]
    fn averaging_two_determined_patients() {
        let a = PatientRecord::from_results("a", Arm::Control, false, &[Positive, Positive, Negative, Negative, Negative], &[Negative; 5]);
        let b = PatientRecord::from_results("b", Arm::Control, true, &[Positive, Positive, Positive, Positive, Negative], &[Negative; 5]);
        let cohort = Cohort::new(5, vec![a, b]).unwrap();
        let d = marginal_distribution(&cohort, Arm::Control, &ModelParams::zeros(5), &TiltParams::benchmark(), false).unwrap();
        assert_eq!(d.pmf, vec![0.0, 0.0, 0.5, 0.0, 0.5, 0.0]);
        let err = marginal_distribution(&cohort, Arm::Treated, &ModelParams::zeros(5), &TiltParams::benchmark(), false);
        assert!(matches!(err, Err(Error::EmptyStratum(_))));
    }
}
