//! Conditional law of the conversion time given a patient's observed data.
//!
//! For a patient whose coarsening set has more than one element, the distribution over the
//! set is assembled backwards from the latest feasible time: first `P[T = R+1 | O]`, then
//! `P[T = k | T <= k, O]` for each interior feasible `k`. Each of these is identified by the
//! probability that the culture at week `k - 1` is positive among otherwise-matching
//! patients whose week `k - 1` culture was observed and whose cultures from `k` on were
//! observed negative. Under Markov sub-models that probability reduces to a ratio of two
//! local products, [`g_factor`] at `y = 0` and `y = 1`.
//!
//! Departures from that benchmark are expressed as an exponential tilt of the odds by
//! `e^alpha`, with one `alpha` per arm.

use serde::Serialize;

use crate::coarsening::{coarsening_set, CoarseningSet};
use crate::data::{Arm, PatientRecord, TestResult};
use crate::error::{Error, Result};
use crate::glm::{ModelKind, ModelParams, VisitContext, VisitState};

/// Bounds applied to benchmark probabilities before tilting.
pub const PROB_CLAMP: f64 = 1e-15;

/// Sensitivity parameters for the control and treated arms; `0` is the benchmark.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TiltParams {
    pub alpha0: f64,
    pub alpha1: f64,
}

impl TiltParams {
    pub fn new(alpha0: f64, alpha1: f64) -> Self {
        TiltParams { alpha0, alpha1 }
    }

    pub fn benchmark() -> Self {
        Self::default()
    }

    pub fn for_arm(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.alpha0,
            Arm::Treated => self.alpha1,
        }
    }
}

/// Probability that the smear at a visit is missing. Only needed to show that the
/// imputation probabilities do not depend on it; the analysis never fits one.
///
/// `ctx.current_culture` carries the current culture. Implementations that read culture
/// *values* (current or previous) break the cancellation.
pub trait SmearMissingnessLaw {
    fn prob_missing(&self, ctx: &VisitContext) -> f64;
}

/// Local data around a target visit `j` whose culture is treated as observed with value `y`.
#[derive(Clone, Copy, Debug)]
pub struct GContext {
    pub weeks: u32,
    pub target_week: u32,
    /// Actual data at week `j - 1`.
    pub prev: Option<VisitState>,
    pub target_smear: TestResult,
    /// Smear at week `j + 1`, absent when `j == K`.
    pub next_smear: Option<TestResult>,
    pub x: f64,
    pub z: f64,
}

impl GContext {
    pub fn for_patient(p: &PatientRecord, target_week: u32) -> Self {
        let weeks = p.weeks();
        GContext {
            weeks,
            target_week,
            prev: (target_week > 1).then(|| {
                let v = p.visit(target_week - 1);
                VisitState {
                    culture: v.culture,
                    smear: v.smear,
                }
            }),
            target_smear: p.smear(target_week),
            next_smear: (target_week < weeks).then(|| p.smear(target_week + 1)),
            x: p.x(),
            z: p.arm.z(),
        }
    }
}

fn bernoulli(p: f64, outcome_is_one: bool) -> f64 {
    if outcome_is_one {
        p
    } else {
        1.0 - p
    }
}

fn smear_factor(params: &ModelParams, ctx: &VisitContext, smear: TestResult) -> f64 {
    match smear.indicator() {
        Some(s) => bernoulli(params.prob(ModelKind::D, ctx), s == 1),
        None => 1.0,
    }
}

/// Product of all factors of the observed-data likelihood that depend on the target
/// culture value `y` (1 = negative), given that the following culture is observed negative.
///
/// Factors referring to week `K + 1` are taken as 1. The smear-missingness factors are only
/// included when `smear_law` is given.
pub fn g_factor(
    y: u8,
    ctx: &GContext,
    params: &ModelParams,
    smear_law: Option<&dyn SmearMissingnessLaw>,
) -> Result<f64> {
    let y_result = TestResult::from_indicator(y);
    let target = VisitContext {
        week: ctx.target_week,
        prev: ctx.prev,
        current_culture: y_result,
        x: ctx.x,
        z: ctx.z,
    };
    let check = |v: f64, what: &str| -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!(
                "g-factor {what} at week {}",
                ctx.target_week
            )))
        }
    };

    let mut g = check(bernoulli(params.prob(ModelKind::B, &target), y == 1), "culture")?;
    g *= check(smear_factor(params, &target, ctx.target_smear), "smear")?;
    if let Some(law) = smear_law {
        g *= check(bernoulli(law.prob_missing(&target), ctx.target_smear.is_missing()), "smear missingness")?;
    }

    if let Some(next_smear) = ctx.next_smear {
        let next = VisitContext {
            week: ctx.target_week + 1,
            prev: Some(VisitState {
                culture: y_result,
                smear: ctx.target_smear,
            }),
            current_culture: TestResult::Negative,
            x: ctx.x,
            z: ctx.z,
        };
        g *= check(1.0 - params.prob(ModelKind::A, &next), "next culture missingness")?;
        g *= check(params.prob(ModelKind::B, &next), "next culture")?;
        g *= check(smear_factor(params, &next, next_smear), "next smear")?;
        if let Some(law) = smear_law {
            g *= check(bernoulli(law.prob_missing(&next), next_smear.is_missing()), "next smear missingness")?;
        }
    }
    Ok(g)
}

/// `P[culture at j positive | matching data with that culture observed]` from the g-ratio.
pub fn positive_given_context(
    ctx: &GContext,
    params: &ModelParams,
    smear_law: Option<&dyn SmearMissingnessLaw>,
) -> Result<f64> {
    let g0 = g_factor(0, ctx, params, smear_law)?;
    let g1 = g_factor(1, ctx, params, smear_law)?;
    let total = g0 + g1;
    if !(total > 0.0) {
        return Err(Error::NonFinite(format!(
            "g-ratio denominator at week {}",
            ctx.target_week
        )));
    }
    Ok(g0 / total)
}

fn check_time(set: &CoarseningSet, id: &str, k: u32) -> Result<()> {
    if set.is_singleton() {
        return Err(Error::Contract(format!(
            "patient {id}: conversion time is determined; no benchmark probability"
        )));
    }
    if !set.contains(k) || k == set.lower {
        return Err(Error::Contract(format!(
            "patient {id}: week {k} is not a feasible time above L = {}",
            set.lower
        )));
    }
    Ok(())
}

/// Benchmark probability that `T = k` at feasible time `k > L`: for `k = R + 1` this is
/// `P[T = R+1 | O]`, otherwise `P[T = k | T <= k, O]`.
pub fn benchmark_prob(p: &PatientRecord, k: u32, params: &ModelParams) -> Result<f64> {
    benchmark_prob_with(p, k, params, None)
}

/// [`benchmark_prob`] with an explicit smear-missingness law multiplied into the g-factors.
pub fn benchmark_prob_with(
    p: &PatientRecord,
    k: u32,
    params: &ModelParams,
    smear_law: Option<&dyn SmearMissingnessLaw>,
) -> Result<f64> {
    check_time(&coarsening_set(p), &p.id, k)?;
    positive_given_context(&GContext::for_patient(p, k - 1), params, smear_law)
}

/// Exponential tilt of a probability: multiplies its odds by `e^alpha`.
pub fn tilt(p0: f64, alpha: f64) -> f64 {
    if p0 <= 0.0 || p0 >= 1.0 || alpha == 0.0 {
        return p0;
    }
    if alpha.abs() > 30.0 {
        let log_odds = p0.ln() - (1.0 - p0).ln() + alpha;
        return crate::glm::expit(log_odds);
    }
    let w = p0 * alpha.exp();
    w / (w + (1.0 - p0))
}

/// Per-patient quantities that do not depend on the tilt.
#[derive(Clone, Debug, Serialize)]
pub struct PatientBenchmark {
    pub patient_id: String,
    pub arm: Arm,
    pub cavitation: bool,
    pub set: CoarseningSet,
    /// Clamped benchmark probabilities for `set.times[1..]`.
    pub q: Vec<f64>,
    /// How many of `q` hit the clamp.
    pub clamped: usize,
}

impl PatientBenchmark {
    pub fn compute(p: &PatientRecord, params: &ModelParams) -> Result<Self> {
        let set = coarsening_set(p);
        let mut q = Vec::with_capacity(set.times.len().saturating_sub(1));
        let mut clamped = 0;
        for &k in set.times.iter().skip(1) {
            let raw = positive_given_context(&GContext::for_patient(p, k - 1), params, None)?;
            let c = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if c != raw {
                clamped += 1;
            }
            q.push(c);
        }
        Ok(PatientBenchmark {
            patient_id: p.id.clone(),
            arm: p.arm,
            cavitation: p.cavitation,
            set,
            q,
            clamped,
        })
    }

    /// Conditional distribution of `T` over the coarsening set at tilt `alpha`.
    pub fn distribution(&self, alpha: f64) -> ConditionalDistribution {
        let times = &self.set.times;
        let mut mass = vec![0.0; times.len()];
        if times.len() == 1 {
            mass[0] = 1.0;
        } else {
            // Walk back from R+1; `remaining` is P[T < t | O] after visiting t.
            let mut remaining = 1.0;
            for i in (1..times.len()).rev() {
                let q = tilt(self.q[i - 1], alpha);
                mass[i] = remaining * q;
                remaining *= 1.0 - q;
            }
            mass[0] = remaining;
        }
        ConditionalDistribution {
            patient_id: self.patient_id.clone(),
            support: times.iter().copied().zip(mass).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalDistribution {
    pub patient_id: String,
    /// `(time, probability)` over the coarsening set, ascending in time.
    pub support: Vec<(u32, f64)>,
}

impl ConditionalDistribution {
    pub fn mass(&self, t: u32) -> f64 {
        self.support
            .iter()
            .find(|&&(s, _)| s == t)
            .map_or(0.0, |&(_, m)| m)
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|&(_, m)| m).sum()
    }
}

pub fn conditional_distribution(
    p: &PatientRecord,
    params: &ModelParams,
    tp: &TiltParams,
) -> Result<ConditionalDistribution> {
    Ok(PatientBenchmark::compute(p, params)?.distribution(tp.for_arm(p.arm)))
}

#[derive(Serialize)]
struct DumpEntry<'a> {
    patient_id: &'a str,
    times: &'a [u32],
    q: &'a [f64],
    clamped: usize,
    mass: Vec<(u32, f64)>,
}

/// JSON array with each patient's coarsening set, benchmark probabilities and mass function.
pub fn debug_dump(benchmarks: &[PatientBenchmark], tp: &TiltParams) -> Result<String> {
    let entries: Vec<DumpEntry> = benchmarks
        .iter()
        .map(|b| DumpEntry {
            patient_id: &b.patient_id,
            times: &b.set.times,
            q: &b.q,
            clamped: b.clamped,
            mass: b.distribution(tp.for_arm(b.arm)).support,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&entries)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TestResult::{Missing as M, Negative as N, Positive as P};
    use approx::assert_abs_diff_eq;

    fn mary() -> PatientRecord {
        PatientRecord::from_results("mary", Arm::Treated, true, &[M, P, M, N, M, N, N, N], &[P, P, N, M, N, N, N, N])
    }

    #[test]
    fn tilt_examples() {
        for p in [0.0, 0.1, 0.5, 0.93, 1.0] {
            assert_eq!(tilt(p, 0.0), p);
        }
        assert_abs_diff_eq!(tilt(0.5, 2f64.ln()), 2.0 / 3.0, epsilon = 1e-15);
        assert!((1.0 - tilt(0.3, 50.0)) < 1e-12);
        assert!(tilt(0.3, -50.0) < 1e-12);
        assert_abs_diff_eq!(tilt(0.3, 31.0) / (1.0 - tilt(0.3, 31.0)), (0.3 / 0.7) * 31f64.exp(), epsilon = 1e-3 * 31f64.exp());
    }

    #[test]
    fn zero_coefficients_give_one_half() {
        let params = ModelParams::zeros(8);
        for k in [4, 6] {
            assert_abs_diff_eq!(benchmark_prob(&mary(), k, &params).unwrap(), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_infeasible_times() {
        let params = ModelParams::zeros(8);
        assert!(matches!(benchmark_prob(&mary(), 3, &params), Err(Error::Contract(_))));
        assert!(matches!(benchmark_prob(&mary(), 5, &params), Err(Error::Contract(_))));
        let determined = PatientRecord::from_results("d", Arm::Control, false, &[P, N], &[N, N]);
        assert!(benchmark_prob(&determined, 2, &ModelParams::zeros(2)).is_err());
    }

    #[test]
    fn product_formula_arithmetic() {
        let bench = PatientBenchmark {
            patient_id: "mary".into(),
            arm: Arm::Treated,
            cavitation: true,
            set: coarsening_set(&mary()),
            q: vec![0.5, 0.2],
            clamped: 0,
        };
        let d = bench.distribution(0.0);
        assert_abs_diff_eq!(d.mass(6), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(d.mass(4), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(d.mass(3), 0.4, epsilon = 1e-15);
        assert_eq!(d.mass(5), 0.0);
    }

    #[test]
    fn singleton_is_unit_mass() {
        let p = PatientRecord::from_results("s", Arm::Control, false, &[M, P, M, N, P, N, N, N], &[N; 8]);
        let d = conditional_distribution(&p, &ModelParams::zeros(8), &TiltParams::benchmark()).unwrap();
        assert_eq!(d.support, vec![(6, 1.0)]);
    }

    #[test]
    fn extreme_tilts_hit_bounds() {
        let params = ModelParams::zeros(8);
        let worst = conditional_distribution(&mary(), &params, &TiltParams::new(0.0, 50.0)).unwrap();
        assert!(worst.mass(6) > 1.0 - 1e-10);
        let best = conditional_distribution(&mary(), &params, &TiltParams::new(0.0, -50.0)).unwrap();
        assert!(best.mass(3) > 1.0 - 1e-10);
    }

    #[test]
    fn last_week_target_uses_only_local_factors() {
        // Culture missing at K: no week K+1 factors. Only b_K and the week-K smear factor remain.
        let mut params = ModelParams::zeros(3);
        params.b = params.b.iter().enumerate().map(|(j, _)| Some(0.3 * j as f64 - 0.4)).collect();
        params.d = params.d.iter().enumerate().map(|(j, _)| Some(0.2 - 0.15 * j as f64)).collect();
        params.a = params.a.iter().map(|_| Some(5.0)).collect();
        let p = PatientRecord::from_results("p", Arm::Treated, true, &[P, N, M], &[P, M, N]);
        let prev = VisitState { culture: N, smear: M };
        let ctx = |c| VisitContext { week: 3, prev: Some(prev), current_culture: c, x: 1.0, z: 1.0 };
        let pb = params.prob(ModelKind::B, &ctx(N));
        let d_neg = params.prob(ModelKind::D, &ctx(N));
        let d_pos = params.prob(ModelKind::D, &ctx(P));
        let g0 = (1.0 - pb) * d_pos;
        let g1 = pb * d_neg;
        let expected = g0 / (g0 + g1);
        assert_abs_diff_eq!(benchmark_prob(&p, 4, &params).unwrap(), expected, epsilon = 1e-15);
    }
}
