//! Synthetic cohorts drawn from the sequential logistic law, plus brute-force oracles.
//!
//! The generator runs the observed-data factorization forward: cavitation, then at each week
//! culture missingness, culture value, smear missingness and smear value. It includes a
//! smear-missingness model so that the cancellation of that model in the imputation
//! probabilities is exercised by nontrivial data.
//!
//! Linear predictors here are written out term by term from the column names rather than
//! through [`ModelSpec::eta`], so the enumeration oracles do not share that code path.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Arm, Cohort, PatientRecord, TestResult, VisitRecord};
use crate::error::{Error, Result};
use crate::glm::{expit, ModelKind, ModelParams, VisitContext};
use crate::imputation::{PatientBenchmark, SmearMissingnessLaw};

/// Exhaustive enumeration over all 9^K visit configurations is capped at this many weeks.
pub const MAX_ENUMERATION_WEEKS: u32 = 6;

/// Smear-missingness model. It reads culture missingness but never culture values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmearMissingnessModel {
    pub weeks: u32,
    /// Per-week intercepts.
    pub week: Vec<f64>,
    pub culture_missing: f64,
    pub lag_culture_missing: f64,
    pub lag_smear_missing: f64,
    pub lag_smear_negative: f64,
    pub treatment: f64,
    pub cavitation: f64,
}

impl SmearMissingnessModel {
    pub fn eta(&self, ctx: &VisitContext) -> f64 {
        let mut eta = self.week[(ctx.week - 1) as usize]
            + self.culture_missing * ctx.current_culture.missing_indicator()
            + self.treatment * ctx.z
            + self.cavitation * ctx.x;
        if let Some(prev) = ctx.prev {
            eta += self.lag_culture_missing * prev.culture.missing_indicator()
                + self.lag_smear_missing * prev.smear.missing_indicator()
                + self.lag_smear_negative * prev.smear.observed_negative_indicator();
        }
        eta
    }

    /// A model with every coefficient drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(weeks: u32, scale: f64, rng: &mut R) -> Self {
        let mut u = || rng.random_range(-scale..=scale);
        SmearMissingnessModel {
            weeks,
            week: (0..weeks).map(|_| u()).collect(),
            culture_missing: u(),
            lag_culture_missing: u(),
            lag_smear_missing: u(),
            lag_smear_negative: u(),
            treatment: u(),
            cavitation: u(),
        }
    }
}

impl SmearMissingnessLaw for SmearMissingnessModel {
    fn prob_missing(&self, ctx: &VisitContext) -> f64 {
        expit(self.eta(ctx))
    }
}

/// Term-by-term coefficients of models a, b and d, looked up by column name.
#[derive(Clone, Debug)]
struct Terms {
    a_week: Vec<f64>,
    a_week_cav: Vec<f64>,
    a_lag: [f64; 4],
    a_treat: f64,
    b_week: Vec<f64>,
    b_lag: [f64; 4],
    b_treat: f64,
    b_cav: f64,
    d_week: Vec<f64>,
    d_culture_missing: f64,
    d_culture_negative: f64,
    d_culture_negative_cav: f64,
    d_lag: [f64; 4],
    d_treat: f64,
    d_cav: f64,
}

impl Terms {
    fn new(params: &ModelParams) -> Self {
        let get = |kind: ModelKind, name: &str| -> f64 {
            let spec = params.spec(kind);
            let idx = spec
                .columns()
                .iter()
                .position(|c| c == name)
                .unwrap_or_else(|| panic!("model {kind} has no column {name}"));
            params.coefficients(kind)[idx].unwrap_or(0.0)
        };
        let weeks = |kind, suffix: &str| {
            (1..=params.weeks)
                .map(|w| get(kind, &format!("wk{w}{suffix}")))
                .collect::<Vec<_>>()
        };
        let lags = |kind| {
            [
                get(kind, "lag_culture_missing"),
                get(kind, "lag_culture_negative"),
                get(kind, "lag_smear_missing"),
                get(kind, "lag_smear_negative"),
            ]
        };
        use ModelKind::*;
        Terms {
            a_week: weeks(A, ""),
            a_week_cav: weeks(A, ":cav"),
            a_lag: lags(A),
            a_treat: get(A, "treatment"),
            b_week: weeks(B, ""),
            b_lag: lags(B),
            b_treat: get(B, "treatment"),
            b_cav: get(B, "cavitation"),
            d_week: weeks(D, ""),
            d_culture_missing: get(D, "culture_missing"),
            d_culture_negative: get(D, "culture_negative"),
            d_culture_negative_cav: get(D, "culture_negative:cav"),
            d_lag: lags(D),
            d_treat: get(D, "treatment"),
            d_cav: get(D, "cavitation"),
        }
    }

    fn lag(coef: &[f64; 4], prev: Option<&VisitRecord>) -> f64 {
        match prev {
            None => 0.0,
            Some(v) => {
                let m_c = v.culture.is_missing() as u8 as f64;
                let c = (v.culture == TestResult::Negative) as u8 as f64;
                let m_s = v.smear.is_missing() as u8 as f64;
                let s = (v.smear == TestResult::Negative) as u8 as f64;
                coef[0] * m_c + coef[1] * c + coef[2] * m_s + coef[3] * s
            }
        }
    }

    fn p_culture_missing(&self, k: usize, prev: Option<&VisitRecord>, x: f64, z: f64) -> f64 {
        expit(self.a_week[k - 1] + self.a_week_cav[k - 1] * x + Self::lag(&self.a_lag, prev) + self.a_treat * z)
    }

    fn p_culture_negative(&self, k: usize, prev: Option<&VisitRecord>, x: f64, z: f64) -> f64 {
        expit(self.b_week[k - 1] + Self::lag(&self.b_lag, prev) + self.b_treat * z + self.b_cav * x)
    }

    fn p_smear_negative(&self, k: usize, culture: TestResult, prev: Option<&VisitRecord>, x: f64, z: f64) -> f64 {
        let neg = (culture == TestResult::Negative) as u8 as f64;
        expit(
            self.d_week[k - 1]
                + self.d_culture_missing * culture.is_missing() as u8 as f64
                + self.d_culture_negative * neg
                + self.d_culture_negative_cav * neg * x
                + Self::lag(&self.d_lag, prev)
                + self.d_treat * z
                + self.d_cav * x,
        )
    }
}

/// Joint law of the observed data given arm and cavitation.
#[derive(Clone, Debug)]
pub struct SimLaw {
    pub params: ModelParams,
    pub smear_missing: SmearMissingnessModel,
    terms: Terms,
}

impl SimLaw {
    pub fn new(params: ModelParams, smear_missing: SmearMissingnessModel) -> Self {
        assert_eq!(params.weeks, smear_missing.weeks);
        let terms = Terms::new(&params);
        SimLaw {
            params,
            smear_missing,
            terms,
        }
    }

    pub fn weeks(&self) -> u32 {
        self.params.weeks
    }

    /// A law with moderate missingness (roughly 15% of cultures per visit) and a clear
    /// treatment benefit on culture negativity.
    pub fn reference(weeks: u32) -> Self {
        let k = weeks as usize;
        let mut a: Vec<f64> = (0..k).map(|w| -2.45 + 0.05 * (w % 3) as f64).collect();
        a.extend((0..k).map(|w| if w % 2 == 0 { 0.3 } else { -0.2 }));
        a.extend([1.2, -0.1, 1.0, 0.2, 0.1]);

        let mut b: Vec<f64> = (0..k).map(|w| -1.8 + 0.1 * w as f64).collect();
        b.extend([1.0, 1.8, 1.1, 0.9, 0.5, -0.3]);

        let mut d: Vec<f64> = (0..k).map(|w| -1.2 + 0.05 * w as f64).collect();
        d.extend([0.2, 2.3, -0.7, 0.4, 0.3, 1.2, 1.9, -0.05, 0.2]);

        let smear = SmearMissingnessModel {
            weeks,
            week: vec![-2.0; k],
            culture_missing: 2.0,
            lag_culture_missing: 0.5,
            lag_smear_missing: 1.0,
            lag_smear_negative: 0.3,
            treatment: 0.0,
            cavitation: 0.1,
        };
        SimLaw::new(ModelParams::from_vectors(weeks, a, b, d), smear)
    }

    /// Coefficients drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(weeks: u32, scale: f64, rng: &mut R) -> Self {
        let n = |kind| crate::glm::ModelSpec::new(kind, weeks).n_columns();
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-scale..=scale)).collect::<Vec<_>>();
        let a = draw(n(ModelKind::A));
        let b = draw(n(ModelKind::B));
        let d = draw(n(ModelKind::D));
        let params = ModelParams::from_vectors(weeks, a, b, d);
        let smear = SmearMissingnessModel::random(weeks, scale, rng);
        SimLaw::new(params, smear)
    }

    /// Probability of the visit at week `k` given the previous visit.
    pub fn visit_probability(&self, k: usize, visit: &VisitRecord, prev: Option<&VisitRecord>, x: f64, z: f64) -> f64 {
        let t = &self.terms;
        let p_miss = t.p_culture_missing(k, prev, x, z);
        let mut prob = match visit.culture {
            TestResult::Missing => p_miss,
            TestResult::Negative => (1.0 - p_miss) * t.p_culture_negative(k, prev, x, z),
            TestResult::Positive => (1.0 - p_miss) * (1.0 - t.p_culture_negative(k, prev, x, z)),
        };
        let ctx = VisitContext {
            week: k as u32,
            prev: prev.map(|v| crate::glm::VisitState {
                culture: v.culture,
                smear: v.smear,
            }),
            current_culture: visit.culture,
            x,
            z,
        };
        let p_smear_missing = self.smear_missing.prob_missing(&ctx);
        prob *= match visit.smear {
            TestResult::Missing => p_smear_missing,
            s => {
                let p_neg = t.p_smear_negative(k, visit.culture, prev, x, z);
                (1.0 - p_smear_missing) * if s == TestResult::Negative { p_neg } else { 1.0 - p_neg }
            }
        };
        prob
    }

    /// Probability of a patient's full visit history given arm and cavitation.
    pub fn record_probability(&self, p: &PatientRecord) -> f64 {
        let (x, z) = (p.x(), p.arm.z());
        p.visits
            .iter()
            .enumerate()
            .map(|(i, v)| self.visit_probability(i + 1, v, i.checked_sub(1).map(|j| &p.visits[j]), x, z))
            .product()
    }

    fn sample_patient<R: Rng>(&self, id: String, arm: Arm, cavitation: bool, rng: &mut R) -> PatientRecord {
        let t = &self.terms;
        let (x, z) = (cavitation as u8 as f64, arm.z());
        let mut visits: Vec<VisitRecord> = Vec::with_capacity(self.weeks() as usize);
        for k in 1..=self.weeks() as usize {
            let prev = visits.last();
            let culture = if rng.random::<f64>() < t.p_culture_missing(k, prev, x, z) {
                TestResult::Missing
            } else if rng.random::<f64>() < t.p_culture_negative(k, prev, x, z) {
                TestResult::Negative
            } else {
                TestResult::Positive
            };
            let ctx = VisitContext {
                week: k as u32,
                prev: prev.map(|v| crate::glm::VisitState {
                    culture: v.culture,
                    smear: v.smear,
                }),
                current_culture: culture,
                x,
                z,
            };
            let smear = if rng.random::<f64>() < self.smear_missing.prob_missing(&ctx) {
                TestResult::Missing
            } else if rng.random::<f64>() < t.p_smear_negative(k, culture, prev, x, z) {
                TestResult::Negative
            } else {
                TestResult::Positive
            };
            visits.push(VisitRecord {
                week: k as u32,
                culture,
                smear,
            });
        }
        PatientRecord {
            id,
            arm,
            cavitation,
            visits,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub law: SimLaw,
    pub n_per_arm: [usize; 2],
    /// Cavitation prevalence in the control and treated arms.
    pub cavitation_prevalence: [f64; 2],
    pub seed: u64,
}

impl SimConfig {
    pub fn weeks(&self) -> u32 {
        self.law.weeks()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cavitation_prevalence.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("cavitation prevalence must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Draws a cohort. Patient `i` of arm `z` uses its own ChaCha stream, so the cohort does not
/// depend on generation order.
pub fn generate(cfg: &SimConfig) -> Result<Cohort> {
    cfg.validate()?;
    let mut patients = Vec::with_capacity(cfg.n_per_arm.iter().sum());
    for arm in Arm::BOTH {
        let z = arm.index();
        for i in 0..cfg.n_per_arm[z] {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((z as u64) << 40) | i as u64);
            let cavitation = rng.random::<f64>() < cfg.cavitation_prevalence[z];
            let id = format!("z{z}-{i:06}");
            patients.push(cfg.law.sample_patient(id, arm, cavitation, &mut rng));
        }
    }
    Cohort::new(cfg.weeks(), patients)
}

const OUTCOMES: [TestResult; 3] = [TestResult::Negative, TestResult::Positive, TestResult::Missing];

/// Calls `f` on every visit history of length `weeks` (all 9^K culture/smear combinations).
fn for_each_history(weeks: u32, mut f: impl FnMut(&[VisitRecord])) {
    let k = weeks as usize;
    let total = 9usize.pow(weeks);
    let mut visits: Vec<VisitRecord> = (1..=weeks)
        .map(|w| VisitRecord {
            week: w,
            culture: TestResult::Negative,
            smear: TestResult::Negative,
        })
        .collect();
    for code in 0..total {
        let mut c = code;
        for v in visits.iter_mut().take(k) {
            v.culture = OUTCOMES[c % 3];
            v.smear = OUTCOMES[(c / 3) % 3];
            c /= 9;
        }
        f(&visits);
    }
}

/// Exact `P[culture at week k-1 positive | O = o^(k-1)]` by summing the joint law over every
/// configuration in the conditioning event: same arm, cavitation and smear data as `p`, same
/// cultures before week `k - 1`, an observed culture at `k - 1`, and observed negative cultures
/// from week `k` on.
pub fn enumerate_conditional(law: &SimLaw, p: &PatientRecord, k: u32) -> Result<f64> {
    let weeks = p.weeks();
    if weeks > MAX_ENUMERATION_WEEKS {
        return Err(Error::Oracle(format!(
            "enumeration supports at most {MAX_ENUMERATION_WEEKS} weeks, got {weeks}"
        )));
    }
    if k < 2 || k > weeks + 1 {
        return Err(Error::Oracle(format!("target time {k} outside 2..={}", weeks + 1)));
    }
    let target = (k - 1) as usize;
    let mut event = 0.0;
    let mut positive = 0.0;
    let mut candidate = p.clone();
    for_each_history(weeks, |visits| {
        let in_event = visits.iter().enumerate().all(|(i, v)| {
            let week = i + 1;
            let culture_ok = if week < target {
                v.culture == p.visits[i].culture
            } else if week == target {
                !v.culture.is_missing()
            } else {
                v.culture == TestResult::Negative
            };
            culture_ok && v.smear == p.visits[i].smear
        });
        if !in_event {
            return;
        }
        candidate.visits.copy_from_slice(visits);
        let prob = law.record_probability(&candidate);
        event += prob;
        if visits[target - 1].culture == TestResult::Positive {
            positive += prob;
        }
    });
    if !(event > 0.0) {
        return Err(Error::Oracle("conditioning event has zero probability".into()));
    }
    Ok(positive / event)
}

/// Total probability of all visit histories for one arm and cavitation status.
pub fn total_probability(law: &SimLaw, arm: Arm, cavitation: bool) -> Result<f64> {
    if law.weeks() > MAX_ENUMERATION_WEEKS {
        return Err(Error::Oracle("too many weeks for enumeration".into()));
    }
    let mut p = PatientRecord::from_results("e", arm, cavitation, &vec![TestResult::Missing; law.weeks() as usize], &vec![TestResult::Missing; law.weeks() as usize]);
    let mut total = 0.0;
    for_each_history(law.weeks(), |visits| {
        p.visits.copy_from_slice(visits);
        total += law.record_probability(&p);
    });
    Ok(total)
}

/// Feasible conversion times from all completions of the missing cultures.
pub fn enumerate_t_values(cultures: &[TestResult]) -> BTreeSet<u32> {
    let k = cultures.len();
    let missing: Vec<usize> = (0..k).filter(|&i| cultures[i].is_missing()).collect();
    let mut out = BTreeSet::new();
    let mut filled = cultures.to_vec();
    for mask in 0u64..(1u64 << missing.len()) {
        for (bit, &i) in missing.iter().enumerate() {
            filled[i] = if mask >> bit & 1 == 1 {
                TestResult::Positive
            } else {
                TestResult::Negative
            };
        }
        // Earliest week from which every culture is negative; K+1 if the last is positive.
        let t = (1..=k + 1)
            .find(|&w| filled[w - 1..].iter().all(|&c| c == TestResult::Negative))
            .unwrap_or(k + 1);
        out.insert(t as u32);
    }
    out
}

/// Population distribution of `T` for one arm and cavitation stratum under the law, with the
/// conditional law of `T` given the data taken from the imputation engine at tilt `alpha`
/// and the law's own coefficients. Enumerates all 9^K histories.
pub fn population_distribution(law: &SimLaw, arm: Arm, cavitation: bool, alpha: f64) -> Result<Vec<f64>> {
    let weeks = law.weeks();
    if weeks > MAX_ENUMERATION_WEEKS {
        return Err(Error::Oracle("too many weeks for enumeration".into()));
    }
    let mut pmf = vec![0.0; weeks as usize + 1];
    let mut p = PatientRecord::from_results("e", arm, cavitation, &vec![TestResult::Missing; weeks as usize], &vec![TestResult::Missing; weeks as usize]);
    let mut failure = None;
    for_each_history(weeks, |visits| {
        if failure.is_some() {
            return;
        }
        p.visits.copy_from_slice(visits);
        let prob = law.record_probability(&p);
        match PatientBenchmark::compute(&p, &law.params) {
            Ok(b) => {
                for (t, m) in b.distribution(alpha).support {
                    pmf[(t - 1) as usize] += prob * m;
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(pmf),
    }
}
