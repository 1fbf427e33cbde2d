//! Logistic sub-models for the observed-data law and their maximum-likelihood fit.
//!
//! Three models are fitted on pooled visit-level records, all Markov in the previous visit:
//!
//! * `a`: culture missing at week k, with per-week intercepts and per-week cavitation terms;
//! * `b`: culture negative at week k given it was observed;
//! * `d`: smear negative at week k given it was observed, with current-culture terms.
//!
//! The smear-missingness model is never fitted: the conditional probabilities used for
//! imputation do not depend on it as long as it ignores culture values.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{Cohort, TestResult};
use crate::error::{Error, Result};

/// Number of lagged features `[M^c, (1-M^c)C, M^s, (1-M^s)S]` at the previous visit.
const LAG_TERMS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ModelKind {
    /// Culture missingness.
    A,
    /// Observed culture negative.
    B,
    /// Observed smear negative.
    D,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::A, ModelKind::B, ModelKind::D];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::A => "a",
            ModelKind::B => "b",
            ModelKind::D => "d",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Culture and smear results of one visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VisitState {
    pub culture: TestResult,
    pub smear: TestResult,
}

/// Everything a sub-model's linear predictor can see at week `week`.
#[derive(Clone, Copy, Debug)]
pub struct VisitContext {
    pub week: u32,
    /// Previous visit; `None` at week 1.
    pub prev: Option<VisitState>,
    /// Culture at the current week; only model `d` reads it.
    pub current_culture: TestResult,
    pub x: f64,
    pub z: f64,
}

impl VisitContext {
    fn lags(&self) -> [f64; LAG_TERMS] {
        match self.prev {
            None => [0.0; LAG_TERMS],
            Some(o) => [
                o.culture.missing_indicator(),
                o.culture.observed_negative_indicator(),
                o.smear.missing_indicator(),
                o.smear.observed_negative_indicator(),
            ],
        }
    }
}

/// Column layout of one sub-model for a study with `weeks` visits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub weeks: u32,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, weeks: u32) -> Self {
        ModelSpec { kind, weeks }
    }

    pub fn n_columns(&self) -> usize {
        let k = self.weeks as usize;
        match self.kind {
            ModelKind::A => 2 * k + LAG_TERMS + 1,
            ModelKind::B => k + LAG_TERMS + 2,
            ModelKind::D => k + 3 + LAG_TERMS + 2,
        }
    }

    pub fn columns(&self) -> Vec<String> {
        let k = self.weeks;
        let lags = [
            "lag_culture_missing",
            "lag_culture_negative",
            "lag_smear_missing",
            "lag_smear_negative",
        ];
        let mut cols: Vec<String> = (1..=k).map(|w| format!("wk{w}")).collect();
        match self.kind {
            ModelKind::A => {
                cols.extend((1..=k).map(|w| format!("wk{w}:cav")));
                cols.extend(lags.iter().map(|s| s.to_string()));
                cols.push("treatment".into());
            }
            ModelKind::B => {
                cols.extend(lags.iter().map(|s| s.to_string()));
                cols.push("treatment".into());
                cols.push("cavitation".into());
            }
            ModelKind::D => {
                cols.push("culture_missing".into());
                cols.push("culture_negative".into());
                cols.push("culture_negative:cav".into());
                cols.extend(lags.iter().map(|s| s.to_string()));
                cols.push("treatment".into());
                cols.push("cavitation".into());
            }
        }
        cols
    }

    /// Dense design row for `ctx`.
    pub fn features(&self, ctx: &VisitContext) -> Vec<f64> {
        let mut row = vec![0.0; self.n_columns()];
        let k = self.weeks as usize;
        let w = (ctx.week - 1) as usize;
        row[w] = 1.0;
        let lags = ctx.lags();
        match self.kind {
            ModelKind::A => {
                row[k + w] = ctx.x;
                row[2 * k..2 * k + LAG_TERMS].copy_from_slice(&lags);
                row[2 * k + LAG_TERMS] = ctx.z;
            }
            ModelKind::B => {
                row[k..k + LAG_TERMS].copy_from_slice(&lags);
                row[k + LAG_TERMS] = ctx.z;
                row[k + LAG_TERMS + 1] = ctx.x;
            }
            ModelKind::D => {
                let neg = ctx.current_culture.observed_negative_indicator();
                row[k] = ctx.current_culture.missing_indicator();
                row[k + 1] = neg;
                row[k + 2] = neg * ctx.x;
                row[k + 3..k + 3 + LAG_TERMS].copy_from_slice(&lags);
                row[k + 3 + LAG_TERMS] = ctx.z;
                row[k + 4 + LAG_TERMS] = ctx.x;
            }
        }
        row
    }

    /// Linear predictor without materializing the design row. Absent coefficients count as 0.
    pub fn eta(&self, coef: &[Option<f64>], ctx: &VisitContext) -> f64 {
        let c = |i: usize| coef[i].unwrap_or(0.0);
        let k = self.weeks as usize;
        let w = (ctx.week - 1) as usize;
        let lags = ctx.lags();
        let lag_sum = |start: usize| (0..LAG_TERMS).map(|j| c(start + j) * lags[j]).sum::<f64>();
        match self.kind {
            ModelKind::A => c(w) + c(k + w) * ctx.x + lag_sum(2 * k) + c(2 * k + LAG_TERMS) * ctx.z,
            ModelKind::B => c(w) + lag_sum(k) + c(k + LAG_TERMS) * ctx.z + c(k + LAG_TERMS + 1) * ctx.x,
            ModelKind::D => {
                let neg = ctx.current_culture.observed_negative_indicator();
                c(w) + c(k) * ctx.current_culture.missing_indicator()
                    + c(k + 1) * neg
                    + c(k + 2) * neg * ctx.x
                    + lag_sum(k + 3)
                    + c(k + 3 + LAG_TERMS) * ctx.z
                    + c(k + 4 + LAG_TERMS) * ctx.x
            }
        }
    }
}

/// One row per eligible (patient, week) with its binary response.
#[derive(Clone, Debug)]
pub struct DesignRows {
    pub spec: ModelSpec,
    pub rows: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
}

pub fn build_rows(cohort: &Cohort, spec: ModelSpec) -> DesignRows {
    let mut rows = Vec::new();
    let mut responses = Vec::new();
    for p in &cohort.patients {
        for k in 1..=cohort.weeks {
            let visit = p.visit(k);
            let ctx = VisitContext {
                week: k,
                prev: (k > 1).then(|| {
                    let v = p.visit(k - 1);
                    VisitState {
                        culture: v.culture,
                        smear: v.smear,
                    }
                }),
                current_culture: visit.culture,
                x: p.x(),
                z: p.arm.z(),
            };
            let response = match spec.kind {
                ModelKind::A => Some(visit.culture.missing_indicator()),
                ModelKind::B => visit.culture.indicator().map(f64::from),
                ModelKind::D => visit.smear.indicator().map(f64::from),
            };
            if let Some(y) = response {
                rows.push(spec.features(&ctx));
                responses.push(y);
            }
        }
    }
    DesignRows {
        spec,
        rows,
        responses,
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^eta)` without overflow.
fn log1p_exp(eta: f64) -> f64 {
    if eta > 35.0 {
        eta
    } else if eta < -35.0 {
        eta.exp()
    } else {
        eta.exp().ln_1p()
    }
}

/// Binomial logistic problem: each row carries `trials` Bernoulli draws with `successes` ones.
#[derive(Clone, Debug)]
pub struct LogisticProblem {
    pub design: DMatrix<f64>,
    pub successes: DVector<f64>,
    pub trials: DVector<f64>,
}

impl LogisticProblem {
    /// One Bernoulli trial per row.
    pub fn from_rows(rows: &[Vec<f64>], responses: &[f64]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let design = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        LogisticProblem {
            design,
            successes: DVector::from_column_slice(responses),
            trials: DVector::from_element(rows.len(), 1.0),
        }
    }

    /// Collapses identical design rows into binomial counts. The likelihood is unchanged.
    pub fn grouped(rows: &[Vec<f64>], responses: &[f64]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let mut groups: BTreeMap<Vec<u64>, (usize, f64, f64)> = BTreeMap::new();
        for (i, (row, &y)) in rows.iter().zip(responses).enumerate() {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let entry = groups.entry(key).or_insert((i, 0.0, 0.0));
            entry.1 += y;
            entry.2 += 1.0;
        }
        let n = groups.len();
        let mut design = DMatrix::zeros(n, p);
        let mut successes = DVector::zeros(n);
        let mut trials = DVector::zeros(n);
        for (g, (_, &(first, s, t))) in groups.iter().enumerate() {
            for j in 0..p {
                design[(g, j)] = rows[first][j];
            }
            successes[g] = s;
            trials[g] = t;
        }
        LogisticProblem {
            design,
            successes,
            trials,
        }
    }

    pub fn n_columns(&self) -> usize {
        self.design.ncols()
    }

    pub fn log_likelihood(&self, coef: &DVector<f64>) -> f64 {
        let eta = &self.design * coef;
        eta.iter()
            .zip(self.successes.iter().zip(self.trials.iter()))
            .map(|(&e, (&s, &t))| s * e - t * log1p_exp(e))
            .sum()
    }

    /// Gradient of the log-likelihood.
    pub fn score(&self, coef: &DVector<f64>) -> DVector<f64> {
        let eta = &self.design * coef;
        let resid = DVector::from_iterator(
            eta.len(),
            eta.iter()
                .zip(self.successes.iter().zip(self.trials.iter()))
                .map(|(&e, (&s, &t))| s - t * expit(e)),
        );
        self.design.tr_mul(&resid)
    }

    fn information(&self, coef: &DVector<f64>) -> DMatrix<f64> {
        let eta = &self.design * coef;
        let mut weighted = self.design.clone();
        for (i, (&e, &t)) in eta.iter().zip(self.trials.iter()).enumerate() {
            let p = expit(e);
            let w = t * p * (1.0 - p);
            weighted.row_mut(i).scale_mut(w);
        }
        self.design.tr_mul(&weighted)
    }

    fn drop_columns(&self, keep: &[usize]) -> LogisticProblem {
        LogisticProblem {
            design: self.design.select_columns(keep),
            successes: self.successes.clone(),
            trials: self.trials.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence requires the Euclidean norm of the score below this.
    pub score_tolerance: f64,
    /// Penalty weight λ on ‖γ‖²; 0 means plain maximum likelihood.
    pub ridge: f64,
    /// Coefficient magnitude beyond which an unconverged fit is declared separated.
    pub separation_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 100,
            score_tolerance: 1e-8,
            ridge: 0.0,
            separation_bound: 15.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LogisticFit {
    /// Estimates in the original column order; `None` for columns dropped as all-zero.
    pub coefficients: Vec<Option<f64>>,
    /// Model-based standard errors from the inverse information.
    pub std_errors: Vec<Option<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Euclidean norm of the (penalized) score at the estimate.
    pub score_norm: f64,
    pub penalized: bool,
    pub dropped: Vec<usize>,
}

impl LogisticFit {
    pub fn present(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.coefficients.iter().flatten().count(),
            self.coefficients.iter().flatten().copied(),
        )
    }
}

fn solve_spd(info: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = info.clone().cholesky() {
        return Some(chol.solve(rhs));
    }
    info.clone().lu().solve(rhs)
}

/// Maximum likelihood by iteratively reweighted least squares with step-halving.
///
/// All-zero columns are removed before fitting and come back as `None`.
pub fn fit_logistic(problem: &LogisticProblem, opts: &FitOptions) -> Result<LogisticFit> {
    fit_logistic_named(problem, opts, None)
}

fn fit_logistic_named(
    problem: &LogisticProblem,
    opts: &FitOptions,
    names: Option<&[String]>,
) -> Result<LogisticFit> {
    let p_all = problem.n_columns();
    if problem.design.nrows() == 0 {
        return Err(Error::Contract("logistic fit needs at least one row".into()));
    }
    let (keep, dropped): (Vec<usize>, Vec<usize>) =
        (0..p_all).partition(|&j| problem.design.column(j).iter().any(|&v| v != 0.0));
    let reduced = problem.drop_columns(&keep);
    let p = keep.len();
    let lambda = opts.ridge;
    let col_name = |j: usize| -> String {
        let orig = keep[j];
        names.map_or_else(|| format!("column {orig}"), |n| n[orig].clone())
    };

    let objective = |c: &DVector<f64>| reduced.log_likelihood(c) - lambda * c.norm_squared();
    let gradient = |c: &DVector<f64>| reduced.score(c) - c * (2.0 * lambda);

    let mut coef = DVector::zeros(p);
    let mut ll = objective(&coef);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad = gradient(&coef);

    while iterations < opts.max_iterations {
        if grad.norm() < opts.score_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut info = reduced.information(&coef);
        if lambda > 0.0 {
            for j in 0..p {
                info[(j, j)] += 2.0 * lambda;
            }
        }
        let step = solve_spd(&info, &grad).ok_or_else(|| {
            Error::Contract("singular information matrix; design is collinear".into())
        })?;

        let mut scale = 1.0;
        let mut candidate = &coef + &step;
        let mut candidate_ll = objective(&candidate);
        let mut halvings = 0;
        while !(candidate_ll >= ll - 1e-12 * ll.abs().max(1.0)) && halvings < 40 {
            scale *= 0.5;
            candidate = &coef + &step * scale;
            candidate_ll = objective(&candidate);
            halvings += 1;
        }
        if !candidate_ll.is_finite() {
            return Err(Error::NonFinite("logistic log-likelihood".into()));
        }
        let rel_change = (candidate_ll - ll).abs() / ll.abs().max(1e-300);
        coef = candidate;
        ll = candidate_ll;
        grad = gradient(&coef);

        if let Some((j, mag)) = coef
            .iter()
            .enumerate()
            .map(|(j, c)| (j, c.abs()))
            .find(|&(_, m)| m > opts.separation_bound)
        {
            if grad.norm() >= opts.score_tolerance {
                return Err(Error::Separation {
                    column: col_name(j),
                    magnitude: mag,
                });
            }
        }
        if grad.norm() < opts.score_tolerance {
            converged = true;
            break;
        }
        if rel_change == 0.0 && scale < 1.0 {
            break;
        }
    }

    if converged {
        // One more Newton step from inside the tolerance, kept only if it shrinks the score.
        let mut info = reduced.information(&coef);
        for j in 0..p {
            info[(j, j)] += 2.0 * lambda;
        }
        if let Some(step) = solve_spd(&info, &grad) {
            let candidate = &coef + &step;
            let candidate_grad = gradient(&candidate);
            if candidate_grad.norm() < grad.norm() && objective(&candidate).is_finite() {
                coef = candidate;
                grad = candidate_grad;
            }
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            score_norm: grad.norm(),
            last_iterate: coef.iter().copied().collect(),
        });
    }

    let mut info = reduced.information(&coef);
    if lambda > 0.0 {
        for j in 0..p {
            info[(j, j)] += 2.0 * lambda;
        }
    }
    let cov = info.clone().cholesky().map(|c| c.inverse());

    let mut coefficients = vec![None; p_all];
    let mut std_errors = vec![None; p_all];
    for (j, &orig) in keep.iter().enumerate() {
        coefficients[orig] = Some(coef[j]);
        std_errors[orig] = cov.as_ref().map(|c| c[(j, j)].max(0.0).sqrt());
    }
    Ok(LogisticFit {
        coefficients,
        std_errors,
        log_likelihood: reduced.log_likelihood(&coef),
        iterations,
        score_norm: grad.norm(),
        penalized: lambda > 0.0,
        dropped,
    })
}

/// Fitted coefficients of models a, b and d, keyed by [`ModelSpec::columns`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelParams {
    pub weeks: u32,
    pub a: Vec<Option<f64>>,
    pub b: Vec<Option<f64>>,
    pub d: Vec<Option<f64>>,
}

impl ModelParams {
    pub fn from_vectors(weeks: u32, a: Vec<f64>, b: Vec<f64>, d: Vec<f64>) -> Self {
        let params = ModelParams {
            weeks,
            a: a.into_iter().map(Some).collect(),
            b: b.into_iter().map(Some).collect(),
            d: d.into_iter().map(Some).collect(),
        };
        for kind in ModelKind::ALL {
            assert_eq!(
                params.coefficients(kind).len(),
                params.spec(kind).n_columns(),
                "model {kind} dimension"
            );
        }
        params
    }

    /// All coefficients zero: every sub-model probability is 1/2.
    pub fn zeros(weeks: u32) -> Self {
        let n = |k| ModelSpec::new(k, weeks).n_columns();
        Self::from_vectors(weeks, vec![0.0; n(ModelKind::A)], vec![0.0; n(ModelKind::B)], vec![0.0; n(ModelKind::D)])
    }

    pub fn spec(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec::new(kind, self.weeks)
    }

    pub fn coefficients(&self, kind: ModelKind) -> &[Option<f64>] {
        match kind {
            ModelKind::A => &self.a,
            ModelKind::B => &self.b,
            ModelKind::D => &self.d,
        }
    }

    pub fn coefficients_mut(&mut self, kind: ModelKind) -> &mut Vec<Option<f64>> {
        match kind {
            ModelKind::A => &mut self.a,
            ModelKind::B => &mut self.b,
            ModelKind::D => &mut self.d,
        }
    }

    /// Probability of the modelled event (missing culture, negative culture, negative smear).
    pub fn prob(&self, kind: ModelKind, ctx: &VisitContext) -> f64 {
        expit(self.spec(kind).eta(self.coefficients(kind), ctx))
    }

    /// `(model, term, coefficient)` for every column, in layout order.
    pub fn terms(&self) -> Vec<(ModelKind, String, Option<f64>)> {
        ModelKind::ALL
            .iter()
            .flat_map(|&kind| {
                self.spec(kind)
                    .columns()
                    .into_iter()
                    .zip(self.coefficients(kind).iter().copied())
                    .map(move |(name, c)| (kind, name, c))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub rows: usize,
    pub fit: LogisticFit,
    pub dropped_terms: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FittedModels {
    pub params: ModelParams,
    pub reports: Vec<FitReport>,
}

/// Fits models a, b and d on `cohort`.
pub fn fit_models(cohort: &Cohort, opts: &FitOptions) -> Result<FittedModels> {
    let mut params = ModelParams::zeros(cohort.weeks);
    let mut reports = Vec::with_capacity(3);
    for kind in ModelKind::ALL {
        let spec = ModelSpec::new(kind, cohort.weeks);
        let rows = build_rows(cohort, spec);
        let problem = LogisticProblem::grouped(&rows.rows, &rows.responses);
        let names = spec.columns();
        let fit = fit_logistic_named(&problem, opts, Some(&names))?;
        let dropped_terms: Vec<String> = fit.dropped.iter().map(|&j| names[j].clone()).collect();
        if !dropped_terms.is_empty() {
            warn!("model {kind}: dropped all-zero columns {dropped_terms:?}");
        }
        *params.coefficients_mut(kind) = fit.coefficients.clone();
        reports.push(FitReport {
            model: kind,
            rows: rows.rows.len(),
            fit,
            dropped_terms,
        });
    }
    Ok(FittedModels { params, reports })
}
