//! End-to-end estimation: fit the sub-models once, then evaluate arm distributions, CDF
//! diagnostics and the treatment effect over a grid of tilt parameters.

use serde::Serialize;

use crate::bootstrap::{bootstrap_run, BootstrapConfig, BootstrapResult, Interval};
use crate::data::{Arm, Cohort};
use crate::distribution::{arm_distribution, cohort_benchmarks, signed_kolmogorov, ConversionDistribution};
use crate::effect::{fit_effect, EffectFit};
use crate::error::{Error, Result};
use crate::glm::{fit_models, FitOptions, FittedModels, ModelKind};
use crate::imputation::PatientBenchmark;

/// Parses `a,b,c` or `lo:hi:step` into a list of tilt values.
pub fn parse_alpha_list(s: &str) -> Result<Vec<f64>> {
    let bad = |m: String| Error::Config(format!("alpha grid `{s}`: {m}"));
    let num = |t: &str| -> Result<f64> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("`{t}` is not a number")))
            .and_then(|v| if v.is_finite() { Ok(v) } else { Err(bad("non-finite value".into())) })
    };
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("range form is lo:hi:step".into()));
        }
        let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || hi < lo {
            return Err(bad("need step > 0 and hi >= lo".into()));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| {
                let v = lo + i as f64 * step;
                // Snap accumulated round-off so grid labels print cleanly.
                (v * 1e9).round() / 1e9
            })
            .collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(bad("empty grid".into()));
    }
    Ok(values)
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisOptions {
    pub alpha0: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub standardize: bool,
    pub fit: FitOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        let grid = parse_alpha_list("-10:6:1").expect("default grid parses");
        AnalysisOptions {
            alpha0: grid.clone(),
            alpha1: grid,
            standardize: true,
            fit: FitOptions::default(),
        }
    }
}

impl AnalysisOptions {
    pub fn benchmark_only() -> Self {
        AnalysisOptions {
            alpha0: vec![0.0],
            alpha1: vec![0.0],
            ..Self::default()
        }
    }

    fn alphas(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Control => &self.alpha0,
            Arm::Treated => &self.alpha1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KolmogorovRow {
    pub arm: Arm,
    pub alpha: f64,
    pub k_star: u32,
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridPoint {
    pub alpha0: f64,
    pub alpha1: f64,
    pub fit: std::result::Result<EffectFit, String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimates {
    pub fitted: FittedModels,
    pub cavitation_weight: Option<f64>,
    #[serde(skip)]
    pub benchmarks: Vec<PatientBenchmark>,
    /// Control-arm distributions in `alpha0` order followed by treated-arm ones in `alpha1` order.
    pub distributions: Vec<ConversionDistribution>,
    pub kolmogorov: Vec<KolmogorovRow>,
    /// Row-major over `alpha0` then `alpha1`.
    pub grid: Vec<GridPoint>,
    pub clamped: usize,
}

impl Estimates {
    pub fn distribution(&self, arm: Arm, alpha: f64) -> Option<&ConversionDistribution> {
        self.distributions.iter().find(|d| d.arm == arm && d.alpha == alpha)
    }

    /// Estimands passed through the bootstrap: every model coefficient, then `beta` at each
    /// grid point. Absent or failed values are NaN.
    pub fn estimand_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .fitted
            .params
            .terms()
            .into_iter()
            .map(|(_, _, c)| c.unwrap_or(f64::NAN))
            .collect();
        v.extend(self.grid.iter().map(|g| g.fit.as_ref().map_or(f64::NAN, |f| f.beta)));
        v
    }
}

pub fn estimand_names(weeks: u32, opts: &AnalysisOptions) -> Vec<String> {
    let mut names: Vec<String> = crate::glm::ModelParams::zeros(weeks)
        .terms()
        .into_iter()
        .map(|(m, t, _)| format!("{m}:{t}"))
        .collect();
    for a0 in &opts.alpha0 {
        for a1 in &opts.alpha1 {
            names.push(format!("beta@{a0},{a1}"));
        }
    }
    names
}

pub fn estimate(cohort: &Cohort, opts: &AnalysisOptions) -> Result<Estimates> {
    if opts.alpha0.is_empty() || opts.alpha1.is_empty() {
        return Err(Error::Config("alpha grid must be nonempty for both arms".into()));
    }
    for arm in Arm::BOTH {
        if cohort.arm_size(arm) == 0 {
            return Err(Error::EmptyStratum(format!("arm {}", arm.index())));
        }
    }
    let fitted = fit_models(cohort, &opts.fit)?;
    let benchmarks = cohort_benchmarks(cohort, &fitted.params)?;
    let clamped = benchmarks.iter().map(|b| b.clamped).sum();
    let weight = opts.standardize.then(|| cohort.cavitation_proportion());

    let mut distributions = Vec::new();
    let mut kolmogorov = Vec::new();
    let mut hazards: [Vec<Vec<Option<f64>>>; 2] = [Vec::new(), Vec::new()];
    for arm in Arm::BOTH {
        let bench = arm_distribution(&benchmarks, cohort.weeks, arm, 0.0, weight)?;
        for &alpha in opts.alphas(arm) {
            let d = if alpha == 0.0 {
                bench.clone()
            } else {
                arm_distribution(&benchmarks, cohort.weeks, arm, alpha, weight)?
            };
            let (k_star, distance) = signed_kolmogorov(&d, &bench);
            kolmogorov.push(KolmogorovRow {
                arm,
                alpha,
                k_star,
                distance,
            });
            hazards[arm.index()].push(d.hazards());
            distributions.push(d);
        }
    }

    let mut grid = Vec::with_capacity(opts.alpha0.len() * opts.alpha1.len());
    for (i, &a0) in opts.alpha0.iter().enumerate() {
        for (j, &a1) in opts.alpha1.iter().enumerate() {
            grid.push(GridPoint {
                alpha0: a0,
                alpha1: a1,
                fit: fit_effect(&hazards[0][i], &hazards[1][j]).map_err(|e| e.to_string()),
            });
        }
    }

    Ok(Estimates {
        fitted,
        cavitation_weight: weight,
        benchmarks,
        distributions,
        kolmogorov,
        grid,
        clamped,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub options: AnalysisOptions,
    pub estimates: Estimates,
    pub estimand_names: Vec<String>,
    pub bootstrap: Option<BootstrapResult>,
    pub bootstrap_config: Option<BootstrapConfig>,
}

impl AnalysisReport {
    pub fn interval(&self, estimand: usize) -> Option<Interval> {
        self.bootstrap.as_ref().and_then(|b| b.intervals.get(estimand).copied().flatten())
    }

    /// Interval for coefficient `term` of `model`.
    pub fn coefficient_interval(&self, model: ModelKind, term: &str) -> Option<Interval> {
        let name = format!("{model}:{term}");
        let idx = self.estimand_names.iter().position(|n| *n == name)?;
        self.interval(idx)
    }

    /// Interval for `beta` at grid point `index` (row-major).
    pub fn beta_interval(&self, index: usize) -> Option<Interval> {
        let offset = self.estimand_names.len() - self.estimates.grid.len();
        self.interval(offset + index)
    }
}

/// Point estimates plus, when `bootstrap` is given, percentile intervals from resampling
/// patients within arms and rerunning the whole pipeline.
pub fn run_analysis(
    cohort: &Cohort,
    opts: &AnalysisOptions,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<AnalysisReport> {
    let estimates = estimate(cohort, opts)?;
    let boot = match bootstrap {
        Some(cfg) => Some(bootstrap_run(
            cohort,
            |c| estimate(c, opts).map(|e| e.estimand_vector()),
            cfg,
        )?),
        None => None,
    };
    Ok(AnalysisReport {
        options: opts.clone(),
        estimand_names: estimand_names(cohort.weeks, opts),
        estimates,
        bootstrap: boot,
        bootstrap_config: bootstrap.copied(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_lists() {
        assert_eq!(parse_alpha_list("-4,0,4").unwrap(), vec![-4.0, 0.0, 4.0]);
        let g = parse_alpha_list("-10:6:1").unwrap();
        assert_eq!(g.len(), 17);
        assert_eq!((g[0], g[16]), (-10.0, 6.0));
        assert_eq!(parse_alpha_list("0:1:0.1").unwrap().len(), 11);
        assert_eq!(parse_alpha_list("0:1:0.1").unwrap()[3], 0.3);
        assert!(parse_alpha_list("1:0:1").is_err());
        assert!(parse_alpha_list("a,b").is_err());
        assert!(parse_alpha_list("").is_err());
    }
}
