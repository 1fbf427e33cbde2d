//! CSV emitters for analysis outputs. Floats use Rust's shortest round-trip formatting, so
//! identical inputs give byte-identical files.

use std::io::Write;

use crate::analysis::AnalysisReport;
use crate::coarsening::{coarsening_set, conversion_status};
use crate::data::Cohort;
use crate::error::Result;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Model coefficients with exponentiated estimates and bootstrap intervals on the same scale.
pub fn write_coefficients<W: Write>(report: &AnalysisReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["model", "term", "coefficient", "std_error", "odds_ratio", "ci_low", "ci_high"])?;
    let params = &report.estimates.fitted.params;
    for fit in &report.estimates.fitted.reports {
        let kind = fit.model;
        let names = params.spec(kind).columns();
        for (j, name) in names.iter().enumerate() {
            let coef = fit.fit.coefficients[j];
            let ci = report.coefficient_interval(kind, name);
            w.write_record([
                kind.name().to_string(),
                name.clone(),
                opt(coef),
                opt(fit.fit.std_errors[j]),
                opt(coef.map(f64::exp)),
                opt(ci.map(|i| i.low.exp())),
                opt(ci.map(|i| i.high.exp())),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per (arm, alpha, week) with pmf, CDF and hazard; week K+1 carries only the pmf.
pub fn write_distributions<W: Write>(report: &AnalysisReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["arm", "alpha", "week", "pmf", "cdf", "hazard"])?;
    for d in &report.estimates.distributions {
        let cdf = d.cdf();
        let hazards = d.hazards();
        for t in 1..=d.weeks() + 1 {
            let i = (t - 1) as usize;
            let (c, h) = if t <= d.weeks() {
                (Some(cdf[i]), hazards[i])
            } else {
                (None, None)
            };
            w.write_record([
                d.arm.index().to_string(),
                d.alpha.to_string(),
                t.to_string(),
                d.pmf[i].to_string(),
                opt(c),
                opt(h),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_kolmogorov<W: Write>(report: &AnalysisReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["arm", "alpha", "k_star", "signed_distance"])?;
    for row in &report.estimates.kolmogorov {
        w.write_record([
            row.arm.index().to_string(),
            row.alpha.to_string(),
            row.k_star.to_string(),
            row.distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Odds-ratio estimate and interval at each (alpha0, alpha1). `reject_null` is set when the
/// interval excludes 1; failed grid points carry the error text instead.
pub fn write_contour<W: Write>(report: &AnalysisReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["alpha0", "alpha1", "beta_hat", "or_hat", "ci_low", "ci_high", "reject_null", "error"])?;
    for (i, g) in report.estimates.grid.iter().enumerate() {
        let ci = report.beta_interval(i);
        let (beta, or, err) = match &g.fit {
            Ok(f) => {
                let mut note = String::new();
                if !f.converged {
                    note = "beta on search boundary".into();
                }
                (Some(f.beta), Some(f.odds_ratio), note)
            }
            Err(e) => (None, None, e.clone()),
        };
        let reject = ci.map(|c| (c.low > 0.0 || c.high < 0.0) as u8);
        w.write_record([
            g.alpha0.to_string(),
            g.alpha1.to_string(),
            opt(beta),
            opt(or),
            opt(ci.map(|c| c.low.exp())),
            opt(ci.map(|c| c.high.exp())),
            reject.map(|r| r.to_string()).unwrap_or_default(),
            err,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Replicate-level estimands for audit.
pub fn write_replicates<W: Write>(report: &AnalysisReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["replicate", "estimand", "value"])?;
    if let Some(boot) = &report.bootstrap {
        for (b, rep) in boot.replicates.iter().enumerate() {
            let Some(values) = rep else { continue };
            for (name, v) in report.estimand_names.iter().zip(values) {
                w.write_record([b.to_string(), name.clone(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-patient culture pattern, conversion status and coarsening set.
pub fn write_coarsening<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["patient_id", "arm", "cavitation", "cultures", "status", "coarsening_set", "lower", "upper"])?;
    for p in &cohort.patients {
        let cultures: String = p
            .cultures()
            .iter()
            .map(|c| match c {
                crate::data::TestResult::Negative => '-',
                crate::data::TestResult::Positive => '+',
                crate::data::TestResult::Missing => '?',
            })
            .collect();
        let status: String = conversion_status(p).iter().map(|s| s.symbol()).collect();
        let set = coarsening_set(p);
        let times = set.times.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        w.write_record([
            p.id.clone(),
            p.arm.index().to_string(),
            (p.cavitation as u8).to_string(),
            cultures,
            status,
            times,
            set.lower.to_string(),
            set.upper.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
