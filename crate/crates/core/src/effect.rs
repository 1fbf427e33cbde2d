//! Common treatment effect on the discrete hazard odds scale.
//!
//! The model is `h_z(k) / (1 - h_z(k)) = tau_k * exp(beta * z)`, fitted by unweighted least
//! squares on the odds of the two arms' estimated hazards. For fixed `beta` each `tau_k` has a
//! closed form, which leaves a one-dimensional search over `beta`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Search box for `beta`.
pub const BETA_BOUND: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectFit {
    pub beta: f64,
    pub odds_ratio: f64,
    /// Baseline odds per week; `None` for weeks dropped because a hazard was undefined.
    pub tau: Vec<Option<f64>>,
    pub objective: f64,
    /// False when the minimizer sits on the edge of the search box.
    pub converged: bool,
}

fn odds(h: f64) -> f64 {
    h / (1.0 - h)
}

/// Observed odds for weeks where both arms have a defined hazard.
fn paired_odds(h0: &[Option<f64>], h1: &[Option<f64>]) -> Result<Vec<(usize, f64, f64)>> {
    if h0.len() != h1.len() {
        return Err(Error::Effect(format!(
            "hazard vectors differ in length ({} vs {})",
            h0.len(),
            h1.len()
        )));
    }
    let mut pairs = Vec::new();
    for (k, (a, b)) in h0.iter().zip(h1).enumerate() {
        let (Some(a), Some(b)) = (a, b) else { continue };
        for h in [*a, *b] {
            if !(0.0..=1.0).contains(&h) {
                return Err(Error::Effect(format!("hazard {h} at week {} outside [0, 1]", k + 1)));
            }
            if h == 1.0 {
                return Err(Error::Effect(format!("hazard is 1 at week {}: infinite odds", k + 1)));
            }
        }
        pairs.push((k, odds(*a), odds(*b)));
    }
    if pairs.is_empty() {
        return Err(Error::Effect("no week has a defined hazard in both arms".into()));
    }
    Ok(pairs)
}

/// Minimizing `tau >= 0` for fixed `beta`.
pub fn profile_tau(o0: f64, o1: f64, beta: f64) -> f64 {
    let e = beta.exp();
    ((o0 + o1 * e) / (1.0 + e * e)).max(0.0)
}

/// The least-squares objective at `(tau, beta)` over the weeks where `tau` is present.
pub fn objective(h0: &[Option<f64>], h1: &[Option<f64>], tau: &[Option<f64>], beta: f64) -> f64 {
    let e = beta.exp();
    h0.iter()
        .zip(h1)
        .zip(tau)
        .filter_map(|((a, b), t)| Some((odds((*a)?), odds((*b)?), (*t)?)))
        .map(|(o0, o1, t)| (o0 - t).powi(2) + (o1 - t * e).powi(2))
        .sum()
}

/// Objective with `tau` profiled out, as a function of `beta` alone.
pub fn profiled_objective(h0: &[Option<f64>], h1: &[Option<f64>], beta: f64) -> Result<f64> {
    let pairs = paired_odds(h0, h1)?;
    Ok(profiled(&pairs, beta))
}

fn profiled(pairs: &[(usize, f64, f64)], beta: f64) -> f64 {
    let e = beta.exp();
    pairs
        .iter()
        .map(|&(_, o0, o1)| {
            let t = profile_tau(o0, o1, beta);
            (o0 - t).powi(2) + (o1 - t * e).powi(2)
        })
        .sum()
}

pub fn fit_effect(h0: &[Option<f64>], h1: &[Option<f64>]) -> Result<EffectFit> {
    let pairs = paired_odds(h0, h1)?;
    let f = |b: f64| profiled(&pairs, b);

    // Golden-section search on the box.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (-BETA_BOUND, BETA_BOUND);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-7 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut beta = if f1 <= f2 { x1 } else { x2 };

    // Stationarity of the profiled objective reduces to a quadratic in u = e^beta:
    // S01 u^2 + (S00 - S11) u - S01 = 0. Refine with Newton steps on it.
    let s00: f64 = pairs.iter().map(|&(_, a, _)| a * a).sum();
    let s11: f64 = pairs.iter().map(|&(_, _, b)| b * b).sum();
    let s01: f64 = pairs.iter().map(|&(_, a, b)| a * b).sum();
    for _ in 0..50 {
        let u = beta.exp();
        let h = s01 * u * u + (s00 - s11) * u - s01;
        let dh = 2.0 * s01 * u * u + (s00 - s11) * u;
        if dh <= 0.0 || !dh.is_finite() {
            break;
        }
        let step = -h / dh;
        let next = (beta + step).clamp(-BETA_BOUND, BETA_BOUND);
        if !(f(next) <= f(beta) + 1e-15 * f(beta).abs().max(1e-300)) {
            break;
        }
        let moved = (next - beta).abs();
        beta = next;
        if moved < 1e-10 {
            break;
        }
    }

    let mut tau = vec![None; h0.len()];
    for &(k, o0, o1) in &pairs {
        tau[k] = Some(profile_tau(o0, o1, beta));
    }
    let converged = BETA_BOUND - beta.abs() > 1e-6;
    Ok(EffectFit {
        beta,
        odds_ratio: beta.exp(),
        objective: f(beta),
        tau,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().copied().map(Some).collect()
    }

    #[test]
    fn exact_proportional_odds() {
        let fit = fit_effect(&some(&[0.2, 1.0 / 3.0]), &some(&[1.0 / 3.0, 0.5])).unwrap();
        assert_abs_diff_eq!(fit.beta, 2f64.ln(), epsilon = 1e-10);
        assert_abs_diff_eq!(fit.tau[0].unwrap(), 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.tau[1].unwrap(), 0.5, epsilon = 1e-10);
        assert!(fit.objective < 1e-18, "{}", fit.objective);
        assert!(fit.converged);
    }

    #[test]
    fn null_case() {
        let h = some(&[0.1, 0.25, 0.4, 0.05]);
        let fit = fit_effect(&h, &h).unwrap();
        assert_abs_diff_eq!(fit.beta, 0.0, epsilon = 1e-10);
        for (t, x) in fit.tau.iter().zip(&h) {
            assert_abs_diff_eq!(t.unwrap(), odds(x.unwrap()), epsilon = 1e-10);
        }
    }

    #[test]
    fn undefined_weeks_dropped_pairwise() {
        let h0 = vec![Some(0.2), None, Some(1.0 / 3.0)];
        let h1 = vec![Some(1.0 / 3.0), Some(0.9), Some(0.5)];
        let fit = fit_effect(&h0, &h1).unwrap();
        assert!(fit.tau[1].is_none());
        assert_abs_diff_eq!(fit.beta, 2f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn infinite_odds_and_empty_are_errors() {
        assert!(fit_effect(&some(&[1.0]), &some(&[0.5])).is_err());
        assert!(fit_effect(&[None], &[Some(0.5)]).is_err());
    }

    #[test]
    fn swapping_arms_negates_beta() {
        let h0 = some(&[0.12, 0.3, 0.22, 0.4]);
        let h1 = some(&[0.2, 0.35, 0.5, 0.45]);
        let a = fit_effect(&h0, &h1).unwrap();
        let b = fit_effect(&h1, &h0).unwrap();
        assert_abs_diff_eq!(a.beta, -b.beta, epsilon = 1e-9);
    }
}
