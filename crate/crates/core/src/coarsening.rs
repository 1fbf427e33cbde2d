//! Conversion status per visit and the coarsening set of feasible conversion times.
//!
//! Conversion time `T` is the earliest week from which every culture is negative, or
//! `K + 1` when no such week exists. Only cultures matter here; smears never change the
//! coarsening set.

use serde::Serialize;

use crate::data::{PatientRecord, TestResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConversionStatus {
    Yes,
    No,
    Unknown,
}

impl ConversionStatus {
    pub fn symbol(self) -> char {
        match self {
            ConversionStatus::Yes => 'Y',
            ConversionStatus::No => 'N',
            ConversionStatus::Unknown => 'U',
        }
    }
}

/// Feasible conversion times for one patient. Weeks run over `1..=K+1`, where `K+1`
/// stands for "not converted by the last visit".
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoarseningSet {
    /// Sorted ascending, nonempty.
    pub times: Vec<u32>,
    /// Smallest feasible time.
    pub lower: u32,
    /// Largest feasible time (`R + 1`).
    pub upper: u32,
}

impl CoarseningSet {
    pub fn is_singleton(&self) -> bool {
        self.times.len() == 1
    }

    pub fn contains(&self, t: u32) -> bool {
        self.times.binary_search(&t).is_ok()
    }

    /// `R`, the latest week whose missing culture blocks determination.
    pub fn last_blocking_week(&self) -> Option<u32> {
        (!self.is_singleton()).then(|| self.upper - 1)
    }
}

/// Per-visit conversion status for weeks `1..=K`.
pub fn conversion_status(p: &PatientRecord) -> Vec<ConversionStatus> {
    status_from_cultures(&p.cultures())
}

pub fn status_from_cultures(cultures: &[TestResult]) -> Vec<ConversionStatus> {
    let k = cultures.len();
    let mut out = vec![ConversionStatus::Unknown; k];
    // Scan backwards tracking whether the suffix holds an observed positive, and whether it
    // is entirely observed-negative.
    let mut suffix_has_positive = false;
    let mut suffix_all_negative = true;
    for i in (0..k).rev() {
        match cultures[i] {
            TestResult::Positive => {
                suffix_has_positive = true;
                suffix_all_negative = false;
            }
            TestResult::Missing => suffix_all_negative = false,
            TestResult::Negative => {}
        }
        out[i] = if suffix_has_positive {
            ConversionStatus::No
        } else if suffix_all_negative {
            ConversionStatus::Yes
        } else {
            ConversionStatus::Unknown
        };
    }
    out
}

pub fn coarsening_set(p: &PatientRecord) -> CoarseningSet {
    coarsening_from_cultures(&p.cultures())
}

pub fn coarsening_from_cultures(cultures: &[TestResult]) -> CoarseningSet {
    let k = cultures.len() as u32;
    let at = |week: u32| cultures[(week - 1) as usize];

    // Earliest week with every culture from there on missing or negative.
    let mut lower = k + 1;
    while lower > 1 && at(lower - 1) != TestResult::Positive {
        lower -= 1;
    }

    // Latest missing culture at or after `lower`; none means T is determined.
    let last_missing = (lower..=k).rev().find(|&w| at(w).is_missing());
    match last_missing {
        None => CoarseningSet {
            times: vec![lower],
            lower,
            upper: lower,
        },
        Some(r) => {
            let mut times = vec![lower];
            times.extend((lower + 1..=r).filter(|&t| at(t - 1).is_missing()));
            times.push(r + 1);
            CoarseningSet {
                times,
                lower,
                upper: r + 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TestResult::{Missing as M, Negative as N, Positive as P};

    fn status_string(c: &[TestResult]) -> String {
        status_from_cultures(c).iter().map(|s| s.symbol()).collect()
    }

    #[test]
    fn table_one_status_rows() {
        assert_eq!(status_string(&[M, P, M, N, M, N, N, N]), "NNUUUYYY");
        assert_eq!(status_string(&[M, P, M, N, P, N, N, N]), "NNNNNYYY");
        assert_eq!(status_string(&[N; 8]), "YYYYYYYY");
    }

    #[test]
    fn table_one_sets() {
        let mary = coarsening_from_cultures(&[M, P, M, N, M, N, N, N]);
        assert_eq!(mary.times, vec![3, 4, 6]);
        assert_eq!((mary.lower, mary.upper), (3, 6));
        assert_eq!(mary.last_blocking_week(), Some(5));
        assert_eq!(coarsening_from_cultures(&[M, P, M, N, P, N, N, N]).times, vec![6]);
        assert_eq!(coarsening_from_cultures(&[M, P, M, N, N, N, N, N]).times, vec![3, 4]);
        assert_eq!(coarsening_from_cultures(&[M, P, P, N, N, N, N, N]).times, vec![4]);
        assert_eq!(coarsening_from_cultures(&[M, P, N, N, N, N, N, N]).times, vec![3]);
    }

    #[test]
    fn final_positive_means_no_conversion() {
        let s = coarsening_from_cultures(&[N, N, N, N, N, N, N, P]);
        assert_eq!(s.times, vec![9]);
        assert!(s.is_singleton());
    }

    #[test]
    fn all_missing_is_every_time() {
        let s = coarsening_from_cultures(&[M; 8]);
        assert_eq!(s.times, (1..=9).collect::<Vec<_>>());
        assert_eq!((s.lower, s.upper), (1, 9));
    }

    #[test]
    fn final_missing_sets_upper_to_k_plus_one() {
        let s = coarsening_from_cultures(&[P, N, M]);
        assert_eq!(s.times, vec![2, 4]);
    }
}
