//! Visit-level observations, patients and cohorts, with CSV ingestion.
//!
//! The input format is one row per scheduled visit:
//!
//! ```text
//! patient_id,arm,cavitation,week,culture,smear
//! p1,1,1,1,pos,pos
//! p1,1,1,2,miss,neg
//! ```
//!
//! A visit row must be present even when both results are missing.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WEEKS: u32 = 8;

const HEADER: [&str; 6] = ["patient_id", "arm", "cavitation", "week", "culture", "smear"];

/// Outcome of one binary test. Negative is coded 1, positive 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TestResult {
    Negative,
    Positive,
    Missing,
}

impl TestResult {
    pub fn is_missing(self) -> bool {
        self == TestResult::Missing
    }

    pub fn is_observed_negative(self) -> bool {
        self == TestResult::Negative
    }

    /// Missingness indicator (1 when missing).
    pub fn missing_indicator(self) -> f64 {
        if self.is_missing() {
            1.0
        } else {
            0.0
        }
    }

    /// `(1 - M) * value`: 1 only for an observed negative result.
    pub fn observed_negative_indicator(self) -> f64 {
        if self.is_observed_negative() {
            1.0
        } else {
            0.0
        }
    }

    /// Indicator coding of an observed value; `None` when missing.
    pub fn indicator(self) -> Option<u8> {
        match self {
            TestResult::Negative => Some(1),
            TestResult::Positive => Some(0),
            TestResult::Missing => None,
        }
    }

    /// Observed result from its indicator coding (1 = negative).
    pub fn from_indicator(y: u8) -> Self {
        if y == 1 {
            TestResult::Negative
        } else {
            TestResult::Positive
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            TestResult::Negative => "neg",
            TestResult::Positive => "pos",
            TestResult::Missing => "miss",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "neg" => Some(TestResult::Negative),
            "pos" => Some(TestResult::Positive),
            "miss" => Some(TestResult::Missing),
            _ => None,
        }
    }
}

impl fmt::Display for TestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    /// Treatment indicator z.
    pub fn z(self) -> f64 {
        self.index() as f64
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Arm::Control
        } else {
            Arm::Treated
        }
    }
}

/// Culture and smear observed at one visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisitRecord {
    pub week: u32,
    pub culture: TestResult,
    pub smear: TestResult,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub arm: Arm,
    pub cavitation: bool,
    /// Ordered by week; `visits[k - 1].week == k`.
    pub visits: Vec<VisitRecord>,
}

impl PatientRecord {
    /// Builds a patient from per-week culture and smear results (week 1 first).
    pub fn from_results(
        id: impl Into<String>,
        arm: Arm,
        cavitation: bool,
        cultures: &[TestResult],
        smears: &[TestResult],
    ) -> Self {
        assert_eq!(cultures.len(), smears.len(), "culture/smear length mismatch");
        let visits = cultures
            .iter()
            .zip(smears)
            .enumerate()
            .map(|(i, (&culture, &smear))| VisitRecord {
                week: i as u32 + 1,
                culture,
                smear,
            })
            .collect();
        PatientRecord {
            id: id.into(),
            arm,
            cavitation,
            visits,
        }
    }

    pub fn weeks(&self) -> u32 {
        self.visits.len() as u32
    }

    /// Visit at 1-based week `k`.
    pub fn visit(&self, k: u32) -> &VisitRecord {
        &self.visits[(k - 1) as usize]
    }

    pub fn culture(&self, k: u32) -> TestResult {
        self.visit(k).culture
    }

    pub fn smear(&self, k: u32) -> TestResult {
        self.visit(k).smear
    }

    pub fn cultures(&self) -> Vec<TestResult> {
        self.visits.iter().map(|v| v.culture).collect()
    }

    pub fn x(&self) -> f64 {
        if self.cavitation {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub weeks: u32,
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(weeks: u32, mut patients: Vec<PatientRecord>) -> Result<Self> {
        if weeks == 0 {
            return Err(Error::Config("number of weeks must be at least 1".into()));
        }
        for p in &patients {
            if p.weeks() != weeks || p.visits.iter().enumerate().any(|(i, v)| v.week != i as u32 + 1) {
                return Err(Error::Contract(format!(
                    "patient {} does not cover weeks 1..{weeks} in order",
                    p.id
                )));
            }
        }
        patients.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Cohort { weeks, patients })
    }

    pub fn arm(&self, arm: Arm) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(move |p| p.arm == arm)
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.arm(arm).count()
    }

    /// Pooled proportion of patients with cavitation.
    pub fn cavitation_proportion(&self) -> f64 {
        if self.patients.is_empty() {
            return f64::NAN;
        }
        self.patients.iter().filter(|p| p.cavitation).count() as f64 / self.patients.len() as f64
    }
}

/// Parses the visit-row CSV format into a cohort with `weeks` scheduled visits.
pub fn parse_cohort<R: Read>(source: R, weeks: u32) -> Result<Cohort> {
    if weeks == 0 {
        return Err(Error::Config("number of weeks must be at least 1".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    struct Pending {
        first_row: usize,
        arm: Arm,
        cavitation: bool,
        visits: BTreeMap<u32, VisitRecord>,
    }

    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();
    let mut saw_header = false;

    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if !saw_header {
            let fields: Vec<&str> = record.iter().collect();
            if fields != HEADER {
                return Err(Error::Parse {
                    row,
                    message: format!("expected header `{}`", HEADER.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if record.len() != HEADER.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", HEADER.len(), record.len()),
            });
        }
        let bad = |field: &str, value: &str| Error::Parse {
            row,
            message: format!("{field}: value `{value}` outside vocabulary"),
        };

        let id = &record[0];
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty patient_id".into(),
            });
        }
        let arm = match &record[1] {
            "0" => Arm::Control,
            "1" => Arm::Treated,
            v => return Err(bad("arm", v)),
        };
        let cavitation = match &record[2] {
            "0" => false,
            "1" => true,
            v => return Err(bad("cavitation", v)),
        };
        let week: u32 = record[3].parse().map_err(|_| bad("week", &record[3]))?;
        if week < 1 || week > weeks {
            return Err(Error::Parse {
                row,
                message: format!("week {week} outside 1..{weeks}"),
            });
        }
        let culture = TestResult::parse(&record[4]).ok_or_else(|| bad("culture", &record[4]))?;
        let smear = TestResult::parse(&record[5]).ok_or_else(|| bad("smear", &record[5]))?;

        let entry = pending.entry(id.to_string()).or_insert_with(|| Pending {
            first_row: row,
            arm,
            cavitation,
            visits: BTreeMap::new(),
        });
        if entry.arm != arm || entry.cavitation != cavitation {
            return Err(Error::Parse {
                row,
                message: format!(
                    "patient {id}: arm/cavitation inconsistent with row {}",
                    entry.first_row
                ),
            });
        }
        let visit = VisitRecord {
            week,
            culture,
            smear,
        };
        if entry.visits.insert(week, visit).is_some() {
            return Err(Error::Parse {
                row,
                message: format!("patient {id}: duplicate week {week}"),
            });
        }
    }

    if !saw_header {
        return Err(Error::Parse {
            row: 1,
            message: format!("empty input; expected header `{}`", HEADER.join(",")),
        });
    }

    let mut patients = Vec::with_capacity(pending.len());
    for (id, p) in pending {
        if let Some(week) = (1..=weeks).find(|w| !p.visits.contains_key(w)) {
            return Err(Error::Parse {
                row: p.first_row,
                message: format!("patient {id}: missing week {week}"),
            });
        }
        patients.push(PatientRecord {
            id,
            arm: p.arm,
            cavitation: p.cavitation,
            visits: p.visits.into_values().collect(),
        });
    }
    Cohort::new(weeks, patients)
}

/// Writes the canonical form: header, then rows sorted by (patient_id, week).
pub fn write_cohort<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(HEADER)?;
    let mut order: Vec<&PatientRecord> = cohort.patients.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    for p in order {
        let arm = p.arm.index().to_string();
        let cav = if p.cavitation { "1" } else { "0" };
        for v in &p.visits {
            writer.write_record([
                p.id.as_str(),
                arm.as_str(),
                cav,
                v.week.to_string().as_str(),
                v.culture.code(),
                v.smear.code(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn cohort_to_csv(cohort: &Cohort) -> String {
    let mut buf = Vec::new();
    write_cohort(cohort, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}
