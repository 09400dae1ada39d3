//! CT/X-ray pairing within a time window.

use serde::{Deserialize, Serialize};

use super::manifest::CaseRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Pairing {
    /// `ct_case` is the record whose CT serves this X-ray.
    Paired { ct_case: String, delta_hours: f64 },
    NoXr,
    NoCt,
    MissingTimestamp,
    WindowViolation { delta_hours: f64 },
}

impl Pairing {
    pub fn status_name(&self) -> &'static str {
        match self {
            Pairing::Paired { .. } => "paired",
            Pairing::NoXr => "no_xr",
            Pairing::NoCt => "no_ct",
            Pairing::MissingTimestamp => "missing_timestamp",
            Pairing::WindowViolation { .. } => "window_violation",
        }
    }

    pub fn ct_case(&self) -> Option<&str> {
        match self {
            Pairing::Paired { ct_case, .. } => Some(ct_case),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingSummary {
    pub paired: usize,
    pub window_violations: usize,
    pub missing_timestamps: usize,
    pub no_ct: usize,
    pub no_xr: usize,
}

impl PairingSummary {
    pub fn from_pairings(p: &[Pairing]) -> Self {
        let mut s = PairingSummary::default();
        for x in p {
            match x {
                Pairing::Paired { .. } => s.paired += 1,
                Pairing::WindowViolation { .. } => s.window_violations += 1,
                Pairing::MissingTimestamp => s.missing_timestamps += 1,
                Pairing::NoCt => s.no_ct += 1,
                Pairing::NoXr => s.no_xr += 1,
            }
        }
        s
    }
}

/// Pair every record's X-ray with the nearest-in-time CT among its own
/// record and records sharing its `patient_id`. Ties keep the record seen
/// first (the case's own CT, then manifest order).
pub fn pair_cases(records: &[CaseRecord], window_hours: f64) -> Vec<Pairing> {
    records
        .iter()
        .map(|rec| {
            if rec.xr_path.is_none() {
                return Pairing::NoXr;
            }
            let own = std::iter::once(rec).filter(|r| r.ct_path.is_some());
            let others = records.iter().filter(|o| {
                o.case_id != rec.case_id
                    && o.ct_path.is_some()
                    && rec.patient_id.is_some()
                    && o.patient_id == rec.patient_id
            });
            let sources: Vec<&CaseRecord> = own.chain(others).collect();
            if sources.is_empty() {
                return Pairing::NoCt;
            }
            let Some(xr_time) = rec.xr_time else {
                return Pairing::MissingTimestamp;
            };
            let mut best: Option<(&CaseRecord, f64)> = None;
            for s in &sources {
                if let Some(ct_time) = s.ct_time {
                    let hours = (xr_time - ct_time).num_milliseconds() as f64 / 3.6e6;
                    if best.is_none_or(|(_, b)| hours.abs() < b.abs()) {
                        best = Some((s, hours));
                    }
                }
            }
            match best {
                None => Pairing::MissingTimestamp,
                Some((s, hours)) if hours.abs() <= window_hours => Pairing::Paired {
                    ct_case: s.case_id.clone(),
                    delta_hours: hours,
                },
                Some((_, hours)) => Pairing::WindowViolation { delta_hours: hours },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Label;

    fn rec(id: &str, patient: &str, xr: Option<&str>, ct: Option<&str>) -> CaseRecord {
        let mut r = CaseRecord::new(id, Label::Covid19);
        r.patient_id = Some(patient.into());
        if let Some(t) = xr {
            r.xr_path = Some("xr.f32".into());
            r.xr_time = Some(t.parse().unwrap());
        }
        if let Some(t) = ct {
            r.ct_path = Some("ct.mhd".into());
            r.ct_time = Some(t.parse().unwrap());
        }
        r
    }

    #[test]
    fn window_rules() {
        let recs = vec![
            rec("a", "p1", Some("2020-04-01T00:00:00Z"), Some("2020-04-02T12:00:00Z")),
            rec("b", "p2", Some("2020-04-01T00:00:00Z"), Some("2020-04-04T00:00:00Z")),
            rec("c", "p3", None, Some("2020-04-04T00:00:00Z")),
            rec("d", "p4", Some("2020-04-01T00:00:00Z"), None),
        ];
        let p = pair_cases(&recs, 48.0);
        assert_eq!(
            p[0],
            Pairing::Paired {
                ct_case: "a".into(),
                delta_hours: -36.0
            }
        );
        assert_eq!(p[1], Pairing::WindowViolation { delta_hours: -72.0 });
        assert_eq!(p[2], Pairing::NoXr);
        assert_eq!(p[3], Pairing::NoCt);
        let s = PairingSummary::from_pairings(&p);
        assert_eq!((s.paired, s.window_violations, s.no_xr, s.no_ct), (1, 1, 1, 1));
    }

    #[test]
    fn xr_only_record_borrows_nearest_ct_of_same_patient() {
        let recs = vec![
            rec("ct_early", "p", None, Some("2020-01-01T00:00:00Z")),
            rec("ct_late", "p", None, Some("2020-01-03T00:00:00Z")),
            rec("xr", "p", Some("2020-01-02T20:00:00Z"), None),
        ];
        let p = pair_cases(&recs, 48.0);
        assert_eq!(p[2].ct_case(), Some("ct_late"));
    }

    #[test]
    fn missing_timestamp() {
        let mut r = rec("a", "p", Some("2020-01-01T00:00:00Z"), Some("2020-01-01T00:00:00Z"));
        r.ct_time = None;
        assert_eq!(pair_cases(&[r], 48.0)[0], Pairing::MissingTimestamp);
    }
}
