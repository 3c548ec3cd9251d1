use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Catalog, SeriesEntry, SeriesRef, StudyRef, SyncError};

/// Conjunctive series filter. Unset fields do not constrain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRule {
    #[serde(default)]
    pub modality: Option<BTreeSet<String>>,
    /// Inclusive [from, to].
    #[serde(default)]
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    #[serde(default)]
    pub patient_id: Option<String>,
    #[serde(default)]
    pub source_id: Option<String>,
}

impl QueryRule {
    pub fn validate(&self) -> Result<(), SyncError> {
        let bad = |m: &str| Err(SyncError::InvalidRule(m.to_string()));
        if self.modality.is_none() && self.date_range.is_none() && self.patient_id.is_none() && self.source_id.is_none() {
            return bad("at least one field must be set");
        }
        if self.modality.as_ref().is_some_and(|m| m.is_empty()) {
            return bad("modality set must not be empty");
        }
        if let Some((from, to)) = self.date_range {
            if from > to {
                return bad("date_range from is after to");
            }
        }
        Ok(())
    }

    pub fn matches(&self, s: &SeriesEntry) -> bool {
        self.modality.as_ref().is_none_or(|m| m.contains(&s.modality))
            && self
                .date_range
                .is_none_or(|(from, to)| s.study_date.is_some_and(|d| d >= from && d <= to))
            && self.patient_id.as_ref().is_none_or(|p| *p == s.patient_id)
            && self.source_id.as_ref().is_none_or(|src| *src == s.source_id)
    }
}

/// Series ordered by (PatientID, StudyDate, SeriesInstanceUID, source_id).
/// Missing study dates sort first.
pub fn sort_series(refs: &mut [SeriesRef]) {
    refs.sort_by(|a, b| {
        (&a.patient_id, a.study_date, &a.series_uid, &a.source_id)
            .cmp(&(&b.patient_id, b.study_date, &b.series_uid, &b.source_id))
    });
}

pub fn query(catalog: &Catalog, rule: &QueryRule) -> Result<Vec<SeriesRef>, SyncError> {
    rule.validate()?;
    Ok(list_series(catalog, |s| rule.matches(s)))
}

/// Every series passing `keep`, in query order.
pub fn list_series(catalog: &Catalog, keep: impl Fn(&SeriesEntry) -> bool) -> Vec<SeriesRef> {
    let mut out: Vec<SeriesRef> = catalog.series().filter(|s| keep(s)).map(SeriesRef::from).collect();
    sort_series(&mut out);
    out
}

/// All studies of a patient across sources, by ascending StudyDate.
pub fn fetch_followups(catalog: &Catalog, patient_id: &str) -> Vec<StudyRef> {
    let mut studies: Vec<StudyRef> = catalog
        .studies()
        .into_iter()
        .filter(|s| s.patient_id == patient_id)
        .collect();
    studies.sort_by(|a, b| (a.study_date, &a.study_uid, &a.source_id).cmp(&(b.study_date, &b.study_uid, &b.source_id)));
    studies
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sync::{Event, FileStamp, InstanceMeta};
    use proptest::prelude::*;

    fn add(c: &mut Catalog, source: &str, patient: &str, study: &str, date: (i32, u32, u32), modality: &str, series: &str) {
        c.apply(&Event::InstanceAdded {
            source_id: source.into(),
            center_label: format!("label-{source}"),
            path: format!("/{source}/{series}/1.dcm"),
            stamp: FileStamp { size: 1, mtime_ns: 0 },
            meta: InstanceMeta {
                patient_id: patient.into(),
                patient_name: String::new(),
                study_uid: study.into(),
                study_date: NaiveDate::from_ymd_opt(date.0, date.1, date.2),
                modality: modality.into(),
                series_uid: series.into(),
                series_description: String::new(),
                sop_uid: format!("{series}.1"),
            },
        });
    }

    fn modality(m: &[&str]) -> Option<BTreeSet<String>> {
        Some(m.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn modality_filter() {
        let mut c = Catalog::new();
        add(&mut c, "a", "P1", "1", (2024, 1, 1), "CT", "1.1");
        add(&mut c, "a", "P1", "1", (2024, 1, 1), "MR", "1.2");
        add(&mut c, "a", "P2", "2", (2024, 1, 3), "CT", "2.1");
        let rule = QueryRule {
            modality: modality(&["CT"]),
            ..Default::default()
        };
        let uids: Vec<_> = query(&c, &rule).unwrap().into_iter().map(|s| s.series_uid).collect();
        assert_eq!(uids, vec!["1.1", "2.1"]);
        let nothing = QueryRule {
            date_range: Some((NaiveDate::from_ymd_opt(1990, 1, 1).unwrap(), NaiveDate::from_ymd_opt(1990, 2, 1).unwrap())),
            ..Default::default()
        };
        assert!(query(&c, &nothing).unwrap().is_empty());
        assert!(matches!(query(&c, &QueryRule::default()), Err(SyncError::InvalidRule(_))));
    }

    #[test]
    fn patient_rule_covers_all_studies() {
        let mut c = Catalog::new();
        for (i, day) in [5, 1, 9, 3].iter().enumerate() {
            add(&mut c, "a", "P001", &format!("9.{i}"), (2023, 4, *day), "CT", &format!("9.{i}.1"));
            add(&mut c, "a", "P001", &format!("9.{i}"), (2023, 4, *day), "MR", &format!("9.{i}.2"));
        }
        add(&mut c, "a", "P002", "8.1", (2023, 4, 2), "CT", "8.1.1");
        add(&mut c, "b", "P003", "7.1", (2023, 4, 2), "CT", "7.1.1");
        let rule = QueryRule {
            patient_id: Some("P001".into()),
            ..Default::default()
        };
        let got = query(&c, &rule).unwrap();
        assert_eq!(got.len(), 8);
        assert!(got.iter().all(|s| s.patient_id == "P001"));
        let days: Vec<u32> = got.iter().map(|s| chrono::Datelike::day(&s.study_date.unwrap())).collect();
        assert_eq!(days, vec![1, 1, 3, 3, 5, 5, 9, 9]);
    }

    #[test]
    fn followups_across_sources() {
        let mut c = Catalog::new();
        add(&mut c, "b", "P1", "3", (2022, 6, 1), "CT", "3.1");
        add(&mut c, "a", "P1", "1", (2020, 1, 1), "CT", "1.1");
        add(&mut c, "a", "P1", "2", (2021, 3, 1), "MR", "2.1");
        add(&mut c, "a", "P2", "4", (2021, 3, 1), "MR", "4.1");
        let f = fetch_followups(&c, "P1");
        let got: Vec<_> = f.iter().map(|s| (s.study_uid.as_str(), s.center_label.as_str())).collect();
        assert_eq!(got, vec![("1", "label-a"), ("2", "label-a"), ("3", "label-b")]);
        assert!(fetch_followups(&c, "nobody").is_empty());
        assert_eq!(fetch_followups(&c, "P2").len(), 1);
    }

    #[test]
    fn inverted_range_is_invalid() {
        let rule = QueryRule {
            date_range: Some((NaiveDate::from_ymd_opt(2024, 2, 1).unwrap(), NaiveDate::from_ymd_opt(2024, 1, 1).unwrap())),
            ..Default::default()
        };
        assert!(rule.validate().is_err());
    }

    fn arb_rule() -> impl Strategy<Value = QueryRule> {
        (
            proptest::option::of(proptest::sample::subsequence(vec!["CT", "MR", "PT"], 1..=2)),
            proptest::option::of((0u32..60, 0u32..60)),
            proptest::option::of(0u32..5),
            proptest::option::of(0u32..3),
        )
            .prop_map(|(m, d, p, s)| QueryRule {
                modality: m.map(|m| m.into_iter().map(String::from).collect()),
                date_range: d.map(|(a, b)| {
                    let base = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
                    (base + chrono::Days::new(a.min(b) as u64), base + chrono::Days::new(a.max(b) as u64))
                }),
                patient_id: p.map(|p| format!("P{p}")),
                source_id: s.map(|s| format!("s{s}")),
            })
            .prop_filter("rule must set a field", |r| r.validate().is_ok())
    }

    proptest! {
        #[test]
        fn query_equals_linear_filter(
            rows in proptest::collection::vec((0u32..3, 0u32..5, 0u32..60, 0usize..3), 1..200),
            rule in arb_rule(),
        ) {
            let mut c = Catalog::new();
            let modalities = ["CT", "MR", "PT"];
            for (i, (s, p, d, m)) in rows.iter().enumerate() {
                let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(*d as u64);
                add(&mut c, &format!("s{s}"), &format!("P{p}"), &format!("st{p}.{d}"),
                    (chrono::Datelike::year(&date), chrono::Datelike::month(&date), chrono::Datelike::day(&date)),
                    modalities[*m], &format!("1.{i}"));
            }
            let got = query(&c, &rule).unwrap();
            let mut expected = Vec::new();
            for s in c.series() {
                let ok_m = rule.modality.as_ref().map_or(true, |m| m.contains(&s.modality));
                let ok_d = match rule.date_range {
                    None => true,
                    Some((f, t)) => matches!(s.study_date, Some(d) if f <= d && d <= t),
                };
                let ok_p = rule.patient_id.as_ref().map_or(true, |p| p == &s.patient_id);
                let ok_s = rule.source_id.as_ref().map_or(true, |x| x == &s.source_id);
                if ok_m && ok_d && ok_p && ok_s {
                    expected.push(SeriesRef::from(s));
                }
            }
            expected.sort_by(|a, b| a.patient_id.cmp(&b.patient_id)
                .then(a.study_date.cmp(&b.study_date))
                .then(a.series_uid.cmp(&b.series_uid))
                .then(a.source_id.cmp(&b.source_id)));
            prop_assert_eq!(got, expected);
        }
    }
}
