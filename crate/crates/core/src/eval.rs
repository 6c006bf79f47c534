//! Holdout protocol, accuracy and MCC, per-sector reports and the metrics file.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::Sector;
use crate::error::{Error, Result};
use crate::labels::LabeledExample;

/// Newest examples per company held out for testing.
pub const HOLDOUT_PER_COMPANY: usize = 5;

pub const METRICS_FORMAT_VERSION: u32 = 1;

/// An evaluated item: who, when, which sector and the true label.
pub trait Observation {
    fn company_id(&self) -> &str;
    fn date(&self) -> NaiveDate;
    fn sector(&self) -> Sector;
    fn label(&self) -> bool;
}

impl Observation for LabeledExample {
    fn company_id(&self) -> &str {
        &self.company_id
    }
    fn date(&self) -> NaiveDate {
        self.call_date
    }
    fn sector(&self) -> Sector {
        self.sector
    }
    fn label(&self) -> bool {
        self.label
    }
}

impl<T: Observation + ?Sized> Observation for &T {
    fn company_id(&self) -> &str {
        (**self).company_id()
    }
    fn date(&self) -> NaiveDate {
        (**self).date()
    }
    fn sector(&self) -> Sector {
        (**self).sector()
    }
    fn label(&self) -> bool {
        (**self).label()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Holdout<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    /// Companies with at most `per_company` examples, sent wholly to test.
    pub test_only_companies: Vec<String>,
}

/// Per company, the `per_company` newest examples go to test and the rest to train.
///
/// Both outputs are ordered by `(company, date)`; equal dates keep input order.
pub fn holdout_split<T: Observation>(items: Vec<T>, per_company: usize) -> Holdout<T> {
    let mut groups: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for item in items {
        groups
            .entry(item.company_id().to_string())
            .or_default()
            .push(item);
    }
    let mut out = Holdout {
        train: Vec::new(),
        test: Vec::new(),
        test_only_companies: Vec::new(),
    };
    for (company, mut group) in groups {
        group.sort_by_key(|x| x.date());
        if group.len() <= per_company {
            log::warn!(
                "company {company} has {} examples, all held out for test",
                group.len()
            );
            out.test_only_companies.push(company);
            out.test.extend(group);
        } else {
            let test = group.split_off(group.len() - per_company);
            out.train.extend(group);
            out.test.extend(test);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (p, a) in pairs {
            c.record(p, a);
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The same table with the positive and negative classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts::new(self.tn, self.tp, self.fn_, self.fp)
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.tn += rhs.tn;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::validation("accuracy of an empty confusion table")),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let mut factors = [c.tp + c.fp, c.tp + c.fn_, c.tn + c.fp, c.tn + c.fn_];
    if factors.contains(&0) {
        return 0.0;
    }
    // Sorted so the class-swapped table multiplies the same numbers in the same order.
    factors.sort_unstable();
    let den = factors.iter().map(|&f| f as f64).product::<f64>().sqrt();
    let num = c.tp as i128 * c.tn as i128 - c.fp as i128 * c.fn_ as i128;
    (num as f64 / den).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorReport {
    pub sector: Sector,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub mcc: f64,
    /// Sectors with at least one example, ascending.
    pub sectors: Vec<SectorReport>,
}

pub fn evaluate<T: Observation>(predictions: &[bool], examples: &[T]) -> Result<EvalReport> {
    if predictions.len() != examples.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} examples",
            predictions.len(),
            examples.len()
        )));
    }
    if examples.is_empty() {
        return Err(Error::validation("cannot evaluate an empty test set"));
    }
    let mut overall = ConfusionCounts::default();
    let mut by_sector: BTreeMap<Sector, ConfusionCounts> = BTreeMap::new();
    for (&p, e) in predictions.iter().zip(examples) {
        overall.record(p, e.label());
        by_sector
            .entry(e.sector())
            .or_default()
            .record(p, e.label());
    }
    let sectors = by_sector
        .into_iter()
        .map(|(sector, counts)| {
            Ok(SectorReport {
                sector,
                counts,
                accuracy: accuracy(&counts)?,
                mcc: mcc(&counts),
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        counts: overall,
        accuracy: accuracy(&overall)?,
        mcc: mcc(&overall),
        sectors,
    })
}

impl EvalReport {
    /// Plain-text table, overall row last.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>5} {:>5} {:>5} {:>5} {:>9} {:>8}",
            "sector", "n", "tp", "tn", "fp", "fn", "accuracy", "mcc"
        );
        let mut row = |name: &str, c: &ConfusionCounts, acc: f64, m: f64| {
            let _ = writeln!(
                s,
                "{:<8} {:>5} {:>5} {:>5} {:>5} {:>5} {:>9.4} {:>8.4}",
                name,
                c.total(),
                c.tp,
                c.tn,
                c.fp,
                c.fn_,
                acc,
                m
            );
        };
        for r in &self.sectors {
            row(&r.sector.to_string(), &r.counts, r.accuracy, r.mcc);
        }
        row("overall", &self.counts, self.accuracy, self.mcc);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub accuracy: f64,
    pub mcc: f64,
    pub counts: ConfusionCounts,
}

/// The versioned metrics file written by every evaluating command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub format_version: u32,
    pub method: String,
    pub overall: OverallMetrics,
    pub sectors: Vec<SectorReport>,
    pub config_hash: String,
    pub dataset_hash: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
    pub generated_at: String,
}

impl MetricsFile {
    pub fn new(method: &str, report: &EvalReport, config_hash: &str, dataset_hash: &str) -> Self {
        MetricsFile {
            format_version: METRICS_FORMAT_VERSION,
            method: method.to_string(),
            overall: OverallMetrics {
                accuracy: report.accuracy,
                mcc: report.mcc,
                counts: report.counts,
            },
            sectors: report.sectors.clone(),
            config_hash: config_hash.to_string(),
            dataset_hash: dataset_hash.to_string(),
            extra: BTreeMap::new(),
            generated_at: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[derive(Debug, Clone, PartialEq)]
    struct Obs {
        company: String,
        date: NaiveDate,
        sector: Sector,
        label: bool,
    }

    impl Observation for Obs {
        fn company_id(&self) -> &str {
            &self.company
        }
        fn date(&self) -> NaiveDate {
            self.date
        }
        fn sector(&self) -> Sector {
            self.sector
        }
        fn label(&self) -> bool {
            self.label
        }
    }

    fn company(name: &str, n: usize) -> Vec<Obs> {
        let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        (0..n)
            .map(|i| Obs {
                company: name.into(),
                date: start + chrono::Days::new(91 * i as u64),
                sector: Sector::new(0).unwrap(),
                label: i % 2 == 0,
            })
            .collect()
    }

    #[test]
    fn holdout_boundaries() {
        for (n, train, test) in [(35, 30, 5), (6, 1, 5), (5, 0, 5), (2, 0, 2)] {
            let mut items = company("c", n);
            items.reverse();
            let h = holdout_split(items, HOLDOUT_PER_COMPANY);
            assert_eq!((h.train.len(), h.test.len()), (train, test), "n={n}");
            assert_eq!(h.test_only_companies.len(), usize::from(n <= 5));
            if let Some(last_train) = h.train.last() {
                assert!(h.test.iter().all(|t| t.date > last_train.date));
            }
        }
    }

    #[test]
    fn holdout_is_per_company() {
        let mut items = company("b", 8);
        items.extend(company("a", 3));
        let h = holdout_split(items, 5);
        assert_eq!(h.train.len(), 3);
        assert!(h.train.iter().all(|x| x.company == "b"));
        assert_eq!(h.test.len(), 8);
        assert_eq!(h.test[0].company, "a");
        assert_eq!(h.test_only_companies, vec!["a".to_string()]);
    }

    #[test]
    fn metric_values() {
        let c = ConfusionCounts::new(3, 2, 1, 2);
        assert_eq!(accuracy(&c).unwrap(), 0.625);
        assert!((mcc(&c) - 4.0 / 240f64.sqrt()).abs() < 1e-15);
        assert_eq!(mcc(&ConfusionCounts::new(4, 6, 0, 0)), 1.0);
        assert_eq!(mcc(&ConfusionCounts::new(0, 0, 6, 4)), -1.0);
        assert_eq!(mcc(&ConfusionCounts::new(5, 0, 5, 0)), 0.0);
        assert_eq!(accuracy(&ConfusionCounts::new(0, 0, 3, 4)).unwrap(), 0.0);
        assert!(accuracy(&ConfusionCounts::default()).is_err());
    }

    proptest! {
        #[test]
        fn mcc_swap_and_bounds(tp in 0u64..1_000_000, tn in 0u64..1_000_000, fp in 0u64..1_000_000, fn_ in 0u64..1_000_000) {
            let c = ConfusionCounts::new(tp, tn, fp, fn_);
            let m = mcc(&c);
            prop_assert!((-1.0..=1.0).contains(&m));
            prop_assert_eq!(m.to_bits(), mcc(&c.swapped()).to_bits());
        }
    }

    #[test]
    fn random_predictions_have_small_mcc() {
        let failures = (0..20u64)
            .filter(|&seed| {
                let mut rng = crate::model::ModelRng::seed_from_u64(seed);
                let c = ConfusionCounts::from_pairs(
                    (0..2000).map(|i| (rng.random::<bool>(), i % 2 == 0)),
                );
                mcc(&c).abs() >= 0.1
            })
            .count();
        assert!(failures <= 1, "{failures} seeds with |mcc| >= 0.1");
    }

    #[test]
    fn sectors_partition_overall() {
        let mut items = company("a", 4);
        items[2].sector = Sector::new(7).unwrap();
        items[3].sector = Sector::new(7).unwrap();
        let preds = [true, true, false, true];
        let r = evaluate(&preds, &items).unwrap();
        assert_eq!(r.sectors.len(), 2);
        let mut sum = ConfusionCounts::default();
        for s in &r.sectors {
            sum += s.counts;
        }
        assert_eq!(sum, r.counts);

        let one = evaluate(&preds[..2], &items[..2]).unwrap();
        assert_eq!(one.sectors.len(), 1);
        assert_eq!(one.sectors[0].counts, one.counts);

        assert!(evaluate::<Obs>(&[], &[]).is_err());
        assert!(evaluate(&preds[..1], &items).is_err());
        assert!(r.table().lines().last().unwrap().starts_with("overall"));
    }

    #[test]
    fn metrics_json_shape() {
        let items = company("a", 4);
        let r = evaluate(&[true, false, true, true], &items).unwrap();
        let m = MetricsFile::new("attention", &r, "cfg", "data");
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert!(v["overall"]["accuracy"].is_number());
        assert!(v["overall"]["mcc"].is_number());
        assert_eq!(v["overall"]["counts"]["fn"], 0);
        assert_eq!(v["sectors"][0]["sector"], 0);
        let back: MetricsFile = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
