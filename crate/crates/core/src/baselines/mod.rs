//! Comparison systems: a moving-average reversion rule and bag-of-words features
//! with a linear classifier.

mod features;
mod logistic;

pub use features::{
    build_idf, log1p_vector, read_feature_matrix, term_counts, tfidf_vector, write_feature_matrix,
    IdfTable, SparseFeatureVector,
};
pub use logistic::{baseline_predict, baseline_train, LinearBaselineModel, LogisticConfig};

use chrono::NaiveDate;

use crate::labels::PriceSeries;

pub const DEFAULT_MA_WINDOW: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanReversionError {
    NotATradingDate,
    InsufficientHistory { available: usize, window: usize },
}

impl std::fmt::Display for MeanReversionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeanReversionError::NotATradingDate => write!(f, "date is not in the price series"),
            MeanReversionError::InsufficientHistory { available, window } => write!(
                f,
                "{available} observations up to the date, moving average needs {window}"
            ),
        }
    }
}

/// Predicts up iff the close on `date` is below the mean of the last `window` closes
/// up to and including `date`.
///
/// The comparison is done on the sum of `close_i - close(date)` so that ties are exact
/// and a constant series never rounds to a spurious signal.
pub fn mean_reversion_predict(
    series: &PriceSeries,
    date: NaiveDate,
    window: usize,
) -> Result<bool, MeanReversionError> {
    let i = series
        .index_of(date)
        .ok_or(MeanReversionError::NotATradingDate)?;
    if window == 0 || i + 1 < window {
        return Err(MeanReversionError::InsufficientHistory {
            available: i + 1,
            window,
        });
    }
    let obs = series.observations();
    let close = obs[i].1;
    let excess: f64 = obs[i + 1 - window..=i]
        .iter()
        .map(|&(_, p)| p - close)
        .sum();
    Ok(excess > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Days;
    use proptest::prelude::*;

    fn series(closes: impl IntoIterator<Item = f64>) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        PriceSeries::new(
            "T",
            closes
                .into_iter()
                .enumerate()
                .map(|(i, p)| (start + Days::new(i as u64), p))
                .collect(),
        )
        .unwrap()
    }

    fn last(s: &PriceSeries) -> NaiveDate {
        s.observations().last().unwrap().0
    }

    #[test]
    fn constant_rising_falling() {
        for (closes, want) in [
            (vec![10.0; 70], false),
            ((0..70).map(|i| 10.0 + i as f64).collect(), false),
            ((0..70).map(|i| 100.0 - i as f64).collect(), true),
        ] {
            let s = series(closes);
            assert_eq!(mean_reversion_predict(&s, last(&s), 60), Ok(want));
        }
    }

    #[test]
    fn constant_awkward_value_is_a_tie() {
        let s = series(vec![0.1 * 3.0; 60]);
        assert_eq!(mean_reversion_predict(&s, last(&s), 60), Ok(false));
    }

    #[test]
    fn window_is_observations() {
        let s = series(vec![1.0; 60]);
        let d59 = s.observations()[58].0;
        assert_eq!(
            mean_reversion_predict(&s, d59, 60),
            Err(MeanReversionError::InsufficientHistory {
                available: 59,
                window: 60
            })
        );
        assert!(mean_reversion_predict(&s, last(&s), 60).is_ok());
        let gap = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        assert_eq!(
            mean_reversion_predict(&s, gap, 60),
            Err(MeanReversionError::NotATradingDate)
        );
    }

    proptest! {
        #[test]
        fn scale_invariant(
            closes in proptest::collection::vec(1.0f64..500.0, 60..90),
            c in 1e-3f64..1e3,
        ) {
            let s = series(closes);
            let d = last(&s);
            prop_assert_eq!(
                mean_reversion_predict(&s, d, 60),
                mean_reversion_predict(&s.scaled(c).unwrap(), d, 60)
            );
        }
    }
}
