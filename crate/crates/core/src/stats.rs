//! Significance tests used to compare verification conditions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("table has an empty row or column: {0:?}")]
    DegenerateTable([[u64; 2]; 2]),
    #[error("successes {k} exceed trials {n}")]
    SuccessesExceedTrials { k: u64, n: u64 },
    #[error("no trials")]
    NoTrials,
    #[error("observed has {observed} categories, expected has {expected}")]
    LengthMismatch { observed: usize, expected: usize },
    #[error("goodness of fit needs at least two categories")]
    TooFewCategories,
    #[error("expected count for category {0} is not positive")]
    NonPositiveExpected(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Outcome of a significance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub df: Option<u32>,
}

impl TestResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// A 2×2 table: rows are conditions, columns are (success, failure).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2(pub [[u64; 2]; 2]);

impl ContingencyTable2x2 {
    /// Table for two conditions given as successes out of trials.
    pub fn from_rates(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<Self, StatsError> {
        for (k, n) in [(k1, n1), (k2, n2)] {
            if k > n {
                return Err(StatsError::SuccessesExceedTrials { k, n });
            }
        }
        Ok(ContingencyTable2x2([[k1, n1 - k1], [k2, n2 - k2]]))
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }
}

/// Upper tail of the chi-square distribution with one degree of freedom.
fn chi2_df1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

/// Pearson chi-square test of independence with Yates' continuity
/// correction, df = 1. The corrected deviation |O − E| − ½ is clamped at 0.
pub fn chi2_independence_yates(table: &ContingencyTable2x2) -> Result<TestResult, StatsError> {
    let t = table.0;
    let rows = [t[0][0] + t[0][1], t[1][0] + t[1][1]];
    let cols = [t[0][0] + t[1][0], t[0][1] + t[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(StatsError::DegenerateTable(t));
    }
    let n = table.total() as f64;
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] as f64 * cols[j] as f64 / n;
            let dev = ((t[i][j] as f64 - expected).abs() - 0.5).max(0.0);
            stat += dev * dev / expected;
        }
    }
    Ok(TestResult {
        method: "chi2_independence_yates".into(),
        statistic: stat,
        p_value: chi2_df1_sf(stat),
        df: Some(1),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// min(1, 2·P(X ≥ k)) under p = ½.
    #[default]
    TwoSidedDoubled,
    /// P(X ≥ k) under p = ½.
    Greater,
}

/// Sign-style binomial test of k successes in n trials against p = ½.
/// The two-sided variant doubles the upper tail; it is conservative below
/// n/2, where it saturates at 1.
pub fn binomial_test(k: u64, n: u64, alternative: Alternative) -> Result<TestResult, StatsError> {
    if n == 0 {
        return Err(StatsError::NoTrials);
    }
    if k > n {
        return Err(StatsError::SuccessesExceedTrials { k, n });
    }
    let dist = Binomial::new(0.5, n).map_err(|e| StatsError::Parameter(e.to_string()))?;
    // P(X >= k) = 1 - P(X <= k - 1)
    let upper = if k == 0 { 1.0 } else { dist.sf(k - 1) };
    let p_value = match alternative {
        Alternative::TwoSidedDoubled => (2.0 * upper).min(1.0),
        Alternative::Greater => upper,
    };
    let method = match alternative {
        Alternative::TwoSidedDoubled => "binomial_two_sided_doubled",
        Alternative::Greater => "binomial_greater",
    };
    Ok(TestResult {
        method: method.into(),
        statistic: k as f64,
        p_value,
        df: None,
    })
}

pub fn binomial_two_sided_doubled(k: u64, n: u64) -> Result<TestResult, StatsError> {
    binomial_test(k, n, Alternative::TwoSidedDoubled)
}

/// Pearson goodness-of-fit test with df = categories − 1. `expected` is
/// rescaled to the observed total, so probabilities or counts both work.
pub fn chi2_goodness_of_fit(observed: &[u64], expected: &[f64]) -> Result<TestResult, StatsError> {
    if observed.len() != expected.len() {
        return Err(StatsError::LengthMismatch {
            observed: observed.len(),
            expected: expected.len(),
        });
    }
    if observed.len() < 2 {
        return Err(StatsError::TooFewCategories);
    }
    if let Some(i) = expected.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(StatsError::NonPositiveExpected(i));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(StatsError::NoTrials);
    }
    let scale = n as f64 / expected.iter().sum::<f64>();
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let e = e * scale;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let df = observed.len() as u32 - 1;
    let dist = ChiSquared::new(df as f64).map_err(|e| StatsError::Parameter(e.to_string()))?;
    Ok(TestResult {
        method: "chi2_goodness_of_fit".into(),
        statistic: stat,
        p_value: dist.sf(stat),
        df: Some(df),
    })
}
