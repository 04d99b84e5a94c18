//! Point-forecast accuracy and interval coverage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let s: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, f)| (y - f).abs())
        .sum();
    Ok(s / actual.len() as f64)
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    if actual.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            found: actual.len(),
        });
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of actuals inside `[lower, upper]`.
pub fn coverage(actual: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_pair(actual, lower)?;
    check_pair(actual, upper)?;
    let inside = actual
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(y, (lo, hi))| *lo <= *y && *y <= *hi)
        .count();
    Ok(inside as f64 / actual.len() as f64)
}

/// Metrics for one pool of (household, month) predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub mae: f64,
    /// `None` when the actuals in the pool have zero variance or n < 2.
    pub r2: Option<f64>,
    pub coverage95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub pooled: MetricSet,
    pub by_region: BTreeMap<String, MetricSet>,
}

/// A joined actual/forecast observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<'a> {
    pub region: &'a str,
    pub actual: f64,
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
}

fn metric_set(rows: &[&Scored<'_>]) -> Result<MetricSet> {
    let actual: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    let mean: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let lower: Vec<f64> = rows.iter().map(|r| r.lower95).collect();
    let upper: Vec<f64> = rows.iter().map(|r| r.upper95).collect();
    Ok(MetricSet {
        n: rows.len(),
        mae: mae(&actual, &mean)?,
        r2: r2(&actual, &mean).ok(),
        coverage95: coverage(&actual, &lower, &upper)?,
    })
}

impl EvalReport {
    /// Pools every row and breaks down by region.
    pub fn from_scored(rows: &[Scored<'_>]) -> Result<EvalReport> {
        let all: Vec<&Scored<'_>> = rows.iter().collect();
        let pooled = metric_set(&all)?;
        let mut groups: BTreeMap<&str, Vec<&Scored<'_>>> = BTreeMap::new();
        for r in rows {
            groups.entry(r.region).or_default().push(r);
        }
        let by_region = groups
            .into_iter()
            .map(|(k, v)| Ok((k.to_owned(), metric_set(&v)?)))
            .collect::<Result<_>>()?;
        Ok(EvalReport { pooled, by_region })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(mae(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn r2_examples() {
        let y = [1.0, 4.0, 2.0, 7.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &[3.5; 4]).unwrap(), 0.0);
        assert!(r2(&y, &[7.0, 1.0, 7.0, 1.0]).unwrap() < 0.0);
        assert!(matches!(
            r2(&[2.0, 2.0], &[1.0, 3.0]),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn coverage_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(coverage(&y, &[0.0; 3], &[10.0; 3]).unwrap(), 1.0);
        assert_eq!(coverage(&y, &[5.0; 3], &[5.0; 3]).unwrap(), 0.0);
        // Endpoints are inside.
        assert_eq!(coverage(&y, &y, &y).unwrap(), 1.0);
    }

    #[test]
    fn report_breaks_down_by_region() {
        let rows = [
            Scored {
                region: "VIC",
                actual: 1.0,
                mean: 1.0,
                lower95: 0.0,
                upper95: 2.0,
            },
            Scored {
                region: "VIC",
                actual: 3.0,
                mean: 2.0,
                lower95: 0.0,
                upper95: 2.5,
            },
            Scored {
                region: "NSW",
                actual: 5.0,
                mean: 5.0,
                lower95: 4.0,
                upper95: 6.0,
            },
        ];
        let rep = EvalReport::from_scored(&rows).unwrap();
        assert_eq!(rep.pooled.n, 3);
        assert!((rep.pooled.mae - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.by_region["VIC"].coverage95, 0.5);
        assert_eq!(rep.by_region["NSW"].r2, None);
    }
}
