//! Billing-interval to calendar-month disaggregation.
//!
//! Each interval's total is spread uniformly over its days, so a month
//! receives `total × overlap_days / interval_days`. Amounts are exact
//! rationals: the parts of an interval always sum back to its total.

use chrono::NaiveDate;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use super::Month;
use crate::error::{Error, Result};

/// A billed period with an inclusive end date.
#[derive(Debug, Clone, PartialEq)]
pub struct BillingInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub total: f64,
}

impl BillingInterval {
    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyAmount {
    pub month: Month,
    /// `None` when no interval touches the month.
    pub amount: Option<BigRational>,
    pub covered_days: u32,
}

impl MonthlyAmount {
    pub fn is_complete(&self) -> bool {
        self.covered_days == self.month.days()
    }

    pub fn amount_f64(&self) -> Option<f64> {
        self.amount.as_ref().and_then(|a| a.to_f64())
    }
}

/// Exact rational value of a finite float.
pub fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite interval total")
}

/// Spreads interval totals over the calendar months they overlap.
///
/// The output covers every month from the first interval's start to the
/// last interval's end; months no interval overlaps have `amount: None`.
pub fn disaggregate_quarterly(intervals: &[BillingInterval]) -> Result<Vec<MonthlyAmount>> {
    if intervals.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted: Vec<&BillingInterval> = intervals.iter().collect();
    sorted.sort_by_key(|iv| iv.start);
    for iv in &sorted {
        if iv.end <= iv.start {
            return Err(Error::InvalidInterval(format!(
                "{} .. {} does not end after it starts",
                iv.start, iv.end
            )));
        }
        if !iv.total.is_finite() || iv.total < 0.0 {
            return Err(Error::NegativeTotal(iv.total));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start <= w[0].end {
            return Err(Error::Overlap(format!(
                "{}..{} overlaps {}..{}",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }

    let first = Month::of_date(sorted[0].start);
    let last = Month::of_date(sorted.iter().map(|iv| iv.end).max().expect("non-empty"));
    let mut out: Vec<MonthlyAmount> = (first.0..=last.0)
        .map(|m| MonthlyAmount {
            month: Month(m),
            amount: None,
            covered_days: 0,
        })
        .collect();

    for iv in sorted {
        let total = exact(iv.total);
        let days = BigInt::from(iv.days());
        let mut m = Month::of_date(iv.start);
        let end_month = Month::of_date(iv.end);
        while m <= end_month {
            let lo = iv.start.max(m.first_day());
            let hi = iv.end.min((m + 1).first_day().pred_opt().expect("date"));
            let overlap = (hi - lo).num_days() + 1;
            let part = &total * BigRational::new(BigInt::from(overlap), days.clone());
            let slot = &mut out[(m.0 - first.0) as usize];
            slot.covered_days += overlap as u32;
            slot.amount = Some(match slot.amount.take() {
                Some(a) => a + part,
                None => part,
            });
            m = m + 1;
        }
    }
    Ok(out)
}

/// Exact sum of the disaggregated amounts.
pub fn total_amount(months: &[MonthlyAmount]) -> BigRational {
    months
        .iter()
        .filter_map(|m| m.amount.clone())
        .fold(BigRational::zero(), |a, b| a + b)
}
