//! Hourly demand series, forecast containers and the evaluation metrics
//! shared by the models, the rApp and the benchmark harness.

use std::io::{Read, Write};
use std::ops::Range;

use chrono::{DateTime, Datelike, Duration, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of percentile rows in a [`QuantileForecast`] (1st..=99th).
pub const NUM_LEVELS: usize = 99;

/// CSV header shared by every series file.
pub const CSV_HEADER: [&str; 3] = ["tenant_id", "timestamp_iso8601", "prb_demand"];

pub fn step() -> Duration {
    Duration::hours(1)
}

/// Hour-of-day / 24 and day-of-week / 7 (Monday = 0), both in `[0, 1)`.
pub fn calendar_covariates(t: DateTime<Utc>) -> [f64; 2] {
    [
        t.hour() as f64 / 24.0,
        t.weekday().num_days_from_monday() as f64 / 7.0,
    ]
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::InvalidSeries(format!("bad timestamp {s:?}: {e}")))
}

/// Hourly PRB-demand history of one tenant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    tenant_id: String,
    start: DateTime<Utc>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        tenant_id: impl Into<String>,
        start: DateTime<Utc>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSeries("empty series".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidSeries(format!(
                "value {v} at index {i} is not a finite non-negative demand"
            )));
        }
        Ok(Self {
            tenant_id: tenant_id.into(),
            start,
            values,
        })
    }

    pub fn tenant_id(&self) -> &str {
        &self.tenant_id
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    /// Timestamp one step past the last point.
    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp(self.values.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + step() * index as i32
    }

    pub fn slice(&self, range: Range<usize>) -> Result<TimeSeries> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {range:?} out of bounds for series of length {}",
                self.len()
            )));
        }
        Ok(TimeSeries {
            tenant_id: self.tenant_id.clone(),
            start: self.timestamp(range.start),
            values: self.values[range].to_vec(),
        })
    }

    /// Index of `t` in this series, if `t` lies on the hourly grid within it.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let offset = t - self.start;
        if offset < Duration::zero() || offset.num_seconds() % 3600 != 0 {
            return None;
        }
        let idx = (offset.num_seconds() / 3600) as usize;
        (idx < self.len()).then_some(idx)
    }

    /// Appends the next hourly point. Used by append-only stores.
    pub fn push(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidSeries(format!(
                "value {value} is not a finite non-negative demand"
            )));
        }
        self.values.push(value);
        Ok(())
    }

    /// Drops leading points so that at most `keep` remain.
    pub fn retain_last(&mut self, keep: usize) {
        if keep > 0 && self.values.len() > keep {
            let drop = self.values.len() - keep;
            self.start += step() * drop as i32;
            self.values.drain(..drop);
        }
    }
}

/// Splits into a leading `floor(len * train_fraction)` slice and the remainder.
pub fn split_train_test(
    series: &TimeSeries,
    train_fraction: f64,
) -> Result<(TimeSeries, TimeSeries)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = series.len();
    let cut = (n as f64 * train_fraction).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::TooShort {
            needed: 2,
            got: n,
        });
    }
    Ok((series.slice(0..cut)?, series.slice(cut..n)?))
}

/// Raw sample paths of a probabilistic forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleForecast {
    start: DateTime<Utc>,
    horizon: usize,
    samples: Vec<Vec<f64>>,
}

impl SampleForecast {
    pub fn new(start: DateTime<Utc>, samples: Vec<Vec<f64>>) -> Result<Self> {
        let horizon = samples.first().map(Vec::len).unwrap_or(0);
        if samples.is_empty() || horizon == 0 {
            return Err(Error::InvalidArgument(
                "forecast needs at least one non-empty sample path".into(),
            ));
        }
        for path in &samples {
            if path.len() != horizon {
                return Err(Error::LengthMismatch {
                    expected: horizon,
                    got: path.len(),
                });
            }
            if path.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite forecast sample".into()));
            }
        }
        Ok(Self {
            start,
            horizon,
            samples,
        })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    fn column(&self, hour: usize) -> Vec<f64> {
        self.samples.iter().map(|p| p[hour]).collect()
    }
}

/// Percentile rows 1..=99 over the forecast horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    start: DateTime<Utc>,
    /// `values[k - 1][hour]` is the k-th percentile.
    values: Vec<Vec<f64>>,
}

impl QuantileForecast {
    /// Builds from explicit rows, rejecting crossing percentiles.
    pub fn from_rows(start: DateTime<Utc>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != NUM_LEVELS {
            return Err(Error::LengthMismatch {
                expected: NUM_LEVELS,
                got: values.len(),
            });
        }
        let horizon = values[0].len();
        if horizon == 0 || values.iter().any(|r| r.len() != horizon) {
            return Err(Error::InvalidArgument("ragged quantile rows".into()));
        }
        for hour in 0..horizon {
            for k in 1..NUM_LEVELS {
                if !(values[k - 1][hour] <= values[k][hour]) {
                    return Err(Error::InvalidArgument(format!(
                        "percentiles {} and {} cross at hour {hour}",
                        k,
                        k + 1
                    )));
                }
            }
        }
        Ok(Self { start, values })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn horizon(&self) -> usize {
        self.values[0].len()
    }

    /// Row for percentile `level` (1..=99).
    pub fn level(&self, level: u8) -> Result<&[f64]> {
        if !(1..=NUM_LEVELS as u8).contains(&level) {
            return Err(Error::InvalidArgument(format!(
                "percentile level {level} outside 1..=99"
            )));
        }
        Ok(&self.values[level as usize - 1])
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Point forecast, the per-hour mean of the sample paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointForecast {
    pub start: DateTime<Utc>,
    pub values: Vec<f64>,
}

/// Percentile `level` (1..=99) by linear interpolation between order
/// statistics at position `level / 100 * (n - 1)`.
///
/// The position is split into integer and fractional parts with exact integer
/// arithmetic. `sorted` must be ascending and non-empty.
pub fn interpolated_percentile(sorted: &[f64], level: u32) -> f64 {
    let n = sorted.len();
    let scaled = level as usize * (n - 1);
    let lo = (scaled / 100).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let r = (scaled % 100) as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    ((a * (100.0 - r) + b * r) / 100.0).clamp(a, b)
}

pub fn to_quantiles(f: &SampleForecast) -> Result<QuantileForecast> {
    if f.num_samples() < 2 {
        return Err(Error::InvalidArgument(format!(
            "quantiles need at least 2 samples, got {}",
            f.num_samples()
        )));
    }
    let mut values = vec![vec![0.0; f.horizon()]; NUM_LEVELS];
    for hour in 0..f.horizon() {
        let mut col = f.column(hour);
        col.sort_by(f64::total_cmp);
        for (k, row) in values.iter_mut().enumerate() {
            row[hour] = interpolated_percentile(&col, k as u32 + 1);
        }
        // rounding in the weighted sum may dip by an ulp between levels
        for k in 1..NUM_LEVELS {
            values[k][hour] = values[k][hour].max(values[k - 1][hour]);
        }
    }
    Ok(QuantileForecast {
        start: f.start,
        values,
    })
}

pub fn mean_point(f: &SampleForecast) -> PointForecast {
    let n = f.num_samples() as f64;
    let values = (0..f.horizon())
        .map(|h| f.samples.iter().map(|p| p[h]).sum::<f64>() / n)
        .collect();
    PointForecast {
        start: f.start,
        values,
    }
}

/// Mean squared error of two equal-length sequences.
pub fn mse_values(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InvalidArgument("mse of empty sequences".into()));
    }
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / actual.len() as f64)
}

pub fn mse(actual: &TimeSeries, predicted: &PointForecast) -> Result<f64> {
    if actual.start() != predicted.start {
        return Err(Error::InvalidArgument(format!(
            "misaligned forecast: actual starts {}, forecast {}",
            actual.start(),
            predicted.start
        )));
    }
    mse_values(actual.values(), &predicted.values)
}

/// Fraction of hours where the actual value lies inside `[q_lo, q_hi]`.
pub fn interval_coverage(
    q: &QuantileForecast,
    actual: &[f64],
    lo_level: u8,
    hi_level: u8,
) -> Result<f64> {
    if lo_level >= hi_level {
        return Err(Error::InvalidArgument(format!(
            "interval levels out of order: {lo_level} >= {hi_level}"
        )));
    }
    let lo = q.level(lo_level)?;
    let hi = q.level(hi_level)?;
    if actual.len() != lo.len() {
        return Err(Error::LengthMismatch {
            expected: lo.len(),
            got: actual.len(),
        });
    }
    let covered = actual
        .iter()
        .enumerate()
        .filter(|(i, x)| lo[*i] <= **x && **x <= hi[*i])
        .count();
    Ok(covered as f64 / actual.len() as f64)
}

/// Affine standardization fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub sd: f64,
}

impl Scaler {
    /// Population mean and standard deviation; a zero deviation becomes 1.
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            mean,
            sd: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Fits a [`Scaler`] on `train` and returns it with the scaled values.
///
/// Scaled values may be negative, so they are returned as a plain vector
/// rather than a demand series.
pub fn standardize(train: &TimeSeries) -> (Scaler, Vec<f64>) {
    let scaler = Scaler::fit(train.values());
    let scaled = train.values().iter().map(|v| scaler.scale(*v)).collect();
    (scaler, scaled)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    tenant_id: String,
    timestamp_iso8601: String,
    prb_demand: f64,
}

pub fn write_csv<W: Write>(writer: W, series: &[TimeSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in series {
        for (i, v) in s.values().iter().enumerate() {
            w.write_record([
                s.tenant_id(),
                &format_timestamp(s.timestamp(i)),
                &v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads one or more tenants; rows of each tenant must be hourly and increasing.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<TimeSeries>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidSeries(format!(
            "unexpected header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out: Vec<(String, DateTime<Utc>, Vec<f64>)> = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row?;
        let t = parse_timestamp(&row.timestamp_iso8601)?;
        match out.iter_mut().find(|(id, _, _)| *id == row.tenant_id) {
            Some((_, start, values)) => {
                let expected = *start + step() * values.len() as i32;
                if t != expected {
                    return Err(Error::InvalidSeries(format!(
                        "tenant {}: expected timestamp {}, found {}",
                        row.tenant_id,
                        format_timestamp(expected),
                        row.timestamp_iso8601
                    )));
                }
                values.push(row.prb_demand);
            }
            None => out.push((row.tenant_id, t, vec![row.prb_demand])),
        }
    }
    out.into_iter()
        .map(|(id, start, values)| TimeSeries::new(id, start, values))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries::new("t", t0(), values).unwrap()
    }

    fn forecast(paths: Vec<Vec<f64>>) -> SampleForecast {
        SampleForecast::new(t0(), paths).unwrap()
    }

    #[test]
    fn rejects_negative_and_nan() {
        assert!(TimeSeries::new("t", t0(), vec![1.0, -0.5]).is_err());
        assert!(TimeSeries::new("t", t0(), vec![f64::NAN]).is_err());
        assert!(TimeSeries::new("t", t0(), vec![]).is_err());
    }

    #[test]
    fn split_lengths() {
        let s = series((0..10).map(f64::from).collect());
        let (a, b) = split_train_test(&s, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(b.start(), t0() + Duration::hours(8));

        let s = series(vec![1.0; 3360]);
        let (a, b) = split_train_test(&s, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (2688, 672));

        assert!(split_train_test(&series(vec![1.0]), 0.8).is_err());
        assert!(split_train_test(&series(vec![1.0, 2.0]), 1.0).is_err());
    }

    #[test]
    fn quantile_hand_cases() {
        let f = forecast(vec![vec![3.0], vec![1.0], vec![4.0], vec![2.0]]);
        let q = to_quantiles(&f).unwrap();
        assert_eq!(q.level(50).unwrap()[0], 2.5);
        assert_eq!(q.level(99).unwrap()[0], 3.97);

        let q = to_quantiles(&forecast(vec![vec![7.0, 7.0]; 5])).unwrap();
        assert!(q.rows().iter().flatten().all(|v| *v == 7.0));

        assert!(to_quantiles(&forecast(vec![vec![1.0]])).is_err());
    }

    #[test]
    fn mean_point_cases() {
        let p = mean_point(&forecast(vec![vec![1.0, 4.0], vec![3.0, 0.0], vec![5.0, 2.0]]));
        assert_eq!(p.values, vec![3.0, 2.0]);
        let p = mean_point(&forecast(vec![vec![0.5, 1.5]]));
        assert_eq!(p.values, vec![0.5, 1.5]);
        let p = mean_point(&forecast(vec![vec![0.0; 3], vec![2.0; 3]]));
        assert_eq!(p.values, vec![1.0; 3]);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_values(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((mse_values(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((mse_values(&[10.0, 12.0, 14.0], &[11.0, 12.0, 13.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            mse_values(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mse_requires_alignment() {
        let actual = series(vec![1.0, 2.0]);
        let p = PointForecast {
            start: t0() + Duration::hours(1),
            values: vec![1.0, 2.0],
        };
        assert!(mse(&actual, &p).is_err());
    }

    #[test]
    fn coverage_cases() {
        let f = forecast((0..10).map(|i| vec![10.0 + i as f64; 4]).collect());
        let q = to_quantiles(&f).unwrap();
        assert_eq!(interval_coverage(&q, &[0.0; 4], 1, 99).unwrap(), 0.0);
        let median = q.level(50).unwrap().to_vec();
        assert_eq!(interval_coverage(&q, &median, 10, 90).unwrap(), 1.0);

        let flat = to_quantiles(&forecast(vec![vec![3.0; 4]; 3])).unwrap();
        assert_eq!(interval_coverage(&flat, &[3.0; 4], 10, 90).unwrap(), 1.0);

        assert!(interval_coverage(&q, &[0.0; 4], 90, 10).is_err());
        assert!(interval_coverage(&q, &[0.0; 3], 10, 90).is_err());
    }

    #[test]
    fn standardize_cases() {
        let (sc, z) = standardize(&series(vec![5.0; 4]));
        assert_eq!(sc, Scaler { mean: 5.0, sd: 1.0 });
        assert_eq!(z, vec![0.0; 4]);

        let (sc, z) = standardize(&series(vec![0.0, 2.0]));
        assert_eq!(sc, Scaler { mean: 1.0, sd: 1.0 });
        assert_eq!(z, vec![-1.0, 1.0]);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let a = series(vec![1.5, 2.25, 0.0]);
        let b = TimeSeries::new("other", t0() + Duration::hours(5), vec![9.0]).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("tenant_id,timestamp_iso8601,prb_demand\n"));
        assert!(text.contains("t,2024-01-01T01:00:00Z,2.25"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), vec![a, b]);

        let gap = "tenant_id,timestamp_iso8601,prb_demand\nt,2024-01-01T00:00:00Z,1\nt,2024-01-01T02:00:00Z,1\n";
        assert!(read_csv(gap.as_bytes()).is_err());
    }

    #[test]
    fn covariates_in_unit_interval() {
        // 2024-01-01 is a Monday
        assert_eq!(calendar_covariates(t0()), [0.0, 0.0]);
        let sun_23 = t0() + Duration::hours(6 * 24 + 23);
        assert_eq!(calendar_covariates(sun_23), [23.0 / 24.0, 6.0 / 7.0]);
    }

    proptest! {
        #[test]
        fn quantiles_never_cross(paths in prop::collection::vec(
            prop::collection::vec(-1e6f64..1e6, 3), 2..40))
        {
            let q = to_quantiles(&forecast(paths)).unwrap();
            for h in 0..3 {
                for k in 1..NUM_LEVELS {
                    prop_assert!(q.rows()[k - 1][h] <= q.rows()[k][h]);
                }
            }
        }

        #[test]
        fn mse_symmetric_nonnegative(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = mse_values(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, mse_values(&b, &a).unwrap());
            prop_assert_eq!(mse_values(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn split_concatenates(values in prop::collection::vec(0f64..100.0, 2..200), frac in 0.05f64..0.95) {
            let s = series(values);
            if let Ok((a, b)) = split_train_test(&s, frac) {
                prop_assert_eq!(b.start(), a.end());
                let joined: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
                prop_assert_eq!(joined, s.values().to_vec());
            }
        }

        #[test]
        fn standardize_round_trip(values in prop::collection::vec(0f64..1e4, 1..100)) {
            let s = series(values);
            let (sc, z) = standardize(&s);
            for (x, zi) in s.values().iter().zip(&z) {
                prop_assert!((sc.inverse(*zi) - x).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn symmetric_pair_median_is_mean(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let f = forecast(vec![vec![a], vec![b]]);
            let q = to_quantiles(&f).unwrap();
            let m = mean_point(&f);
            prop_assert!((q.level(50).unwrap()[0] - m.values[0]).abs() <= 1e-9 * (a.abs() + b.abs()).max(1.0));
        }
    }
}
