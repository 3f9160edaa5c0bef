//! Loading, cleaning, and calendar-filtering of raw per-segment speed series.
//!
//! The CSV interface is `segment_id,timestamp,speed` with a header row;
//! timestamps are ISO-8601 or integer epoch seconds, speeds decimal km/h.
//! Missing samples are simply absent rows and become explicit gaps after
//! loading.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Utc, Weekday};
use serde::{Deserialize, Serialize};

/// Default +08:00 day boundary, matching the dataset the defaults mirror.
pub const DEFAULT_UTC_OFFSET_SECS: i32 = 8 * 3600;

/// Fallback sampling interval when a segment has a single row.
pub const DEFAULT_STEP_SECS: u32 = 300;

const SECS_PER_DAY: i64 = 86_400;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: String,
        line: u64,
        reason: String,
    },
    #[error("{path}:{line}: invalid timestamp {raw:?}")]
    BadTimestamp {
        path: String,
        line: u64,
        raw: String,
    },
    #[error("{path}:{line}: negative speed {speed}")]
    NegativeSpeed {
        path: String,
        line: u64,
        speed: f64,
    },
    #[error("segment {segment}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { segment: String, timestamp: i64 },
    #[error("segment {segment}: timestamps do not lie on a common {step}s grid")]
    IrregularSpacing { segment: String, step: u32 },
    #[error("segment {segment}: timestamp span too large for step {step}s")]
    SpanTooLarge { segment: String, step: u32 },
    #[error("no data rows found in {path}")]
    EmptyFile { path: String },
    #[error("segment {segment}: series is entirely missing")]
    AllMissing { segment: String },
    #[error("segment {segment}: length {len} is not a whole number of {period}-sample days")]
    PartialDays {
        segment: String,
        len: usize,
        period: usize,
    },
    #[error("period {period} x step {step}s does not span one day")]
    PeriodStepMismatch { period: usize, step: u32 },
    #[error("segment {segment}: series does not start at local midnight")]
    MisalignedDays { segment: String },
    #[error("segment {segment}: calendar filter removed every day")]
    FilterRemovedEverything { segment: String },
    #[error("speed series must be non-empty")]
    EmptySeries,
    #[error("invalid speed value {0}: speeds must be finite and non-negative")]
    InvalidSpeed(f64),
    #[error("step must be positive")]
    ZeroStep,
    #[error("need at least two distinct finite values to fit a scaler")]
    TooFewValues,
    #[error("degenerate scale: all values equal {0}")]
    DegenerateScale(f64),
}

/// One road segment's timestamped speed measurements at a fixed sampling
/// interval. `None` marks a missing sample.
///
/// For a freshly loaded series the timestamp of index `i` is
/// `t0 + i * step`. After calendar filtering the series is a concatenation
/// of whole days and each day keeps its real start time; `timestamp`
/// resolves indices either way.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSeries {
    segment_id: String,
    t0: i64,
    step: u32,
    values: Vec<Option<f64>>,
    day_starts: Vec<i64>,
    day_len: usize,
}

impl SpeedSeries {
    pub fn new(
        segment_id: impl Into<String>,
        t0: i64,
        step: u32,
        values: Vec<Option<f64>>,
    ) -> Result<Self, IngestError> {
        if values.is_empty() {
            return Err(IngestError::EmptySeries);
        }
        if step == 0 {
            return Err(IngestError::ZeroStep);
        }
        for v in values.iter().flatten() {
            if !v.is_finite() || *v < 0.0 {
                return Err(IngestError::InvalidSpeed(*v));
            }
        }
        Ok(Self {
            segment_id: segment_id.into(),
            t0,
            step,
            values,
            day_starts: Vec::new(),
            day_len: 0,
        })
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    /// All values when the series has no gaps, `None` otherwise.
    pub fn complete_values(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    /// Real timestamp of sample `index`.
    pub fn timestamp(&self, index: usize) -> i64 {
        if self.day_len == 0 {
            self.t0 + index as i64 * i64::from(self.step)
        } else {
            let day = index / self.day_len;
            let offset = (index % self.day_len) as i64;
            self.day_starts[day] + offset * i64::from(self.step)
        }
    }
}

/// Days to drop before analysis: weekends and/or explicit calendar dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarFilter {
    pub exclude_weekends: bool,
    pub exclude_dates: Vec<NaiveDate>,
    /// Offset applied to UTC timestamps before day/weekday decisions.
    pub utc_offset_secs: i32,
}

impl Default for CalendarFilter {
    fn default() -> Self {
        Self {
            exclude_weekends: false,
            exclude_dates: Vec::new(),
            utc_offset_secs: DEFAULT_UTC_OFFSET_SECS,
        }
    }
}

impl CalendarFilter {
    fn excludes(&self, local_date: NaiveDate) -> bool {
        if self.exclude_weekends
            && matches!(local_date.weekday(), Weekday::Sat | Weekday::Sun)
        {
            return true;
        }
        self.exclude_dates.contains(&local_date)
    }
}

/// Affine map from `[min, max]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn transform(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

/// Fit a min-max scaler over the given speeds.
pub fn fit_minmax(values: &[f64]) -> Result<MinMaxScaler, IngestError> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return Err(IngestError::TooFewValues);
    }
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(IngestError::DegenerateScale(min));
    }
    Ok(MinMaxScaler { min, max })
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(epoch) = raw.parse::<i64>() {
        return Some(epoch);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(naive.and_utc().timestamp());
        }
    }
    None
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Load one `SpeedSeries` per segment from a CSV file.
///
/// Rows are grouped by segment and sorted by timestamp; the sampling step is
/// inferred as the GCD of the timestamp gaps and absent slots become
/// explicit missing values. Duplicate `(segment, timestamp)` pairs and
/// negative speeds are rejected.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<SpeedSeries>, IngestError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => IngestError::Io {
                path: path_str.clone(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => IngestError::MalformedRow {
                path: path_str.clone(),
                line: 1,
                reason: e.to_string(),
            },
        })?;

    let mut per_segment: BTreeMap<String, Vec<(i64, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            path: path_str.clone(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(IngestError::MalformedRow {
                path: path_str.clone(),
                line,
                reason: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let segment = record[0].to_string();
        if segment.is_empty() {
            return Err(IngestError::MalformedRow {
                path: path_str.clone(),
                line,
                reason: "empty segment id".into(),
            });
        }
        let ts = parse_timestamp(&record[1]).ok_or_else(|| IngestError::BadTimestamp {
            path: path_str.clone(),
            line,
            raw: record[1].to_string(),
        })?;
        let speed: f64 = record[2].parse().map_err(|_| IngestError::MalformedRow {
            path: path_str.clone(),
            line,
            reason: format!("invalid speed {:?}", &record[2]),
        })?;
        if !speed.is_finite() {
            return Err(IngestError::MalformedRow {
                path: path_str.clone(),
                line,
                reason: format!("non-finite speed {speed}"),
            });
        }
        if speed < 0.0 {
            return Err(IngestError::NegativeSpeed {
                path: path_str.clone(),
                line,
                speed,
            });
        }
        per_segment.entry(segment).or_default().push((ts, speed));
    }

    if per_segment.is_empty() {
        return Err(IngestError::EmptyFile { path: path_str });
    }

    let mut out = Vec::with_capacity(per_segment.len());
    for (segment, mut rows) in per_segment {
        rows.sort_by_key(|(ts, _)| *ts);
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(IngestError::DuplicateTimestamp {
                    segment,
                    timestamp: pair[0].0,
                });
            }
        }
        let t0 = rows[0].0;
        let step = if rows.len() < 2 {
            DEFAULT_STEP_SECS
        } else {
            let g = rows
                .windows(2)
                .map(|pair| pair[1].0 - pair[0].0)
                .fold(0, gcd);
            u32::try_from(g).map_err(|_| IngestError::IrregularSpacing {
                segment: segment.clone(),
                step: 0,
            })?
        };
        let span = rows.last().unwrap().0 - t0;
        let slots = span / i64::from(step) + 1;
        if slots > 4_000_000 {
            return Err(IngestError::SpanTooLarge { segment, step });
        }
        let mut values: Vec<Option<f64>> = vec![None; slots as usize];
        for (ts, speed) in rows {
            let offset = ts - t0;
            if offset % i64::from(step) != 0 {
                return Err(IngestError::IrregularSpacing { segment, step });
            }
            values[(offset / i64::from(step)) as usize] = Some(speed);
        }
        out.push(SpeedSeries::new(segment, t0, step, values)?);
    }
    Ok(out)
}

/// Write series in the ingest CSV format (missing samples are omitted).
pub fn write_csv(series: &[SpeedSeries], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let wrap = |source: std::io::Error| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "segment_id,timestamp,speed").map_err(wrap)?;
    for s in series {
        for (i, v) in s.values().iter().enumerate() {
            if let Some(v) = v {
                writeln!(w, "{},{},{}", s.segment_id(), s.timestamp(i), v).map_err(wrap)?;
            }
        }
    }
    w.flush().map_err(wrap)
}

/// Linearly interpolate runs of at most `max_gap` consecutive missing values.
///
/// Longer runs (and runs touching the series boundary) are left missing, so
/// the day containing them is later dropped by the periodic split. Present
/// values are never altered.
pub fn fill_gaps(series: &SpeedSeries, max_gap: usize) -> Result<SpeedSeries, IngestError> {
    if series.values.iter().all(|v| v.is_none()) {
        return Err(IngestError::AllMissing {
            segment: series.segment_id.clone(),
        });
    }
    let mut values = series.values.clone();
    let n = values.len();
    let mut i = 0;
    while i < n {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && values[i].is_none() {
            i += 1;
        }
        let run_len = i - run_start;
        if run_len > max_gap || run_start == 0 || i == n {
            continue;
        }
        let left = values[run_start - 1].unwrap();
        let right = values[i].unwrap();
        for (k, slot) in values[run_start..i].iter_mut().enumerate() {
            let frac = (k + 1) as f64 / (run_len + 1) as f64;
            *slot = Some(left + (right - left) * frac);
        }
    }
    Ok(SpeedSeries {
        segment_id: series.segment_id.clone(),
        t0: series.t0,
        step: series.step,
        values,
        day_starts: series.day_starts.clone(),
        day_len: series.day_len,
    })
}

/// Remove all samples of excluded days. The series must consist of whole
/// `period`-sample days starting at local midnight, and `period * step`
/// must span exactly one day.
pub fn apply_calendar_filter(
    series: &SpeedSeries,
    filter: &CalendarFilter,
    period: usize,
) -> Result<SpeedSeries, IngestError> {
    if period == 0 || i64::from(series.step) * period as i64 != SECS_PER_DAY {
        return Err(IngestError::PeriodStepMismatch {
            period,
            step: series.step,
        });
    }
    if series.len() % period != 0 {
        return Err(IngestError::PartialDays {
            segment: series.segment_id.clone(),
            len: series.len(),
            period,
        });
    }
    let offset = i64::from(filter.utc_offset_secs);
    let days = series.len() / period;
    let mut values = Vec::new();
    let mut day_starts = Vec::new();
    for day in 0..days {
        let start_ts = series.timestamp(day * period);
        if (start_ts + offset).rem_euclid(SECS_PER_DAY) != 0 {
            return Err(IngestError::MisalignedDays {
                segment: series.segment_id.clone(),
            });
        }
        let local_date = Utc
            .timestamp_opt(start_ts, 0)
            .unwrap()
            .with_timezone(&FixedOffset::east_opt(filter.utc_offset_secs).unwrap())
            .date_naive();
        if filter.excludes(local_date) {
            continue;
        }
        values.extend_from_slice(&series.values[day * period..(day + 1) * period]);
        day_starts.push(start_ts);
    }
    if values.is_empty() {
        return Err(IngestError::FilterRemovedEverything {
            segment: series.segment_id.clone(),
        });
    }
    Ok(SpeedSeries {
        segment_id: series.segment_id.clone(),
        t0: day_starts[0],
        step: series.step,
        values,
        day_starts,
        day_len: period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn local_midnight_epoch(date: NaiveDate) -> i64 {
        // midnight at +08:00
        date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() - 8 * 3600
    }

    fn whole_days(segment: &str, first_day: NaiveDate, days: usize, period: usize) -> SpeedSeries {
        let step = (SECS_PER_DAY as usize / period) as u32;
        let values = (0..days * period).map(|i| Some(40.0 + (i % 7) as f64)).collect();
        SpeedSeries::new(segment, local_midnight_epoch(first_day), step, values).unwrap()
    }

    #[test]
    fn load_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(
            &path,
            "segment_id,timestamp,speed\ns1,0,50\ns1,300,51\ns1,600,52\n",
        )
        .unwrap();
        let series = load_csv(&path).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].len(), 3);
        assert_eq!(series[0].step(), 300);
        assert_eq!(series[0].values()[1], Some(51.0));
    }

    #[test]
    fn load_iso8601_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(
            &path,
            "segment_id,timestamp,speed\n\
             s1,2017-09-01T00:00:00Z,50\n\
             s1,2017-09-01T00:05:00Z,51\n",
        )
        .unwrap();
        let series = load_csv(&path).unwrap();
        assert_eq!(series[0].step(), 300);
        assert_eq!(series[0].t0(), 1_504_224_000);
    }

    #[test]
    fn load_inserts_missing_markers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(
            &path,
            "segment_id,timestamp,speed\ns1,0,50\ns1,300,51\ns1,1200,53\n",
        )
        .unwrap();
        let series = load_csv(&path).unwrap();
        assert_eq!(series[0].step(), 300);
        assert_eq!(
            series[0].values(),
            &[Some(50.0), Some(51.0), None, None, Some(53.0)]
        );
    }

    #[test]
    fn load_rejects_negative_speed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "segment_id,timestamp,speed\ns1,0,50\ns1,300,-5\n").unwrap();
        match load_csv(&path) {
            Err(IngestError::NegativeSpeed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected NegativeSpeed, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_duplicate_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "segment_id,timestamp,speed\ns1,0,50\ns1,0,51\n").unwrap();
        assert!(matches!(
            load_csv(&path),
            Err(IngestError::DuplicateTimestamp { timestamp: 0, .. })
        ));
    }

    #[test]
    fn load_rejects_malformed_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "segment_id,timestamp,speed\ns1,not-a-time,50\n").unwrap();
        match load_csv(&path) {
            Err(IngestError::BadTimestamp { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected BadTimestamp, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_preserves_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let original = whole_days("s9", NaiveDate::from_ymd_opt(2017, 9, 1).unwrap(), 2, 288);
        write_csv(std::slice::from_ref(&original), &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].len(), original.len());
        for i in 0..original.len() {
            assert_eq!(loaded[0].timestamp(i), original.timestamp(i));
            assert_eq!(loaded[0].values()[i], original.values()[i]);
        }
    }

    #[test]
    fn fill_gap_midpoint() {
        let s = SpeedSeries::new("s", 0, 300, vec![Some(50.0), None, Some(60.0)]).unwrap();
        let filled = fill_gaps(&s, 1).unwrap();
        assert_eq!(filled.values(), &[Some(50.0), Some(55.0), Some(60.0)]);
    }

    #[test]
    fn fill_gap_too_long_left_missing() {
        let s =
            SpeedSeries::new("s", 0, 300, vec![Some(50.0), None, None, Some(60.0)]).unwrap();
        let filled = fill_gaps(&s, 1).unwrap();
        assert_eq!(filled.values(), s.values());
    }

    #[test]
    fn fill_no_gaps_is_identity() {
        let s = SpeedSeries::new("s", 0, 300, vec![Some(1.0), Some(2.0)]).unwrap();
        assert_eq!(fill_gaps(&s, 3).unwrap(), s);
    }

    #[test]
    fn fill_entirely_missing_errors() {
        let s = SpeedSeries::new("s", 0, 300, vec![None, None]).unwrap();
        assert!(matches!(
            fill_gaps(&s, 1),
            Err(IngestError::AllMissing { .. })
        ));
    }

    #[test]
    fn fill_boundary_gap_left_missing() {
        let s = SpeedSeries::new("s", 0, 300, vec![None, Some(2.0), Some(3.0)]).unwrap();
        let filled = fill_gaps(&s, 2).unwrap();
        assert_eq!(filled.values()[0], None);
    }

    #[test]
    fn weekend_filter_on_monday_start_week() {
        // 2017-09-04 is a Monday; a 7-day week keeps Mon..Fri.
        let s = whole_days("s", NaiveDate::from_ymd_opt(2017, 9, 4).unwrap(), 7, 288);
        let filter = CalendarFilter {
            exclude_weekends: true,
            ..CalendarFilter::default()
        };
        let filtered = apply_calendar_filter(&s, &filter, 288).unwrap();
        assert_eq!(filtered.len(), 5 * 288);
        // retained timestamps are the original weekday samples
        assert_eq!(filtered.timestamp(0), s.timestamp(0));
        assert_eq!(filtered.timestamp(5 * 288 - 1), s.timestamp(5 * 288 - 1));
    }

    #[test]
    fn beijing_span_retains_60_days() {
        // Sep 1 .. Nov 30 2017 (91 days): 65 weekdays, of which Oct 2..6
        // fall in the Oct 1-8 holiday -> 60 days survive.
        let s = whole_days("s", NaiveDate::from_ymd_opt(2017, 9, 1).unwrap(), 91, 288);
        let filter = CalendarFilter {
            exclude_weekends: true,
            exclude_dates: (1..=8)
                .map(|d| NaiveDate::from_ymd_opt(2017, 10, d).unwrap())
                .collect(),
            ..CalendarFilter::default()
        };
        let filtered = apply_calendar_filter(&s, &filter, 288).unwrap();
        assert_eq!(filtered.len() / 288, 60);
        assert_eq!(filtered.len() % 288, 0);
    }

    #[test]
    fn empty_filter_is_identity() {
        let s = whole_days("s", NaiveDate::from_ymd_opt(2017, 9, 1).unwrap(), 3, 288);
        let filtered = apply_calendar_filter(&s, &CalendarFilter::default(), 288).unwrap();
        assert_eq!(filtered.values(), s.values());
        for i in 0..s.len() {
            assert_eq!(filtered.timestamp(i), s.timestamp(i));
        }
    }

    #[test]
    fn filter_removing_everything_errors() {
        // Sat + Sun only
        let s = whole_days("s", NaiveDate::from_ymd_opt(2017, 9, 2).unwrap(), 2, 288);
        let filter = CalendarFilter {
            exclude_weekends: true,
            ..CalendarFilter::default()
        };
        assert!(matches!(
            apply_calendar_filter(&s, &filter, 288),
            Err(IngestError::FilterRemovedEverything { .. })
        ));
    }

    #[test]
    fn filter_requires_midnight_alignment() {
        let mut s = whole_days("s", NaiveDate::from_ymd_opt(2017, 9, 1).unwrap(), 2, 288);
        s.t0 += 300;
        assert!(matches!(
            apply_calendar_filter(&s, &CalendarFilter::default(), 288),
            Err(IngestError::MisalignedDays { .. })
        ));
    }

    #[test]
    fn scaler_midpoint() {
        let scaler = fit_minmax(&[20.0, 70.0]).unwrap();
        assert_eq!(scaler.min, 20.0);
        assert_eq!(scaler.max, 70.0);
        assert_eq!(scaler.transform(45.0), 0.5);
    }

    #[test]
    fn scaler_unit_range_is_identity() {
        let scaler = fit_minmax(&[0.0, 1.0]).unwrap();
        assert_eq!(scaler.transform(0.3), 0.3);
        assert_eq!(scaler.inverse(0.3), 0.3);
    }

    #[test]
    fn scaler_constant_errors() {
        assert!(matches!(
            fit_minmax(&[30.0, 30.0, 30.0]),
            Err(IngestError::DegenerateScale(_))
        ));
    }

    proptest! {
        #[test]
        fn scaler_round_trip(v in 5.0_f64..120.0) {
            let scaler = fit_minmax(&[5.0, 120.0]).unwrap();
            let back = scaler.inverse(scaler.transform(v));
            prop_assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0));
        }

        #[test]
        fn fill_never_alters_present_values(max_gap in 0_usize..4, seed in 0_u64..50) {
            let mut rng = crate::rng::stage_rng(seed, "fill-prop");
            use rand::Rng;
            let values: Vec<Option<f64>> = (0..60)
                .map(|_| if rng.gen_bool(0.25) { None } else { Some(rng.gen_range(5.0..100.0)) })
                .collect();
            prop_assume!(values.iter().any(|v| v.is_some()));
            let s = SpeedSeries::new("p", 0, 300, values.clone()).unwrap();
            let filled = fill_gaps(&s, max_gap).unwrap();
            for (orig, new) in values.iter().zip(filled.values()) {
                if orig.is_some() {
                    prop_assert_eq!(orig, new);
                }
            }
        }
    }
}
