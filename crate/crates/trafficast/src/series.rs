//! Sub-series slicing, periodic splitting, day-to-day similarity, and
//! ACF-based input-interval selection.

use crate::ingest::SpeedSeries;

#[derive(Debug, thiserror::Error)]
pub enum SeriesError {
    #[error("slice out of range: start {start}, count {count}, stride {stride} over {len} values")]
    SliceOutOfRange {
        start: usize,
        count: usize,
        stride: usize,
        len: usize,
    },
    #[error("slice start, count and stride must all be at least 1")]
    InvalidSliceParams,
    #[error("series length {len} is not divisible by period {period}")]
    NonDivisiblePeriod { len: usize, period: usize },
    #[error("segment {segment}: every period contains missing values")]
    NoUsableRows { segment: String },
    #[error("series too short: need more than {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("constant series: autocorrelation is undefined")]
    ConstantSeries,
    #[error("row length {got} does not match period {period}")]
    RowLengthMismatch { got: usize, period: usize },
    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
}

/// A segment's series split into periodic sub-series, one row per usable day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayGrid {
    segment_id: String,
    period: usize,
    rows: Vec<Vec<f64>>,
}

impl DayGrid {
    /// Build a grid from pre-split rows. Every row must have exactly
    /// `period` values and at least one row is required.
    pub fn from_rows(
        segment_id: impl Into<String>,
        period: usize,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, SeriesError> {
        if rows.is_empty() {
            return Err(SeriesError::Empty);
        }
        for row in &rows {
            if row.len() != period {
                return Err(SeriesError::RowLengthMismatch {
                    got: row.len(),
                    period,
                });
            }
        }
        Ok(Self {
            segment_id: segment_id.into(),
            period,
            rows,
        })
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Number of usable periods (days).
    pub fn days(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, day: usize) -> &[f64] {
        &self.rows[day]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Concatenate the rows back into one continuous series.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// Sample autocorrelation coefficients for lags `1..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcfProfile {
    coefficients: Vec<f64>,
    confidence_band: f64,
    n: usize,
}

impl AcfProfile {
    /// Build a profile from explicit coefficients (lag 1 first).
    pub fn from_coefficients(coefficients: Vec<f64>, n: usize) -> Self {
        let confidence_band = if n > 0 { 1.96 / (n as f64).sqrt() } else { 0.0 };
        Self {
            coefficients,
            confidence_band,
            n,
        }
    }

    /// Coefficient at `lag` (1-based). Lag 0 is implicitly 1.
    pub fn coefficient(&self, lag: usize) -> f64 {
        self.coefficients[lag - 1]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn max_lag(&self) -> usize {
        self.coefficients.len()
    }

    /// Half-width of the 95% confidence band around zero.
    pub fn confidence_band(&self) -> f64 {
        self.confidence_band
    }

    pub fn sample_count(&self) -> usize {
        self.n
    }
}

/// Day-to-day similarity values, one per slot that has a counterpart one
/// period later. `degenerate` is set when the series is perfectly periodic
/// and the normalizing maximum gap is zero (all values are then 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Strided sub-series extraction: `[x_t, x_{t+l}, ..., x_{t+(L-1)l}]`.
///
/// `start` is 1-based to match the indexing used throughout the sampling
/// code; the last touched index is `start + (count-1)*stride`.
pub fn slice(values: &[f64], start: usize, count: usize, stride: usize) -> Result<Vec<f64>, SeriesError> {
    if start < 1 || count < 1 || stride < 1 {
        return Err(SeriesError::InvalidSliceParams);
    }
    let last = start + (count - 1) * stride;
    if last > values.len() {
        return Err(SeriesError::SliceOutOfRange {
            start,
            count,
            stride,
            len: values.len(),
        });
    }
    Ok((0..count).map(|i| values[start - 1 + i * stride]).collect())
}

/// Split a series into periodic sub-series of `period` samples.
///
/// The total length must be a whole number of periods. Periods that still
/// contain missing values (gaps too long for interpolation) are dropped;
/// at least one usable period must remain.
pub fn split_periodic(series: &SpeedSeries, period: usize) -> Result<DayGrid, SeriesError> {
    let values = series.values();
    if period == 0 || values.len() % period != 0 {
        return Err(SeriesError::NonDivisiblePeriod {
            len: values.len(),
            period,
        });
    }
    let mut rows = Vec::with_capacity(values.len() / period);
    for chunk in values.chunks_exact(period) {
        if chunk.iter().all(|v| v.is_some()) {
            rows.push(chunk.iter().map(|v| v.unwrap()).collect());
        }
    }
    if rows.is_empty() {
        return Err(SeriesError::NoUsableRows {
            segment: series.segment_id().to_string(),
        });
    }
    Ok(DayGrid {
        segment_id: series.segment_id().to_string(),
        period,
        rows,
    })
}

/// Normalized gap between each measurement and its counterpart one period
/// later: `SIM_t = |x_t - x_{t+period}| / max_u |x_u - x_{u+period}|`.
pub fn traffic_similarity(values: &[f64], period: usize) -> Result<Similarity, SeriesError> {
    if values.len() <= period {
        return Err(SeriesError::TooShort {
            need: period,
            got: values.len(),
        });
    }
    let gaps: Vec<f64> = (0..values.len() - period)
        .map(|t| (values[t] - values[t + period]).abs())
        .collect();
    let max_gap = gaps.iter().cloned().fold(0.0_f64, f64::max);
    if max_gap == 0.0 {
        // Perfectly periodic: report flagged zeros instead of erroring so
        // batch analyses survive degenerate segments.
        return Ok(Similarity {
            values: vec![0.0; gaps.len()],
            degenerate: true,
        });
    }
    Ok(Similarity {
        values: gaps.iter().map(|g| g / max_gap).collect(),
        degenerate: false,
    })
}

/// Empirical CDF of similarity values sampled at 101 thresholds in [0, 1].
pub fn similarity_cdf(sims: &[f64]) -> Result<Vec<(f64, f64)>, SeriesError> {
    if sims.is_empty() {
        return Err(SeriesError::Empty);
    }
    let n = sims.len() as f64;
    Ok((0..=100)
        .map(|k| {
            let threshold = k as f64 / 100.0;
            let count = sims.iter().filter(|&&s| s <= threshold).count();
            (threshold, count as f64 / n)
        })
        .collect())
}

/// Biased sample autocorrelation with the global mean:
/// `r_i = sum_t (x_t - m)(x_{t+i} - m) / sum_t (x_t - m)^2`.
pub fn acf(values: &[f64], max_lag: usize) -> Result<AcfProfile, SeriesError> {
    if max_lag < 1 || values.len() <= max_lag {
        return Err(SeriesError::TooShort {
            need: max_lag,
            got: values.len(),
        });
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let denom: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom == 0.0 {
        return Err(SeriesError::ConstantSeries);
    }
    let coefficients = (1..=max_lag)
        .map(|lag| {
            let num: f64 = (0..n - lag)
                .map(|t| (values[t] - mean) * (values[t + lag] - mean))
                .sum();
            num / denom
        })
        .collect();
    Ok(AcfProfile::from_coefficients(coefficients, n))
}

/// Chosen input interval plus a flag marking the empty-set fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntervalChoice {
    pub stride: usize,
    /// True when no lag exceeded the threshold and the stride fell back to 1.
    pub fallback: bool,
}

/// Input interval `l = max { i >= 1 : r_i > p }`, or 1 when no coefficient
/// exceeds the threshold.
pub fn select_interval(profile: &AcfProfile, threshold: f64) -> Result<IntervalChoice, SeriesError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SeriesError::InvalidThreshold(threshold));
    }
    let stride = profile
        .coefficients()
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > threshold)
        .map(|(i, _)| i + 1)
        .max();
    Ok(match stride {
        Some(stride) => IntervalChoice {
            stride,
            fallback: false,
        },
        None => IntervalChoice {
            stride: 1,
            fallback: true,
        },
    })
}

/// Input length after striding: `N_i = ceil(period / stride)`.
pub fn input_length(period: usize, stride: usize) -> usize {
    period.div_ceil(stride)
}
