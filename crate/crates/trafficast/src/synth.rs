//! Labeled synthetic traffic networks for desk-scale experiments.
//!
//! Each archetype is a daily speed profile drawn as a Catmull-Rom spline
//! through hand-placed control points, so breakdown shapes stay sharp.
//! Segments perturb their archetype with a per-segment affine map, a smooth
//! low-frequency day-to-day jitter field, and white observation noise.

use chrono::NaiveDate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{SpeedSeries, DEFAULT_UTC_OFFSET_SECS};
use crate::rng::stage_rng;

const SPEED_FLOOR: f64 = 5.0;
const SPEED_CEIL: f64 = 120.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("archetype {name}: profile leaves [{SPEED_FLOOR}, {SPEED_CEIL}] km/h (got {value:.1})")]
    ProfileOutOfRange { name: String, value: f64 },
    #[error("archetype {name}: noise levels must be non-negative")]
    NegativeNoise { name: String },
    #[error("archetype {name}: need at least 2 control points")]
    TooFewControlPoints { name: String },
    #[error("need at least 2 archetypes for clustering experiments, got {0}")]
    TooFewArchetypes(usize),
    #[error("need at least 2 days, got {0}")]
    TooFewDays(usize),
    #[error("segments per archetype must be at least 1")]
    NoSegments,
    #[error("period must divide one day into whole seconds, got {0}")]
    BadPeriod(usize),
    #[error("amplitude range must be positive and ordered, got ({0}, {1})")]
    BadAmplitudeRange(f64, f64),
    #[error("offset range must be ordered, got ({0}, {1})")]
    BadOffsetRange(f64, f64),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}

/// Uniform Catmull-Rom interpolation through `points`, clamped at the ends.
/// `t` in [0, 1]; x-coordinates of the points must be increasing.
fn catmull_rom(points: &[(f64, f64)], t: f64) -> f64 {
    let n = points.len();
    if t <= points[0].0 {
        return points[0].1;
    }
    if t >= points[n - 1].0 {
        return points[n - 1].1;
    }
    let seg = points.windows(2).position(|w| t < w[1].0).unwrap_or(n - 2);
    let p1 = points[seg];
    let p2 = points[seg + 1];
    let p0 = points[seg.saturating_sub(1)];
    let p3 = points[(seg + 2).min(n - 1)];
    let u = (t - p1.0) / (p2.0 - p1.0);
    let (v0, v1, v2, v3) = (p0.1, p1.1, p2.1, p3.1);
    0.5 * ((2.0 * v1)
        + (-v0 + v2) * u
        + (2.0 * v0 - 5.0 * v1 + 4.0 * v2 - v3) * u * u
        + (-v0 + 3.0 * v1 - 3.0 * v2 + v3) * u * u * u)
}

/// A named daily speed profile plus its noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    name: String,
    control_points: Vec<(f64, f64)>,
    /// std-dev of the smooth day-to-day jitter field (km/h)
    pub day_jitter: f64,
    /// std-dev of white observation noise (km/h)
    pub obs_noise: f64,
    /// probability that a day carries an extra incident slowdown
    pub event_rate: f64,
    /// depth of the incident slowdown (km/h)
    pub event_depth: f64,
}

impl Archetype {
    pub fn new(
        name: impl Into<String>,
        control_points: Vec<(f64, f64)>,
        day_jitter: f64,
        obs_noise: f64,
    ) -> Result<Self, SynthError> {
        let name = name.into();
        if control_points.len() < 2 {
            return Err(SynthError::TooFewControlPoints { name });
        }
        if day_jitter < 0.0 || obs_noise < 0.0 {
            return Err(SynthError::NegativeNoise { name });
        }
        let archetype = Self {
            name,
            control_points,
            day_jitter,
            obs_noise,
            event_rate: 0.05,
            event_depth: 30.0,
        };
        // the spline may overshoot its control points, so check densely
        for i in 0..=1000 {
            let v = catmull_rom(&archetype.control_points, i as f64 / 1000.0);
            if !(SPEED_FLOOR..=SPEED_CEIL).contains(&v) {
                return Err(SynthError::ProfileOutOfRange {
                    name: archetype.name,
                    value: v,
                });
            }
        }
        Ok(archetype)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Base profile sampled at slot midpoints.
    pub fn profile(&self, period: usize) -> Vec<f64> {
        (0..period)
            .map(|i| catmull_rom(&self.control_points, (i as f64 + 0.5) / period as f64))
            .collect()
    }
}

/// The three observed traffic shapes: an evening-peak breakdown with
/// recovery, a morning-peak breakdown followed by mid-speed swinging, and a
/// stable mid-speed plateau.
pub fn default_archetypes() -> Vec<Archetype> {
    let evening_breakdown = Archetype::new(
        "evening-breakdown",
        vec![
            (0.00, 68.0),
            (0.25, 64.0),
            (0.40, 60.0),
            (0.55, 57.0),
            (0.66, 52.0),
            (0.72, 28.0),
            (0.77, 16.0),
            (0.82, 26.0),
            (0.88, 50.0),
            (0.95, 63.0),
            (1.00, 67.0),
        ],
        2.5,
        3.0,
    )
    .expect("built-in profile is valid");
    let morning_breakdown = Archetype::new(
        "morning-breakdown",
        vec![
            (0.00, 58.0),
            (0.20, 52.0),
            (0.29, 22.0),
            (0.34, 14.0),
            (0.40, 26.0),
            (0.47, 38.0),
            (0.54, 30.0),
            (0.61, 40.0),
            (0.68, 31.0),
            (0.75, 39.0),
            (0.83, 30.0),
            (0.92, 42.0),
            (1.00, 52.0),
        ],
        2.5,
        3.0,
    )
    .expect("built-in profile is valid");
    let mid_plateau = Archetype::new(
        "mid-plateau",
        vec![
            (0.00, 50.0),
            (0.12, 48.5),
            (0.25, 46.0),
            (0.40, 45.0),
            (0.55, 44.0),
            (0.70, 42.0),
            (0.78, 41.0),
            (0.86, 43.5),
            (1.00, 47.0),
        ],
        2.5,
        3.0,
    )
    .expect("built-in profile is valid");
    vec![evening_breakdown, morning_breakdown, mid_plateau]
}

/// Dataset description: which archetypes, how many segments each, how long.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub archetypes: Vec<Archetype>,
    pub segments_per_archetype: usize,
    pub days: usize,
    pub period: usize,
    pub seed: u64,
    /// per-segment multiplicative perturbation range
    pub amplitude_range: (f64, f64),
    /// per-segment additive perturbation range (km/h)
    pub offset_range: (f64, f64),
    /// first generated day (local time)
    pub start_date: NaiveDate,
    pub utc_offset_secs: i32,
}

impl SynthSpec {
    pub fn new(archetypes: Vec<Archetype>, segments_per_archetype: usize, days: usize) -> Self {
        Self {
            archetypes,
            segments_per_archetype,
            days,
            period: 288,
            seed: 0,
            amplitude_range: (0.92, 1.08),
            offset_range: (-4.0, 4.0),
            // a Monday, so weekday filters interact predictably
            start_date: NaiveDate::from_ymd_opt(2017, 9, 4).unwrap(),
            utc_offset_secs: DEFAULT_UTC_OFFSET_SECS,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.archetypes.len() < 2 {
            return Err(SynthError::TooFewArchetypes(self.archetypes.len()));
        }
        if self.segments_per_archetype == 0 {
            return Err(SynthError::NoSegments);
        }
        if self.days < 2 {
            return Err(SynthError::TooFewDays(self.days));
        }
        if self.period == 0 || 86_400 % self.period != 0 {
            return Err(SynthError::BadPeriod(self.period));
        }
        let (alo, ahi) = self.amplitude_range;
        if !(alo > 0.0 && ahi >= alo) {
            return Err(SynthError::BadAmplitudeRange(alo, ahi));
        }
        let (olo, ohi) = self.offset_range;
        if ohi < olo {
            return Err(SynthError::BadOffsetRange(olo, ohi));
        }
        Ok(())
    }
}

/// Ground-truth label of one generated segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLabel {
    pub segment_id: String,
    pub archetype: String,
}

/// Smooth per-day jitter: Gaussian knots joined by the same spline.
fn jitter_field(rng: &mut ChaCha8Rng, sigma: f64, period: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; period];
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is non-negative");
    let knots: Vec<(f64, f64)> = (0..=6)
        .map(|k| (k as f64 / 6.0, normal.sample(rng)))
        .collect();
    (0..period)
        .map(|i| catmull_rom(&knots, (i as f64 + 0.5) / period as f64))
        .collect()
}

/// Generate the labeled network. Deterministic per seed; each segment draws
/// from its own derived sub-seed.
pub fn generate(spec: &SynthSpec) -> Result<(Vec<SpeedSeries>, Vec<SegmentLabel>), SynthError> {
    spec.validate()?;
    let step = (86_400 / spec.period) as u32;
    let t0 = spec
        .start_date
        .and_hms_opt(0, 0, 0)
        .unwrap()
        .and_utc()
        .timestamp()
        - i64::from(spec.utc_offset_secs);

    let mut series = Vec::new();
    let mut labels = Vec::new();
    let mut global = 0_usize;
    for archetype in &spec.archetypes {
        let profile = archetype.profile(spec.period);
        for _ in 0..spec.segments_per_archetype {
            let segment_id = format!("seg{global:03}");
            let mut rng = stage_rng(spec.seed, &format!("synth/segment/{global}"));
            let amplitude = rng.gen_range(spec.amplitude_range.0..=spec.amplitude_range.1);
            let offset = rng.gen_range(spec.offset_range.0..=spec.offset_range.1);
            let obs = if archetype.obs_noise > 0.0 {
                Some(Normal::new(0.0, archetype.obs_noise).expect("non-negative"))
            } else {
                None
            };
            let mut values = Vec::with_capacity(spec.days * spec.period);
            for _day in 0..spec.days {
                let jitter = jitter_field(&mut rng, archetype.day_jitter, spec.period);
                let event = if archetype.event_rate > 0.0
                    && rng.gen_bool(archetype.event_rate.min(1.0))
                {
                    let center = rng.gen_range(0.15..0.95);
                    let half_width = rng.gen_range(0.04..0.08);
                    let depth = archetype.event_depth * rng.gen_range(0.7..1.3);
                    Some((center, half_width, depth))
                } else {
                    None
                };
                for (i, base) in profile.iter().enumerate() {
                    let noise = obs.map_or(0.0, |n| n.sample(&mut rng));
                    let mut v = base * amplitude + offset + jitter[i] + noise;
                    // incident day: a smooth extra slowdown bump
                    if let Some((center, half_width, depth)) = event {
                        let t = (i as f64 + 0.5) / spec.period as f64;
                        let d = (t - center).abs();
                        if d < half_width {
                            v -= depth * 0.5 * (1.0 + (std::f64::consts::PI * d / half_width).cos());
                        }
                    }
                    values.push(Some(v.clamp(1.0, 150.0)));
                }
            }
            series.push(SpeedSeries::new(&segment_id, t0, step, values)?);
            labels.push(SegmentLabel {
                segment_id,
                archetype: archetype.name.clone(),
            });
            global += 1;
        }
    }
    Ok((series, labels))
}
