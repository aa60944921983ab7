//! Hourly load series: the frame type, CSV input/output, calendar features,
//! chronological splitting, sliding windows and a synthetic load generator.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mask::{build_soft_mask, MaskParams};

const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Whole hours since 1970-01-01T00:00:00 (UTC, no leap handling).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EpochHour(pub i64);

impl EpochHour {
    pub fn from_datetime(dt: NaiveDateTime) -> Result<Self> {
        if dt.minute() != 0 || dt.second() != 0 || dt.nanosecond() != 0 {
            return Err(Error::Invalid(format!("{dt} is not on a whole hour")));
        }
        Ok(EpochHour(dt.and_utc().timestamp().div_euclid(3600)))
    }

    pub fn from_ymd_h(year: i32, month: u32, day: u32, hour: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(hour, 0, 0))
            .ok_or_else(|| Error::Invalid(format!("no such hour {year}-{month}-{day} {hour}:00")))
            .and_then(Self::from_datetime)
    }

    pub fn to_datetime(self) -> NaiveDateTime {
        DateTime::from_timestamp(self.0 * 3600, 0)
            .expect("epoch hour within chrono range")
            .naive_utc()
    }

    /// Accepts `YYYY-MM-DDTHH:00:00` or an integer number of epoch hours.
    pub fn parse(s: &str) -> Result<(Self, TimestampStyle)> {
        let s = s.trim();
        if let Ok(h) = s.parse::<i64>() {
            return Ok((EpochHour(h), TimestampStyle::EpochHours));
        }
        let dt = NaiveDateTime::parse_from_str(s, ISO_FORMAT)
            .map_err(|e| Error::Invalid(format!("bad timestamp {s:?}: {e}")))?;
        Ok((Self::from_datetime(dt)?, TimestampStyle::Iso))
    }

    pub fn format(self, style: TimestampStyle) -> String {
        match style {
            TimestampStyle::EpochHours => self.0.to_string(),
            TimestampStyle::Iso => self.to_datetime().format(ISO_FORMAT).to_string(),
        }
    }
}

impl fmt::Display for EpochHour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format(TimestampStyle::Iso))
    }
}

impl Serialize for EpochHour {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EpochHour {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(h) => Ok(EpochHour(h)),
            Raw::Text(s) => EpochHour::parse(&s)
                .map(|(h, _)| h)
                .map_err(serde::de::Error::custom),
        }
    }
}

/// How timestamps are rendered when a frame is written back out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampStyle {
    #[default]
    Iso,
    EpochHours,
}

/// A univariate hourly load series with optional ground-truth peak flags.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    timestamps: Vec<i64>,
    values: Vec<f64>,
    peak_flags: Option<Vec<u8>>,
    style: TimestampStyle,
}

impl SeriesFrame {
    /// Builds a frame after checking hourly spacing, lengths and flag values.
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>, peak_flags: Option<Vec<u8>>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Structure(format!(
                "{} timestamps but {} values",
                timestamps.len(),
                values.len()
            )));
        }
        check_hourly(&timestamps)?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at position {i}")));
        }
        if let Some(flags) = &peak_flags {
            check_flags(flags, values.len())?;
        }
        Ok(SeriesFrame {
            timestamps,
            values,
            peak_flags,
            style: TimestampStyle::Iso,
        })
    }

    /// A frame of `values` starting at `start` with one-hour spacing.
    pub fn from_values(start: EpochHour, values: Vec<f64>) -> Result<Self> {
        let timestamps = (0..values.len() as i64).map(|i| start.0 + i).collect();
        Self::new(timestamps, values, None)
    }

    pub fn with_style(mut self, style: TimestampStyle) -> Self {
        self.style = style;
        self
    }

    pub fn with_peak_flags(mut self, flags: Vec<u8>) -> Result<Self> {
        check_flags(&flags, self.values.len())?;
        self.peak_flags = Some(flags);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn peak_flags(&self) -> Option<&[u8]> {
        self.peak_flags.as_deref()
    }

    pub fn style(&self) -> TimestampStyle {
        self.style
    }

    pub fn start(&self) -> Option<EpochHour> {
        self.timestamps.first().copied().map(EpochHour)
    }

    /// Positions flagged as peaks; empty when the frame is unlabeled.
    pub fn peak_positions(&self) -> Vec<usize> {
        self.peak_flags
            .as_deref()
            .map(|f| f.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect())
            .unwrap_or_default()
    }

    /// Fraction of timestamps flagged as peaks.
    pub fn peak_ratio(&self) -> Option<f64> {
        let flags = self.peak_flags.as_deref()?;
        if flags.is_empty() {
            return Some(0.0);
        }
        Some(flags.iter().filter(|&&f| f == 1).count() as f64 / flags.len() as f64)
    }

    /// The contiguous sub-frame `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> SeriesFrame {
        SeriesFrame {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
            peak_flags: self.peak_flags.as_ref().map(|f| f[start..end].to_vec()),
            style: self.style,
        }
    }

    pub fn calendar_features(&self) -> CalendarFeatures {
        make_calendar_features(&self.timestamps)
    }
}

fn check_hourly(timestamps: &[i64]) -> Result<()> {
    for (i, w) in timestamps.windows(2).enumerate() {
        let step = w[1] - w[0];
        if step != 1 {
            return Err(Error::Structure(if step <= 0 {
                format!("timestamp at position {} does not advance (step {step} h)", i + 1)
            } else {
                format!("gap of {step} h between positions {i} and {}", i + 1)
            }));
        }
    }
    Ok(())
}

fn check_flags(flags: &[u8], len: usize) -> Result<()> {
    if flags.len() != len {
        return Err(Error::Structure(format!(
            "{} peak flags for {len} values",
            flags.len()
        )));
    }
    if let Some(i) = flags.iter().position(|&f| f > 1) {
        return Err(Error::Structure(format!("peak flag at position {i} is not 0 or 1")));
    }
    Ok(())
}

/// Reads a series from a CSV file with header `timestamp,value[,peak]`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let with_peaks = match names.as_slice() {
        ["timestamp", "value"] => false,
        ["timestamp", "value", "peak"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `timestamp,value[,peak]`, found `{}`", names.join(",")),
            })
        }
    };

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut flags = Vec::new();
    let mut style = None;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };

        let (ts, row_style) = EpochHour::parse(&record[0]).map_err(|e| bad(e.to_string()))?;
        if *style.get_or_insert(row_style) != row_style {
            return Err(bad("mixed timestamp formats".into()));
        }
        let value: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad value {:?}", &record[1])))?;
        if !value.is_finite() {
            return Err(bad(format!("non-finite value {:?}", &record[1])));
        }
        if let Some(prev) = timestamps.last() {
            let step = ts.0 - prev;
            if step <= 0 {
                return Err(Error::Structure(format!(
                    "line {line}: timestamp {} does not advance past the previous row",
                    &record[0]
                )));
            }
            if step != 1 {
                return Err(Error::Structure(format!(
                    "line {line}: gap of {step} h between positions {} and {}",
                    timestamps.len() - 1,
                    timestamps.len()
                )));
            }
        }
        if with_peaks {
            let flag = match record[2].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("peak flag must be 0 or 1, found {other:?}"))),
            };
            flags.push(flag);
        }
        timestamps.push(ts.0);
        values.push(value);
    }
    let frame = SeriesFrame::new(timestamps, values, with_peaks.then_some(flags))?;
    Ok(frame.with_style(style.unwrap_or_default()))
}

pub fn write_csv(frame: &SeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(to_csv_string(frame).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Canonical CSV text: `\n` line endings, shortest round-trip decimals.
pub fn to_csv_string(frame: &SeriesFrame) -> String {
    let mut out = String::with_capacity(frame.len() * 32);
    out.push_str(if frame.peak_flags.is_some() {
        "timestamp,value,peak\n"
    } else {
        "timestamp,value\n"
    });
    for i in 0..frame.len() {
        out.push_str(&EpochHour(frame.timestamps[i]).format(frame.style));
        out.push(',');
        out.push_str(&frame.values[i].to_string());
        if let Some(flags) = &frame.peak_flags {
            out.push(',');
            out.push_str(if flags[i] == 1 { "1" } else { "0" });
        }
        out.push('\n');
    }
    out
}

/// Number of calendar components per timestep.
pub const CALENDAR_DIM: usize = 4;

/// `[month, day-of-month, weekday, hour]`, each scaled onto `[-0.5, 0.5]`.
pub type CalendarRow = [f64; CALENDAR_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct CalendarFeatures {
    rows: Vec<CalendarRow>,
}

impl CalendarFeatures {
    pub fn rows(&self) -> &[CalendarRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn scale(x: u32, min: u32, max: u32) -> f64 {
    (x - min) as f64 / (max - min) as f64 - 0.5
}

pub fn calendar_row(ts: EpochHour) -> CalendarRow {
    let dt = ts.to_datetime();
    [
        scale(dt.month(), 1, 12),
        scale(dt.day(), 1, 31),
        scale(dt.weekday().num_days_from_monday(), 0, 6),
        scale(dt.hour(), 0, 23),
    ]
}

pub fn make_calendar_features(timestamps: &[i64]) -> CalendarFeatures {
    CalendarFeatures {
        rows: timestamps.iter().map(|&t| calendar_row(EpochHour(t))).collect(),
    }
}

/// One supervised example cut from a labeled frame.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// Offset of the first history step inside the source frame.
    pub start: usize,
    pub history_x: Vec<f64>,
    pub future_y: Vec<f64>,
    pub history_marks: Vec<CalendarRow>,
    pub future_marks: Vec<CalendarRow>,
    /// Horizon offsets in `[0, H)` flagged as peaks.
    pub future_peak_indices: Vec<usize>,
    pub soft_mask: Vec<f64>,
}

impl WindowSample {
    pub fn horizon(&self) -> usize {
        self.future_y.len()
    }

    pub fn history_len(&self) -> usize {
        self.history_x.len()
    }
}

/// Number of windows `window_samples` yields.
pub fn window_count(len: usize, history: usize, horizon: usize, stride: usize) -> usize {
    if stride == 0 || len < history + horizon {
        0
    } else {
        (len - history - horizon) / stride + 1
    }
}

/// Lazily cuts `frame` into windows of `history` inputs and `horizon` targets.
pub fn window_samples(
    frame: &SeriesFrame,
    history: usize,
    horizon: usize,
    stride: usize,
    mask: MaskParams,
) -> Result<WindowIter<'_>> {
    if history == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Invalid("history, horizon and stride must be positive".into()));
    }
    mask.validate()?;
    let flags = frame
        .peak_flags()
        .ok_or_else(|| Error::Invalid("frame has no peak flags; label it first".into()))?;
    if frame.len() < history + horizon {
        return Err(Error::Sizing(format!(
            "series of length {} is shorter than T + H = {}",
            frame.len(),
            history + horizon
        )));
    }
    Ok(WindowIter {
        frame,
        flags,
        history,
        horizon,
        stride,
        mask,
        next: 0,
        count: window_count(frame.len(), history, horizon, stride),
    })
}

pub struct WindowIter<'a> {
    frame: &'a SeriesFrame,
    flags: &'a [u8],
    history: usize,
    horizon: usize,
    stride: usize,
    mask: MaskParams,
    next: usize,
    count: usize,
}

impl WindowIter<'_> {
    /// Builds the window with index `k` (start offset `k * stride`).
    pub fn sample(&self, k: usize) -> Option<WindowSample> {
        if k >= self.count {
            return None;
        }
        let start = k * self.stride;
        let mid = start + self.history;
        let end = mid + self.horizon;
        let ts = &self.frame.timestamps;
        let peaks: Vec<usize> = (mid..end).filter(|&i| self.flags[i] == 1).map(|i| i - mid).collect();
        let soft_mask = build_soft_mask(&peaks, self.mask, self.horizon)
            .expect("horizon peaks are in range")
            .into_weights();
        Some(WindowSample {
            start,
            history_x: self.frame.values[start..mid].to_vec(),
            future_y: self.frame.values[mid..end].to_vec(),
            history_marks: ts[start..mid].iter().map(|&t| calendar_row(EpochHour(t))).collect(),
            future_marks: ts[mid..end].iter().map(|&t| calendar_row(EpochHour(t))).collect(),
            future_peak_indices: peaks,
            soft_mask,
        })
    }
}

impl Iterator for WindowIter<'_> {
    type Item = WindowSample;

    fn next(&mut self) -> Option<WindowSample> {
        let s = self.sample(self.next)?;
        self.next += 1;
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for WindowIter<'_> {}

/// How a frame is cut into train/validation/test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SplitSpec {
    Fractions {
        train_fraction: f64,
        val_fraction: f64,
        test_fraction: f64,
    },
    /// Validation starts at `val_start`, test at `test_start`.
    Boundaries {
        val_start: EpochHour,
        test_start: EpochHour,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitSpec::Fractions {
                train_fraction,
                val_fraction,
                test_fraction,
            } => {
                let f = [train_fraction, val_fraction, test_fraction];
                if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(Error::Invalid(format!("split fractions must be positive, got {f:?}")));
                }
                let sum: f64 = f.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Invalid(format!("split fractions sum to {sum}, not 1")));
                }
                Ok(())
            }
            SplitSpec::Boundaries { val_start, test_start } => {
                if val_start >= test_start {
                    return Err(Error::Invalid(format!(
                        "validation start {val_start} is not before test start {test_start}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Splits `frame` into contiguous train/validation/test frames, each at least
/// `min_len` long.
pub fn chronological_split(
    frame: &SeriesFrame,
    spec: &SplitSpec,
    min_len: usize,
) -> Result<(SeriesFrame, SeriesFrame, SeriesFrame)> {
    spec.validate()?;
    let n = frame.len();
    let (a, b) = match *spec {
        SplitSpec::Fractions {
            train_fraction,
            val_fraction,
            ..
        } => {
            let train = (n as f64 * train_fraction).round() as usize;
            let val = (n as f64 * val_fraction).round() as usize;
            (train.min(n), (train + val).min(n))
        }
        SplitSpec::Boundaries { val_start, test_start } => {
            let first = frame
                .start()
                .ok_or_else(|| Error::Sizing("cannot split an empty series".into()))?;
            let pos = |t: EpochHour| -> Result<usize> {
                let off = t.0 - first.0;
                if off <= 0 || off >= n as i64 {
                    return Err(Error::Invalid(format!("split boundary {t} is outside the series")));
                }
                Ok(off as usize)
            };
            (pos(val_start)?, pos(test_start)?)
        }
    };
    let parts = [(0, a), (a, b), (b, n)];
    for (name, (s, e)) in ["train", "validation", "test"].iter().zip(parts) {
        if e - s < min_len {
            return Err(Error::Sizing(format!(
                "{name} slice has {} steps, fewer than the required {min_len}",
                e - s
            )));
        }
    }
    Ok((frame.slice(0, a), frame.slice(a, b), frame.slice(b, n)))
}

/// Shape of the synthetic load profile.
///
/// The daily cycle is a 24 h cosine peaking at `evening_hour` plus a 12 h
/// harmonic whose weight swings with a weekly sinusoid, so a secondary
/// morning peak appears on part of each week only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub base_level: f64,
    pub daily_amp: f64,
    pub weekly_amp: f64,
    pub harmonic: f64,
    pub harmonic_weekly: f64,
    pub evening_hour: f64,
    pub morning_hour: f64,
    pub noise_std: f64,
    /// Expected surges per hour.
    pub peak_rate: f64,
    /// Relative size of a surge (value is multiplied by `1 + peak_gain`).
    pub peak_gain: f64,
    pub start: EpochHour,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            base_level: 10.0,
            daily_amp: 1.0,
            weekly_amp: 0.3,
            harmonic: 0.55,
            harmonic_weekly: 0.2,
            evening_hour: 19.0,
            morning_hour: 9.0,
            noise_std: 0.01,
            peak_rate: 0.002,
            peak_gain: 0.25,
            // 2021-01-01T00:00:00
            start: EpochHour(447_072),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.peak_rate) {
            return Err(Error::Invalid(format!("peak_rate {} not in [0, 1)", self.peak_rate)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Invalid(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if self.peak_gain <= -1.0 || !self.peak_gain.is_finite() {
            return Err(Error::Invalid(format!("peak_gain {} must be > -1", self.peak_gain)));
        }
        Ok(())
    }
}

/// Generates an unlabeled synthetic load series. Deterministic in `seed`.
pub fn synth_series(n: usize, seed: u64, p: &SynthParams) -> Result<SeriesFrame> {
    if n == 0 {
        return Err(Error::Invalid("series length must be at least 1".into()));
    }
    p.validate()?;
    use std::f64::consts::TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hour0 = p.start.0.rem_euclid(24) as f64;
    let mut values: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64;
            let h = (hour0 + t) % 24.0;
            let week = (TAU * t / 168.0).sin();
            let daily = (TAU * (h - p.evening_hour) / 24.0).cos()
                + (p.harmonic + p.harmonic_weekly * week) * (2.0 * TAU * (h - p.morning_hour) / 24.0).cos();
            p.base_level + p.daily_amp * daily + p.weekly_amp * week
        })
        .collect();
    if p.noise_std > 0.0 {
        let normal = Normal::new(0.0, p.noise_std).expect("valid std");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    if p.peak_rate > 0.0 {
        let gaps = Exp::new(p.peak_rate).expect("positive rate");
        let mut pos = 0usize;
        loop {
            pos += gaps.sample(&mut rng).ceil().max(1.0) as usize;
            if pos >= n {
                break;
            }
            values[pos] *= 1.0 + p.peak_gain;
        }
    }
    SeriesFrame::from_values(p.start, values)
}
