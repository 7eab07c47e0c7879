use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::{normalize, NightWindow, Normalization, Resolution, SeriesBatch};
use crate::error::{Error, Result};

const TIMESTAMP_FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"];
const DATE_FORMAT: &str = "%Y-%m-%d";
/// Allowed distance of a timestamp from its resolution grid, in seconds.
const GRID_TOLERANCE_SECS: i64 = 1;

fn default_timestamp_column() -> String {
    "timestamp".into()
}

/// Where a dataset lives and how to read it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// CSV path; relative paths are resolved against the manifest's folder.
    pub path: PathBuf,
    pub resolution: Resolution,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    pub value_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub night_window: Option<NightWindow>,
    /// Free-form notes such as the disturbance that produced the file.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn new(path: impl Into<PathBuf>, resolution: Resolution) -> Self {
        Self {
            path: path.into(),
            resolution,
            timestamp_column: default_timestamp_column(),
            value_column: "value".into(),
            label: None,
            normalization: Normalization::None,
            night_window: None,
            notes: BTreeMap::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Self = serde_json::from_str(&text)?;
        if manifest.path.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.path = dir.join(&manifest.path);
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// What `load_csv` kept and what it had to leave out.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub windows: usize,
    /// Windows with missing points, left out together with their rows.
    pub incomplete_windows: usize,
    /// Calendar date at which the first kept window starts.
    #[serde(skip)]
    pub first_date: Option<NaiveDate>,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let plural = |n: usize| if n == 1 { "" } else { "s" };
        write!(
            f,
            "{} window{} from {} row{}; {} row{} dropped",
            self.windows,
            plural(self.windows),
            self.rows_read,
            plural(self.rows_read),
            self.rows_dropped,
            plural(self.rows_dropped)
        )?;
        if self.incomplete_windows > 0 {
            write!(
                f,
                "; {} incomplete window{} skipped",
                self.incomplete_windows,
                plural(self.incomplete_windows)
            )?;
        }
        Ok(())
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| NaiveDate::parse_from_str(s, DATE_FORMAT).ok().map(|d| d.and_hms_opt(0, 0, 0).expect("midnight")))
}

fn days_in_month(year: i32, month: u32) -> usize {
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    };
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    (next.expect("valid month") - first).num_days() as usize
}

/// Window key, slot within the window, and the window's true length.
fn place(ts: NaiveDateTime, res: Resolution) -> Result<((i32, u32, u32), usize, usize)> {
    let date = ts.date();
    match res.minutes() {
        Some(minutes) => {
            let secs = ts.num_seconds_from_midnight() as i64;
            let step = minutes as i64 * 60;
            let offset = secs % step;
            if offset > GRID_TOLERANCE_SECS && step - offset > GRID_TOLERANCE_SECS {
                return Err(Error::Data(format!("timestamp {ts} is off the {res} grid")));
            }
            let slot = (((secs + step / 2) / step) as usize) % (1440 / minutes as usize);
            let per_day = res.points_per_day().expect("sub-daily");
            Ok(((date.year(), date.month(), date.day()), slot, per_day))
        }
        None => match res {
            Resolution::Daily => Ok((
                (date.year(), date.month(), 0),
                date.day0() as usize,
                days_in_month(date.year(), date.month()),
            )),
            Resolution::Monthly => Ok(((date.year(), 0, 0), date.month0() as usize, 12)),
            other => Err(Error::invalid(format!("csv ingestion does not support {other} data"))),
        },
    }
}

fn window_len(res: Resolution) -> usize {
    match res {
        Resolution::Daily => 31,
        Resolution::Monthly => 12,
        other => other.points_per_day().expect("sub-daily"),
    }
}

/// Reads a single-column series and cuts it into whole windows: days for
/// sub-daily data, calendar months (zero-padded to 31) for daily data and
/// calendar years for monthly data.
///
/// Rows whose timestamp or value does not parse, or whose value is not
/// finite, are dropped and counted. Windows with missing points are skipped
/// and counted.
pub fn load_csv(manifest: &DatasetManifest) -> Result<(SeriesBatch, LoadReport)> {
    let res = manifest.resolution;
    if res == Resolution::Transient || res == Resolution::Yearly {
        return Err(Error::invalid(format!("csv ingestion does not support {res} data")));
    }
    let mut reader = csv::Reader::from_path(&manifest.path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&manifest.path, io),
        other => Error::Data(format!("{}: {other:?}", manifest.path.display())),
    })?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            Error::Data(format!(
                "{}: no column named '{name}' (header: {})",
                manifest.path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            ))
        })
    };
    let ts_col = column(&manifest.timestamp_column)?;
    let val_col = column(&manifest.value_column)?;

    let len = window_len(res);
    let mut report = LoadReport::default();
    let mut windows: BTreeMap<(i32, u32, u32), (Vec<Option<f64>>, usize)> = BTreeMap::new();
    for record in reader.records() {
        report.rows_read += 1;
        let Ok(record) = record else {
            report.rows_dropped += 1;
            continue;
        };
        let ts = record.get(ts_col).and_then(parse_timestamp);
        let value = record
            .get(val_col)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite());
        let (Some(ts), Some(value)) = (ts, value) else {
            report.rows_dropped += 1;
            continue;
        };
        let (key, slot, true_len) = place(ts, res)?;
        let (slots, _) = windows.entry(key).or_insert_with(|| (vec![None; len], true_len));
        if slots[slot].is_some() {
            report.rows_dropped += 1;
            continue;
        }
        slots[slot] = Some(value);
    }

    let mut data = Vec::new();
    let mut valid = Vec::new();
    for ((y, m, d), (slots, true_len)) in windows {
        if slots[..true_len].iter().all(Option::is_some) {
            if report.first_date.is_none() {
                report.first_date = NaiveDate::from_ymd_opt(y, m.max(1), d.max(1));
            }
            data.extend(slots.iter().map(|v| v.unwrap_or(0.0)));
            valid.push(true_len);
        } else {
            report.incomplete_windows += 1;
            report.rows_dropped += slots.iter().filter(|v| v.is_some()).count();
        }
    }
    if valid.is_empty() {
        return Err(Error::Data(format!(
            "{}: no complete {res} window after filtering ({report})",
            manifest.path.display()
        )));
    }
    report.windows = valid.len();
    let mut batch = SeriesBatch::new(res, 1, len, data)?;
    if res == Resolution::Daily {
        batch = batch.with_valid_len(valid)?;
    }
    normalize(&mut batch, manifest.normalization);
    batch.source = manifest.label.clone();
    batch.night_window = manifest.night_window;
    if report.rows_dropped > 0 || report.incomplete_windows > 0 {
        log::warn!("{}: {report}", manifest.path.display());
    }
    Ok((batch, report))
}

/// First calendar date used when writing windows without timestamps.
pub fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date")
}

fn add_months(date: NaiveDate, months: usize) -> NaiveDate {
    let total = date.month0() as usize + months;
    NaiveDate::from_ymd_opt(date.year() + (total / 12) as i32, (total % 12) as u32 + 1, 1).expect("valid month")
}

/// Writes a single-channel batch as `timestamp,value` rows: consecutive
/// days from `start` for sub-daily data, consecutive months for daily data,
/// consecutive years for monthly data. Values are written in shortest
/// round-trip form.
pub fn write_csv(batch: &SeriesBatch, path: &Path, start: NaiveDate) -> Result<()> {
    if batch.channels() != 1 {
        return Err(Error::invalid("csv output supports single-channel series only"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    w.write_record(["timestamp", "value"])?;
    let res = batch.resolution;
    for (i, window) in batch.samples().enumerate() {
        match res.minutes() {
            Some(minutes) => {
                let day = start + Duration::days(i as i64);
                let midnight = day.and_hms_opt(0, 0, 0).expect("midnight");
                for (s, v) in window.iter().enumerate() {
                    let ts = midnight + Duration::minutes(s as i64 * minutes as i64);
                    w.write_record([ts.format("%Y-%m-%d %H:%M:%S").to_string(), v.to_string()])?;
                }
            }
            None if res == Resolution::Daily => {
                let first = add_months(start.with_day(1).expect("first of month"), i);
                let days = days_in_month(first.year(), first.month());
                if batch.valid(i) != days {
                    return Err(Error::invalid(format!(
                        "window {i} holds {} days but {} has {days}",
                        batch.valid(i),
                        first.format("%Y-%m")
                    )));
                }
                for (d, v) in window[..days].iter().enumerate() {
                    let ts = first + Duration::days(d as i64);
                    w.write_record([ts.format("%Y-%m-%d 00:00:00").to_string(), v.to_string()])?;
                }
            }
            None if res == Resolution::Monthly => {
                let first = add_months(start.with_day(1).expect("first of month").with_month(1).expect("january"), 12 * i);
                for (m, v) in window.iter().enumerate() {
                    let ts = add_months(first, m);
                    w.write_record([ts.format("%Y-%m-%d 00:00:00").to_string(), v.to_string()])?;
                }
            }
            None => return Err(Error::invalid(format!("csv output does not support {res} data"))),
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn day_file(dir: &Path, extra: &str) -> PathBuf {
        let path = dir.join("day.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "timestamp,value").unwrap();
        for s in 0..288 {
            let h = s / 12;
            let m = (s % 12) * 5;
            writeln!(f, "2024-03-01 {h:02}:{m:02}:00,{}", s as f64 / 10.0).unwrap();
        }
        write!(f, "{extra}").unwrap();
        path
    }

    #[test]
    fn single_day_window() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(day_file(dir.path(), ""), Resolution::FiveMin);
        let (b, r) = load_csv(&m).unwrap();
        assert_eq!((b.n_samples(), b.len()), (1, 288));
        assert_eq!(b.sample(0)[287], 28.7);
        assert_eq!(r.rows_dropped, 0);
    }

    #[test]
    fn bad_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(day_file(dir.path(), "2024-03-01 12:02:00,oops\n"), Resolution::FiveMin);
        let (b, r) = load_csv(&m).unwrap();
        assert_eq!(b.n_samples(), 1);
        assert_eq!(r.rows_read, 289);
        assert_eq!(r.rows_dropped, 1);
        assert!(r.to_string().contains("1 row dropped"));
    }

    #[test]
    fn off_grid_timestamp_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(day_file(dir.path(), "2024-03-01 12:02:00,1.0\n"), Resolution::FiveMin);
        assert!(matches!(load_csv(&m), Err(Error::Data(_))));
    }

    #[test]
    fn missing_file_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(dir.path().join("nope.csv"), Resolution::FiveMin);
        assert!(matches!(load_csv(&m), Err(Error::Io { .. })));
        let mut m = DatasetManifest::new(day_file(dir.path(), ""), Resolution::FiveMin);
        m.value_column = "power".into();
        assert!(load_csv(&m).is_err());
    }

    #[test]
    fn incomplete_day_is_skipped_and_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(day_file(dir.path(), "2024-03-02 00:00:00,1.0\n"), Resolution::FiveMin);
        let (b, r) = load_csv(&m).unwrap();
        assert_eq!(b.n_samples(), 1);
        assert_eq!((r.incomplete_windows, r.rows_dropped), (1, 1));
    }

    #[test]
    fn daily_months_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let windows: Vec<Vec<f64>> = [31usize, 28, 31]
            .iter()
            .map(|&d| (0..31).map(|i| if i < d { 0.1 + i as f64 } else { 0.0 }).collect())
            .collect();
        let b = SeriesBatch::from_windows(Resolution::Daily, &windows)
            .unwrap()
            .with_valid_len(vec![31, 28, 31])
            .unwrap();
        let path = dir.path().join("daily.csv");
        write_csv(&b, &path, default_start()).unwrap();
        let (back, _) = load_csv(&DatasetManifest::new(&path, Resolution::Daily)).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn manifest_relative_path() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new("data.csv", Resolution::Hourly);
        let p = dir.path().join("m.json");
        m.write(&p).unwrap();
        let back = DatasetManifest::read(&p).unwrap();
        assert_eq!(back.path, dir.path().join("data.csv"));
    }
}
