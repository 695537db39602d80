use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, TimeDelta};
use serde::{Deserialize, Serialize};

use super::{DataError, MissingMask, RawDataset};
use crate::fsutil::atomic_write;
use crate::graph::sort_by_id;
use crate::tensor::Tensor;

/// Longest run of missing readings filled by linear interpolation.
pub const MAX_INTERPOLATED_GAP: usize = 3;

/// Weather channels of the SCADA layout, in channel order.
pub const SDWPF_WEATHER: [&str; 7] = ["Wspd", "Wdir", "Etmp", "Itmp", "Ndir", "Pab", "Prtv"];

const TIME_FORMATS: [&str; 5] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y%m%d %H:%M",
    "%Y/%m/%d %H:%M",
];

/// Column layout of an input file. Every layout is long: one row per
/// (timestamp, turbine).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// `TurbID`, either `Day`+`Tmstamp` or `timestamp`, `Patv` and the seven
    /// [`SDWPF_WEATHER`] channels. `Pab` may be given as `Pab1..Pab3`, which
    /// are averaged.
    Sdwpf,
    /// `ZONEID`, `TIMESTAMP`, `TARGETVAR`, `U10`, `V10`, `U100`, `V100`. The
    /// weather channels are the wind speeds at 10 m and 100 m.
    Gefcom,
    /// `timestamp`, `turbine`, `power`, then one or more weather columns.
    Generic,
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sdwpf" => Ok(Schema::Sdwpf),
            "gefcom" => Ok(Schema::Gefcom),
            "generic" => Ok(Schema::Generic),
            other => Err(format!("unknown schema '{other}' (expected sdwpf, gefcom or generic)")),
        }
    }
}

impl Schema {
    fn default_step(self) -> TimeDelta {
        match self {
            Schema::Sdwpf => TimeDelta::minutes(10),
            Schema::Gefcom | Schema::Generic => TimeDelta::hours(1),
        }
    }
}

enum TimeSpec {
    Single(usize),
    DayClock { day: usize, clock: usize },
}

enum Field {
    Col(usize),
    Mean(Vec<usize>),
    Speed(usize, usize),
}

struct Layout {
    time: TimeSpec,
    turbine: usize,
    /// Power first, then weather.
    fields: Vec<Field>,
    weather_names: Vec<String>,
}

fn find(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.eq_ignore_ascii_case(name))
}

fn layout(schema: Schema, headers: &csv::StringRecord, path: &Path) -> Result<Layout, DataError> {
    let need = |name: &str| {
        find(headers, name).ok_or_else(|| DataError::MissingColumn {
            path: path.display().to_string(),
            column: name.to_string(),
        })
    };
    match schema {
        Schema::Sdwpf => {
            let time = match find(headers, "timestamp") {
                Some(c) => TimeSpec::Single(c),
                None => TimeSpec::DayClock {
                    day: need("Day")?,
                    clock: need("Tmstamp")?,
                },
            };
            let turbine = need("TurbID")?;
            let mut fields = vec![Field::Col(need("Patv")?)];
            for name in SDWPF_WEATHER {
                let field = match (name, find(headers, name)) {
                    (_, Some(c)) => Field::Col(c),
                    ("Pab", None) => {
                        let parts: Vec<usize> = ["Pab1", "Pab2", "Pab3"].iter().filter_map(|p| find(headers, p)).collect();
                        if parts.is_empty() {
                            need("Pab")?;
                        }
                        Field::Mean(parts)
                    }
                    _ => Field::Col(need(name)?),
                };
                fields.push(field);
            }
            Ok(Layout {
                time,
                turbine,
                fields,
                weather_names: SDWPF_WEATHER.iter().map(|s| s.to_string()).collect(),
            })
        }
        Schema::Gefcom => Ok(Layout {
            time: TimeSpec::Single(need("TIMESTAMP")?),
            turbine: need("ZONEID")?,
            fields: vec![
                Field::Col(need("TARGETVAR")?),
                Field::Speed(need("U10")?, need("V10")?),
                Field::Speed(need("U100")?, need("V100")?),
            ],
            weather_names: vec!["ws10".into(), "ws100".into()],
        }),
        Schema::Generic => {
            let (time, turbine, power) = (need("timestamp")?, need("turbine")?, need("power")?);
            let weather: Vec<usize> = (0..headers.len()).filter(|c| ![time, turbine, power].contains(c)).collect();
            if weather.is_empty() {
                return Err(DataError::MissingColumn {
                    path: path.display().to_string(),
                    column: "<weather>".into(),
                });
            }
            Ok(Layout {
                time: TimeSpec::Single(time),
                turbine,
                fields: std::iter::once(power).chain(weather.iter().copied()).map(Field::Col).collect(),
                weather_names: weather.iter().map(|&c| headers[c].to_string()).collect(),
            })
        }
    }
}

fn parse_value(field: &str) -> Result<Option<f64>, String> {
    let s = field.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("'{s}' is not a number"))
}

fn parse_time(s: &str) -> Result<NaiveDateTime, String> {
    let s = s.trim();
    for fmt in TIME_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_time(NaiveTime::MIN));
    }
    if let Ok(secs) = s.parse::<i64>() {
        if let Some(t) = chrono::DateTime::from_timestamp(secs, 0) {
            return Ok(t.naive_utc());
        }
    }
    Err(format!("unrecognized timestamp '{s}'"))
}

/// Day index counted from 1 plus a wall-clock `HH:MM`, anchored at 2020-01-01.
fn parse_day_clock(day: &str, clock: &str) -> Result<NaiveDateTime, String> {
    let d: i64 = day.trim().parse().map_err(|_| format!("'{day}' is not a day index"))?;
    let c = NaiveTime::parse_from_str(clock.trim(), "%H:%M").map_err(|_| format!("'{clock}' is not HH:MM"))?;
    let base = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date").and_time(c);
    Ok(base + TimeDelta::days(d - 1))
}

impl Field {
    fn read(&self, rec: &csv::StringRecord) -> Result<Option<f64>, String> {
        let get = |c: usize| parse_value(rec.get(c).unwrap_or(""));
        match self {
            Field::Col(c) => get(*c),
            Field::Mean(cs) => {
                let mut vals = Vec::with_capacity(cs.len());
                for &c in cs {
                    match get(c)? {
                        Some(v) => vals.push(v),
                        None => return Ok(None),
                    }
                }
                Ok(Some(vals.iter().sum::<f64>() / vals.len() as f64))
            }
            Field::Speed(u, v) => Ok(match (get(*u)?, get(*v)?) {
                (Some(a), Some(b)) => Some(a.hypot(b)),
                _ => None,
            }),
        }
    }
}

struct Row {
    line: u64,
    time: NaiveDateTime,
    values: Vec<Option<f64>>,
}

/// Reads a long-format file into a `T×N` grid. Missing cells are flagged,
/// short gaps interpolated and negative power clamped to zero.
pub fn load_csv(path: &Path, schema: Schema) -> Result<RawDataset, DataError> {
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let csv_err = |e: csv::Error| DataError::Parse {
        path: path_str.clone(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let layout = layout(schema, &headers, path)?;

    let mut by_turbine: HashMap<String, Vec<Row>> = HashMap::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_err)? {
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| DataError::Parse {
            path: path_str.clone(),
            line,
            message,
        };
        let field = |c: usize| record.get(c).unwrap_or("");
        let time = match layout.time {
            TimeSpec::Single(c) => parse_time(field(c)),
            TimeSpec::DayClock { day, clock } => parse_day_clock(field(day), field(clock)),
        }
        .map_err(parse_err)?;
        let values = layout
            .fields
            .iter()
            .map(|f| f.read(&record))
            .collect::<Result<Vec<_>, _>>()
            .map_err(parse_err)?;
        by_turbine
            .entry(field(layout.turbine).to_string())
            .or_default()
            .push(Row { line, time, values });
    }
    if by_turbine.is_empty() {
        return Err(DataError::Empty { path: path_str });
    }
    let mut groups: Vec<(String, Vec<Row>)> = by_turbine.into_iter().collect();
    sort_by_id(&mut groups);

    let first = &groups[0].1;
    let step = if first.len() >= 2 {
        first[1].time - first[0].time
    } else {
        schema.default_step()
    };
    let (start, t) = (first[0].time, first.len());
    for (id, rows) in &groups {
        for w in rows.windows(2) {
            let found = w[1].time - w[0].time;
            if found != step || found <= TimeDelta::zero() {
                return Err(DataError::NonUniform {
                    path: path_str,
                    line: w[1].line,
                    expected: step.num_seconds(),
                    found: found.num_seconds(),
                });
            }
        }
        if rows.len() != t || rows[0].time != start {
            return Err(DataError::Ragged {
                path: path_str,
                turbine: id.clone(),
                rows: rows.len(),
                expected: t,
                start,
            });
        }
    }

    let (n, c) = (groups.len(), layout.weather_names.len());
    let mut power = Tensor::zeros(&[t, n]);
    let mut weather = Tensor::zeros(&[t, n, c]);
    let mut missing = MissingMask::new(t, n, c + 1);
    let mut clamped_negative = 0;
    for (j, (_, rows)) in groups.iter().enumerate() {
        for (i, row) in rows.iter().enumerate() {
            for (ch, v) in row.values.iter().enumerate() {
                let mut value = match v {
                    Some(v) => *v,
                    None => {
                        missing.set(i, j, ch, true);
                        continue;
                    }
                };
                if ch == 0 {
                    if value < 0.0 {
                        value = 0.0;
                        clamped_negative += 1;
                    }
                    power.set(&[i, j], value);
                } else {
                    weather.set(&[i, j, ch - 1], value);
                }
            }
        }
    }

    let mut invalid_rows = vec![false; t];
    for j in 0..n {
        for ch in 0..=c {
            let flags: Vec<bool> = (0..t).map(|i| missing.get(i, j, ch)).collect();
            let mut series: Vec<f64> = (0..t)
                .map(|i| if ch == 0 { power.at(&[i, j]) } else { weather.at(&[i, j, ch - 1]) })
                .collect();
            for i in impute(&mut series, &flags) {
                invalid_rows[i] = true;
            }
            for (i, v) in series.into_iter().enumerate() {
                if ch == 0 {
                    power.set(&[i, j], v);
                } else {
                    weather.set(&[i, j, ch - 1], v);
                }
            }
        }
    }

    Ok(RawDataset {
        timestamps: (0..t).map(|i| start + step * i as i32).collect(),
        step,
        turbines: groups.into_iter().map(|(id, _)| id).collect(),
        weather_names: layout.weather_names,
        power,
        weather,
        missing,
        invalid_rows,
        clamped_negative,
    })
}

/// Fills missing runs in place. Interior runs up to
/// [`MAX_INTERPOLATED_GAP`] are interpolated linearly; other runs carry the
/// nearest observed value and their positions are returned.
pub(crate) fn impute(series: &mut [f64], missing: &[bool]) -> Vec<usize> {
    let len = series.len();
    let mut invalid = Vec::new();
    let mut i = 0;
    while i < len {
        if !missing[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < len && missing[i] {
            i += 1;
        }
        let (left, right) = (start.checked_sub(1), (i < len).then_some(i));
        match (left, right) {
            (Some(l), Some(r)) if i - start <= MAX_INTERPOLATED_GAP => {
                let (a, b) = (series[l], series[r]);
                let span = (r - l) as f64;
                for k in start..i {
                    series[k] = a + (b - a) * (k - l) as f64 / span;
                }
            }
            _ => {
                let fill = left.or(right).map_or(0.0, |k| series[k]);
                for k in start..i {
                    series[k] = fill;
                    invalid.push(k);
                }
            }
        }
    }
    invalid
}

/// Writes the generic layout. Cells flagged missing are left empty so a
/// reload reproduces the same flags and imputation.
pub fn write_csv(raw: &RawDataset, path: &Path) -> Result<(), DataError> {
    atomic_write(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string(), "turbine".into(), "power".into()];
        header.extend(raw.weather_names.iter().cloned());
        w.write_record(&header)?;
        let cell = |missing: bool, v: f64| if missing { String::new() } else { v.to_string() };
        for (i, ts) in raw.timestamps.iter().enumerate() {
            let stamp = ts.format("%Y-%m-%dT%H:%M:%S").to_string();
            for (j, id) in raw.turbines.iter().enumerate() {
                let mut row = vec![stamp.clone(), id.clone(), cell(raw.missing.get(i, j, 0), raw.power.at(&[i, j]))];
                for c in 0..raw.num_weather() {
                    row.push(cell(raw.missing.get(i, j, c + 1), raw.weather.at(&[i, j, c])));
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    })
    .map_err(|e| DataError::io(path, e))
}
