//! Readers and writers for the two input exports.
//!
//! CDC FluView (ILINet) state-level export: any number of banner lines, then a
//! header row containing `YEAR`, `WEEK` and `%UNWEIGHTED ILI` (an optional
//! `REGION` column names the state). `YEAR`/`WEEK` are MMWR epi-weeks.
//!
//! Google Trends "multiTimeline" export: banner lines (`Category: ...`, blank)
//! until the first row whose first field is `Week`; that row's second field
//! reads `<term>: (<geo>)`. Data rows are `YYYY-MM-DD,<score>` where the date
//! starts the week and the score is 0–100 or `<1` (read as 0.5).
//!
//! Header detection is by column name, never by line count.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Channel, Observation, TimeSeries, Week};
use crate::error::DataError;

/// How to treat a single missing week between two observed ones.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impute {
    /// Missing weeks are an error.
    #[default]
    None,
    /// Fill an isolated missing week with the mean of its neighbours.
    Linear,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Keep only rows for this region (case-insensitive) when the file has a
    /// region column; also the label given to the series.
    pub state: Option<String>,
    pub impute: Impute,
}

fn normalize(field: &str) -> String {
    field
        .trim_start_matches('\u{feff}')
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_uppercase()
}

fn read_records(path: &Path) -> Result<Vec<(u64, Vec<String>)>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DataError::Layout {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, fields));
    }
    Ok(out)
}

fn parse_number(path: &Path, line: u64, column: &str, raw: &str) -> Result<f64, DataError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::BadNumber {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

/// Sorts, rejects duplicates and range violations, then fills or rejects
/// gaps.
fn assemble(
    path: &Path,
    state: String,
    channel: Channel,
    mut rows: Vec<(u64, Week, f64)>,
    impute: Impute,
) -> Result<TimeSeries, DataError> {
    if rows.is_empty() {
        return Err(DataError::Empty {
            path: path.to_path_buf(),
        });
    }
    let (lo, hi) = channel.bounds();
    for &(line, _, value) in &rows {
        if !(lo..=hi).contains(&value) {
            return Err(DataError::Range {
                path: path.to_path_buf(),
                line,
                value,
                min: lo,
                max: hi,
            });
        }
    }
    rows.sort_by_key(|&(line, week, _)| (week, line));
    let mut points: Vec<Observation> = Vec::with_capacity(rows.len());
    for pair in rows.windows(2) {
        if pair[0].1 == pair[1].1 {
            return Err(DataError::DuplicateWeek {
                path: path.to_path_buf(),
                line: pair[1].0,
                week: pair[1].1,
            });
        }
    }
    for &(line, week, value) in &rows {
        if let Some(prev) = points.last().copied() {
            let step = prev.week.weeks_until(week);
            if step == 2 && impute == Impute::Linear {
                points.push(Observation {
                    week: prev.week.next(),
                    value: 0.5 * (prev.value + value),
                });
            } else if step != 1 {
                return Err(DataError::Gap {
                    path: path.to_path_buf(),
                    line,
                    previous: prev.week,
                    next: week,
                });
            }
        }
        points.push(Observation { week, value });
    }
    TimeSeries::new(state, channel, points)
}

/// Reads a CDC FluView ILINet export into the unweighted ILI percentage series.
pub fn load_ili_csv(path: &Path, options: &LoadOptions) -> Result<TimeSeries, DataError> {
    let records = read_records(path)?;
    let header_at = records
        .iter()
        .position(|(_, f)| {
            let names: Vec<String> = f.iter().map(|s| normalize(s)).collect();
            names.iter().any(|n| n == "YEAR") && names.iter().any(|n| n == "WEEK")
        })
        .ok_or_else(|| DataError::MissingColumn {
            path: path.to_path_buf(),
            column: "YEAR".into(),
        })?;
    let names: Vec<String> = records[header_at].1.iter().map(|s| normalize(s)).collect();
    let col = |name: &str| names.iter().position(|n| n == name);
    let missing = |column: &str| DataError::MissingColumn {
        path: path.to_path_buf(),
        column: column.to_string(),
    };
    let year_col = col("YEAR").ok_or_else(|| missing("YEAR"))?;
    let week_col = col("WEEK").ok_or_else(|| missing("WEEK"))?;
    let ili_col = col("%UNWEIGHTEDILI").ok_or_else(|| missing("%UNWEIGHTED ILI"))?;
    let region_col = col("REGION");

    let mut rows = Vec::new();
    let mut regions = BTreeSet::new();
    for (line, fields) in &records[header_at + 1..] {
        let line = *line;
        let get = |c: usize| fields.get(c).map(String::as_str).unwrap_or("");
        if let Some(rc) = region_col {
            let region = get(rc);
            if let Some(want) = &options.state {
                if !region.eq_ignore_ascii_case(want) {
                    continue;
                }
            }
            regions.insert(region.to_string());
        }
        let year = get(year_col)
            .parse::<i32>()
            .map_err(|_| bad_week(path, line, format!("year `{}`", get(year_col))))?;
        let epi = get(week_col)
            .parse::<u32>()
            .map_err(|_| bad_week(path, line, format!("week `{}`", get(week_col))))?;
        let week =
            Week::from_mmwr(year, epi).ok_or_else(|| bad_week(path, line, format!("{year} has no epi-week {epi}")))?;
        let value = parse_number(path, line, "%UNWEIGHTED ILI", get(ili_col))?;
        rows.push((line, week, value));
    }
    if regions.len() > 1 {
        return Err(DataError::Layout {
            path: path.to_path_buf(),
            reason: format!(
                "file holds {} regions ({}); select one state",
                regions.len(),
                regions.iter().take(3).cloned().collect::<Vec<_>>().join(", ")
            ),
        });
    }
    let state = options
        .state
        .clone()
        .or_else(|| regions.into_iter().next())
        .unwrap_or_default();
    assemble(path, state, Channel::IliPercent, rows, options.impute)
}

fn bad_week(path: &Path, line: u64, reason: String) -> DataError {
    DataError::BadWeek {
        path: path.to_path_buf(),
        line,
        reason,
    }
}

/// Reads a Google Trends weekly "multiTimeline" export.
pub fn load_trends_csv(path: &Path, options: &LoadOptions) -> Result<TimeSeries, DataError> {
    let records = read_records(path)?;
    let layout = |reason: String| DataError::Layout {
        path: path.to_path_buf(),
        reason,
    };
    let header_at = records
        .iter()
        .position(|(_, f)| matches!(normalize(&f[0]).as_str(), "WEEK" | "DAY" | "MONTH"))
        .ok_or_else(|| layout("no `Week` header row".into()))?;
    let (_, header) = &records[header_at];
    if normalize(&header[0]) != "WEEK" {
        return Err(layout(format!("`{}` granularity; weekly export required", header[0])));
    }
    if header.len() < 2 {
        return Err(DataError::MissingColumn {
            path: path.to_path_buf(),
            column: "score".into(),
        });
    }
    let geo = header[1]
        .rsplit_once('(')
        .and_then(|(_, g)| g.strip_suffix(')'))
        .map(|g| g.trim().to_string());
    let state = match (&options.state, geo) {
        (Some(want), Some(geo)) if !geo.eq_ignore_ascii_case(want) => {
            return Err(DataError::StateMismatch {
                left: want.clone(),
                right: geo,
            })
        }
        (Some(want), _) => want.clone(),
        (None, geo) => geo.unwrap_or_default(),
    };

    let mut rows = Vec::new();
    for (line, fields) in &records[header_at + 1..] {
        let line = *line;
        let date = NaiveDate::parse_from_str(&fields[0], "%Y-%m-%d")
            .map_err(|_| bad_week(path, line, format!("date `{}`", fields[0])))?;
        let raw = fields.get(1).map(String::as_str).unwrap_or("");
        let value = if raw == "<1" {
            0.5
        } else {
            parse_number(path, line, &header[1], raw)?
        };
        rows.push((line, Week::from_week_start(date), value));
    }
    assemble(path, state, Channel::TrendsScore, rows, options.impute)
}

fn write_file(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)
}

/// Writes `series` in the ILINet state-level layout (weighted ILI and the age
/// columns are left as `X`, as in real state exports).
pub fn write_ili_csv(path: &Path, series: &TimeSeries) -> std::io::Result<()> {
    let mut out = String::from(
        "PERCENTAGE OF VISITS FOR INFLUENZA-LIKE-ILLNESS REPORTED BY SENTINEL PROVIDERS\n\
         REGION TYPE,REGION,YEAR,WEEK,% WEIGHTED ILI,%UNWEIGHTED ILI,AGE 0-4,AGE 25-49,AGE 25-64,AGE 5-24,AGE 50-64,AGE 65,ILITOTAL,NUM. OF PROVIDERS,TOTAL PATIENTS\n",
    );
    for p in series.points() {
        let (year, week) = p.week.to_mmwr();
        let patients = 10_000u64;
        let ili_total = (p.value / 100.0 * patients as f64).round() as u64;
        writeln!(
            out,
            "States,{},{year},{week},X,{},X,X,X,X,X,X,{ili_total},50,{patients}",
            series.state, p.value
        )
        .expect("write to String");
    }
    write_file(path, &out)
}

/// Writes `series` in the Trends multiTimeline layout, one row per week keyed
/// by its starting Sunday.
pub fn write_trends_csv(path: &Path, series: &TimeSeries, term: &str) -> std::io::Result<()> {
    let mut out = format!("Category: All categories\n\nWeek,{term}: ({})\n", series.state);
    for p in series.points() {
        writeln!(out, "{},{}", p.week.sunday_start().format("%Y-%m-%d"), p.value).expect("write to String");
    }
    write_file(path, &out)
}
