//! Weekly ILI and search-interest series: ingestion, alignment, scaling,
//! windowing and chronological splitting.

mod sources;
mod week;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};

pub use sources::{load_ili_csv, load_trends_csv, write_ili_csv, write_trends_csv, Impute, LoadOptions};
pub use week::Week;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    IliPercent,
    TrendsScore,
}

impl Channel {
    /// Admissible value range.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Channel::IliPercent => (0.0, f64::INFINITY),
            Channel::TrendsScore => (0.0, 100.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::IliPercent => "ili_percent",
            Channel::TrendsScore => "trends_score",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Observation {
    pub week: Week,
    pub value: f64,
}

/// One weekly channel for one state; weeks are contiguous and increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub state: String,
    pub channel: Channel,
    points: Vec<Observation>,
}

impl TimeSeries {
    pub fn new(state: impl Into<String>, channel: Channel, points: Vec<Observation>) -> Result<Self, DataError> {
        let path = PathBuf::from("<memory>");
        let (lo, hi) = channel.bounds();
        for (i, p) in points.iter().enumerate() {
            if !(lo..=hi).contains(&p.value) {
                return Err(DataError::Range {
                    path,
                    line: i as u64 + 1,
                    value: p.value,
                    min: lo,
                    max: hi,
                });
            }
        }
        for (i, pair) in points.windows(2).enumerate() {
            if pair[1].week == pair[0].week {
                return Err(DataError::DuplicateWeek {
                    path,
                    line: i as u64 + 2,
                    week: pair[1].week,
                });
            }
            if pair[1].week != pair[0].week.next() {
                return Err(DataError::Gap {
                    path,
                    line: i as u64 + 2,
                    previous: pair[0].week,
                    next: pair[1].week,
                });
            }
        }
        Ok(TimeSeries {
            state: state.into(),
            channel,
            points,
        })
    }

    pub fn points(&self) -> &[Observation] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Number of channels in a [`FeatureSeries`] row: ILI then trends.
pub const FEATURES: usize = 2;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct FeaturePoint {
    pub week: Week,
    /// `[ili_percent, trends_score]`.
    pub values: [f64; FEATURES],
}

/// ILI and trends aligned week by week.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSeries {
    pub state: String,
    points: Vec<FeaturePoint>,
}

impl FeatureSeries {
    pub fn new(state: impl Into<String>, points: Vec<FeaturePoint>) -> Result<Self, DataError> {
        for pair in points.windows(2) {
            if pair[1].week != pair[0].week.next() {
                return Err(DataError::GappedIntersection {
                    previous: pair[0].week,
                    next: pair[1].week,
                });
            }
        }
        Ok(FeatureSeries {
            state: state.into(),
            points,
        })
    }

    pub fn points(&self) -> &[FeaturePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.values[c]).collect()
    }

    pub fn ili(&self) -> Vec<f64> {
        self.channel(0)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> FeatureSeries {
        FeatureSeries {
            state: self.state.clone(),
            points: self.points[range].to_vec(),
        }
    }

    pub fn position(&self, week: Week) -> Option<usize> {
        self.points.iter().position(|p| p.week == week)
    }
}

fn same_state(a: &str, b: &str) -> bool {
    a.is_empty() || b.is_empty() || a.eq_ignore_ascii_case(b)
}

/// Inner join on week. The shared weeks must be contiguous.
pub fn join_features(ili: &TimeSeries, trends: &TimeSeries) -> Result<FeatureSeries, DataError> {
    if !same_state(&ili.state, &trends.state) {
        return Err(DataError::StateMismatch {
            left: ili.state.clone(),
            right: trends.state.clone(),
        });
    }
    let mut points = Vec::new();
    let mut j = 0;
    for p in &ili.points {
        while j < trends.points.len() && trends.points[j].week < p.week {
            j += 1;
        }
        if let Some(t) = trends.points.get(j).filter(|t| t.week == p.week) {
            points.push(FeaturePoint {
                week: p.week,
                values: [p.value, t.value],
            });
        }
    }
    if points.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    let state = if ili.state.is_empty() {
        &trends.state
    } else {
        &ili.state
    };
    FeatureSeries::new(state.clone(), points)
}

/// Splits at `floor(ratio × len)` without shuffling. Both regions must hold at
/// least `min_len` weeks.
pub fn chronological_split(
    series: &FeatureSeries,
    ratio: f64,
    min_len: usize,
) -> Result<(FeatureSeries, FeatureSeries)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Domain(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n = series.len();
    let at = (ratio * n as f64).floor() as usize;
    for len in [at, n - at] {
        if len < min_len {
            return Err(DataError::TooShort { len, needed: min_len }.into());
        }
    }
    Ok((series.slice(0..at), series.slice(at..n)))
}

/// Per-channel min and max of the fit region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerParams {
    pub fn fit(region: &FeatureSeries) -> Result<Self, DataError> {
        let mut min = vec![f64::INFINITY; FEATURES];
        let mut max = vec![f64::NEG_INFINITY; FEATURES];
        for p in region.points() {
            for c in 0..FEATURES {
                min[c] = min[c].min(p.values[c]);
                max[c] = max[c].max(p.values[c]);
            }
        }
        for (c, channel) in [Channel::IliPercent, Channel::TrendsScore].iter().enumerate() {
            if max[c] <= min[c] {
                return Err(DataError::DegenerateScale {
                    channel: channel.name().to_string(),
                });
            }
        }
        Ok(ScalerParams { min, max })
    }

    /// Maps the fit-region range of `channel` onto [0, 1]; values outside the
    /// fit range extrapolate linearly.
    pub fn transform_value(&self, channel: usize, x: f64) -> f64 {
        (x - self.min[channel]) / (self.max[channel] - self.min[channel])
    }

    pub fn inverse_value(&self, channel: usize, x: f64) -> f64 {
        x * (self.max[channel] - self.min[channel]) + self.min[channel]
    }

    pub fn transform(&self, series: &FeatureSeries) -> FeatureSeries {
        self.map(series, Self::transform_value)
    }

    pub fn inverse(&self, series: &FeatureSeries) -> FeatureSeries {
        self.map(series, Self::inverse_value)
    }

    fn map(&self, series: &FeatureSeries, f: fn(&Self, usize, f64) -> f64) -> FeatureSeries {
        let points = series
            .points()
            .iter()
            .map(|p| FeaturePoint {
                week: p.week,
                values: std::array::from_fn(|c| f(self, c, p.values[c])),
            })
            .collect();
        FeatureSeries {
            state: series.state.clone(),
            points,
        }
    }
}

/// One (input window, ILI target) training or evaluation instance.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `in_len` rows of `[ili, trends]`.
    pub input: Vec<Vec<f64>>,
    /// The next `out_len` ILI values.
    pub target: Vec<f64>,
    /// Week of the last input row.
    pub origin_week: Week,
}

/// Stride-1 sliding windows; yields `len - in_len - out_len + 1` samples.
pub fn make_windows(region: &FeatureSeries, in_len: usize, out_len: usize) -> Result<Vec<WindowSample>> {
    if in_len == 0 || out_len == 0 {
        return Err(Error::Domain("window lengths must be positive".into()));
    }
    let needed = in_len + out_len;
    if region.len() < needed {
        return Err(DataError::TooShort {
            len: region.len(),
            needed,
        }
        .into());
    }
    let pts = region.points();
    Ok((0..=region.len() - needed)
        .map(|s| WindowSample {
            input: pts[s..s + in_len].iter().map(|p| p.values.to_vec()).collect(),
            target: pts[s + in_len..s + needed].iter().map(|p| p.values[0]).collect(),
            origin_week: pts[s + in_len - 1].week,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn weeks_from(start: Week, n: usize) -> Vec<Week> {
        std::iter::successors(Some(start), |w| Some(w.next())).take(n).collect()
    }

    fn series(state: &str, channel: Channel, start: Week, values: &[f64]) -> TimeSeries {
        let pts = weeks_from(start, values.len())
            .into_iter()
            .zip(values)
            .map(|(week, &value)| Observation { week, value })
            .collect();
        TimeSeries::new(state, channel, pts).unwrap()
    }

    fn features(n: usize) -> FeatureSeries {
        let pts = weeks_from(Week::new(2010, 40).unwrap(), n)
            .into_iter()
            .enumerate()
            .map(|(i, week)| FeaturePoint {
                week,
                values: [1.0 + (i as f64 * 0.3).sin(), 50.0 + 10.0 * (i as f64 * 0.2).cos()],
            })
            .collect();
        FeatureSeries::new("Oregon", pts).unwrap()
    }

    #[test]
    fn join_identical_ranges() {
        let w0 = Week::new(2015, 1).unwrap();
        let ili = series("Texas", Channel::IliPercent, w0, &[1.0, 2.0, 3.0]);
        let tr = series("texas", Channel::TrendsScore, w0, &[10.0, 20.0, 30.0]);
        let j = join_features(&ili, &tr).unwrap();
        assert_eq!(j.len(), 3);
        assert_eq!(j.points()[2].values, [3.0, 30.0]);
    }

    #[test]
    fn join_covers_the_intersection() {
        let w1 = Week::new(2016, 1).unwrap();
        let w5 = Week::new(2016, 5).unwrap();
        let ili = series("", Channel::IliPercent, w1, &[1.0; 10]);
        let tr = series("Georgia", Channel::TrendsScore, w5, &[5.0; 11]);
        let j = join_features(&ili, &tr).unwrap();
        assert_eq!(j.points().first().unwrap().week, w5);
        assert_eq!(j.points().last().unwrap().week, Week::new(2016, 10).unwrap());
        assert_eq!(j.len(), 6);
        assert_eq!(j.state, "Georgia");
    }

    #[test]
    fn join_full_date_range_has_430_weeks() {
        let first = Week::from_week_start(chrono::NaiveDate::from_ymd_opt(2010, 10, 10).unwrap());
        let last = Week::from_week_start(chrono::NaiveDate::from_ymd_opt(2018, 12, 30).unwrap());
        let n = first.weeks_until(last) as usize + 1;
        assert_eq!(n, 430);
        let ili = series("Illinois", Channel::IliPercent, first, &vec![2.0; n]);
        let tr = series("Illinois", Channel::TrendsScore, first, &vec![40.0; n]);
        assert_eq!(join_features(&ili, &tr).unwrap().len(), 430);
    }

    #[test]
    fn join_errors() {
        let a = series("Texas", Channel::IliPercent, Week::new(2015, 1).unwrap(), &[1.0; 3]);
        let b = series("Texas", Channel::TrendsScore, Week::new(2016, 1).unwrap(), &[1.0; 3]);
        assert!(matches!(join_features(&a, &b), Err(DataError::EmptyIntersection)));
        let c = series("Ohio", Channel::TrendsScore, Week::new(2015, 1).unwrap(), &[1.0; 3]);
        assert!(matches!(join_features(&a, &c), Err(DataError::StateMismatch { .. })));
    }

    #[test]
    fn split_examples() {
        let (train, test) = chronological_split(&features(430), 0.67, 14).unwrap();
        assert_eq!((train.len(), test.len()), (288, 142));
        let (train, test) = chronological_split(&features(100), 0.5, 14).unwrap();
        assert_eq!((train.len(), test.len()), (50, 50));
        assert!(matches!(
            chronological_split(&features(10), 0.67, 14),
            Err(Error::Data(DataError::TooShort { .. }))
        ));
        assert!(chronological_split(&features(100), 1.0, 14).is_err());
    }

    #[test]
    fn scaler_examples() {
        let pts = weeks_from(Week::new(2012, 1).unwrap(), 3)
            .into_iter()
            .zip([2.0, 4.0, 6.0])
            .map(|(week, v)| FeaturePoint {
                week,
                values: [v, 10.0 * v],
            })
            .collect();
        let s = FeatureSeries::new("", pts).unwrap();
        let scaler = ScalerParams::fit(&s).unwrap();
        assert_eq!(scaler.transform(&s).ili(), vec![0.0, 0.5, 1.0]);
        assert_eq!(scaler.transform_value(0, 8.0), 1.5);
        let back = scaler.inverse(&scaler.transform(&s));
        for (a, b) in back.ili().iter().zip(s.ili()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn scaler_rejects_constant_channel() {
        let pts = weeks_from(Week::new(2012, 1).unwrap(), 3)
            .into_iter()
            .map(|week| FeaturePoint {
                week,
                values: [1.0, 5.0],
            })
            .collect();
        let s = FeatureSeries::new("", pts).unwrap();
        assert!(matches!(ScalerParams::fit(&s), Err(DataError::DegenerateScale { .. })));
    }

    #[test]
    fn window_counts_and_overlap() {
        assert_eq!(make_windows(&features(14), 10, 4).unwrap().len(), 1);
        let w = make_windows(&features(288), 10, 4).unwrap();
        assert_eq!(w.len(), 275);
        assert_eq!(w[1].input[0..9], w[0].input[1..10]);
        assert_eq!(w[0].origin_week, features(288).points()[9].week);
        assert!(make_windows(&features(13), 10, 4).is_err());
    }

    #[test]
    fn window_targets_reassemble_the_series() {
        let s = features(40);
        let ili = s.ili();
        let w = make_windows(&s, 10, 4).unwrap();
        for h in 0..4 {
            let slice: Vec<f64> = w.iter().map(|x| x.target[h]).collect();
            assert_eq!(slice, ili[10 + h..10 + h + w.len()]);
        }
    }

    #[test]
    fn timeseries_validation() {
        let w0 = Week::new(2015, 3).unwrap();
        let gap = vec![
            Observation { week: w0, value: 1.0 },
            Observation {
                week: w0.next().next(),
                value: 1.0,
            },
        ];
        assert!(matches!(
            TimeSeries::new("", Channel::IliPercent, gap),
            Err(DataError::Gap { .. })
        ));
        let out_of_range = vec![Observation { week: w0, value: 101.0 }];
        assert!(matches!(
            TimeSeries::new("", Channel::TrendsScore, out_of_range),
            Err(DataError::Range { .. })
        ));
    }
}
