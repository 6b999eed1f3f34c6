use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

/// An ISO-8601 week, the common key for all weekly channels.
///
/// Sources use different calendars: CDC reports MMWR epi-weeks (Sunday to
/// Saturday) and Google Trends labels each week by its starting Sunday. Both
/// are mapped to the ISO week containing the Monday after that Sunday, so a
/// given Sunday-to-Saturday span always lands on the same key.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Week {
    pub year: i32,
    pub week: u32,
}

impl Week {
    pub fn new(year: i32, week: u32) -> Option<Week> {
        NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).map(|_| Week { year, week })
    }

    /// ISO week containing `date`.
    pub fn from_date(date: NaiveDate) -> Week {
        let iso = date.iso_week();
        Week {
            year: iso.year(),
            week: iso.week(),
        }
    }

    /// Week labelled by its first day. A Sunday start maps to the ISO week of
    /// the following Monday; any other day maps to its own ISO week.
    pub fn from_week_start(date: NaiveDate) -> Week {
        if date.weekday() == Weekday::Sun {
            Week::from_date(date + Days::new(1))
        } else {
            Week::from_date(date)
        }
    }

    /// MMWR epi-week `week` of `year`. Epi-week 1 is the first Sunday-to-
    /// Saturday week with at least four days in the year.
    pub fn from_mmwr(year: i32, week: u32) -> Option<Week> {
        if week == 0 {
            return None;
        }
        let start = mmwr_year_start(year)?;
        let sunday = start.checked_add_days(Days::new(7 * (week as u64 - 1)))?;
        if sunday >= mmwr_year_start(year + 1)? {
            return None;
        }
        Some(Week::from_week_start(sunday))
    }

    /// Inverse of [`Week::from_mmwr`].
    pub fn to_mmwr(self) -> (i32, u32) {
        let sunday = self.sunday_start();
        let mut year = sunday.year() + 1;
        while mmwr_year_start(year).is_some_and(|s| s > sunday) {
            year -= 1;
        }
        let start = mmwr_year_start(year).expect("valid year");
        (year, ((sunday - start).num_days() / 7) as u32 + 1)
    }

    pub fn monday(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon).expect("validated week")
    }

    /// The Sunday that starts this week in Sunday-based calendars.
    pub fn sunday_start(self) -> NaiveDate {
        self.monday() - Days::new(1)
    }

    pub fn next(self) -> Week {
        Week::from_date(self.monday() + Days::new(7))
    }

    /// Signed number of weeks from `self` to `other`.
    pub fn weeks_until(self, other: Week) -> i64 {
        (other.monday() - self.monday()).num_days() / 7
    }
}

fn mmwr_year_start(year: i32) -> Option<NaiveDate> {
    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1)?;
    let dow = jan1.weekday().num_days_from_sunday() as u64;
    if dow <= 3 {
        jan1.checked_sub_days(Days::new(dow))
    } else {
        jan1.checked_add_days(Days::new(7 - dow))
    }
}

impl fmt::Display for Week {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

impl FromStr for Week {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, w) = s
            .split_once("-W")
            .ok_or_else(|| format!("expected YYYY-Www, got `{s}`"))?;
        let year = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let week = w.parse().map_err(|_| format!("bad week in `{s}`"))?;
        Week::new(year, week).ok_or_else(|| format!("no such ISO week `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn mmwr_week_one_rules() {
        // 2015-01-01 is a Thursday: epi-week 1 starts Sunday 2015-01-04.
        assert_eq!(Week::from_mmwr(2015, 1), Some(Week::from_week_start(date(2015, 1, 4))));
        // 2017-01-01 is a Sunday: epi-week 1 starts that day.
        assert_eq!(Week::from_mmwr(2017, 1), Some(Week::from_week_start(date(2017, 1, 1))));
        // 2014 has 53 epi-weeks, 2015 does not.
        assert!(Week::from_mmwr(2014, 53).is_some());
        assert!(Week::from_mmwr(2015, 53).is_none());
        assert!(Week::from_mmwr(2015, 0).is_none());
    }

    #[test]
    fn trends_sunday_and_cdc_epiweek_agree() {
        // Epi-week 2010-40 runs Sunday 2010-10-03 .. Saturday 2010-10-09.
        assert_eq!(
            Week::from_mmwr(2010, 40),
            Some(Week::from_week_start(date(2010, 10, 3)))
        );
        assert_eq!(Week::from_week_start(date(2010, 10, 3)), Week::new(2010, 40).unwrap());
    }

    #[test]
    fn mmwr_round_trip_across_years() {
        let mut w = Week::from_mmwr(2009, 1).unwrap();
        for _ in 0..800 {
            let (y, n) = w.to_mmwr();
            assert_eq!(Week::from_mmwr(y, n), Some(w));
            let next = w.next();
            assert_eq!(w.weeks_until(next), 1);
            w = next;
        }
    }

    #[test]
    fn display_and_parse() {
        let w = Week::new(2015, 3).unwrap();
        assert_eq!(w.to_string(), "2015-W03");
        assert_eq!("2015-W03".parse::<Week>().unwrap(), w);
        assert!("2015-W54".parse::<Week>().is_err());
        assert_eq!(Week::new(2015, 53).unwrap().next(), Week::new(2016, 1).unwrap());
    }
}
