use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SeasonalNaive,
    ArLs,
    SimpleLstm,
    #[serde(rename = "seq2seq")]
    Seq2Seq,
    #[serde(rename = "seq2seq_attention")]
    Seq2SeqAttention,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SeasonalNaive,
        Method::ArLs,
        Method::SimpleLstm,
        Method::Seq2Seq,
        Method::Seq2SeqAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SeasonalNaive => "seasonal_naive",
            Method::ArLs => "ar_ls",
            Method::SimpleLstm => "simple_lstm",
            Method::Seq2Seq => "seq2seq",
            Method::Seq2SeqAttention => "seq2seq_attention",
        }
    }

    /// Column heading in the markdown tables.
    pub fn title(self) -> &'static str {
        match self {
            Method::SeasonalNaive => "Seasonal naive",
            Method::ArLs => "AR-LS",
            Method::SimpleLstm => "LSTM",
            Method::Seq2Seq => "Seq2Seq",
            Method::Seq2SeqAttention => "Seq2Seq with attention",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Method::SimpleLstm | Method::Seq2Seq | Method::Seq2SeqAttention)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            format!("unknown method `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// How the single table number is derived from the per-horizon metrics.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of the per-horizon metrics.
    #[default]
    Mean,
    /// Metrics over all (prediction, truth) pairs of every horizon.
    Pooled,
    /// Horizon 1 only.
    H1,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "pooled" => Ok(Aggregation::Pooled),
            "h1" => Ok(Aggregation::H1),
            _ => Err(format!("unknown aggregation `{s}` (expected mean, pooled or h1)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// 1-based weeks ahead.
    pub horizon: usize,
    pub pearson: f64,
    pub rmse: f64,
}

/// Per-horizon and aggregate scores of one method on one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub state: String,
    pub method: Method,
    pub aggregation: Aggregation,
    pub horizons: Vec<HorizonMetrics>,
    pub pearson: f64,
    pub rmse: f64,
}

/// One row per (state, method, horizon), sorted by state then method.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| (&a.state, a.method).cmp(&(&b.state, b.method)));
    let mut out = String::from("state,method,horizon,pearson,rmse\r\n");
    for r in sorted {
        let state = if r.state.contains([',', '"', '\n']) {
            format!("\"{}\"", r.state.replace('"', "\"\""))
        } else {
            r.state.clone()
        };
        for h in &r.horizons {
            write!(
                out,
                "{state},{},{},{},{}\r\n",
                r.method.name(),
                h.horizon,
                h.pearson,
                h.rmse
            )
            .expect("write to String");
        }
    }
    out
}

fn table(
    title: &str,
    reports: &[EvalReport],
    value: impl Fn(&EvalReport) -> f64,
    higher_is_better: bool,
    decimals: usize,
) -> String {
    let mut methods: Vec<Method> = reports.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut by_state: BTreeMap<&str, BTreeMap<Method, f64>> = BTreeMap::new();
    for r in reports {
        by_state.entry(&r.state).or_default().insert(r.method, value(r));
    }
    let mut rows: Vec<(String, BTreeMap<Method, f64>)> =
        by_state.into_iter().map(|(s, m)| (s.to_string(), m)).collect();
    if rows.len() > 1 {
        let mut avg = BTreeMap::new();
        for &m in &methods {
            let vals: Vec<f64> = rows.iter().filter_map(|(_, r)| r.get(&m).copied()).collect();
            if vals.len() == rows.len() {
                avg.insert(m, vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        rows.push(("Average".to_string(), avg));
    }

    let mut out = format!("{title}\n\n|");
    for m in &methods {
        write!(out, " | {}", m.title()).expect("write to String");
    }
    out.push_str(" |\n|---");
    for _ in &methods {
        out.push_str("|---:");
    }
    out.push_str("|\n");
    for (state, vals) in &rows {
        let best = vals.values().copied().fold(None, |acc: Option<f64>, v| match acc {
            None => Some(v),
            Some(b) if (higher_is_better && v > b) || (!higher_is_better && v < b) => Some(v),
            keep => keep,
        });
        write!(out, "| {state}").expect("write to String");
        for m in &methods {
            match vals.get(m) {
                Some(&v) if Some(v) == best => write!(out, " | **{v:.decimals$}**"),
                Some(&v) => write!(out, " | {v:.decimals$}"),
                None => write!(out, " | –"),
            }
            .expect("write to String");
        }
        out.push_str(" |\n");
    }
    out
}

/// States × methods tables of the aggregate Pearson and RMSE, with an
/// `Average` row when more than one state is present and the best method of
/// each row in bold.
pub fn markdown_tables(reports: &[EvalReport]) -> String {
    let p = table(
        "Pearson correlation between actual and predicted ILI.",
        reports,
        |r| r.pearson,
        true,
        3,
    );
    let r = table("RMSE between actual and predicted ILI.", reports, |r| r.rmse, false, 2);
    format!("{p}\n{r}")
}
