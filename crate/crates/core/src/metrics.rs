//! Error metrics and stacked vs st_stacked comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::InnerActivation;
use crate::model::ModelKind;

fn check(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::Metrics(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metrics("no predictions".into()));
    }
    Ok(())
}

pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

pub fn mse(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64)
}

/// Median; for an even count, the lower of the two middle values.
pub fn median_lower(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Index into `values` of the element [`median_lower`] returns.
pub fn median_lower_index(values: &[f64]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    Some(idx[(idx.len() - 1) / 2])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Label of the evaluated range, e.g. `nov-dec`.
    pub testset: String,
    pub kind: ModelKind,
    pub horizon: usize,
    pub target: String,
    pub activation: InnerActivation,
    /// `(prediction, truth)` per window.
    pub pairs: Vec<(f64, f64)>,
    pub mae: f64,
    pub mse: f64,
    pub n_windows: usize,
}

impl EvalReport {
    pub fn new(
        testset: impl Into<String>,
        kind: ModelKind,
        horizon: usize,
        target: impl Into<String>,
        activation: InnerActivation,
        pairs: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        Ok(EvalReport {
            testset: testset.into(),
            kind,
            horizon,
            target: target.into(),
            activation,
            mae: mae(&p, &t)?,
            mse: mse(&p, &t)?,
            n_windows: pairs.len(),
            pairs,
        })
    }

    /// Builds a report whose MAE/MSE are supplied (e.g. medians over repeats).
    pub fn summary(
        testset: impl Into<String>,
        kind: ModelKind,
        horizon: usize,
        target: impl Into<String>,
        activation: InnerActivation,
        mae: f64,
        mse: f64,
        n_windows: usize,
    ) -> Self {
        EvalReport {
            testset: testset.into(),
            kind,
            horizon,
            target: target.into(),
            activation,
            pairs: Vec::new(),
            mae,
            mse,
            n_windows,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Mae,
    Mse,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Mse => "MSE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    Stacked,
    StStacked,
    /// Equal values; both are marked.
    Tie,
    /// Only one model present in the cell.
    Undecided,
}

impl Winner {
    pub fn as_str(self) -> &'static str {
        match self {
            Winner::Stacked => "stacked",
            Winner::StStacked => "st_stacked",
            Winner::Tie => "tie",
            Winner::Undecided => "-",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub testset: String,
    pub steps_ahead: usize,
    pub target: String,
    pub activation: InnerActivation,
    pub metric: Metric,
    pub stacked: Option<f64>,
    pub st_stacked: Option<f64>,
    pub winner: Winner,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Groups reports into one row per (testset, horizon, target, activation,
/// metric). Lower is better; exactly equal values are a tie.
pub fn comparison_report(reports: &[EvalReport]) -> Result<ComparisonTable> {
    type Key = (String, usize, String, InnerActivation);
    let mut cells: BTreeMap<Key, (Option<&EvalReport>, Option<&EvalReport>)> = BTreeMap::new();
    for r in reports {
        let key = (r.testset.clone(), r.horizon, r.target.clone(), r.activation);
        let slot = cells.entry(key).or_default();
        let target = match r.kind {
            ModelKind::Stacked => &mut slot.0,
            ModelKind::StStacked => &mut slot.1,
        };
        if target.is_some() {
            return Err(Error::DuplicateCell(format!(
                "{} testset={} steps_ahead={} target={} activation={}",
                r.kind, r.testset, r.horizon, r.target, r.activation
            )));
        }
        *target = Some(r);
    }

    let mut rows = Vec::new();
    for ((testset, q, target, act), (a, b)) in cells {
        for metric in [Metric::Mae, Metric::Mse] {
            let pick = |r: Option<&EvalReport>| {
                r.map(|r| match metric {
                    Metric::Mae => r.mae,
                    Metric::Mse => r.mse,
                })
            };
            let (sa, sb) = (pick(a), pick(b));
            let winner = match (sa, sb) {
                (Some(x), Some(y)) if x < y => Winner::Stacked,
                (Some(x), Some(y)) if y < x => Winner::StStacked,
                (Some(_), Some(_)) => Winner::Tie,
                _ => Winner::Undecided,
            };
            rows.push(ComparisonRow {
                testset: testset.clone(),
                steps_ahead: q,
                target: target.clone(),
                activation: act,
                metric,
                stacked: sa,
                st_stacked: sb,
                winner,
            });
        }
    }
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub const CSV_HEADER: &'static str = "testset,steps_ahead,target,activation,metric,stacked,st_stacked,winner";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.testset,
                r.steps_ahead,
                r.target,
                r.activation,
                r.metric.as_str(),
                cell(r.stacked),
                cell(r.st_stacked),
                r.winner.as_str()
            );
        }
        out
    }

    /// Fixed-width text; the better value in each row carries a `*`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<10} {:>5} {:<18} {:<8} {:<6} {:>12} {:>12}\n",
            "testset", "steps", "target", "act", "metric", "stacked", "st_stacked"
        );
        let cell = |v: Option<f64>, best: bool| match v {
            Some(x) => format!("{}{x:.2}", if best { "*" } else { "" }),
            None => "-".to_string(),
        };
        for r in &self.rows {
            let star_a = matches!(r.winner, Winner::Stacked | Winner::Tie);
            let star_b = matches!(r.winner, Winner::StStacked | Winner::Tie);
            let _ = writeln!(
                out,
                "{:<10} {:>5} {:<18} {:<8} {:<6} {:>12} {:>12}",
                r.testset,
                r.steps_ahead,
                r.target,
                r.activation,
                r.metric.as_str(),
                cell(r.stacked, star_a),
                cell(r.st_stacked, star_b)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert_eq!(mae(&[4.0, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        assert_eq!(mse(&[4.0, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_eq!(mse(&[0.0], &[3.0]).unwrap(), 9.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn median_rules() {
        assert_eq!(median_lower(&[3.0, 1.0, 2.0, 5.0, 4.0]), Some(3.0));
        assert_eq!(median_lower(&[1.0, 2.0, 3.0, 4.0]), Some(2.0));
        assert_eq!(median_lower(&[7.5]), Some(7.5));
        assert_eq!(median_lower(&[]), None);
        assert_eq!(median_lower_index(&[3.0, 1.0, 2.0, 5.0, 4.0]), Some(0));
        assert_eq!(median_lower_index(&[4.0, 3.0, 2.0, 1.0]), Some(2));
    }

    fn report(kind: ModelKind, q: usize, mae: f64, mse: f64) -> EvalReport {
        EvalReport::summary("test", kind, q, "loc0:temperature", InnerActivation::Tanh, mae, mse, 10)
    }

    #[test]
    fn single_report_gives_one_cell() {
        let t = comparison_report(&[report(ModelKind::Stacked, 1, 1.0, 2.0)]).unwrap();
        assert_eq!(t.rows.len(), 2); // MAE and MSE of the one cell
        assert!(t.rows.iter().all(|r| r.winner == Winner::Undecided && r.st_stacked.is_none()));
    }

    #[test]
    fn duplicates_are_rejected() {
        let r = report(ModelKind::StStacked, 2, 1.0, 2.0);
        assert!(matches!(comparison_report(&[r.clone(), r]), Err(Error::DuplicateCell(_))));
    }

    #[test]
    fn ties_mark_both() {
        let t = comparison_report(&[
            report(ModelKind::Stacked, 1, 1.5, 3.0),
            report(ModelKind::StStacked, 1, 1.5, 2.0),
        ])
        .unwrap();
        assert_eq!(t.rows[0].winner, Winner::Tie);
        assert_eq!(t.rows[1].winner, Winner::StStacked);
        let text = t.to_text();
        let mae_line = text.lines().nth(1).unwrap();
        assert_eq!(mae_line.matches('*').count(), 2, "{mae_line}");
    }

    #[test]
    fn three_horizons_make_six_rows() {
        let mut reports = Vec::new();
        for (q, st_mae) in [(1, 1.5), (2, 1.75), (3, 2.25)] {
            reports.push(report(ModelKind::Stacked, q, 2.0, 5.0));
            reports.push(report(ModelKind::StStacked, q, st_mae, 4.0));
        }
        let t = comparison_report(&reports).unwrap();
        assert_eq!(t.rows.len(), 6);
        let csv = t.to_csv();
        assert!(csv.starts_with(ComparisonTable::CSV_HEADER));
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.contains("test,3,loc0:temperature,tanh,MAE,2.0,2.25,stacked"));
    }

    proptest! {
        #[test]
        fn metric_properties(
            pairs in proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..40),
            shift in -100.0..100.0f64,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = mae(&p, &t).unwrap();
            let s = mse(&p, &t).unwrap();
            prop_assert!(s + 1e-9 >= a * a);
            prop_assert!(a <= s.sqrt() + 1e-9);
            prop_assert_eq!(mae(&p, &p).unwrap(), 0.0);
            let ps: Vec<f64> = p.iter().map(|x| x + shift).collect();
            let ts: Vec<f64> = t.iter().map(|x| x + shift).collect();
            prop_assert!((mae(&ps, &ts).unwrap() - a).abs() < 1e-9);
        }
    }
}
