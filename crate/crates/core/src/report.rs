//! Result files and comparison tables.
//!
//! Tables put one run per column and one split per row. In each row the
//! best score is bold and the runner-up underlined; closed-task scores
//! significantly above chance carry a `*`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Task;
use crate::error::{Error, Result};
use crate::evaluator::{ClosedEvalResult, DifferenceLevelResult, OpenEvalResult};
use crate::model::Split;

/// Contents of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    /// Splits the run covered.
    pub splits: Vec<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<ClosedEvalResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_difference: Vec<DifferenceLevelResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open: Option<OpenEvalResult>,
}

impl EvalReport {
    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let path = run_dir.as_ref().join("results.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Score for a split (`None` = overall) as a fraction, with significance.
    pub fn cell(&self, split: Option<Split>) -> Cell {
        match (&self.closed, &self.open) {
            (Some(c), _) => {
                let t = match split {
                    None => Some(&c.overall),
                    Some(s) => c.per_split.get(&s),
                };
                Cell {
                    value: t.and_then(|t| t.accuracy),
                    significant: t.is_some_and(|t| t.significant),
                }
            }
            (None, Some(o)) => {
                let r = match split {
                    None => Some(&o.overall),
                    Some(s) => o.per_split.get(&s),
                };
                Cell {
                    value: r.and_then(|r| r.recall),
                    significant: false,
                }
            }
            (None, None) => Cell::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cell {
    pub value: Option<f64>,
    pub significant: bool,
}

/// Runs side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub task: Task,
    pub columns: Vec<String>,
    /// Row label and one cell per column.
    pub rows: Vec<(String, Vec<Cell>)>,
}

impl ComparisonTable {
    /// Runs must share a task and cover the same splits.
    pub fn from_runs(runs: &[(String, EvalReport)]) -> Result<Self> {
        let (_, first) = runs.first().ok_or_else(|| Error::InvalidArgument("no runs to report".into()))?;
        for (name, r) in runs {
            if r.task != first.task {
                return Err(Error::Validation(format!("run {name} is a different task")));
            }
            let a: BTreeSet<_> = r.splits.iter().collect();
            let b: BTreeSet<_> = first.splits.iter().collect();
            if a != b {
                return Err(Error::Validation(format!("run {name} covers different splits")));
            }
        }
        let mut splits = first.splits.clone();
        splits.sort();
        let mut rows: Vec<(String, Vec<Cell>)> = splits
            .iter()
            .map(|s| (s.as_str().to_string(), runs.iter().map(|(_, r)| r.cell(Some(*s))).collect()))
            .collect();
        rows.push(("overall".into(), runs.iter().map(|(_, r)| r.cell(None)).collect()));
        Ok(ComparisonTable {
            task: first.task,
            columns: runs.iter().map(|(n, _)| n.clone()).collect(),
            rows,
        })
    }

    pub fn to_markdown(&self) -> String {
        let metric = match self.task {
            Task::Closed => "accuracy",
            Task::Open => "recall@N_diff",
        };
        let mut out = String::new();
        let _ = writeln!(out, "| {metric} | {} |", self.columns.join(" | "));
        let _ = writeln!(out, "|---|{}", "---:|".repeat(self.columns.len()));
        for (label, cells) in &self.rows {
            let ranks = rank(cells);
            let shown: Vec<String> = cells
                .iter()
                .zip(ranks)
                .map(|(c, r)| {
                    let Some(v) = c.value else { return "-".to_string() };
                    let mut t = format!("{:.1}", 100.0 * v);
                    if c.significant {
                        t.push('*');
                    }
                    match r {
                        Some(0) => format!("**{t}**"),
                        Some(1) => format!("<u>{t}</u>"),
                        _ => t,
                    }
                })
                .collect();
            let _ = writeln!(out, "| {label} | {} |", shown.join(" | "));
        }
        if self.task == Task::Closed {
            out.push_str("\n`*` p < 0.05, one-sided binomial test against 50%.\n");
        }
        out
    }
}

/// 0 for cells holding the best value, 1 for the second distinct value.
/// Only marks rows with at least two scored cells.
fn rank(cells: &[Cell]) -> Vec<Option<usize>> {
    let mut vals: Vec<f64> = cells.iter().filter_map(|c| c.value).map(round1).collect();
    if vals.len() < 2 {
        return vec![None; cells.len()];
    }
    vals.sort_by(|a, b| b.total_cmp(a));
    vals.dedup();
    cells
        .iter()
        .map(|c| c.value.map(round1).and_then(|v| vals.iter().position(|x| *x == v)).filter(|r| *r < 2))
        .collect()
}

fn round1(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Per-difference accuracy with p-values, most significant first.
pub fn per_difference_markdown(rows: &[DifferenceLevelResult]) -> String {
    let mut sorted: Vec<&DifferenceLevelResult> = rows.iter().collect();
    sorted.sort_by(|a, b| a.tally.p_value.total_cmp(&b.tally.p_value).then(a.diff_key.cmp(&b.diff_key)));
    let mut out = String::from("| difference | n | correct | accuracy | p-value | significant |\n|---|---:|---:|---:|---:|:---:|\n");
    for r in sorted {
        let t = &r.tally;
        let acc = t.accuracy.map_or("-".into(), |a| format!("{:.1}", 100.0 * a));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.2e} | {} |",
            r.diff_key,
            t.n,
            t.correct,
            acc,
            t.p_value,
            if t.significant { "yes" } else { "" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::evaluator::Tally;

    fn closed(splits: &[(Split, usize, usize)]) -> EvalReport {
        let (n, c) = splits.iter().fold((0, 0), |a, s| (a.0 + s.1, a.1 + s.2));
        EvalReport {
            task: Task::Closed,
            splits: splits.iter().map(|s| s.0).collect(),
            closed: Some(ClosedEvalResult {
                overall: Tally::new(n, c),
                per_split: splits.iter().map(|s| (s.0, Tally::new(s.1, s.2))).collect::<BTreeMap<_, _>>(),
                missing: 0,
                parse_failed: 0,
            }),
            per_difference: Vec::new(),
            open: None,
        }
    }

    #[test]
    fn best_bold_second_underlined() {
        let runs = vec![
            ("a".to_string(), closed(&[(Split::Easy, 100, 62)])),
            ("b".to_string(), closed(&[(Split::Easy, 100, 58)])),
            ("c".to_string(), closed(&[(Split::Easy, 100, 50)])),
        ];
        let md = ComparisonTable::from_runs(&runs).unwrap().to_markdown();
        assert!(md.contains("| easy | **62.0*** | <u>58.0</u> | 50.0 |"), "{md}");
    }

    #[test]
    fn single_run_has_no_ranking() {
        let md = ComparisonTable::from_runs(&[("a".into(), closed(&[(Split::Easy, 10, 5)]))]).unwrap().to_markdown();
        assert!(md.contains("| easy | 50.0 |"));
    }

    #[test]
    fn mismatched_splits_error() {
        let runs = vec![
            ("a".to_string(), closed(&[(Split::Easy, 10, 5)])),
            ("b".to_string(), closed(&[(Split::Hard, 10, 5)])),
        ];
        assert!(ComparisonTable::from_runs(&runs).is_err());
        assert!(ComparisonTable::from_runs(&[]).is_err());
    }

    #[test]
    fn per_difference_table() {
        let rows = vec![
            DifferenceLevelResult {
                diff_key: "squat:1".into(),
                tally: Tally::new(12, 12),
            },
            DifferenceLevelResult {
                diff_key: "squat:0".into(),
                tally: Tally::new(10, 5),
            },
        ];
        let md = per_difference_markdown(&rows);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[2], "| squat:1 | 12 | 12 | 100.0 | 2.44e-4 | yes |");
        assert!(lines[3].starts_with("| squat:0 | 10 | 5 | 50.0 | 6.23e-1 |  |"));
    }
}
