//! Summary tables over stored runs.
//!
//! Two shapes are produced from the same in-memory [`TableReport`]:
//! per-prompt rows with mAP@0.5, and per-backend rows with mAP@[0.50:0.95],
//! mAP@0.5 and mAP@0.75 as "mean ± half-width" cells. The best mean in each
//! column is flagged; equal means are all flagged.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::harness::RunRecord;
use crate::metrics::{aggregate_runs, CiMethod, MetricsError, RunAggregate};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no run records to report")]
    NoRecords,
    #[error("group `{0}` has no successful runs")]
    EmptyGroup(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Prompt,
    Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    #[serde(rename = "map5095")]
    Map5095,
    #[serde(rename = "map50")]
    Map50,
    #[serde(rename = "map75")]
    Map75,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Map5095, Metric::Map50, Metric::Map75];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Map5095 => "mAP@[0.50:0.95]",
            Metric::Map50 => "mAP@0.5",
            Metric::Map75 => "mAP@0.75",
        }
    }

    fn key(self) -> &'static str {
        match self {
            Metric::Map5095 => "map5095",
            Metric::Map50 => "map50",
            Metric::Map75 => "map75",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCell {
    pub aggregate: RunAggregate,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    /// Prompt number or backend name.
    pub key: String,
    /// Prompt text or backend name.
    pub label: String,
    pub map5095: MetricCell,
    pub map50: MetricCell,
    pub map75: MetricCell,
    pub partial: bool,
}

impl TableRow {
    pub fn cell(&self, m: Metric) -> &MetricCell {
        match m {
            Metric::Map5095 => &self.map5095,
            Metric::Map50 => &self.map50,
            Metric::Map75 => &self.map75,
        }
    }

    fn cell_mut(&mut self, m: Metric) -> &mut MetricCell {
        match m {
            Metric::Map5095 => &mut self.map5095,
            Metric::Map50 => &mut self.map50,
            Metric::Map75 => &mut self.map75,
        }
    }

    /// The three metric cells joined by `" | "`.
    pub fn metric_cells(&self, decimals: usize) -> String {
        Metric::ALL
            .iter()
            .map(|&m| self.cell(m).aggregate.render(decimals))
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableReport {
    pub group_by: GroupBy,
    pub ci_method: CiMethod,
    pub rows: Vec<TableRow>,
}

pub const DECIMALS: usize = 3;

struct Group<'a> {
    key: String,
    label: String,
    order: (usize, usize),
    records: Vec<&'a RunRecord>,
}

pub fn table_report(
    records: &[RunRecord],
    group_by: GroupBy,
    ci: CiMethod,
) -> Result<TableReport, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoRecords);
    }
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for (pos, r) in records.iter().enumerate() {
        let (key, label, order) = match group_by {
            GroupBy::Prompt => match r.spec.prompt_number {
                Some(n) => (format!("{n}"), r.spec.prompt.clone(), (n, 0)),
                None => (
                    r.spec.prompt.clone(),
                    r.spec.prompt.clone(),
                    (usize::MAX, pos),
                ),
            },
            GroupBy::Backend => {
                let name = r.spec.backend.name().to_string();
                (name.clone(), name, (0, pos))
            }
        };
        groups
            .entry(key.clone())
            .or_insert_with(|| Group {
                key,
                label,
                order,
                records: Vec::new(),
            })
            .records
            .push(r);
    }
    let mut groups: Vec<Group> = groups.into_values().collect();
    groups.sort_by_key(|g| g.order);

    let mut rows = Vec::with_capacity(groups.len());
    for g in groups {
        let reports: Vec<_> = g
            .records
            .iter()
            .filter(|r| r.is_ok())
            .filter_map(|r| r.report.as_ref())
            .collect();
        if reports.is_empty() {
            return Err(ReportError::EmptyGroup(g.key));
        }
        let cell = |f: fn(&crate::metrics::EvalReport) -> f64| -> Result<MetricCell, ReportError> {
            let values: Vec<f64> = reports.iter().map(|r| f(r)).collect();
            Ok(MetricCell {
                aggregate: aggregate_runs(&values, ci)?,
                best: false,
            })
        };
        rows.push(TableRow {
            key: g.key,
            label: g.label,
            map5095: cell(|r| r.map5095)?,
            map50: cell(|r| r.map50)?,
            map75: cell(|r| r.map75)?,
            partial: reports.iter().any(|r| r.partial),
        });
    }
    for m in Metric::ALL {
        let best = rows
            .iter()
            .map(|r| r.cell(m).aggregate.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        for row in &mut rows {
            let cell = row.cell_mut(m);
            cell.best = cell.aggregate.mean == best;
        }
    }
    Ok(TableReport {
        group_by,
        ci_method: ci,
        rows,
    })
}

impl TableReport {
    fn columns(&self) -> &'static [Metric] {
        match self.group_by {
            GroupBy::Prompt => &[Metric::Map50],
            GroupBy::Backend => &Metric::ALL,
        }
    }

    /// True if any row has more than one run.
    pub fn has_intervals(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.map50.aggregate.ci_halfwidth.is_some())
    }

    pub fn to_text(&self) -> String {
        let mut header: Vec<String> = match self.group_by {
            GroupBy::Prompt => vec!["Prompt No.".into(), "Prompt".into()],
            GroupBy::Backend => vec!["Model".into()],
        };
        header.extend(self.columns().iter().map(|m| m.label().to_string()));
        header.push("Runs".into());

        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                let mut cells = match self.group_by {
                    GroupBy::Prompt => vec![row.key.clone(), row.label.clone()],
                    GroupBy::Backend => vec![row.label.clone()],
                };
                if row.partial {
                    cells.last_mut().unwrap().push_str(" (partial)");
                }
                for &m in self.columns() {
                    let c = row.cell(m);
                    let mut s = c.aggregate.render(DECIMALS);
                    if c.best {
                        s.push_str(" *");
                    }
                    cells.push(s);
                }
                cells.push(row.map50.aggregate.n_runs.to_string());
                cells
            })
            .collect();

        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                std::iter::once(&header[i])
                    .chain(body.iter().map(|r| &r[i]))
                    .map(|s| s.chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(
            out,
            "{}",
            widths
                .iter()
                .map(|&w| "-".repeat(w))
                .collect::<Vec<_>>()
                .join("-+-")
        );
        for r in &body {
            let _ = writeln!(out, "{}", line(r));
        }
        if self.has_intervals() {
            let method = match self.ci_method {
                CiMethod::StudentT => "Student t",
                CiMethod::Normal => "normal approximation",
            };
            let _ = writeln!(out, "mean ± 95% CI ({method}); * marks the best value");
        } else {
            let _ = writeln!(out, "* marks the best value");
        }
        if self.rows.iter().any(|r| r.partial) {
            let _ = writeln!(
                out,
                "WARNING: rows marked (partial) include runs that did not cover every image"
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let with_ci = self.has_intervals();
        let mut header = vec!["key".to_string(), "label".to_string(), "runs".to_string()];
        for m in Metric::ALL {
            header.push(m.key().to_string());
            if with_ci {
                header.push(format!("{}_ci", m.key()));
            }
            header.push(format!("{}_best", m.key()));
        }
        header.push("partial".into());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).expect("in-memory csv");
        for row in &self.rows {
            let mut rec = vec![
                row.key.clone(),
                row.label.clone(),
                row.map50.aggregate.n_runs.to_string(),
            ];
            for m in Metric::ALL {
                let c = row.cell(m);
                rec.push(format!("{:.*}", DECIMALS, c.aggregate.mean));
                if with_ci {
                    rec.push(
                        c.aggregate
                            .ci_halfwidth
                            .map(|h| format!("{h:.DECIMALS$}"))
                            .unwrap_or_default(),
                    );
                }
                rec.push(c.best.to_string());
            }
            rec.push(row.partial.to_string());
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
