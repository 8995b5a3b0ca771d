//! Few-shot learning curves against a zero-shot baseline.
//!
//! A learning curve records mAP@0.5 of a fine-tuned detector at several
//! training-set sizes. The crossover point is the smallest size at which it
//! meets or beats the zero-shot score.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("cannot read {0}")]
    Io(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate point ({model}, {dataset}, {samples})")]
    DuplicatePoint {
        model: String,
        dataset: String,
        samples: u32,
    },
    #[error("no zero-shot score given for dataset `{0}`")]
    MissingTarget(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurve {
    pub model: String,
    pub dataset: String,
    /// training samples -> mAP@0.5
    pub points: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrossoverResult {
    /// First reached at `samples`; the crossover lies in `(lower, samples]`.
    Reached {
        samples: u32,
        lower: u32,
    },
    NotReached,
}

impl CrossoverResult {
    pub fn samples(&self) -> Option<u32> {
        match self {
            CrossoverResult::Reached { samples, .. } => Some(*samples),
            CrossoverResult::NotReached => None,
        }
    }
}

pub fn crossover(curve: &LearningCurve, zero_shot_map50: f64) -> CrossoverResult {
    let mut lower = 0;
    for (&samples, &map50) in &curve.points {
        if map50 >= zero_shot_map50 {
            return CrossoverResult::Reached { samples, lower };
        }
        lower = samples;
    }
    CrossoverResult::NotReached
}

pub const CSV_HEADER: [&str; 4] = ["model", "dataset", "samples", "map50"];

/// Reads `model,dataset,samples,map50` rows, grouping them into curves in
/// order of first appearance.
pub fn parse_learning_curves<R: Read>(reader: R) -> Result<Vec<LearningCurve>, CurveError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CurveError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(CurveError::MalformedRow {
            line: 1,
            reason: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut curves: Vec<LearningCurve> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CurveError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| CurveError::MalformedRow { line, reason };
        let (model, dataset) = (row[0].to_string(), row[1].to_string());
        if model.is_empty() || dataset.is_empty() {
            return Err(bad("empty model or dataset".into()));
        }
        let samples: u32 = row[2]
            .parse()
            .map_err(|_| bad(format!("bad sample count `{}`", &row[2])))?;
        if samples == 0 {
            return Err(bad("sample count must be positive".into()));
        }
        let map50: f64 = row[3]
            .parse()
            .map_err(|_| bad(format!("bad mAP value `{}`", &row[3])))?;
        if !(0.0..=1.0).contains(&map50) {
            return Err(bad(format!("mAP {map50} outside [0, 1]")));
        }
        let slot = *index
            .entry((model.clone(), dataset.clone()))
            .or_insert_with(|| {
                curves.push(LearningCurve {
                    model: model.clone(),
                    dataset: dataset.clone(),
                    points: BTreeMap::new(),
                });
                curves.len() - 1
            });
        if curves[slot].points.insert(samples, map50).is_some() {
            return Err(CurveError::DuplicatePoint {
                model,
                dataset,
                samples,
            });
        }
    }
    Ok(curves)
}

pub fn import_learning_curves(path: &Path) -> Result<Vec<LearningCurve>, CurveError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CurveError::Io(format!("{}: {e}", path.display())))?;
    parse_learning_curves(file)
}

/// Parses `NAME=score,NAME=score`.
pub fn parse_targets(spec: &str) -> Result<BTreeMap<String, f64>, String> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (name, value) = pair
                .split_once('=')
                .ok_or_else(|| format!("expected NAME=score, got `{pair}`"))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| format!("bad score in `{pair}`"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("score in `{pair}` outside [0, 1]"));
            }
            Ok((name.trim().to_string(), v))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossoverRow {
    pub model: String,
    pub dataset: String,
    pub zero_shot_map50: f64,
    pub result: CrossoverResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossoverTable {
    pub rows: Vec<CrossoverRow>,
}

pub fn crossover_table(
    curves: &[LearningCurve],
    targets: &BTreeMap<String, f64>,
) -> Result<CrossoverTable, CurveError> {
    let rows = curves
        .iter()
        .map(|c| {
            let &target = targets
                .get(&c.dataset)
                .ok_or_else(|| CurveError::MissingTarget(c.dataset.clone()))?;
            Ok(CrossoverRow {
                model: c.model.clone(),
                dataset: c.dataset.clone(),
                zero_shot_map50: target,
                result: crossover(c, target),
            })
        })
        .collect::<Result<Vec<_>, CurveError>>()?;
    Ok(CrossoverTable { rows })
}

impl CrossoverRow {
    fn cells(&self) -> [String; 5] {
        let (samples, interval) = match self.result {
            CrossoverResult::Reached { samples, lower } => {
                (samples.to_string(), format!("({lower}, {samples}]"))
            }
            CrossoverResult::NotReached => ("not reached".to_string(), "-".to_string()),
        };
        [
            self.model.clone(),
            self.dataset.clone(),
            format!("{:.3}", self.zero_shot_map50),
            samples,
            interval,
        ]
    }
}

impl CrossoverTable {
    const HEADER: [&'static str; 5] = [
        "Model",
        "Dataset",
        "Zero-shot mAP@0.5",
        "Crossover samples",
        "Interval",
    ];

    pub fn to_text(&self) -> String {
        let rows: Vec<[String; 5]> = self.rows.iter().map(CrossoverRow::cells).collect();
        let widths: Vec<usize> = (0..5)
            .map(|i| {
                rows.iter()
                    .map(|r| r[i].chars().count())
                    .chain(std::iter::once(Self::HEADER[i].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let fmt_row = |cells: Vec<&str>| {
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
        let _ = writeln!(out, "{}", fmt_row(Self::HEADER.to_vec()));
        let _ = writeln!(
            out,
            "{}",
            widths
                .iter()
                .map(|&w| "-".repeat(w))
                .collect::<Vec<_>>()
                .join("-+-")
        );
        for r in &rows {
            let _ = writeln!(out, "{}", fmt_row(r.iter().map(String::as_str).collect()));
        }
        let reached: Vec<u32> = self
            .rows
            .iter()
            .filter_map(|r| r.result.samples())
            .collect();
        if let (Some(lo), Some(hi)) = (reached.iter().min(), reached.iter().max()) {
            let _ = writeln!(
                out,
                "{} of {} curves reach the zero-shot score, at {lo} to {hi} training samples",
                reached.len(),
                self.rows.len()
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "dataset",
            "zero_shot_map50",
            "crossover_samples",
            "interval_lower",
        ])
        .expect("in-memory csv");
        for r in &self.rows {
            let (s, lo) = match r.result {
                CrossoverResult::Reached { samples, lower } => {
                    (samples.to_string(), lower.to_string())
                }
                CrossoverResult::NotReached => (String::new(), String::new()),
            };
            w.write_record([
                r.model.clone(),
                r.dataset.clone(),
                r.zero_shot_map50.to_string(),
                s,
                lo,
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}
