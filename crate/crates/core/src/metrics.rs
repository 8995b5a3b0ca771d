//! Precision-recall, 101-point interpolated AP, multi-threshold mAP and
//! run-to-run aggregation.
//!
//! AP here is the COCO flavour: precision is interpolated (max precision at any
//! recall at or beyond the level) and sampled at recall levels `k / 100` for
//! `k = 0..=100`. With a single category, mAP and AP coincide; the reports keep
//! the "mAP" label.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{DetectionSet, GroundTruthDataset};
use crate::matcher::{match_image, MatchRecord};
use crate::stats::{student_t_quantile, Z_975};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no ground-truth boxes; recall is undefined")]
    NoGroundTruth,
    #[error("IoU thresholds must be strictly increasing values in (0, 1]")]
    InvalidGrid,
    #[error("evaluation needs exactly one active category, found {0:?}")]
    MultipleCategories(Vec<u64>),
    #[error("detection refers to image {0}, which is not in the ground truth")]
    UnknownImage(u64),
    #[error("no values to aggregate")]
    EmptyInput,
    #[error("non-finite value in aggregation input")]
    NonFinite,
}

/// Number of recall levels sampled by [`average_precision`].
pub const RECALL_LEVELS: usize = 101;

/// IoU thresholds at which AP is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid(Vec<f64>);

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self, MetricsError> {
        let in_range = thresholds.iter().all(|&t| t > 0.0 && t <= 1.0);
        let increasing = thresholds.windows(2).all(|w| w[0] < w[1]);
        if thresholds.is_empty() || !in_range || !increasing {
            return Err(MetricsError::InvalidGrid);
        }
        Ok(Self(thresholds))
    }

    /// 0.50, 0.55, ..., 0.95.
    pub fn coco() -> Self {
        Self((0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect())
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.0
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::coco()
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = MetricsError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(g: ThresholdGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Pools per-image records and walks them in descending score order.
///
/// Records are pooled in the order given and the global sort is stable, so
/// equal scores keep that order.
pub fn pr_curve(records: &[MatchRecord]) -> Result<Vec<PrPoint>, MetricsError> {
    let total_gt: usize = records.iter().map(|r| r.total_gt_count).sum();
    if total_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut pooled: Vec<(f64, bool)> = records
        .iter()
        .flat_map(|r| r.entries.iter().map(|e| (e.score, e.is_tp)))
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (mut tp, mut fp) = (0usize, 0usize);
    Ok(pooled
        .into_iter()
        .map(|(_, is_tp)| {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                recall: tp as f64 / total_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect())
}

/// 101-point interpolated average precision.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    // Suffix maximum makes precision non-increasing in recall.
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut i = 0;
    for k in 0..RECALL_LEVELS {
        let level = k as f64 / 100.0;
        // recall is non-decreasing along the curve
        while i < curve.len() && curve[i].recall < level {
            i += 1;
        }
        if i == curve.len() {
            break;
        }
        sum += envelope[i];
    }
    sum / RECALL_LEVELS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub images: usize,
    pub gts: usize,
    pub detections: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_by_threshold: Vec<ThresholdAp>,
    pub map50: f64,
    pub map75: f64,
    pub map5095: f64,
    pub counts: EvalCounts,
    /// Set when the run behind this report did not cover every image.
    #[serde(default)]
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.ap_by_threshold
            .iter()
            .find(|t| t.threshold == threshold)
            .map(|t| t.ap)
    }

    pub const CSV_HEADER: &'static str = "map5095,map50,map75,images,gts,detections,partial";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.map5095,
            self.map50,
            self.map75,
            self.counts.images,
            self.counts.gts,
            self.counts.detections,
            self.partial
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    /// Fail with [`MetricsError::NoGroundTruth`] instead of scoring AP as 0.
    pub strict: bool,
}

pub fn evaluate(
    gt: &GroundTruthDataset,
    det: &DetectionSet,
    grid: &ThresholdGrid,
) -> Result<EvalReport, MetricsError> {
    evaluate_with(gt, det, grid, EvalOptions::default())
}

pub fn evaluate_with(
    gt: &GroundTruthDataset,
    det: &DetectionSet,
    grid: &ThresholdGrid,
    opts: EvalOptions,
) -> Result<EvalReport, MetricsError> {
    let active = gt.active_categories();
    if active.len() > 1 {
        return Err(MetricsError::MultipleCategories(active));
    }
    let gts_by_image = gt.annotations_by_image();
    let mut dets_by_image: BTreeMap<u64, Vec<&crate::coco::Detection>> = BTreeMap::new();
    for d in &det.detections {
        if !gts_by_image.contains_key(&d.image_id) {
            return Err(MetricsError::UnknownImage(d.image_id));
        }
        dets_by_image.entry(d.image_id).or_default().push(d);
    }

    let mut warnings = Vec::new();
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut ap_at = |t: f64| -> Result<f64, MetricsError> {
        if let Some(&ap) = cache.get(&t.to_bits()) {
            return Ok(ap);
        }
        // images in ascending id order, so pooling does not depend on input order
        let records: Vec<MatchRecord> = gts_by_image
            .iter()
            .map(|(id, gts)| {
                let dets = dets_by_image.get(id).map(Vec::as_slice).unwrap_or(&[]);
                match_image(dets, gts, t)
            })
            .collect();
        let ap = match pr_curve(&records) {
            Ok(curve) => average_precision(&curve),
            Err(MetricsError::NoGroundTruth) if !opts.strict => {
                if warnings.is_empty() {
                    warnings.push("no ground-truth boxes; AP reported as 0".to_string());
                }
                0.0
            }
            Err(e) => return Err(e),
        };
        cache.insert(t.to_bits(), ap);
        Ok(ap)
    };

    let ap_by_threshold = grid
        .thresholds()
        .iter()
        .map(|&threshold| {
            Ok(ThresholdAp {
                threshold,
                ap: ap_at(threshold)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let map50 = ap_at(0.5)?;
    let map75 = ap_at(0.75)?;
    let coco = ThresholdGrid::coco();
    let mut total = 0.0;
    for &t in coco.thresholds() {
        total += ap_at(t)?;
    }
    let map5095 = total / coco.thresholds().len() as f64;

    Ok(EvalReport {
        ap_by_threshold,
        map50,
        map75,
        map5095,
        counts: EvalCounts {
            images: gt.images.len(),
            gts: gt.annotations.len(),
            detections: det.detections.len(),
        },
        partial: false,
        warnings,
    })
}

/// How the 95% interval half-width is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// `t(0.975, n-1) * s / sqrt(n)`.
    #[default]
    StudentT,
    /// `1.96 * s / sqrt(n)`, for sensitivity checks.
    Normal,
}

/// Mean and 95% confidence half-width of one metric over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: f64,
    /// Absent for a single run.
    pub ci_halfwidth: Option<f64>,
    pub n_runs: usize,
    pub values: Vec<f64>,
}

impl RunAggregate {
    /// `"0.768 ± 0.025"`, or just the mean when there is no interval.
    pub fn render(&self, decimals: usize) -> String {
        match self.ci_halfwidth {
            Some(hw) => format!("{:.*} ± {:.*}", decimals, self.mean, decimals, hw),
            None => format!("{:.*}", decimals, self.mean),
        }
    }
}

pub fn aggregate_runs(values: &[f64], method: CiMethod) -> Result<RunAggregate, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci_halfwidth = (n >= 2).then(|| {
        if values.iter().all(|&v| v == values[0]) {
            return 0.0;
        }
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        let crit = match method {
            CiMethod::StudentT => student_t_quantile(0.975, (n - 1) as f64),
            CiMethod::Normal => Z_975,
        };
        crit * sd / (n as f64).sqrt()
    });
    Ok(RunAggregate {
        mean,
        ci_halfwidth,
        n_runs: n,
        values: values.to_vec(),
    })
}
