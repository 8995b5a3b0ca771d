//! Experiment execution and the on-disk run store.
//!
//! A run pairs a dataset with a prompt and a backend, collects detections
//! (from the built-in mock or an adapter process), evaluates them and appends
//! a record to the store:
//!
//! ```text
//! runs/<timestamp>-<hash>/record.json
//! runs/<timestamp>-<hash>/detections.json
//! ```
//!
//! Records are never rewritten. Failed runs are stored too, without a report.

use std::collections::HashSet;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapter::{self, AdapterConfig, AdapterError, ImageOutcome, Job, RequestParams};
use crate::coco::{
    parse_ground_truth, write_detections, Detection, DetectionSet, GroundTruthDataset, IngestError,
    IngestOptions, Provenance,
};
use crate::metrics::{evaluate, EvalReport, MetricsError, ThresholdGrid};
use crate::mock::{mock_detect, InvalidMockParams, MockParams};
use crate::rng::SplitMix64;

pub const RECORD_FILE: &str = "record.json";
pub const DETECTIONS_FILE: &str = "detections.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Mock(#[from] InvalidMockParams),
    #[error("partial run: {} image(s) failed: {failed:?}", failed.len())]
    PartialRun { failed: Vec<u64> },
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("run store: {0}")]
    Store(String),
}

impl HarnessError {
    /// True for failures on the adapter side of the protocol.
    pub fn is_adapter_failure(&self) -> bool {
        matches!(
            self,
            HarnessError::Adapter(_) | HarnessError::PartialRun { .. }
        )
    }
}

/// Detector-side cutoffs forwarded to the adapter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub box_threshold: f64,
    pub text_threshold: f64,
}

impl Default for DetectorParams {
    /// The reference defaults of the public Grounding DINO release.
    fn default() -> Self {
        Self {
            box_threshold: 0.35,
            text_threshold: 0.25,
        }
    }
}

/// Evaluate on a seeded random fraction of the images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subsample {
    pub fraction: f64,
    pub seed: u64,
}

impl Subsample {
    pub fn for_run(self, run: usize) -> Self {
        Self {
            seed: self.seed.wrapping_add(run as u64),
            ..self
        }
    }

    /// Keeps `round(fraction * n)` images (at least one), chosen by a seeded
    /// partial Fisher-Yates shuffle, in their original order.
    pub fn apply(&self, gt: &GroundTruthDataset) -> GroundTruthDataset {
        let n = gt.images.len();
        let k = ((self.fraction * n as f64).round() as usize).clamp(n.min(1), n);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = SplitMix64::new(self.seed);
        for i in 0..k {
            let j = i + rng.below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        let keep: HashSet<u64> = idx[..k].iter().map(|&i| gt.images[i].id).collect();
        gt.retain_images(&keep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Built-in synthetic detector; its seed is taken from the experiment.
    Mock(MockParams),
    Adapter {
        name: String,
        command: String,
    },
}

impl BackendSpec {
    pub fn name(&self) -> &str {
        match self {
            BackendSpec::Mock(_) => "mock",
            BackendSpec::Adapter { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset_ref: PathBuf,
    pub prompt: String,
    pub prompt_number: Option<usize>,
    pub backend: BackendSpec,
    pub seed: u64,
    pub thresholds: ThresholdGrid,
    pub detector_params: DetectorParams,
    pub subsample: Option<Subsample>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let DetectorParams {
            box_threshold,
            text_threshold,
        } = self.detector_params;
        if !(0.0..=1.0).contains(&box_threshold) || !(0.0..=1.0).contains(&text_threshold) {
            return Err(HarnessError::InvalidSpec(
                "detector thresholds must lie in [0, 1]".into(),
            ));
        }
        if let Some(s) = self.subsample {
            if !(s.fraction > 0.0 && s.fraction <= 1.0) {
                return Err(HarnessError::InvalidSpec(
                    "subsample fraction must lie in (0, 1]".into(),
                ));
            }
        }
        if let BackendSpec::Mock(p) = &self.backend {
            p.validate()?;
        }
        Ok(())
    }
}

/// Execution settings that do not change what is measured.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub runs_dir: PathBuf,
    /// Directory image file names are resolved against; defaults to the
    /// ground-truth file's directory.
    pub images_root: Option<PathBuf>,
    pub allow_partial: bool,
    /// Keep only the best detection per image.
    pub top1: bool,
    pub ingest: IngestOptions,
    pub max_in_flight: usize,
    pub request_timeout: Duration,
    pub startup_timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            runs_dir: PathBuf::from("runs"),
            images_root: None,
            allow_partial: false,
            top1: false,
            ingest: IngestOptions::default(),
            max_in_flight: 4,
            request_timeout: Duration::from_secs(120),
            startup_timeout: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub created: String,
    pub spec: ExperimentSpec,
    /// Relative to the record's directory.
    pub detections: Option<PathBuf>,
    pub report: Option<EvalReport>,
    pub wall_time: f64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_images: Vec<u64>,
    #[serde(default)]
    pub top1: bool,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Append-only directory of run records.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn store_err(e: impl std::fmt::Display) -> HarnessError {
        HarnessError::Store(e.to_string())
    }

    /// Creates a fresh `<timestamp>-<hash>` directory; never reuses one.
    fn create_run_dir(
        &self,
        spec: &ExperimentSpec,
        now: &chrono::DateTime<chrono::Utc>,
    ) -> Result<(String, PathBuf), HarnessError> {
        fs::create_dir_all(&self.root).map_err(Self::store_err)?;
        let stamp = now.format("%Y%m%dT%H%M%S%.6fZ").to_string();
        loop {
            let mut hasher = Sha256::new();
            hasher.update(serde_json::to_vec(spec).map_err(Self::store_err)?);
            hasher.update(stamp.as_bytes());
            hasher.update(std::process::id().to_le_bytes());
            hasher.update(RUN_COUNTER.fetch_add(1, Ordering::Relaxed).to_le_bytes());
            let digest = hex::encode(hasher.finalize());
            let id = format!("{stamp}-{}", &digest[..12]);
            let dir = self.root.join(&id);
            match fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Self::store_err(e)),
            }
        }
    }

    fn write_record(&self, record: &RunRecord) -> Result<(), HarnessError> {
        let path = self.root.join(&record.id).join(RECORD_FILE);
        let text = serde_json::to_string_pretty(record).map_err(Self::store_err)?;
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .and_then(|mut f| std::io::Write::write_all(&mut f, text.as_bytes()))
            .map_err(Self::store_err)
    }

    /// All records, oldest first. Directories without a record are skipped.
    pub fn load_all(&self) -> Result<Vec<RunRecord>, HarnessError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Self::store_err(e)),
        };
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.join(RECORD_FILE).is_file())
            .collect();
        dirs.sort();
        dirs.iter()
            .map(|d| {
                let text = fs::read_to_string(d.join(RECORD_FILE)).map_err(Self::store_err)?;
                serde_json::from_str(&text)
                    .map_err(|e| Self::store_err(format!("{}: {e}", d.display())))
            })
            .collect()
    }

    pub fn detections_path(&self, record: &RunRecord) -> Option<PathBuf> {
        record
            .detections
            .as_ref()
            .map(|p| self.root.join(&record.id).join(p))
    }
}

fn collect_from_adapter(
    spec: &ExperimentSpec,
    command: &str,
    gt: &GroundTruthDataset,
    opts: &RunOptions,
    provenance: Provenance,
) -> Result<(DetectionSet, Vec<u64>), HarnessError> {
    let root = opts
        .images_root
        .clone()
        .or_else(|| spec.dataset_ref.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let jobs: Vec<Job> = gt
        .images
        .iter()
        .map(|im| Job {
            image_id: im.id,
            image: root.join(&im.file_name).to_string_lossy().into_owned(),
        })
        .collect();
    let config = AdapterConfig {
        command: command.to_string(),
        max_in_flight: opts.max_in_flight,
        request_timeout: opts.request_timeout,
        startup_timeout: opts.startup_timeout,
    };
    let params = RequestParams {
        prompt: spec.prompt.clone(),
        box_threshold: spec.detector_params.box_threshold,
        text_threshold: spec.detector_params.text_threshold,
        seed: spec.seed,
    };
    let outcomes = adapter::run_jobs(&config, &params, &jobs)?;

    let mut set = DetectionSet::new(provenance);
    let mut failed = Vec::new();
    // dataset order, then the adapter's order within each image
    for im in &gt.images {
        match outcomes.get(&im.id) {
            Some(ImageOutcome::Detections(boxes)) => {
                for b in boxes {
                    let bbox = if b.bbox.is_within(im.width, im.height)
                        || !opts.ingest.clip_out_of_bounds
                    {
                        Some(b.bbox)
                    } else {
                        b.bbox.clip_to(im.width, im.height)
                    };
                    if let Some(bbox) = bbox {
                        set.detections.push(Detection {
                            image_id: im.id,
                            bbox,
                            score: b.score,
                            phrase: b.phrase.clone(),
                        });
                    }
                }
            }
            Some(ImageOutcome::Failed(_)) | None => failed.push(im.id),
        }
    }
    Ok((set, failed))
}

/// Runs one experiment and appends its record to `opts.runs_dir`.
///
/// Failures after the run directory exists are recorded with
/// [`RunStatus::Failed`] before the error is returned.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunRecord, HarnessError> {
    spec.validate()?;
    let store = RunStore::new(&opts.runs_dir);
    let started = Instant::now();
    let now = chrono::Utc::now();
    let (id, dir) = store.create_run_dir(spec, &now)?;
    let mut record = RunRecord {
        id,
        created: now.to_rfc3339(),
        spec: spec.clone(),
        detections: None,
        report: None,
        wall_time: 0.0,
        status: RunStatus::Ok,
        failed_images: Vec::new(),
        top1: opts.top1,
    };

    let result = execute(spec, opts, &dir, &now, &mut record);
    record.wall_time = started.elapsed().as_secs_f64();
    match result {
        Ok(report) => {
            record.report = Some(report);
            store.write_record(&record)?;
            Ok(record)
        }
        Err(e) => {
            record.status = RunStatus::Failed {
                reason: e.to_string(),
            };
            store.write_record(&record)?;
            Err(e)
        }
    }
}

fn execute(
    spec: &ExperimentSpec,
    opts: &RunOptions,
    dir: &Path,
    now: &chrono::DateTime<chrono::Utc>,
    record: &mut RunRecord,
) -> Result<EvalReport, HarnessError> {
    let full = parse_ground_truth(&spec.dataset_ref, &opts.ingest)?.dataset;
    let gt = match spec.subsample {
        Some(s) => s.apply(&full),
        None => full,
    };
    let provenance = Provenance {
        backend: spec.backend.name().to_string(),
        prompt: spec.prompt.clone(),
        seed: spec.seed,
        timestamp: now.to_rfc3339(),
        box_threshold: Some(spec.detector_params.box_threshold),
        text_threshold: Some(spec.detector_params.text_threshold),
    };
    let (mut detections, failed) = match &spec.backend {
        BackendSpec::Mock(p) => {
            let params = MockParams {
                seed: spec.seed,
                ..*p
            };
            (mock_detect(&gt, &params, provenance), Vec::new())
        }
        BackendSpec::Adapter { command, .. } => {
            collect_from_adapter(spec, command, &gt, opts, provenance)?
        }
    };
    if opts.top1 {
        detections = detections.top1_per_image();
    }
    write_detections(&detections, &dir.join(DETECTIONS_FILE)).map_err(RunStore::store_err)?;
    record.detections = Some(PathBuf::from(DETECTIONS_FILE));
    record.failed_images = failed.clone();

    if !failed.is_empty() && !opts.allow_partial {
        return Err(HarnessError::PartialRun { failed });
    }
    let partial = !failed.is_empty();
    let gt = if partial {
        let failed: HashSet<u64> = failed.into_iter().collect();
        let keep: HashSet<u64> = gt
            .images
            .iter()
            .map(|im| im.id)
            .filter(|id| !failed.contains(id))
            .collect();
        gt.retain_images(&keep)
    } else {
        gt
    };
    let mut report = evaluate(&gt, &detections, &spec.thresholds)?;
    report.partial = partial;
    Ok(report)
}

/// Runs specs in order, stopping at the first failure.
pub fn run_all(
    specs: &[ExperimentSpec],
    opts: &RunOptions,
) -> Result<Vec<RunRecord>, HarnessError> {
    specs.iter().map(|s| run_experiment(s, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::synthetic_dataset;

    fn write_gt(dir: &Path, n: usize) -> PathBuf {
        let path = dir.join("gt.json");
        fs::write(&path, synthetic_dataset(n, 2, 1).to_coco_json()).unwrap();
        path
    }

    fn mock_spec(gt: PathBuf, jitter: f64, seed: u64) -> ExperimentSpec {
        ExperimentSpec {
            dataset_ref: gt,
            prompt: "cattle muzzle".into(),
            prompt_number: Some(1),
            backend: BackendSpec::Mock(MockParams {
                jitter_frac: jitter,
                ..Default::default()
            }),
            seed,
            thresholds: ThresholdGrid::coco(),
            detector_params: DetectorParams::default(),
            subsample: None,
        }
    }

    #[test]
    fn mock_run_is_perfect_without_jitter() {
        let dir = tempfile::tempdir().unwrap();
        let gt = write_gt(dir.path(), 6);
        let opts = RunOptions {
            runs_dir: dir.path().join("runs"),
            ..Default::default()
        };
        let rec = run_experiment(&mock_spec(gt, 0.0, 1), &opts).unwrap();
        assert!(rec.is_ok());
        assert_eq!(rec.report.as_ref().unwrap().map50, 1.0);
        let store = RunStore::new(&opts.runs_dir);
        let loaded = store.load_all().unwrap();
        assert_eq!(loaded, vec![rec.clone()]);
        let dets = crate::coco::parse_detections(&store.detections_path(&rec).unwrap()).unwrap();
        assert_eq!(dets.provenance.backend, "mock");
        assert_eq!(dets.provenance.box_threshold, Some(0.35));
    }

    #[test]
    fn rerun_appends() {
        let dir = tempfile::tempdir().unwrap();
        let gt = write_gt(dir.path(), 3);
        let opts = RunOptions {
            runs_dir: dir.path().join("runs"),
            ..Default::default()
        };
        let spec = mock_spec(gt, 0.1, 5);
        let a = run_experiment(&spec, &opts).unwrap();
        let b = run_experiment(&spec, &opts).unwrap();
        assert_ne!(a.id, b.id);
        assert_eq!(a.report, b.report);
        assert_eq!(RunStore::new(&opts.runs_dir).load_all().unwrap().len(), 2);
    }

    #[test]
    fn missing_dataset_is_recorded_as_failed() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            runs_dir: dir.path().join("runs"),
            ..Default::default()
        };
        let err =
            run_experiment(&mock_spec(dir.path().join("nope.json"), 0.0, 1), &opts).unwrap_err();
        assert!(matches!(err, HarnessError::Ingest(IngestError::Io { .. })));
        let recs = RunStore::new(&opts.runs_dir).load_all().unwrap();
        assert_eq!(recs.len(), 1);
        assert!(!recs[0].is_ok());
        assert!(recs[0].report.is_none());
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = mock_spec(PathBuf::from("gt.json"), 0.0, 1);
        spec.detector_params.box_threshold = 1.5;
        assert!(matches!(spec.validate(), Err(HarnessError::InvalidSpec(_))));
        let mut spec = mock_spec(PathBuf::from("gt.json"), 0.0, 1);
        spec.subsample = Some(Subsample {
            fraction: 0.0,
            seed: 1,
        });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn subsample_is_seeded() {
        let gt = synthetic_dataset(20, 2, 3);
        let s = Subsample {
            fraction: 0.5,
            seed: 9,
        };
        let a = s.apply(&gt);
        assert_eq!(a.images.len(), 10);
        assert_eq!(a, s.apply(&gt));
        assert_ne!(a.images, s.for_run(1).apply(&gt).images);
        assert!(a
            .annotations
            .iter()
            .all(|ann| a.image(ann.image_id).is_some()));
        let tiny = Subsample {
            fraction: 0.01,
            seed: 1,
        }
        .apply(&gt);
        assert_eq!(tiny.images.len(), 1);
    }
}
