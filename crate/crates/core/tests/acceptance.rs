//! Acceptance criteria. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line, captured or not.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::oracle;
use common::{data, fake_adapter, write_gt};
use zsd_bench::adapter::AdapterError;
use zsd_bench::cascade::{parse_cascade_text, REFERENCE_FRAGMENTS};
use zsd_bench::coco::DetectionSet;
use zsd_bench::crossover::{crossover, import_learning_curves, CrossoverResult};
use zsd_bench::harness::{
    run_experiment, BackendSpec, DetectorParams, ExperimentSpec, HarnessError, RunOptions,
    RunStatus, RunStore,
};
use zsd_bench::metrics::{aggregate_runs, evaluate, CiMethod, RunAggregate, ThresholdGrid};
use zsd_bench::mock::{mock_detect, synthetic_dataset, MockParams};
use zsd_bench::report::{MetricCell, TableRow};
use zsd_bench::rng::SplitMix64;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn metrics_oracle_equivalence() -> Outcome {
    const INSTANCES: u64 = 1500;
    let started = Instant::now();
    let grid = ThresholdGrid::coco();
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for seed in 0..INSTANCES {
        let mut rng = SplitMix64::new(seed);
        let (gt, det) = oracle::random_instance(&mut rng, 6, 5, 8);
        let report = evaluate(&gt, &det, &grid).map_err(|e| format!("seed {seed}: {e}"))?;
        let mut expected = Vec::new();
        for t in grid.thresholds() {
            match oracle::ap(&gt, &det, *t) {
                Some(ap) => expected.push(ap),
                None => {
                    check(report.map50 == 0.0 && !report.warnings.is_empty(), || {
                        format!("seed {seed}: empty ground truth not scored 0 with a warning")
                    })?;
                    break;
                }
            }
        }
        if expected.is_empty() {
            continue;
        }
        for (t, want) in grid.thresholds().iter().zip(&expected) {
            let got = report
                .ap_at(*t)
                .ok_or_else(|| format!("seed {seed}: no AP at {t}"))?;
            worst = worst.max((got - want).abs());
            check((got - want).abs() <= 1e-9, || {
                format!("seed {seed}: AP@{t} = {got}, oracle {want}")
            })?;
        }
        let mean = expected.iter().sum::<f64>() / expected.len() as f64;
        for (name, got, want) in [
            ("map50", report.map50, expected[0]),
            ("map75", report.map75, expected[5]),
            ("map5095", report.map5095, mean),
        ] {
            worst = worst.max((got - want).abs());
            check((got - want).abs() <= 1e-9, || {
                format!("seed {seed}: {name} = {got}, oracle {want}")
            })?;
        }
        compared += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    check(compared >= 1000, || {
        format!("only {compared} instances had ground truth")
    })?;
    check(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{compared} instances, max |diff| {worst:.1e}, {secs:.1} s"
    ))
}

fn perfect_detector_identity() -> Outcome {
    let identity = MockParams::default();
    let mut datasets: Vec<_> = (0..20)
        .map(|s| synthetic_dataset(1 + s as usize * 3, 4, s))
        .collect();
    // overlapping, duplicated and touching boxes too
    let mut rng = SplitMix64::new(99);
    while datasets.len() < 200 {
        let (gt, _) = oracle::random_instance(&mut rng, 6, 5, 0);
        if !gt.annotations.is_empty() {
            datasets.push(gt);
        }
    }
    for (i, gt) in datasets.iter().enumerate() {
        let det = mock_detect(gt, &identity, oracle::provenance());
        let r = evaluate(gt, &det, &ThresholdGrid::coco()).map_err(|e| e.to_string())?;
        check(r.map50 == 1.0 && r.map75 == 1.0 && r.map5095 == 1.0, || {
            format!("dataset {i}: {} / {} / {}", r.map50, r.map75, r.map5095)
        })?;
    }
    Ok(format!(
        "{} datasets, all metrics exactly 1.0",
        datasets.len()
    ))
}

fn cascade_byte_exactness() -> Outcome {
    let published = [
        "cattle muzzle",
        "cattle muzzle, the nose and mouth of a cattle",
        "cattle muzzle, the nose and mouth of a cattle, the lower front part of a cattle's face",
        "cattle muzzle, the nose and mouth of a cattle, the lower front part of a cattle's face, the snout of a cattle",
        "cattle muzzle, the nose and mouth of a cattle, the lower front part of a cattle's face, the snout of a cattle, the area around the nostrils and lips of a cattle",
        "cattle muzzle, the nose and mouth of a cattle, the lower front part of a cattle's face, the snout of a cattle, the area around the nostrils and lips of a cattle, the fleshy soft rounded part of a cattle's face used for eating and smelling",
        "cattle muzzle, the nose and mouth of a cattle, the lower front part of a cattle's face, the snout of a cattle, the area around the nostrils and lips of a cattle, the fleshy soft rounded part of a cattle's face used for eating and smelling, cattle's face with visible nasal cavities",
    ];
    let from_file = std::fs::read_to_string(data("prompts.txt")).map_err(|e| e.to_string())?;
    let cascade = parse_cascade_text(&from_file).map_err(|e| e.to_string())?;
    check(cascade.phrases() == REFERENCE_FRAGMENTS, || {
        "prompts.txt differs from the built-in fragments".into()
    })?;
    check(cascade.len() == 7, || format!("{} prompts", cascade.len()))?;
    for (i, want) in published.iter().enumerate() {
        let got = &cascade.prompts()[i];
        check(got.as_bytes() == want.as_bytes(), || {
            format!("prompt {}: {got:?}", i + 1)
        })?;
    }
    check(
        cascade
            .prompt(5)
            .is_some_and(|p| p.ends_with("the area around the nostrils and lips of a cattle")),
        || "prompt 5 ending".into(),
    )?;
    Ok("7 of 7 prompts identical".into())
}

fn crossover_reproduction() -> Outcome {
    let curves = import_learning_curves(&data("learning_curves.csv")).map_err(|e| e.to_string())?;
    check(curves.len() == 12, || format!("{} curves", curves.len()))?;
    let target = |ds: &str| match ds {
        "CSU" => Ok(0.753),
        "UNE" => Ok(0.789),
        "NUCES" => Ok(0.758),
        other => Err(format!("unexpected dataset {other}")),
    };
    let mut summary = Vec::new();
    for c in &curves {
        check(c.points.len() == 5, || {
            format!("{}/{}: {} points", c.model, c.dataset, c.points.len())
        })?;
        let got = crossover(c, target(&c.dataset)?).samples();
        let want = if c.model == "YOLOv7" && c.dataset == "CSU" {
            40
        } else {
            80
        };
        check(got == Some(want), || {
            format!("{}/{}: {got:?}, expected {want}", c.model, c.dataset)
        })?;
        summary.push(got.unwrap());
    }
    let reached_40 = summary.iter().filter(|&&s| s == 40).count();
    check(
        matches!(crossover(&curves[0], 2.0), CrossoverResult::NotReached),
        || "unreachable target reported as reached".into(),
    )?;
    Ok(format!(
        "12 curves: {reached_40} at 40, {} at 80",
        12 - reached_40
    ))
}

fn ci_formula() -> Outcome {
    // t(0.975, 4), computed to 30 digits with mpmath
    const T_975_4: f64 = 2.776445105197794;
    let values = [0.74, 0.76, 0.77, 0.75, 0.78];
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let closed = T_975_4 * sd / n.sqrt();
    let agg = aggregate_runs(&values, CiMethod::StudentT).map_err(|e| e.to_string())?;
    let hw = agg.ci_halfwidth.ok_or("no interval for five runs")?;
    check((agg.mean - 0.76).abs() <= 1e-12, || {
        format!("mean {}", agg.mean)
    })?;
    check((hw - closed).abs() <= 1e-12, || {
        format!("half-width {hw}, closed form {closed}")
    })?;
    check(agg.render(4) == "0.7600 ± 0.0196", || agg.render(4))?;
    let flat = aggregate_runs(&[0.5; 5], CiMethod::StudentT).map_err(|e| e.to_string())?;
    check(flat.ci_halfwidth == Some(0.0), || {
        format!("zero variance gave {:?}", flat.ci_halfwidth)
    })?;
    let flat = aggregate_runs(&[0.1; 3], CiMethod::StudentT).map_err(|e| e.to_string())?;
    check(flat.ci_halfwidth == Some(0.0), || {
        format!("zero variance gave {:?}", flat.ci_halfwidth)
    })?;
    Ok(format!(
        "{} (|diff| {:.1e}); zero variance gives exactly 0",
        agg.render(4),
        (hw - closed).abs()
    ))
}

fn ci_row_rendering() -> Outcome {
    let cell = |mean: f64, hw: f64| MetricCell {
        aggregate: RunAggregate {
            mean,
            ci_halfwidth: Some(hw),
            n_runs: 5,
            values: vec![],
        },
        best: true,
    };
    let row = TableRow {
        key: "Grounding DINO".into(),
        label: "Grounding DINO".into(),
        map5095: cell(0.340, 0.021),
        map50: cell(0.768, 0.025),
        map75: cell(0.180, 0.021),
        partial: false,
    };
    let got = row.metric_cells(3);
    let want = "0.340 ± 0.021 | 0.768 ± 0.025 | 0.180 ± 0.021";
    check(got == want, || format!("{got:?}"))?;
    Ok(got)
}

fn adapter_spec(gt: &Path, mode: &str) -> ExperimentSpec {
    ExperimentSpec {
        dataset_ref: gt.to_path_buf(),
        prompt: "cattle muzzle".into(),
        prompt_number: Some(1),
        backend: BackendSpec::Adapter {
            name: "fake".into(),
            command: fake_adapter(gt, &format!("--mode {mode}")),
        },
        seed: 0,
        thresholds: ThresholdGrid::coco(),
        detector_params: DetectorParams::default(),
        subsample: None,
    }
}

fn protocol_robustness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gt = write_gt(dir.path(), 8, 5);
    let opts = RunOptions {
        runs_dir: dir.path().join("runs"),
        ..Default::default()
    };
    for mode in ["truncated", "duplicate", "missing"] {
        match run_experiment(&adapter_spec(&gt, mode), &opts) {
            Err(
                e @ HarnessError::Adapter(AdapterError::ProtocolError {
                    request_id: Some(2),
                    ..
                }),
            ) => {
                check(e.is_adapter_failure(), || {
                    format!("{mode}: not classed as adapter failure")
                })?;
            }
            other => return Err(format!("{mode}: {other:?}")),
        }
    }
    let records = RunStore::new(&opts.runs_dir)
        .load_all()
        .map_err(|e| e.to_string())?;
    check(records.len() == 3, || format!("{} records", records.len()))?;
    for r in &records {
        check(
            matches!(r.status, RunStatus::Failed { .. }) && r.report.is_none(),
            || format!("record {} carries a report", r.id),
        )?;
    }
    let ok = run_experiment(&adapter_spec(&gt, "shuffle"), &opts).map_err(|e| e.to_string())?;
    let r = ok.report.ok_or("no report")?;
    check(r.map5095 == 1.0, || {
        format!("echo run after failures: {}", r.map5095)
    })?;
    Ok("truncated, duplicate and missing ids rejected as protocol errors; failed runs stored without metrics".into())
}

fn statistical_degradation() -> Outcome {
    const SEEDS: u64 = 40;
    let started = Instant::now();
    let jitters = [0.0, 0.05, 0.1, 0.2, 0.4];
    let mut means = Vec::new();
    for &jitter_frac in &jitters {
        let mut sum = 0.0;
        for seed in 0..SEEDS {
            let gt = synthetic_dataset(20, 3, 1000 + seed);
            let p = MockParams {
                jitter_frac,
                seed,
                ..Default::default()
            };
            let det: DetectionSet = mock_detect(&gt, &p, oracle::provenance());
            sum += evaluate(&gt, &det, &ThresholdGrid::new(vec![0.5]).unwrap())
                .map_err(|e| e.to_string())?
                .map50;
        }
        means.push(sum / SEEDS as f64);
    }
    let secs = started.elapsed().as_secs_f64();
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    for w in means.windows(2) {
        check(w[1] <= w[0], || format!("means {shown:?} increase"))?;
    }
    check(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{SEEDS} seeds, mean mAP@0.5 {}",
        shown.join(" >= ")
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("metrics oracle equivalence", metrics_oracle_equivalence),
        ("perfect-detector identity", perfect_detector_identity),
        ("cascade byte-exactness", cascade_byte_exactness),
        ("crossover reproduction", crossover_reproduction),
        ("confidence interval formula", ci_formula),
        ("mean ± CI row rendering", ci_row_rendering),
        ("protocol robustness", protocol_robustness),
        ("statistical degradation", statistical_degradation),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
