#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};

use zsd_bench::mock::synthetic_dataset;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Shell command launching the fake adapter with extra arguments.
pub fn fake_adapter(gt: &Path, extra: &str) -> String {
    format!(
        "python3 {} --gt {} {extra}",
        quote(&fixture("fake_adapter.py")),
        quote(gt)
    )
}

/// Writes a synthetic ground-truth file and returns its path.
pub fn write_gt(dir: &Path, n_images: usize, seed: u64) -> PathBuf {
    let path = dir.join("gt.json");
    std::fs::write(&path, synthetic_dataset(n_images, 3, seed).to_coco_json()).unwrap();
    path
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = zsd_bench::cli::dispatch(
        std::iter::once("zsd-bench").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}
