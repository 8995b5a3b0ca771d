//! Incremental prompt cascades and the sweep plans built from them.
//!
//! A cascade turns an ordered list of descriptive fragments into prompts
//! where each one repeats the previous prompt and appends one more fragment:
//! prompt 1 is fragment 1, prompt k is `prompt k-1 + ", " + fragment k`.
//! Prompts are opaque text here; fragments are passed through verbatim.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::harness::{BackendSpec, DetectorParams, ExperimentSpec};
use crate::metrics::ThresholdGrid;

pub const DEFAULT_SEPARATOR: &str = ", ";

/// The seven-step muzzle cascade used as the reference sweep.
pub const REFERENCE_FRAGMENTS: [&str; 7] = [
    "cattle muzzle",
    "the nose and mouth of a cattle",
    "the lower front part of a cattle's face",
    "the snout of a cattle",
    "the area around the nostrils and lips of a cattle",
    "the fleshy soft rounded part of a cattle's face used for eating and smelling",
    "cattle's face with visible nasal cavities",
];

/// 1-based number of the best-scoring prompt of the reference cascade.
pub const REFERENCE_BEST_PROMPT: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CascadeError {
    #[error("cascade needs at least one fragment")]
    EmptyPhraseList,
    #[error("fragment {0} is empty or ends with the separator")]
    EmptyFragment(usize),
    #[error("cannot read cascade file {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCascade {
    phrases: Vec<String>,
    prompts: Vec<String>,
    best: Option<usize>,
}

impl PromptCascade {
    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    /// 1-based prompt number.
    pub fn prompt(&self, number: usize) -> Option<&str> {
        number
            .checked_sub(1)
            .and_then(|i| self.prompts.get(i))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// The prompt number marked as best, if any.
    pub fn best(&self) -> Option<usize> {
        self.best
    }

    pub fn with_best(mut self, number: usize) -> Self {
        self.best = (1..=self.prompts.len()).contains(&number).then_some(number);
        self
    }

    pub fn reference() -> Self {
        build_cascade(&REFERENCE_FRAGMENTS)
            .expect("reference fragments are valid")
            .with_best(REFERENCE_BEST_PROMPT)
    }
}

pub fn build_cascade<S: AsRef<str>>(phrases: &[S]) -> Result<PromptCascade, CascadeError> {
    build_cascade_with_separator(phrases, DEFAULT_SEPARATOR)
}

pub fn build_cascade_with_separator<S: AsRef<str>>(
    phrases: &[S],
    separator: &str,
) -> Result<PromptCascade, CascadeError> {
    if phrases.is_empty() {
        return Err(CascadeError::EmptyPhraseList);
    }
    let trimmed_sep = separator.trim();
    let mut prompts: Vec<String> = Vec::with_capacity(phrases.len());
    for (i, phrase) in phrases.iter().enumerate() {
        let phrase = phrase.as_ref();
        let dangling = !trimmed_sep.is_empty() && phrase.trim_end().ends_with(trimmed_sep);
        if phrase.trim().is_empty() || dangling {
            return Err(CascadeError::EmptyFragment(i + 1));
        }
        let prompt = match prompts.last() {
            Some(prev) => format!("{prev}{separator}{phrase}"),
            None => phrase.to_string(),
        };
        prompts.push(prompt);
    }
    Ok(PromptCascade {
        phrases: phrases.iter().map(|p| p.as_ref().to_string()).collect(),
        prompts,
        best: None,
    })
}

/// Splits cascade-file text into fragments: one per line, a trailing
/// newline at the end of the file is allowed.
pub fn parse_cascade_text(text: &str) -> Result<PromptCascade, CascadeError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Err(CascadeError::EmptyPhraseList);
    }
    let lines: Vec<&str> = body
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    build_cascade(&lines)
}

pub fn read_cascade(path: &Path) -> Result<PromptCascade, CascadeError> {
    let text = fs::read_to_string(path).map_err(|e| CascadeError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_cascade_text(&text)
}

/// Everything a sweep needs besides the cascade itself.
#[derive(Debug, Clone)]
pub struct SweepTemplate {
    pub dataset_ref: PathBuf,
    pub backend: BackendSpec,
    pub runs: usize,
    pub seed_base: u64,
    pub thresholds: ThresholdGrid,
    pub detector_params: DetectorParams,
    pub subsample: Option<crate::harness::Subsample>,
}

/// One spec per (prompt, run), prompt-major. Run `r` of every prompt uses
/// seed `seed_base + r`.
pub fn sweep_plan(cascade: &PromptCascade, template: &SweepTemplate) -> Vec<ExperimentSpec> {
    assert!(template.runs >= 1, "a sweep needs at least one run");
    cascade
        .prompts()
        .iter()
        .enumerate()
        .flat_map(|(i, prompt)| {
            (0..template.runs).map(move |run| ExperimentSpec {
                dataset_ref: template.dataset_ref.clone(),
                prompt: prompt.clone(),
                prompt_number: Some(i + 1),
                backend: template.backend.clone(),
                seed: template.seed_base.wrapping_add(run as u64),
                thresholds: template.thresholds.clone(),
                detector_params: template.detector_params,
                subsample: template.subsample.map(|s| s.for_run(run)),
            })
        })
        .collect()
}
