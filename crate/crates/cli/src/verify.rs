use std::path::{Path, PathBuf};

use serde::Serialize;

use avr_core::dataset::{read_episode, DatasetError};
use avr_core::format_guard::{mask_against_spec, Predicate};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FrameProblem {
    pub index: usize,
    pub view: String,
    pub ones_fraction: f64,
    pub failing: Vec<Predicate>,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub episode: PathBuf,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub records: usize,
    pub processed_records: usize,
    pub frames_checked: usize,
    /// Smallest format-mask ones fraction over all frames.
    pub min_ones_fraction: Option<f64>,
    pub problems: Vec<FrameProblem>,
}

impl VerifyReport {
    pub fn problem(&self) -> Option<String> {
        if let Some(e) = &self.error {
            return Some(e.clone());
        }
        self.problems.first().map(|p| {
            format!(
                "record {}: {} frame fails format check {:?} (ones fraction {})",
                p.index, p.view, p.failing, p.ones_fraction
            )
        })
    }
}

/// Structural validation plus a format-mask re-scan of every frame against
/// the manifest's frame format and size.
pub fn verify_episode(dir: &Path) -> Result<VerifyReport, CliError> {
    let mut report = VerifyReport {
        episode: dir.to_path_buf(),
        valid: false,
        error: None,
        records: 0,
        processed_records: 0,
        frames_checked: 0,
        min_ones_fraction: None,
        problems: Vec::new(),
    };
    let episode = match read_episode(dir) {
        Ok(e) => e,
        Err(e @ (DatasetError::NotFound(_) | DatasetError::Io { .. })) => return Err(e.into()),
        Err(e) => {
            report.error = Some(e.to_string());
            return Ok(report);
        }
    };
    let spec = &episode.manifest.frame_format;
    let size = episode.manifest.frame_size;
    report.records = episode.records.len();
    for (index, record) in episode.records.iter().enumerate() {
        report.processed_records += usize::from(record.processing.is_some());
        for (view, name) in &record.frames {
            let frame = match episode.frames.load_file(name) {
                Ok(f) => f,
                Err(e @ DatasetError::Io { .. }) => return Err(e.into()),
                Err(e) => {
                    report.error = Some(format!("record {index}: {e}"));
                    return Ok(report);
                }
            };
            report.frames_checked += 1;
            let (mask, mut failing) = mask_against_spec(&frame, spec);
            let mut ones = mask.ones_fraction();
            if frame.width() != size.width || frame.height() != size.height {
                failing.push(Predicate::Dimensions);
                ones = 0.0;
            }
            report.min_ones_fraction = Some(report.min_ones_fraction.map_or(ones, |m: f64| m.min(ones)));
            if !failing.is_empty() {
                report.problems.push(FrameProblem {
                    index,
                    view: view.as_str().to_string(),
                    ones_fraction: ones,
                    failing,
                });
            }
        }
    }
    report.valid = report.problems.is_empty();
    Ok(report)
}
