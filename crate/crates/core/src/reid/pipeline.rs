//! Per-probe two-stage processing and the directory batch runner.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::data::dataset::list_images;
use crate::data::decode_resize;
use crate::error::{Error, Result};
use crate::model::network::{normalize, Model};
use crate::reid::gallery::Gallery;
use crate::reid::gate::{fuse_and_gate, MatchResult, StageOne};
use crate::reid::log::{append_log, Clock, LogRecord};
use crate::tensor::Tensor;

/// Finds face regions in a frame. Inputs here are already cropped, so the
/// default implementation passes the frame through.
pub trait RoiDetector {
    fn detect(&self, frame: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PrecroppedRoi;

impl RoiDetector for PrecroppedRoi {
    fn detect(&self, frame: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![frame.clone()])
    }
}

/// Runs both stages on one ROI. A single inference pass provides the class
/// probabilities (stage one) and the embedding (both stages).
pub fn process_probe(model: &Model, gallery: &Gallery, roi: &Tensor, threshold: f64) -> Result<MatchResult> {
    let inf = model.infer(roi)?;
    let embedding = normalize(&inf.hidden)?;
    let class = inf.class();
    let stage1 = StageOne {
        class,
        person: gallery.identify_embedding(&embedding, Some(class))?.map(|m| m.person),
    };
    let stage2 = gallery.identify_embedding(&embedding, None)?.ok_or(Error::EmptyGallery)?;
    Ok(fuse_and_gate(&stage1, &stage2, threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub path: PathBuf,
    pub result: MatchResult,
    pub logged: Option<LogRecord>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchSummary {
    pub processed: usize,
    pub passed: usize,
    pub failed_gate: usize,
    pub errored: usize,
    pub outcomes: Vec<ProbeOutcome>,
    pub errors: Vec<(PathBuf, String)>,
}

/// Processes every PPM directly under `dir` in name order. Per-image
/// failures are counted, never fatal; passes are appended to `log_path`.
pub fn run_batch(
    model: &Model,
    gallery: &Gallery,
    dir: &Path,
    log_path: &Path,
    threshold: f64,
    clock: &dyn Clock,
) -> Result<BatchSummary> {
    let mut s = BatchSummary::default();
    for path in list_images(dir)? {
        s.processed += 1;
        let outcome = fs::read(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|b| decode_resize(&b, model.config.input_size))
            .and_then(|img| process_probe(model, gallery, &img, threshold));
        let result = match outcome {
            Ok(r) => r,
            Err(e) => {
                warn!("{}: {e}", path.display());
                s.errored += 1;
                s.errors.push((path, e.to_string()));
                continue;
            }
        };
        if !result.passed {
            s.failed_gate += 1;
            s.outcomes.push(ProbeOutcome {
                path,
                result,
                logged: None,
            });
            continue;
        }
        match append_log(log_path, &result, clock) {
            Ok(rec) => {
                s.passed += 1;
                s.outcomes.push(ProbeOutcome {
                    path,
                    result,
                    logged: Some(rec),
                });
            }
            Err(e) => {
                warn!("{}: {e}", path.display());
                s.errored += 1;
                s.errors.push((path, e.to_string()));
            }
        }
    }
    Ok(s)
}
