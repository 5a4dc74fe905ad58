//! Two-stage person re-identification: occlusion class plus gallery lookup,
//! fused by a score gate and written to an audit log.

pub mod gallery;
pub mod gate;
pub mod log;
pub mod pipeline;

pub use gallery::{match_score, Gallery, GalleryEntry, Identification, Prototype};
pub use gate::{fuse_and_gate, MatchResult, StageOne, DEFAULT_THRESHOLD};
pub use log::{append_log, read_log, Clock, FixedClock, LogRecord, SystemClock, LOG_HEADER};
pub use pipeline::{process_probe, run_batch, BatchSummary, PrecroppedRoi, ProbeOutcome, RoiDetector};
