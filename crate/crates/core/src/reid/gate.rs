//! Fusing the classifier's view of a probe with the gallery lookup.

use crate::data::OcclusionClass;
use crate::reid::gallery::Identification;

pub const DEFAULT_THRESHOLD: f64 = 90.0;

/// What the classifier stage says about a probe.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOne {
    pub class: OcclusionClass,
    /// Nearest enrolled person among prototypes of `class`, if any exist.
    pub person: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub classifier_person: Option<String>,
    pub occlusion: OcclusionClass,
    pub identifier_person: String,
    pub score: f64,
    pub passed: bool,
}

/// Passes iff `score > threshold` (strictly) and both stages name the same
/// person.
pub fn fuse_and_gate(stage1: &StageOne, stage2: &Identification, threshold: f64) -> MatchResult {
    let agree = stage1.person.as_deref() == Some(stage2.person.as_str());
    MatchResult {
        classifier_person: stage1.person.clone(),
        occlusion: stage1.class,
        identifier_person: stage2.person.clone(),
        score: stage2.score,
        passed: agree && stage2.score > threshold,
    }
}
