use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// What covers the face region. Integer codes are stable: 0..=4 in
/// declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OcclusionClass {
    Face,
    MedicalMask,
    Scarf,
    Hand,
    Object,
}

impl OcclusionClass {
    pub const ALL: [OcclusionClass; 5] = [
        OcclusionClass::Face,
        OcclusionClass::MedicalMask,
        OcclusionClass::Scarf,
        OcclusionClass::Hand,
        OcclusionClass::Object,
    ];
    pub const COUNT: usize = 5;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Dataset sub-folder name.
    pub fn folder_name(self) -> &'static str {
        match self {
            OcclusionClass::Face => "Face",
            OcclusionClass::MedicalMask => "Medicalmask",
            OcclusionClass::Scarf => "scarf",
            OcclusionClass::Hand => "Handocclusion",
            OcclusionClass::Object => "Objectocclusion",
        }
    }

    /// Case-insensitive folder lookup.
    pub fn from_folder(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.folder_name().eq_ignore_ascii_case(name))
    }

    /// Row label used in metric reports.
    pub fn display_name(self) -> &'static str {
        match self {
            OcclusionClass::Face => "Face",
            OcclusionClass::MedicalMask => "Medical Mask",
            OcclusionClass::Scarf => "Scarf / Niqab",
            OcclusionClass::Hand => "Hand",
            OcclusionClass::Object => "Object",
        }
    }

    pub fn is_occluded(self) -> bool {
        self != OcclusionClass::Face
    }

    /// Value of the audit log's `type` column.
    pub fn log_type(self) -> &'static str {
        match self {
            OcclusionClass::Face => "NA",
            OcclusionClass::MedicalMask => "Medical",
            OcclusionClass::Scarf => "scarf",
            OcclusionClass::Hand => "hand",
            OcclusionClass::Object => "object",
        }
    }

    pub fn from_log_type(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.log_type() == s)
    }
}

impl fmt::Display for OcclusionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for OcclusionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::from_folder(s)
            .or_else(|| Self::ALL.into_iter().find(|c| c.display_name().eq_ignore_ascii_case(s)))
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        for (i, c) in OcclusionClass::ALL.into_iter().enumerate() {
            assert_eq!(c.code(), i);
            assert_eq!(OcclusionClass::from_code(i), Some(c));
        }
        assert_eq!(OcclusionClass::from_code(5), None);
    }

    #[test]
    fn folder_names_case_insensitive() {
        assert_eq!(OcclusionClass::from_folder("SCARF"), Some(OcclusionClass::Scarf));
        assert_eq!(OcclusionClass::from_folder("medicalmask"), Some(OcclusionClass::MedicalMask));
        assert_eq!(OcclusionClass::from_folder("handOcclusion"), Some(OcclusionClass::Hand));
        assert_eq!(OcclusionClass::from_folder("Sunglasses"), None);
        assert!("Sunglasses".parse::<OcclusionClass>().is_err());
    }

    #[test]
    fn log_types() {
        assert_eq!(OcclusionClass::Face.log_type(), "NA");
        assert!(!OcclusionClass::Face.is_occluded());
        assert_eq!(OcclusionClass::MedicalMask.log_type(), "Medical");
        for c in OcclusionClass::ALL {
            assert_eq!(OcclusionClass::from_log_type(c.log_type()), Some(c));
        }
    }
}
