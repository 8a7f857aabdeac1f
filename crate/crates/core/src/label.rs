use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Functional section of a professional sentence.
///
/// Declaration order is the fixed label order used everywhere: model output
/// slots, argmax tie-breaking and report layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionLabel {
    HistoryTaking,
    Summarization,
    Education,
    CarePlan,
    Other,
}

impl SectionLabel {
    pub const COUNT: usize = 5;

    pub const ALL: [SectionLabel; 5] = [
        SectionLabel::HistoryTaking,
        SectionLabel::Summarization,
        SectionLabel::Education,
        SectionLabel::CarePlan,
        SectionLabel::Other,
    ];

    /// The four medically relevant sections, i.e. everything except `Other`.
    pub const FUNCTIONAL: [SectionLabel; 4] = [
        SectionLabel::HistoryTaking,
        SectionLabel::Summarization,
        SectionLabel::Education,
        SectionLabel::CarePlan,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_functional(self) -> bool {
        self != SectionLabel::Other
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SectionLabel::HistoryTaking => "history_taking",
            SectionLabel::Summarization => "summarization",
            SectionLabel::Education => "education",
            SectionLabel::CarePlan => "care_plan",
            SectionLabel::Other => "other",
        }
    }

    /// Human readable name, as used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            SectionLabel::HistoryTaking => "History Taking",
            SectionLabel::Summarization => "Summarization",
            SectionLabel::Education => "Education",
            SectionLabel::CarePlan => "Care Plan",
            SectionLabel::Other => "Other",
        }
    }
}

impl fmt::Display for SectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SectionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown section label `{s}`"))
    }
}

/// Annotator decision for a whole cluster: a section, or `Mixed` when the
/// reviewed sentences span several sections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterVerdict {
    HistoryTaking,
    Summarization,
    Education,
    CarePlan,
    Other,
    Mixed,
}

impl ClusterVerdict {
    pub const ALL: [ClusterVerdict; 6] = [
        ClusterVerdict::HistoryTaking,
        ClusterVerdict::Summarization,
        ClusterVerdict::Education,
        ClusterVerdict::CarePlan,
        ClusterVerdict::Other,
        ClusterVerdict::Mixed,
    ];

    pub fn section(self) -> Option<SectionLabel> {
        match self {
            ClusterVerdict::HistoryTaking => Some(SectionLabel::HistoryTaking),
            ClusterVerdict::Summarization => Some(SectionLabel::Summarization),
            ClusterVerdict::Education => Some(SectionLabel::Education),
            ClusterVerdict::CarePlan => Some(SectionLabel::CarePlan),
            ClusterVerdict::Other => Some(SectionLabel::Other),
            ClusterVerdict::Mixed => None,
        }
    }

    pub fn is_mixed(self) -> bool {
        self == ClusterVerdict::Mixed
    }

    pub fn as_str(self) -> &'static str {
        match self.section() {
            Some(l) => l.as_str(),
            None => "mixed",
        }
    }
}

impl From<SectionLabel> for ClusterVerdict {
    fn from(l: SectionLabel) -> Self {
        match l {
            SectionLabel::HistoryTaking => ClusterVerdict::HistoryTaking,
            SectionLabel::Summarization => ClusterVerdict::Summarization,
            SectionLabel::Education => ClusterVerdict::Education,
            SectionLabel::CarePlan => ClusterVerdict::CarePlan,
            SectionLabel::Other => ClusterVerdict::Other,
        }
    }
}

impl fmt::Display for ClusterVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClusterVerdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown verdict `{s}`"))
    }
}
