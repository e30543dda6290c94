//! Annotation rounds, annotators, and validated multi-label annotations.
//!
//! Each annotation is one annotator's set of [`HarmSelection`]s for one
//! incident in one round. A round pins a taxonomy version, and every
//! selection must resolve in that version. Resubmitting replaces the
//! annotator's previous annotation for that incident in that round.
//!
//! Operations come in two steps. The `prepare_*` methods validate against
//! current state and return the value to store. The `insert_*` methods
//! apply it. [`crate::Platform`] journals the value in between.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HarmStatus {
    Actual,
    Potential,
}

impl HarmStatus {
    pub const ALL: [HarmStatus; 2] = [HarmStatus::Actual, HarmStatus::Potential];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Actual => "actual",
            Self::Potential => "potential",
        }
    }
}

impl fmt::Display for HarmStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HarmStatus {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "actual" => Ok(Self::Actual),
            "potential" => Ok(Self::Potential),
            other => Err(AnnotationError::MalformedStatus(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HarmSelection {
    pub harm_type_id: String,
    pub specific_harm_id: String,
    pub status: HarmStatus,
}

impl HarmSelection {
    pub fn new(harm_type_id: &str, specific_harm_id: &str, status: HarmStatus) -> Self {
        Self { harm_type_id: harm_type_id.into(), specific_harm_id: specific_harm_id.into(), status }
    }

    /// `harm_type/specific_harm`
    pub fn path(&self) -> String {
        format!("{}/{}", self.harm_type_id, self.specific_harm_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub incident_id: String,
    pub annotator_id: String,
    pub round_id: String,
    pub selections: BTreeSet<HarmSelection>,
    #[serde(default)]
    pub comment: Option<String>,
    pub submitted_at: DateTime<Utc>,
    pub taxonomy_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub round_id: String,
    pub label: String,
    pub taxonomy_version: String,
    pub incident_ids: Vec<String>,
    pub opened_at: DateTime<Utc>,
    pub closed_at: Option<DateTime<Utc>>,
}

impl Round {
    pub fn is_open(&self) -> bool {
        self.closed_at.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotator {
    pub annotator_id: String,
    pub display_name: String,
    /// Hex SHA-256 of the annotator's current bearer token.
    #[serde(default)]
    pub token_hash: Option<String>,
}

/// Selection as received from a client: the status is still a string so a
/// bad value is reported as `MALFORMED_STATUS` rather than a parse failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionInput {
    pub harm_type_id: String,
    pub specific_harm_id: String,
    pub status: String,
}

impl From<&HarmSelection> for SelectionInput {
    fn from(s: &HarmSelection) -> Self {
        Self {
            harm_type_id: s.harm_type_id.clone(),
            specific_harm_id: s.specific_harm_id.clone(),
            status: s.status.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub incident_id: String,
    pub annotator_id: String,
    pub round_id: String,
    #[serde(default)]
    pub selections: Vec<SelectionInput>,
    #[serde(default)]
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("a round needs at least one incident")]
    EmptyRound,
    #[error("round label must contain at least one letter or digit")]
    InvalidLabel,
    #[error("a round with id {0:?} already exists")]
    DuplicateRound(String),
    #[error("unknown taxonomy version {0:?}")]
    UnknownTaxonomyVersion(String),
    #[error("unknown incident {0:?}")]
    UnknownIncident(String),
    #[error("incident {incident:?} is not part of round {round:?}")]
    IncidentNotInRound { round: String, incident: String },
    #[error("unknown round {0:?}")]
    UnknownRound(String),
    #[error("round {0:?} is closed")]
    RoundClosed(String),
    #[error("round {0:?} is already closed")]
    AlreadyClosed(String),
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("annotator {0:?} already exists")]
    DuplicateAnnotator(String),
    #[error("annotator id {0:?} must be non-empty ASCII letters, digits, '-' or '_'")]
    InvalidAnnotatorId(String),
    #[error("{path:?} does not resolve in taxonomy {version}")]
    UnknownSelection { path: String, version: String },
    #[error("malformed status {0:?} (expected \"actual\" or \"potential\")")]
    MalformedStatus(String),
    #[error("{0:?} is marked both actual and potential")]
    ConflictingStatus(String),
}

impl AnnotationError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyRound => "EMPTY_ROUND",
            Self::InvalidLabel => "INVALID_LABEL",
            Self::DuplicateRound(_) => "DUPLICATE_ROUND",
            Self::UnknownTaxonomyVersion(_) => "UNKNOWN_TAXONOMY_VERSION",
            Self::UnknownIncident(_) => "UNKNOWN_INCIDENT",
            Self::IncidentNotInRound { .. } => "INCIDENT_NOT_IN_ROUND",
            Self::UnknownRound(_) => "UNKNOWN_ROUND",
            Self::RoundClosed(_) => "ROUND_CLOSED",
            Self::AlreadyClosed(_) => "ROUND_ALREADY_CLOSED",
            Self::UnknownAnnotator(_) => "UNKNOWN_ANNOTATOR",
            Self::DuplicateAnnotator(_) => "DUPLICATE_ANNOTATOR",
            Self::InvalidAnnotatorId(_) => "INVALID_ANNOTATOR_ID",
            Self::UnknownSelection { .. } => "UNKNOWN_SELECTION",
            Self::MalformedStatus(_) => "MALFORMED_STATUS",
            Self::ConflictingStatus(_) => "CONFLICTING_STATUS",
        }
    }
}

/// Lowercase kebab-case slug of a round label.
pub fn round_id_for(label: &str) -> String {
    label
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

/// Resolves raw selections against a taxonomy. Duplicates collapse into
/// one; the same specific harm under both statuses is rejected.
pub fn resolve_selections(
    inputs: &[SelectionInput],
    taxonomy: &Taxonomy,
) -> Result<BTreeSet<HarmSelection>, AnnotationError> {
    let mut out = BTreeSet::new();
    let mut status_of: BTreeMap<String, HarmStatus> = BTreeMap::new();
    for input in inputs {
        let status: HarmStatus = input.status.parse()?;
        if taxonomy.specific_harm(&input.harm_type_id, &input.specific_harm_id).is_none() {
            return Err(AnnotationError::UnknownSelection {
                path: format!("{}/{}", input.harm_type_id, input.specific_harm_id),
                version: taxonomy.version.clone(),
            });
        }
        let selection = HarmSelection::new(&input.harm_type_id, &input.specific_harm_id, status);
        if let Some(previous) = status_of.insert(selection.path(), status) {
            if previous != status {
                return Err(AnnotationError::ConflictingStatus(selection.path()));
            }
        }
        out.insert(selection);
    }
    Ok(out)
}

type AnnotationKey = (String, String, String);

/// Rounds, annotators and annotations.
#[derive(Debug, Clone, Default)]
pub struct AnnotationBook {
    annotators: BTreeMap<String, Annotator>,
    rounds: BTreeMap<String, Round>,
    // (round, incident, annotator)
    annotations: BTreeMap<AnnotationKey, Annotation>,
}

impl AnnotationBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn prepare_annotator(&self, annotator_id: &str, display_name: &str) -> Result<Annotator, AnnotationError> {
        if annotator_id.is_empty() || !annotator_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(AnnotationError::InvalidAnnotatorId(annotator_id.to_string()));
        }
        if self.annotators.contains_key(annotator_id) {
            return Err(AnnotationError::DuplicateAnnotator(annotator_id.to_string()));
        }
        Ok(Annotator {
            annotator_id: annotator_id.to_string(),
            display_name: display_name.to_string(),
            token_hash: None,
        })
    }

    /// Inserts or replaces (token rotation) an annotator.
    pub fn insert_annotator(&mut self, annotator: Annotator) {
        self.annotators.insert(annotator.annotator_id.clone(), annotator);
    }

    pub fn annotator(&self, id: &str) -> Option<&Annotator> {
        self.annotators.get(id)
    }

    pub fn annotators(&self) -> impl Iterator<Item = &Annotator> {
        self.annotators.values()
    }

    pub fn prepare_round(
        &self,
        label: &str,
        taxonomy_version: &str,
        incident_ids: &[String],
        version_exists: impl Fn(&str) -> bool,
        incident_exists: impl Fn(&str) -> bool,
        now: DateTime<Utc>,
    ) -> Result<Round, AnnotationError> {
        let round_id = round_id_for(label);
        if round_id.is_empty() {
            return Err(AnnotationError::InvalidLabel);
        }
        if incident_ids.is_empty() {
            return Err(AnnotationError::EmptyRound);
        }
        if self.rounds.contains_key(&round_id) {
            return Err(AnnotationError::DuplicateRound(round_id));
        }
        if !version_exists(taxonomy_version) {
            return Err(AnnotationError::UnknownTaxonomyVersion(taxonomy_version.to_string()));
        }
        if let Some(missing) = incident_ids.iter().find(|id| !incident_exists(id)) {
            return Err(AnnotationError::UnknownIncident(missing.clone()));
        }
        let mut seen = BTreeSet::new();
        let incident_ids = incident_ids.iter().filter(|id| seen.insert(id.as_str())).cloned().collect();
        Ok(Round {
            round_id,
            label: label.trim().to_string(),
            taxonomy_version: taxonomy_version.to_string(),
            incident_ids,
            opened_at: now,
            closed_at: None,
        })
    }

    pub fn insert_round(&mut self, round: Round) {
        self.rounds.insert(round.round_id.clone(), round);
    }

    pub fn round(&self, round_id: &str) -> Result<&Round, AnnotationError> {
        self.rounds.get(round_id).ok_or_else(|| AnnotationError::UnknownRound(round_id.to_string()))
    }

    /// Rounds in chronological order (`opened_at`, then id).
    pub fn rounds(&self) -> Vec<&Round> {
        let mut out: Vec<&Round> = self.rounds.values().collect();
        out.sort_by(|a, b| a.opened_at.cmp(&b.opened_at).then_with(|| a.round_id.cmp(&b.round_id)));
        out
    }

    pub fn prepare_close(&self, round_id: &str, now: DateTime<Utc>) -> Result<Round, AnnotationError> {
        let round = self.round(round_id)?;
        if !round.is_open() {
            return Err(AnnotationError::AlreadyClosed(round_id.to_string()));
        }
        Ok(Round { closed_at: Some(now), ..round.clone() })
    }

    /// Validates a submission against its round's taxonomy.
    pub fn prepare_submission(
        &self,
        submission: &Submission,
        taxonomy: &Taxonomy,
        now: DateTime<Utc>,
    ) -> Result<Annotation, AnnotationError> {
        let round = self.round(&submission.round_id)?;
        if !round.is_open() {
            return Err(AnnotationError::RoundClosed(round.round_id.clone()));
        }
        if !self.annotators.contains_key(&submission.annotator_id) {
            return Err(AnnotationError::UnknownAnnotator(submission.annotator_id.clone()));
        }
        if !round.incident_ids.contains(&submission.incident_id) {
            return Err(AnnotationError::IncidentNotInRound {
                round: round.round_id.clone(),
                incident: submission.incident_id.clone(),
            });
        }
        debug_assert_eq!(taxonomy.version, round.taxonomy_version);
        let selections = resolve_selections(&submission.selections, taxonomy)?;
        Ok(Annotation {
            incident_id: submission.incident_id.clone(),
            annotator_id: submission.annotator_id.clone(),
            round_id: round.round_id.clone(),
            selections,
            comment: submission.comment.clone(),
            submitted_at: now,
            taxonomy_version: round.taxonomy_version.clone(),
        })
    }

    /// Stores an annotation, replacing any earlier one for the same
    /// (round, incident, annotator).
    pub fn insert_annotation(&mut self, annotation: Annotation) {
        let key = (annotation.round_id.clone(), annotation.incident_id.clone(), annotation.annotator_id.clone());
        self.annotations.insert(key, annotation);
    }

    /// One annotation per annotator who submitted, ordered by annotator id.
    pub fn annotations_for(&self, incident_id: &str, round_id: &str) -> Result<Vec<&Annotation>, AnnotationError> {
        self.round(round_id)?;
        let lo = (round_id.to_string(), incident_id.to_string(), String::new());
        Ok(self
            .annotations
            .range(lo..)
            .take_while(|((r, i, _), _)| r == round_id && i == incident_id)
            .map(|(_, a)| a)
            .collect())
    }

    /// Every annotation of a round, ordered by (incident, annotator).
    pub fn round_annotations(&self, round_id: &str) -> Result<Vec<&Annotation>, AnnotationError> {
        self.round(round_id)?;
        let lo = (round_id.to_string(), String::new(), String::new());
        Ok(self.annotations.range(lo..).take_while(|((r, _, _), _)| r == round_id).map(|(_, a)| a).collect())
    }

    /// All annotations ordered by (round, incident, annotator).
    pub fn all_annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.values()
    }
}

/// Annotation export: one JSON object per line, ordered (round, incident, annotator).
pub fn export_jsonl<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> String {
    let mut sorted: Vec<&Annotation> = annotations.into_iter().collect();
    sorted.sort_by(|a, b| {
        (&a.round_id, &a.incident_id, &a.annotator_id).cmp(&(&b.round_id, &b.incident_id, &b.annotator_id))
    });
    let mut out = String::new();
    for a in sorted {
        out.push_str(&serde_json::to_string(a).expect("annotation serializes"));
        out.push('\n');
    }
    out
}
