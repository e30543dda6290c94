//! The annotation platform: taxonomy versions, incidents, annotators,
//! rounds and annotations behind one handle, optionally backed by a
//! [`Journal`] file.
//!
//! Every mutation is validated first, then journaled, then applied, so a
//! successful return means the change is on disk. `Platform` is not
//! internally synchronized: share it behind a `RwLock` for many readers
//! and a single writer.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{
    self, AgreementError, AgreementReport, Mode, RoundAlphas, StatusHandling, TrendSeries,
};
use crate::annotation::{AnnotationBook, AnnotationError, Annotation, Annotator, Round, Submission};
use crate::incidents::{Incident, IncidentQuery, IncidentStore, IngestError, IngestFormat, IngestReport, Page, QueryError};
use crate::journal::{Journal, JournalError};
use crate::report::{self, ReportError, RoundSummary, SankeyGraph};
use crate::taxonomy::{self, diff_taxonomies, Taxonomy, TaxonomyDiff, TaxonomyError};

/// One journal record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TaxonomyRegistered { document: String },
    IncidentsUpserted { incidents: Vec<Incident> },
    AnnotatorSaved { annotator: Annotator },
    RoundSaved { round: Round },
    AnnotationSubmitted { annotation: Annotation },
}

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("taxonomy version {0:?} is already registered with different content")]
    VersionConflict(String),
    #[error("unknown taxonomy version {0:?}")]
    UnknownVersion(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("the store was opened read-only")]
    ReadOnly,
}

impl PlatformError {
    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Taxonomy(TaxonomyError::Parse(_)) => "MALFORMED_TAXONOMY",
            Self::Taxonomy(TaxonomyError::Invalid(_)) => "INVALID_TAXONOMY",
            Self::VersionConflict(_) => "VERSION_CONFLICT",
            Self::UnknownVersion(_) => "UNKNOWN_TAXONOMY_VERSION",
            Self::Ingest(IngestError::Unreadable { .. }) => "UNREADABLE_DOCUMENT",
            Self::Ingest(IngestError::MissingColumns(_)) => "MISSING_COLUMNS",
            Self::Query(QueryError::UnknownIncident(_)) => "UNKNOWN_INCIDENT",
            Self::Query(QueryError::ZeroLimit) => "INVALID_QUERY",
            Self::Annotation(e) => e.code(),
            Self::Agreement(e) => e.code(),
            Self::Report(e) => e.code(),
            Self::Journal(JournalError::Locked { .. }) => "STORE_LOCKED",
            Self::Journal(_) => "STORAGE_ERROR",
            Self::ReadOnly => "READ_ONLY",
        }
    }
}

/// Bootstrap settings for an agreement report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiParams {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for CiParams {
    fn default() -> Self {
        Self { resamples: 1000, confidence: 0.95, seed: 0 }
    }
}

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct Platform {
    taxonomies: BTreeMap<String, Taxonomy>,
    current: Option<String>,
    incidents: IncidentStore,
    book: AnnotationBook,
    journal: Option<Journal<Event>>,
    read_only: bool,
    clock: Clock,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("taxonomies", &self.taxonomies.keys().collect::<Vec<_>>())
            .field("incidents", &self.incidents.len())
            .field("journal", &self.journal)
            .finish()
    }
}

impl Platform {
    /// A platform without persistence, holding only the seed taxonomy.
    pub fn in_memory() -> Self {
        let mut p = Self::empty();
        p.apply(Event::TaxonomyRegistered { document: taxonomy::SEED_JSON.to_string() });
        p
    }

    fn empty() -> Self {
        Self {
            taxonomies: BTreeMap::new(),
            current: None,
            incidents: IncidentStore::new(),
            book: AnnotationBook::new(),
            journal: None,
            read_only: false,
            clock: Box::new(Utc::now),
        }
    }

    /// Opens or creates the store file at `path`. A new store gets the seed
    /// taxonomy.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PlatformError> {
        let (journal, events) = Journal::open(path)?;
        let mut p = Self::empty();
        for event in events {
            p.apply(event);
        }
        p.journal = Some(journal);
        if p.taxonomies.is_empty() {
            p.register_taxonomy(taxonomy::seed().clone())?;
        }
        Ok(p)
    }

    /// Loads the store at `path` for reading only. Takes no lock, so it can
    /// run next to a live writer; every mutation fails with
    /// [`PlatformError::ReadOnly`].
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self, PlatformError> {
        let mut p = Self::empty();
        for event in Journal::<Event>::read(path)? {
            p.apply(event);
        }
        if p.taxonomies.is_empty() {
            p.apply(Event::TaxonomyRegistered { document: taxonomy::SEED_JSON.to_string() });
        }
        p.read_only = true;
        Ok(p)
    }

    /// Replaces the wall clock, for reproducible timestamps.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    fn commit(&mut self, event: Event) -> Result<(), PlatformError> {
        if self.read_only {
            return Err(PlatformError::ReadOnly);
        }
        if let Some(journal) = &mut self.journal {
            journal.append(&event)?;
        }
        self.apply(event);
        Ok(())
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::TaxonomyRegistered { document } => {
                let t = taxonomy::load_taxonomy(document.as_bytes()).expect("journaled taxonomy is valid");
                self.current = Some(t.version.clone());
                self.taxonomies.insert(t.version.clone(), t);
            }
            Event::IncidentsUpserted { incidents } => self.incidents.apply(incidents),
            Event::AnnotatorSaved { annotator } => self.book.insert_annotator(annotator),
            Event::RoundSaved { round } => self.book.insert_round(round),
            Event::AnnotationSubmitted { annotation } => self.book.insert_annotation(annotation),
        }
    }

    // -- taxonomy -----------------------------------------------------------

    /// Registers a taxonomy version and makes it current. Re-registering an
    /// identical document is a no-op returning `false`.
    pub fn register_taxonomy(&mut self, t: Taxonomy) -> Result<bool, PlatformError> {
        let violations = taxonomy::validate_taxonomy(&t);
        if !violations.is_empty() {
            return Err(TaxonomyError::Invalid(violations).into());
        }
        match self.taxonomies.get(&t.version) {
            Some(existing) if *existing == t => {
                if self.current.as_deref() != Some(t.version.as_str()) {
                    self.commit(Event::TaxonomyRegistered { document: taxonomy::serialize_taxonomy(&t) })?;
                }
                Ok(false)
            }
            Some(_) => Err(PlatformError::VersionConflict(t.version)),
            None => {
                self.commit(Event::TaxonomyRegistered { document: taxonomy::serialize_taxonomy(&t) })?;
                Ok(true)
            }
        }
    }

    pub fn current_taxonomy(&self) -> &Taxonomy {
        let version = self.current.as_ref().expect("platform always holds a taxonomy");
        &self.taxonomies[version]
    }

    pub fn taxonomy(&self, version: &str) -> Result<&Taxonomy, PlatformError> {
        self.taxonomies.get(version).ok_or_else(|| PlatformError::UnknownVersion(version.to_string()))
    }

    pub fn taxonomy_versions(&self) -> impl Iterator<Item = &str> {
        self.taxonomies.keys().map(String::as_str)
    }

    pub fn diff(&self, old: &str, new: &str) -> Result<TaxonomyDiff, PlatformError> {
        Ok(diff_taxonomies(self.taxonomy(old)?, self.taxonomy(new)?))
    }

    // -- incidents ----------------------------------------------------------

    pub fn ingest(&mut self, document: &[u8], format: IngestFormat) -> Result<IngestReport, PlatformError> {
        let prepared = self.incidents.prepare_ingest(document, format, self.now())?;
        if !prepared.changes.is_empty() {
            self.commit(Event::IncidentsUpserted { incidents: prepared.changes })?;
        }
        Ok(prepared.report)
    }

    pub fn incidents(&self) -> &IncidentStore {
        &self.incidents
    }

    pub fn incident(&self, id: &str) -> Result<&Incident, PlatformError> {
        Ok(self.incidents.get(id)?)
    }

    pub fn query_incidents(&self, q: &IncidentQuery) -> Result<Page<Incident>, PlatformError> {
        Ok(self.incidents.query(q)?)
    }

    // -- annotators ---------------------------------------------------------

    pub fn add_annotator(&mut self, annotator_id: &str, display_name: &str) -> Result<Annotator, PlatformError> {
        let annotator = self.book.prepare_annotator(annotator_id, display_name)?;
        self.commit(Event::AnnotatorSaved { annotator: annotator.clone() })?;
        Ok(annotator)
    }

    /// Stores the hash of an annotator's new token, revoking the old one.
    pub fn set_token_hash(&mut self, annotator_id: &str, token_hash: &str) -> Result<(), PlatformError> {
        let mut annotator = self
            .book
            .annotator(annotator_id)
            .cloned()
            .ok_or_else(|| AnnotationError::UnknownAnnotator(annotator_id.to_string()))?;
        annotator.token_hash = Some(token_hash.to_string());
        self.commit(Event::AnnotatorSaved { annotator })
    }

    pub fn annotator(&self, annotator_id: &str) -> Option<&Annotator> {
        self.book.annotator(annotator_id)
    }

    pub fn annotators(&self) -> impl Iterator<Item = &Annotator> {
        self.book.annotators()
    }

    // -- rounds and annotations ----------------------------------------------

    pub fn open_round(
        &mut self,
        label: &str,
        taxonomy_version: &str,
        incident_ids: &[String],
    ) -> Result<Round, PlatformError> {
        let round = self.book.prepare_round(
            label,
            taxonomy_version,
            incident_ids,
            |v| self.taxonomies.contains_key(v),
            |id| self.incidents.contains(id),
            self.now(),
        )?;
        self.commit(Event::RoundSaved { round: round.clone() })?;
        Ok(round)
    }

    pub fn close_round(&mut self, round_id: &str) -> Result<Round, PlatformError> {
        let round = self.book.prepare_close(round_id, self.now())?;
        self.commit(Event::RoundSaved { round: round.clone() })?;
        Ok(round)
    }

    pub fn round(&self, round_id: &str) -> Result<&Round, PlatformError> {
        Ok(self.book.round(round_id)?)
    }

    /// Rounds in chronological order.
    pub fn rounds(&self) -> Vec<&Round> {
        self.book.rounds()
    }

    pub fn submit(&mut self, submission: &Submission) -> Result<Annotation, PlatformError> {
        let round = self.book.round(&submission.round_id)?;
        let taxonomy = self.taxonomy(&round.taxonomy_version)?;
        let annotation = self.book.prepare_submission(submission, taxonomy, self.now())?;
        self.commit(Event::AnnotationSubmitted { annotation: annotation.clone() })?;
        Ok(annotation)
    }

    pub fn annotations_for(&self, incident_id: &str, round_id: &str) -> Result<Vec<&Annotation>, PlatformError> {
        Ok(self.book.annotations_for(incident_id, round_id)?)
    }

    pub fn round_annotations(&self, round_id: &str) -> Result<Vec<&Annotation>, PlatformError> {
        Ok(self.book.round_annotations(round_id)?)
    }

    pub fn all_annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.book.all_annotations()
    }

    // -- reports --------------------------------------------------------------

    /// Round-level alpha in the chosen mode, optionally with a bootstrap interval.
    pub fn agreement(
        &self,
        round_id: &str,
        mode: Mode,
        status: StatusHandling,
        ci: Option<CiParams>,
    ) -> Result<AgreementReport, PlatformError> {
        let round = self.round(round_id)?;
        let annotations = self.round_annotations(round_id)?;
        let data = agreement::build_reliability(&annotations, self.taxonomy(&round.taxonomy_version)?, mode, status)?;
        let mut report = data.alpha()?;
        if let Some(p) = ci {
            report.ci = Some(data.bootstrap(p.resamples, p.confidence, p.seed)?);
        }
        Ok(report)
    }

    pub fn summary(&self, round_id: &str) -> Result<RoundSummary, PlatformError> {
        let round = self.round(round_id)?;
        Ok(report::round_summary(round, &self.round_annotations(round_id)?)?)
    }

    pub fn sankey(&self, round_id: &str, incident_id: &str) -> Result<SankeyGraph, PlatformError> {
        let round = self.round(round_id)?;
        let annotations = self.annotations_for(incident_id, round_id)?;
        Ok(report::build_sankey(incident_id, round_id, &annotations, self.taxonomy(&round.taxonomy_version)?)?)
    }

    fn round_alphas(&self, round: &Round) -> Result<RoundAlphas, PlatformError> {
        let annotations = self.round_annotations(&round.round_id)?;
        let incidents = if annotations.is_empty() {
            Vec::new()
        } else {
            agreement::incident_alphas(&annotations, StatusHandling::Ignore)?
        };
        Ok(RoundAlphas { label: round.label.clone(), closed: !round.is_open(), incidents })
    }

    /// Trend over the given rounds, reordered chronologically. Every round
    /// must be closed.
    pub fn trend_for(&self, round_ids: &[String]) -> Result<TrendSeries, PlatformError> {
        let mut rounds = round_ids.iter().map(|id| self.round(id)).collect::<Result<Vec<_>, _>>()?;
        rounds.sort_by(|a, b| a.opened_at.cmp(&b.opened_at).then_with(|| a.round_id.cmp(&b.round_id)));
        let inputs = rounds.into_iter().map(|r| self.round_alphas(r)).collect::<Result<Vec<_>, _>>()?;
        Ok(agreement::round_trend(&inputs)?)
    }

    /// Trend over every closed round.
    pub fn trend(&self) -> Result<TrendSeries, PlatformError> {
        let closed: Vec<String> =
            self.rounds().into_iter().filter(|r| !r.is_open()).map(|r| r.round_id.clone()).collect();
        self.trend_for(&closed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::SelectionInput;
    use chrono::TimeZone;
    use std::sync::atomic::{AtomicI64, Ordering};
    use std::sync::Arc;

    const FIXTURE: &[u8] = include_bytes!("../fixtures/incidents-39.csv");

    fn ticking_clock() -> impl Fn() -> DateTime<Utc> + Send + Sync {
        let tick = Arc::new(AtomicI64::new(0));
        move || Utc.timestamp_opt(1_706_745_600 + tick.fetch_add(1, Ordering::SeqCst), 0).unwrap()
    }

    fn submission(annotator: &str, incident: &str, round: &str, sel: &[(&str, &str, &str)]) -> Submission {
        Submission {
            incident_id: incident.into(),
            annotator_id: annotator.into(),
            round_id: round.into(),
            selections: sel
                .iter()
                .map(|(h, s, st)| SelectionInput { harm_type_id: (*h).into(), specific_harm_id: (*s).into(), status: (*st).into() })
                .collect(),
            comment: Some("looks clear-cut".into()),
        }
    }

    #[test]
    fn state_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("harmlens.jsonl");
        {
            let mut p = Platform::open(&path).unwrap().with_clock(ticking_clock());
            assert_eq!(p.current_taxonomy().version, "1.0.0");
            assert_eq!(p.ingest(FIXTURE, IngestFormat::Csv).unwrap().added, 39);
            p.add_annotator("ann-1", "Ann One").unwrap();
            p.add_annotator("ann-2", "Ann Two").unwrap();
            let ids: Vec<String> = p.incidents().ids().take(3).map(String::from).collect();
            p.open_round("Round 1", "1.0.0", &ids).unwrap();
            p.submit(&submission("ann-1", "SYN0001", "round-1", &[("psychological", "addiction", "actual")])).unwrap();
            p.submit(&submission("ann-2", "SYN0001", "round-1", &[])).unwrap();
            p.submit(&submission("ann-2", "SYN0001", "round-1", &[("psychological", "addiction", "potential")])).unwrap();
            p.close_round("round-1").unwrap();
        }
        let mut reader = Platform::open_read_only(&path).unwrap();
        assert_eq!(reader.incidents().len(), 39);
        assert_eq!(reader.add_annotator("ann-3", "Ann Three").unwrap_err().code(), "READ_ONLY");
        let p = Platform::open(&path).unwrap();
        assert_eq!(p.incidents().len(), 39);
        assert_eq!(p.taxonomy_versions().count(), 1);
        let round = p.round("round-1").unwrap();
        assert!(!round.is_open());
        let anns = p.annotations_for("SYN0001", "round-1").unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!(anns[1].selections.iter().next().unwrap().status, crate::annotation::HarmStatus::Potential);
        assert_eq!(anns[0].comment.as_deref(), Some("looks clear-cut"));
        let trend = p.trend().unwrap();
        assert_eq!(trend.points.len(), 1);
    }

    #[test]
    fn old_rounds_keep_their_taxonomy_version() {
        let mut p = Platform::in_memory().with_clock(ticking_clock());
        p.ingest(FIXTURE, IngestFormat::Csv).unwrap();
        p.add_annotator("a", "A").unwrap();
        p.open_round("round-1", "1.0.0", &["SYN0001".to_string()]).unwrap();

        let mut v2 = taxonomy::seed().clone();
        v2.version = "2.0.0".into();
        v2.harm_types[2].specific_harms.retain(|s| s.id != "addiction");
        assert!(p.register_taxonomy(v2.clone()).unwrap());
        assert!(!p.register_taxonomy(v2.clone()).unwrap());
        assert_eq!(p.current_taxonomy().version, "2.0.0");
        p.open_round("round-2", "2.0.0", &["SYN0001".to_string()]).unwrap();

        p.submit(&submission("a", "SYN0001", "round-1", &[("psychological", "addiction", "actual")])).unwrap();
        let err = p.submit(&submission("a", "SYN0001", "round-2", &[("psychological", "addiction", "actual")])).unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_SELECTION");

        let d = p.diff("1.0.0", "2.0.0").unwrap();
        assert_eq!(d.removed.len(), 1);

        let mut clash = v2;
        clash.title = "Other".into();
        assert!(matches!(p.register_taxonomy(clash), Err(PlatformError::VersionConflict(_))));
    }

    #[test]
    fn trend_rejects_open_rounds_and_reports_errors_by_code() {
        let mut p = Platform::in_memory().with_clock(ticking_clock());
        p.ingest(FIXTURE, IngestFormat::Csv).unwrap();
        p.open_round("round-1", "1.0.0", &["SYN0001".to_string()]).unwrap();
        let err = p.trend_for(&["round-1".to_string()]).unwrap_err();
        assert_eq!(err.code(), "ROUND_OPEN");
        assert_eq!(p.trend().unwrap().points.len(), 0);
        assert_eq!(p.open_round("round-1", "1.0.0", &["SYN0001".to_string()]).unwrap_err().code(), "DUPLICATE_ROUND");
        assert_eq!(p.incident("x").unwrap_err().code(), "UNKNOWN_INCIDENT");
        assert_eq!(p.add_annotator("ann.1", "A").unwrap_err().code(), "INVALID_ANNOTATOR_ID");
        assert_eq!(p.agreement("round-1", Mode::Set, StatusHandling::Ignore, None).unwrap_err().code(), "EMPTY_INPUT");
    }

    #[test]
    fn single_annotator_round_has_undefined_trend_point() {
        let mut p = Platform::in_memory().with_clock(ticking_clock());
        p.ingest(FIXTURE, IngestFormat::Csv).unwrap();
        p.add_annotator("a", "A").unwrap();
        let ids: Vec<String> = ["SYN0001", "SYN0002"].map(String::from).to_vec();
        p.open_round("round-1", "1.0.0", &ids).unwrap();
        for id in &ids {
            p.submit(&submission("a", id, "round-1", &[("physical", "loss-of-life", "actual")])).unwrap();
        }
        p.close_round("round-1").unwrap();
        let t = p.trend().unwrap();
        assert_eq!(t.points[0].incidents, 0);
        assert_eq!(t.points[0].excluded, 2);
        assert_eq!(t.points[0].mean_alpha, None);
    }
}
