//! Incident records, CSV/JSON ingestion with upsert-by-id, and paged queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REQUIRED_COLUMNS: [&str; 3] = ["id", "title", "description"];
pub const OPTIONAL_COLUMNS: [&str; 4] = ["occurred", "sector", "country", "links"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub id: String,
    pub title: String,
    pub description: String,
    pub occurred: Option<NaiveDate>,
    pub sector: Option<String>,
    pub country: Option<String>,
    pub source_links: Vec<String>,
    pub imported_at: DateTime<Utc>,
}

impl Incident {
    fn same_content(&self, other: &Incident) -> bool {
        self.title == other.title
            && self.description == other.description
            && self.occurred == other.occurred
            && self.sector == other.sector
            && self.country == other.country
            && self.source_links == other.source_links
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestFormat {
    Csv,
    Json,
}

impl FromStr for IngestFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown ingest format {other:?} (expected csv or json)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    EmptyId,
    EmptyTitle,
    MissingField,
    InvalidDate,
    InvalidUrl,
    DuplicateId,
    MalformedRow,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::EmptyId => "EMPTY_ID",
            Self::EmptyTitle => "EMPTY_TITLE",
            Self::MissingField => "MISSING_FIELD",
            Self::InvalidDate => "INVALID_DATE",
            Self::InvalidUrl => "INVALID_URL",
            Self::DuplicateId => "DUPLICATE_ID",
            Self::MalformedRow => "MALFORMED_ROW",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based record number; the CSV header is not counted.
    pub row: usize,
    pub id: Option<String>,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub added: usize,
    pub updated: usize,
    pub unchanged: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable {format:?} document: {detail}")]
    Unreadable { format: IngestFormat, detail: String },
    #[error("missing required column(s): {}", .0.join(", "))]
    MissingColumns(Vec<String>),
}

/// The outcome of validating a batch against the current store, before it
/// is applied. `changes` holds the incidents to upsert.
#[derive(Debug, Clone)]
pub struct PreparedIngest {
    pub report: IngestReport,
    pub changes: Vec<Incident>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentQuery {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub sector: Option<String>,
    #[serde(default)]
    pub from: Option<NaiveDate>,
    #[serde(default)]
    pub to: Option<NaiveDate>,
    #[serde(default)]
    pub offset: usize,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

fn default_limit() -> usize {
    50
}

impl IncidentQuery {
    pub fn all() -> Self {
        Self { limit: usize::MAX, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown incident {0:?}")]
    UnknownIncident(String),
    #[error("query limit must be greater than zero")]
    ZeroLimit,
}

/// A record as it arrives, before validation.
#[derive(Debug, Default)]
struct RawRecord {
    id: Option<String>,
    title: Option<String>,
    description: Option<String>,
    occurred: Option<String>,
    sector: Option<String>,
    country: Option<String>,
    links: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum JsonLinks {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    id: Option<String>,
    title: Option<String>,
    description: Option<String>,
    occurred: Option<String>,
    sector: Option<String>,
    country: Option<String>,
    #[serde(alias = "source_links")]
    links: Option<JsonLinks>,
}

fn split_links(s: &str) -> Vec<String> {
    s.split(';').map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

fn non_blank(s: Option<String>) -> Option<String> {
    s.map(|v| v.trim().to_string()).filter(|v| !v.is_empty())
}

fn parse_csv(document: &[u8]) -> Result<Vec<Result<RawRecord, Rejection>>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(document);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::Unreadable { format: IngestFormat::Csv, detail: e.to_string() })?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase())
        .collect();
    let missing: Vec<String> = REQUIRED_COLUMNS
        .iter()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::MissingColumns(missing));
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id, title, description) = (col("id"), col("title"), col("description"));
    let (occurred, sector, country, links) = (col("occurred"), col("sector"), col("country"), col("links"));

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                if let csv::ErrorKind::Utf8 { .. } | csv::ErrorKind::Io(_) = e.kind() {
                    return Err(IngestError::Unreadable { format: IngestFormat::Csv, detail: e.to_string() });
                }
                out.push(Err(Rejection { row, id: None, reason: RejectReason::MalformedRow, detail: e.to_string() }));
                continue;
            }
        };
        let get = |idx: Option<usize>| idx.and_then(|i| record.get(i)).map(str::to_string);
        out.push(Ok(RawRecord {
            id: get(id),
            title: get(title),
            description: get(description),
            occurred: get(occurred),
            sector: get(sector),
            country: get(country),
            links: get(links).map(|l| split_links(&l)).unwrap_or_default(),
        }));
    }
    Ok(out)
}

fn parse_json(document: &[u8]) -> Result<Vec<Result<RawRecord, Rejection>>, IngestError> {
    let values: Vec<serde_json::Value> = serde_json::from_slice(document)
        .map_err(|e| IngestError::Unreadable { format: IngestFormat::Json, detail: e.to_string() })?;
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(i, value)| {
            let row = i + 1;
            let id_hint = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
            let record: JsonRecord = serde_json::from_value(value).map_err(|e| Rejection {
                row,
                id: id_hint,
                reason: RejectReason::MalformedRow,
                detail: e.to_string(),
            })?;
            Ok(RawRecord {
                id: record.id,
                title: record.title,
                description: record.description,
                occurred: record.occurred,
                sector: record.sector,
                country: record.country,
                links: match record.links {
                    None => Vec::new(),
                    Some(JsonLinks::One(s)) => split_links(&s),
                    Some(JsonLinks::Many(v)) => v.into_iter().map(|l| l.trim().to_string()).collect(),
                },
            })
        })
        .collect())
}

fn validate_record(row: usize, raw: RawRecord, imported_at: DateTime<Utc>) -> Result<Incident, Rejection> {
    let reject = |id: &Option<String>, reason, detail: String| Rejection { row, id: id.clone(), reason, detail };
    let id_hint = non_blank(raw.id.clone());

    let (Some(id), Some(title), Some(description)) = (&raw.id, &raw.title, &raw.description) else {
        let missing: Vec<&str> = [("id", &raw.id), ("title", &raw.title), ("description", &raw.description)]
            .into_iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| k)
            .collect();
        return Err(reject(&id_hint, RejectReason::MissingField, format!("missing {}", missing.join(", "))));
    };
    let id = id.trim().to_string();
    if id.is_empty() {
        return Err(reject(&None, RejectReason::EmptyId, "id is empty".into()));
    }
    let title = title.trim().to_string();
    if title.is_empty() {
        return Err(reject(&id_hint, RejectReason::EmptyTitle, "title is empty".into()));
    }
    let occurred = match non_blank(raw.occurred) {
        None => None,
        Some(s) => Some(NaiveDate::parse_from_str(&s, "%Y-%m-%d").map_err(|e| {
            reject(&id_hint, RejectReason::InvalidDate, format!("occurred {s:?} is not an ISO date: {e}"))
        })?),
    };
    let mut source_links = Vec::with_capacity(raw.links.len());
    for link in raw.links {
        match url::Url::parse(&link) {
            Ok(u) if u.has_host() => source_links.push(link),
            Ok(_) => {
                return Err(reject(&id_hint, RejectReason::InvalidUrl, format!("{link:?} has no host")));
            }
            Err(e) => {
                return Err(reject(&id_hint, RejectReason::InvalidUrl, format!("{link:?}: {e}")));
            }
        }
    }
    Ok(Incident {
        id,
        title,
        description: description.trim().to_string(),
        occurred,
        sector: non_blank(raw.sector),
        country: non_blank(raw.country),
        source_links,
        imported_at,
    })
}

/// Incidents keyed by external id.
#[derive(Debug, Clone, Default)]
pub struct IncidentStore {
    by_id: BTreeMap<String, Incident>,
}

impl IncidentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Validates a document against the current contents without changing
    /// them. Unchanged rows are counted as neither added nor updated; an
    /// updated incident keeps its original `imported_at`.
    pub fn prepare_ingest(
        &self,
        document: &[u8],
        format: IngestFormat,
        imported_at: DateTime<Utc>,
    ) -> Result<PreparedIngest, IngestError> {
        let records = match format {
            IngestFormat::Csv => parse_csv(document)?,
            IngestFormat::Json => parse_json(document)?,
        };
        let mut report = IngestReport::default();
        let mut changes = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, record) in records.into_iter().enumerate() {
            let row = i + 1;
            let incident = match record.and_then(|raw| validate_record(row, raw, imported_at)) {
                Ok(incident) => incident,
                Err(rejection) => {
                    report.rejected.push(rejection);
                    continue;
                }
            };
            if !seen.insert(incident.id.clone()) {
                report.rejected.push(Rejection {
                    row,
                    id: Some(incident.id.clone()),
                    reason: RejectReason::DuplicateId,
                    detail: "id already appeared earlier in this document".into(),
                });
                continue;
            }
            match self.by_id.get(&incident.id) {
                None => {
                    report.added += 1;
                    changes.push(incident);
                }
                Some(existing) if existing.same_content(&incident) => report.unchanged += 1,
                Some(existing) => {
                    report.updated += 1;
                    changes.push(Incident { imported_at: existing.imported_at, ..incident });
                }
            }
        }
        Ok(PreparedIngest { report, changes })
    }

    pub fn apply(&mut self, changes: impl IntoIterator<Item = Incident>) {
        for incident in changes {
            self.by_id.insert(incident.id.clone(), incident);
        }
    }

    pub fn ingest(
        &mut self,
        document: &[u8],
        format: IngestFormat,
        imported_at: DateTime<Utc>,
    ) -> Result<IngestReport, IngestError> {
        let prepared = self.prepare_ingest(document, format, imported_at)?;
        self.apply(prepared.changes);
        Ok(prepared.report)
    }

    pub fn get(&self, id: &str) -> Result<&Incident, QueryError> {
        self.by_id.get(id).ok_or_else(|| QueryError::UnknownIncident(id.to_string()))
    }

    /// Filtered page ordered by `(imported_at, id)`. Text matches title or
    /// description case-insensitively; date bounds are inclusive and drop
    /// incidents without an `occurred` date.
    pub fn query(&self, q: &IncidentQuery) -> Result<Page<Incident>, QueryError> {
        if q.limit == 0 {
            return Err(QueryError::ZeroLimit);
        }
        let needle = q.text.as_deref().map(str::to_lowercase).filter(|t| !t.is_empty());
        let sector = q.sector.as_deref().map(str::to_lowercase);
        let mut hits: Vec<&Incident> = self
            .by_id
            .values()
            .filter(|i| {
                needle.as_ref().is_none_or(|n| {
                    i.title.to_lowercase().contains(n) || i.description.to_lowercase().contains(n)
                })
            })
            .filter(|i| {
                sector.as_ref().is_none_or(|s| i.sector.as_ref().is_some_and(|v| v.to_lowercase() == *s))
            })
            .filter(|i| match (q.from, q.to) {
                (None, None) => true,
                (from, to) => i.occurred.is_some_and(|d| from.is_none_or(|f| d >= f) && to.is_none_or(|t| d <= t)),
            })
            .collect();
        hits.sort_by(|a, b| a.imported_at.cmp(&b.imported_at).then_with(|| a.id.cmp(&b.id)));
        let total = hits.len();
        let items = hits.into_iter().skip(q.offset).take(q.limit).cloned().collect();
        Ok(Page { items, total, offset: q.offset, limit: q.limit })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.by_id.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Incident> {
        self.by_id.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    const FIXTURE: &[u8] = include_bytes!("../fixtures/incidents-39.csv");

    fn t(n: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + n, 0).unwrap()
    }

    #[test]
    fn fixture_ingests_and_is_idempotent() {
        let mut store = IncidentStore::new();
        let first = store.ingest(FIXTURE, IngestFormat::Csv, t(0)).unwrap();
        assert_eq!((first.added, first.updated, first.unchanged), (39, 0, 0));
        assert!(first.rejected.is_empty());
        let second = store.ingest(FIXTURE, IngestFormat::Csv, t(1)).unwrap();
        assert_eq!((second.added, second.updated, second.unchanged), (0, 0, 39));
        assert_eq!(store.len(), 39);
        assert_eq!(store.get("SYN0001").unwrap().imported_at, t(0));
    }

    #[test]
    fn changed_row_counts_as_update_and_keeps_import_time() {
        let mut store = IncidentStore::new();
        store.ingest(b"id,title,description\nA,One,first\n", IngestFormat::Csv, t(0)).unwrap();
        let r = store.ingest(b"id,title,description\nA,One,edited\n", IngestFormat::Csv, t(5)).unwrap();
        assert_eq!((r.added, r.updated), (0, 1));
        let a = store.get("A").unwrap();
        assert_eq!(a.description, "edited");
        assert_eq!(a.imported_at, t(0));
    }

    #[test]
    fn rejections_carry_row_and_reason() {
        let doc = b"id,title,description,occurred,links\n\
            A,,no title,,\n\
            B,Bee,ok,2024-13-01,\n\
            C,Sea,ok,,not a url\n\
            ,Dee,ok,,\n\
            E,Eee,ok,2024-02-29,https://a.example/x; https://b.example/y\n\
            E,Eee again,dup,,\n";
        let mut store = IncidentStore::new();
        let r = store.ingest(doc, IngestFormat::Csv, t(0)).unwrap();
        let got: Vec<(usize, RejectReason)> = r.rejected.iter().map(|x| (x.row, x.reason)).collect();
        assert_eq!(
            got,
            [
                (1, RejectReason::EmptyTitle),
                (2, RejectReason::InvalidDate),
                (3, RejectReason::InvalidUrl),
                (4, RejectReason::EmptyId),
                (6, RejectReason::DuplicateId),
            ]
        );
        assert_eq!(r.added, 1);
        assert_eq!(store.get("E").unwrap().source_links, ["https://a.example/x", "https://b.example/y"]);
    }

    #[test]
    fn missing_required_columns_fail_the_document() {
        let err = IncidentStore::new().ingest(b"id,name\n1,x\n", IngestFormat::Csv, t(0)).unwrap_err();
        match err {
            IngestError::MissingColumns(cols) => assert_eq!(cols, ["title", "description"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_with_wrong_field_count_is_a_malformed_row() {
        let r = IncidentStore::new()
            .ingest(b"id,title,description\nA,B\nC,D,E\n", IngestFormat::Csv, t(0))
            .unwrap();
        assert_eq!(r.rejected[0].reason, RejectReason::MalformedRow);
        assert_eq!(r.added, 1);
    }

    #[test]
    fn json_ingestion() {
        let doc = br#"[
            {"id": "J1", "title": "T", "description": "d", "links": ["https://x.example"]},
            {"id": "J2", "title": "T2", "description": "d", "links": "https://y.example;https://z.example", "sector": "Health"},
            {"id": "J3", "description": "no title key"},
            42
        ]"#;
        let mut store = IncidentStore::new();
        let r = store.ingest(doc, IngestFormat::Json, t(0)).unwrap();
        assert_eq!(r.added, 2);
        let reasons: Vec<_> = r.rejected.iter().map(|x| x.reason).collect();
        assert_eq!(reasons, [RejectReason::MissingField, RejectReason::MalformedRow]);
        assert_eq!(store.get("J2").unwrap().source_links.len(), 2);

        let err = store.ingest(b"{not json", IngestFormat::Json, t(0)).unwrap_err();
        assert!(matches!(err, IngestError::Unreadable { .. }));
    }

    #[test]
    fn query_examples() {
        let mut store = IncidentStore::new();
        store.ingest(FIXTURE, IngestFormat::Csv, t(0)).unwrap();

        let page = store.query(&IncidentQuery { limit: 10, ..Default::default() }).unwrap();
        assert_eq!((page.items.len(), page.total), (10, 39));
        assert_eq!(page.items[0].id, "SYN0001");

        let deep = store.query(&IncidentQuery { text: Some("DEEPFAKE".into()), ..IncidentQuery::all() }).unwrap();
        assert!(deep.total > 0);
        for i in &deep.items {
            let hay = format!("{} {}", i.title, i.description).to_lowercase();
            assert!(hay.contains("deepfake"));
        }
        let expected = store
            .iter()
            .filter(|i| format!("{} {}", i.title, i.description).to_lowercase().contains("deepfake"))
            .count();
        assert_eq!(deep.total, expected);

        assert_eq!(store.query(&IncidentQuery { limit: 0, ..Default::default() }), Err(QueryError::ZeroLimit));
        assert!(matches!(store.get("nope"), Err(QueryError::UnknownIncident(_))));
    }

    #[test]
    fn query_filters_by_sector_and_date() {
        let mut store = IncidentStore::new();
        store.ingest(FIXTURE, IngestFormat::Csv, t(0)).unwrap();
        let health = store.query(&IncidentQuery { sector: Some("health".into()), ..IncidentQuery::all() }).unwrap();
        assert!(health.total >= 2);
        assert!(health.items.iter().all(|i| i.sector.as_deref() == Some("Health")));

        let from = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let recent = store.query(&IncidentQuery { from: Some(from), ..IncidentQuery::all() }).unwrap();
        assert!(recent.items.iter().all(|i| i.occurred.unwrap() >= from));
        assert!(recent.total > 0 && recent.total < 39);
    }

    #[test]
    fn order_is_import_time_then_id() {
        let mut store = IncidentStore::new();
        store.ingest(b"id,title,description\nZ,z,z\n", IngestFormat::Csv, t(0)).unwrap();
        store.ingest(b"id,title,description\nB,b,b\nA,a,a\n", IngestFormat::Csv, t(1)).unwrap();
        let ids: Vec<String> = store.query(&IncidentQuery::all()).unwrap().items.into_iter().map(|i| i.id).collect();
        assert_eq!(ids, ["Z", "A", "B"]);
    }
}
